//! Seeded random application generators, shared by tests and benches.
//!
//! Dense graphs come out balanced (joins and outputs aligned), so they
//! simulate meaningfully as-is and every latency-adding pass applied to them
//! must reproduce the same streams at one common offset. Sparse graphs come
//! out with a FIFO in front of every PE input, the shape the sparse compile
//! flow guarantees.

use crate::arch::{DelayLibrary, Side, TileKind, Width};
use crate::dfg::{AppGraph, Mode, Net, NetId, Node, NodeId, NodeKind, Opcode};
use crate::sta::balance_branches;
use rand::seq::SliceRandom;
use rand::Rng;

pub const ALL_OPS: [Opcode; 15] = [
    Opcode::Add,
    Opcode::Sub,
    Opcode::Mul,
    Opcode::And,
    Opcode::Or,
    Opcode::Xor,
    Opcode::Shl,
    Opcode::Shr,
    Opcode::Gt,
    Opcode::Lt,
    Opcode::Eq,
    Opcode::Mux,
    Opcode::Abs,
    Opcode::Min,
    Opcode::Max,
];

/// Wires `node:port` as a sink of whatever net `driver` drives, creating the
/// net on first use.
fn attach(g: &mut AppGraph, driver: &NodeId, node: &str, port: &str) {
    let existing: Option<NetId> = g
        .nets
        .iter()
        .find(|(_, n)| n.driver == *driver)
        .map(|(k, _)| k.clone());
    let sink = (node.to_string(), port.to_string());
    match existing {
        Some(id) => g.nets.get_mut(&id).expect("known net").sinks.push(sink),
        None => {
            let id = g.fresh_net_id(&format!("n_{driver}"));
            g.nets.insert(
                id,
                Net {
                    driver: driver.clone(),
                    sinks: vec![sink],
                },
            );
        }
    }
}

/// Random balanced dense app with 16-bit IO, PEs, registers, and shift
/// registers; roughly `max_nodes` nodes before balancing, never fewer than
/// one input, one operator, and one output.
pub fn random_dense_app<R: Rng>(rng: &mut R, max_nodes: usize) -> AppGraph {
    let mut g = AppGraph::new(Mode::Dense);
    let n_in = rng.gen_range(1..=3usize.min(max_nodes.saturating_sub(2).max(1)));
    let mut pool: Vec<NodeId> = Vec::new();
    for i in 0..n_in {
        let id = format!("x{i}");
        g.nodes.insert(id.clone(), Node::bare(NodeKind::IoIn));
        pool.push(id);
    }
    let body_cap = max_nodes.saturating_sub(n_in + 1).max(1);
    let n_body = rng.gen_range(1..=body_cap);
    for i in 0..n_body {
        let roll = rng.gen_range(0u8..10);
        let (id, node) = if roll < 7 {
            let op = *ALL_OPS.choose(rng).expect("nonempty");
            let mut node = Node::pe(op);
            node.input_regs = rng.gen_bool(0.5);
            let id = format!("p{i}");
            for port in 1..op.arity() as u8 {
                if rng.gen_bool(0.3) {
                    node.consts.insert(port, rng.gen());
                }
            }
            (id, node)
        } else if roll < 9 {
            (format!("r{i}"), Node::bare(NodeKind::Reg))
        } else {
            let mut node = Node::bare(NodeKind::Shift);
            node.depth = Some(rng.gen_range(2..=5));
            (format!("s{i}"), node)
        };
        g.nodes.insert(id.clone(), node.clone());
        for (port, _) in node.data_in_ports() {
            if node.const_port(port).is_some() {
                continue;
            }
            let driver = pool.choose(rng).expect("nonempty pool").clone();
            attach(&mut g, &driver, &id, port);
        }
        pool.push(id);
    }
    let consumed: Vec<NodeId> = g.nets.values().map(|n| n.driver.clone()).collect();
    let mut outs = 0;
    for id in pool {
        if !consumed.contains(&id) {
            let out = format!("y{outs}");
            outs += 1;
            g.nodes.insert(out.clone(), Node::bare(NodeKind::IoOut));
            attach(&mut g, &id, &out, "in");
        }
    }
    let (balanced, _) = balance_branches(&g).expect("generated graph is a dense DAG");
    debug_assert!(crate::dfg::validate_semantics(&balanced).is_empty());
    balanced
}

/// Random sparse app: a reduction tree of PEs over 1..=3 input streams, a
/// FIFO in front of every PE input, single-sink nets throughout.
pub fn random_sparse_app<R: Rng>(rng: &mut R, max_pes: usize) -> AppGraph {
    let mut g = AppGraph::new(Mode::Sparse);
    let n_in = rng.gen_range(1..=3usize);
    let mut frontier: Vec<NodeId> = Vec::new();
    for i in 0..n_in {
        let id = format!("x{i}");
        g.nodes.insert(id.clone(), Node::bare(NodeKind::IoIn));
        frontier.push(id);
    }
    let mut fifos = 0usize;
    let buffer = |g: &mut AppGraph, driver: &NodeId, node: &str, port: &str, f: &mut usize| {
        let fid = format!("f{f}");
        *f += 1;
        let mut fifo = Node::bare(NodeKind::Fifo);
        fifo.depth = Some(2);
        g.nodes.insert(fid.clone(), fifo);
        attach(g, driver, &fid, "in");
        attach(g, &fid.clone(), node, port);
        fid
    };
    let n_pe = rng.gen_range(1..=max_pes.max(1));
    for i in 0..n_pe {
        let binary: Vec<Opcode> = ALL_OPS.iter().copied().filter(|o| o.arity() == 2).collect();
        let op = *binary.choose(rng).expect("nonempty");
        let mut node = Node::pe(op);
        let id = format!("p{i}");
        let const_in1 = frontier.len() < 2 || rng.gen_bool(0.3);
        if const_in1 {
            node.consts.insert(1, rng.gen());
        }
        g.nodes.insert(id.clone(), node);
        // Sparse nets are single-sink, so combining two frontier values
        // consumes both; a const PE consumes one.
        let a = frontier.swap_remove(rng.gen_range(0..frontier.len()));
        buffer(&mut g, &a, &id, "in0", &mut fifos);
        if !const_in1 {
            let b = frontier.swap_remove(rng.gen_range(0..frontier.len()));
            buffer(&mut g, &b, &id, "in1", &mut fifos);
        }
        frontier.push(id);
    }
    for (j, id) in frontier.iter().enumerate() {
        let out = format!("y{j}");
        g.nodes.insert(out.clone(), Node::bare(NodeKind::IoOut));
        attach(&mut g, id, &out, "in");
    }
    debug_assert!(crate::dfg::validate_semantics(&g).is_empty());
    g
}

/// Random delay library: every switch-box traversal gets its own jittered
/// delay, so distinct routes have genuinely distinct path sums.
pub fn random_delay_library<R: Rng>(rng: &mut R) -> DelayLibrary {
    let core = rng.gen_range(0.4..1.2);
    let hop = rng.gen_range(0.08..0.25);
    let overhead = rng.gen_range(0.02..0.08);
    let mut lib = DelayLibrary::uniform(core, hop, overhead);
    lib.mem_core_ns = rng.gen_range(0.4..1.5);
    for kind in [TileKind::Pe, TileKind::Mem, TileKind::Io] {
        for entry in Side::ALL {
            for exit in Side::ALL {
                for width in Width::ALL {
                    lib.set_hop(kind, entry, exit, width, hop * rng.gen_range(0.5..1.5));
                }
            }
        }
    }
    lib
}
