//! Latency-adding graph rewrites, applied before place and route.
//!
//! Each pass trades cycles of latency for a shorter clock period and must
//! keep the stream of output values identical up to a constant shift, which
//! the simulator checks. The intended order is [`compute_pipeline`], then
//! [`pipeline_broadcasts`], then [`collapse_register_chains`]: the first two
//! end by rebalancing arrival cycles, and the balancing chains they leave
//! behind are what the third pass folds into shift registers.

use crate::arch::Width;
use crate::dfg::{AppGraph, Net, NetId, Node, NodeId, NodeKind};
use crate::sta::{balance_branches, StaError};
use std::collections::BTreeSet;

pub const DEFAULT_CHAIN_MIN: u32 = 4;
pub const DEFAULT_BCAST_THRESHOLD: usize = 8;
pub const DEFAULT_BCAST_FANOUT: usize = 4;
pub const DEFAULT_BCAST_BUDGET: u32 = 256;

/// Registers the inputs of every PE, cutting each operator's logic out of
/// longer combinational paths, then rebalances. Returns the new graph and
/// the number of balancing registers inserted.
pub fn compute_pipeline(g: &AppGraph) -> Result<(AppGraph, u32), StaError> {
    let mut out = g.clone();
    for node in out.nodes.values_mut() {
        if node.kind == NodeKind::Pe {
            node.input_regs = true;
        }
    }
    balance_branches(&out)
}

/// Replaces every single-fanout run of at least `min_len` 16-bit registers
/// with shift registers, each at most `regfile_depth` deep. Returns the new
/// graph and the number of registers removed.
pub fn collapse_register_chains(
    g: &AppGraph,
    min_len: u32,
    regfile_depth: u16,
) -> Result<(AppGraph, u32), StaError> {
    let mut out = g.clone();
    let chainable = |out: &AppGraph, id: &str| -> bool {
        let node = &out.nodes[id];
        node.kind == NodeKind::Reg && node.width == Width::W16 && node.at.is_none()
    };
    // reg -> (net, next reg) when its only fanout is another chainable reg.
    let link_of = |out: &AppGraph, id: &str| -> Option<(NetId, NodeId)> {
        let nets: Vec<&NetId> = out
            .nets
            .iter()
            .filter(|(_, n)| n.driver == id)
            .map(|(k, _)| k)
            .collect();
        let [net_id] = nets[..] else { return None };
        let net = &out.nets[net_id];
        let [(sink, port)] = &net.sinks[..] else {
            return None;
        };
        (port == "in" && chainable(out, sink)).then(|| (net_id.clone(), sink.clone()))
    };

    let mut removed = 0u32;
    let mut shifts = 0usize;
    loop {
        // A chain head: chainable, and not the tail of another chain link.
        let mut is_link_target: BTreeSet<NodeId> = BTreeSet::new();
        for id in out.nodes.keys() {
            if chainable(&out, id) {
                if let Some((_, next)) = link_of(&out, id) {
                    is_link_target.insert(next);
                }
            }
        }
        let mut best: Option<(NodeId, Vec<NodeId>, Vec<NetId>)> = None;
        for id in out.nodes.keys() {
            if !chainable(&out, id) || is_link_target.contains(id) {
                continue;
            }
            let mut members = vec![id.clone()];
            let mut inner_nets = Vec::new();
            let mut cur = id.clone();
            while let Some((net, next)) = link_of(&out, &cur) {
                inner_nets.push(net);
                members.push(next.clone());
                cur = next;
            }
            if members.len() as u32 >= min_len {
                best = Some((id.clone(), members, inner_nets));
                break;
            }
        }
        let Some((head, members, inner_nets)) = best else {
            break;
        };
        let total = members.len();
        let tail = members.last().expect("nonempty chain").clone();

        // Depth split: full register files first, remainder last.
        let mut depths = Vec::new();
        let mut rem = total as u16;
        while rem > regfile_depth {
            depths.push(regfile_depth);
            rem -= regfile_depth;
        }
        depths.push(rem);

        let mut shift_ids = Vec::new();
        for depth in &depths {
            let id = out.fresh_node_id(&format!("sh{shifts}"));
            shifts += 1;
            let mut node = Node::bare(NodeKind::Shift);
            node.depth = Some(*depth);
            out.nodes.insert(id.clone(), node);
            shift_ids.push(id);
        }
        // The chain's feed net now drives the first shift; the tail's output
        // net is re-driven by the last shift; inner nets and regs vanish.
        for net in out.nets.values_mut() {
            for (sink, port) in net.sinks.iter_mut() {
                if *sink == head && port == "in" {
                    *sink = shift_ids[0].clone();
                }
            }
            if net.driver == tail {
                net.driver = shift_ids.last().expect("nonempty").clone();
            }
        }
        let tail_net = out
            .nets
            .iter()
            .find(|(_, n)| n.driver == *shift_ids.last().expect("nonempty"))
            .map(|(k, _)| k.clone())
            .expect("chain tail drives a net");
        for j in 0..shift_ids.len() - 1 {
            let id = out.fresh_net_id(&format!("{tail_net}__s{j}"));
            out.nets.insert(
                id,
                Net {
                    driver: shift_ids[j].clone(),
                    sinks: vec![(shift_ids[j + 1].clone(), "in".into())],
                },
            );
        }
        for net in inner_nets {
            out.nets.remove(&net);
        }
        for member in &members {
            out.nodes.remove(member);
        }
        removed += total as u32;
    }
    Ok((out, removed))
}

/// Breaks high-fanout nets into uniform-depth register trees, largest first,
/// spending at most `budget` registers, then rebalances. Hardened nets and
/// flush fanout stay untouched. Returns the new graph and the number of
/// registers inserted.
pub fn pipeline_broadcasts(
    g: &AppGraph,
    hardened: &BTreeSet<String>,
    threshold: usize,
    max_fanout: usize,
    budget: u32,
) -> Result<(AppGraph, u32), StaError> {
    assert!(max_fanout >= 2, "register tree needs fanout of at least 2");
    let mut out = g.clone();
    let mut remaining = budget;
    let mut inserted = 0u32;
    let mut tree_regs = 0usize;

    let mut targets: Vec<(usize, NetId)> = g
        .nets
        .iter()
        .filter(|(id, net)| {
            !hardened.contains(*id)
                && net.sinks.len() >= threshold
                && net.sinks.iter().all(|(_, p)| p != "flush")
        })
        .map(|(id, net)| (net.sinks.len(), id.clone()))
        .collect();
    targets.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    for (fanout, net_id) in targets {
        let mut levels = 0u32;
        let mut reach = max_fanout;
        while reach < fanout {
            levels += 1;
            reach *= max_fanout;
        }
        if levels == 0 {
            continue;
        }
        let cost = tree_cost(fanout, max_fanout, levels);
        if cost > remaining {
            continue;
        }
        let width = out
            .net_width(&out.nets[&net_id])
            .expect("driver produces a value");
        // Sinks in id order: contiguous chunks become subtrees.
        let sinks = out.nets[&net_id].sinks.clone();
        let roots = build_tree(&mut out, &net_id, &sinks, width, levels, max_fanout, &mut tree_regs);
        out.nets.get_mut(&net_id).expect("known net").sinks = roots;
        remaining -= cost;
        inserted += cost;
    }
    let (balanced, extra) = balance_branches(&out)?;
    Ok((balanced, inserted + extra))
}

/// Registers a uniform-depth tree needs for `n` sinks: the top level has
/// `min(f, ceil(n / f^levels))` groups, and each group recurses one level
/// shallower over its chunk.
fn tree_cost(n: usize, f: usize, levels: u32) -> u32 {
    if levels == 0 {
        return 0;
    }
    let cap = f.pow(levels);
    let groups = f.min(n.div_ceil(cap));
    let mut cost = groups as u32;
    let mut left = n;
    for gi in 0..groups {
        let chunk = left.div_ceil(groups - gi);
        cost += tree_cost(chunk, f, levels - 1);
        left -= chunk;
    }
    cost
}

fn build_tree(
    out: &mut AppGraph,
    net_id: &str,
    sinks: &[(NodeId, String)],
    width: Width,
    levels: u32,
    f: usize,
    tree_regs: &mut usize,
) -> Vec<(NodeId, String)> {
    if levels == 0 {
        return sinks.to_vec();
    }
    let cap = f.pow(levels);
    let groups = f.min(sinks.len().div_ceil(cap));
    let mut roots = Vec::new();
    let mut rest = sinks;
    for gi in 0..groups {
        let take = rest.len().div_ceil(groups - gi);
        let (chunk, tail) = rest.split_at(take);
        rest = tail;
        let reg_id = out.fresh_node_id(&format!("bc{tree_regs}"));
        *tree_regs += 1;
        let mut reg = Node::bare(NodeKind::Reg);
        reg.width = width;
        out.nodes.insert(reg_id.clone(), reg);
        let under = build_tree(out, net_id, chunk, width, levels - 1, f, tree_regs);
        let sub_net = out.fresh_net_id(&format!("{net_id}__t{}", *tree_regs - 1));
        out.nets.insert(
            sub_net,
            Net {
                driver: reg_id.clone(),
                sinks: under,
            },
        );
        roots.push((reg_id, "in".to_string()));
    }
    roots
}

/// Puts a skid-buffer FIFO in front of every sparse PE data input that is
/// not already fed by one, so each operator can stall its producers without
/// combinational backpressure loops. Idempotent; returns the new graph and
/// the number of FIFOs added.
pub fn ensure_input_fifos(g: &AppGraph, depth: u16) -> (AppGraph, u32) {
    let mut out = g.clone();
    let mut added = 0u32;
    let mut targets: Vec<(NetId, NodeId, String)> = Vec::new();
    for (net_id, net) in &out.nets {
        if out.nodes[&net.driver].kind == NodeKind::Fifo {
            continue;
        }
        for (sink, port) in &net.sinks {
            if port != "flush" && out.nodes[sink].kind == NodeKind::Pe {
                targets.push((net_id.clone(), sink.clone(), port.clone()));
            }
        }
    }
    for (net_id, sink, port) in targets {
        let fid = out.fresh_node_id(&format!("fin{added}"));
        let mut fifo = Node::bare(NodeKind::Fifo);
        fifo.depth = Some(depth);
        out.nodes.insert(fid.clone(), fifo);
        let sinks = &mut out.nets.get_mut(&net_id).expect("known net").sinks;
        let pos = sinks
            .iter()
            .position(|(n, p)| *n == sink && *p == port)
            .expect("sink present");
        sinks[pos] = (fid.clone(), "in".to_string());
        let nid = out.fresh_net_id(&format!("{net_id}__q0"));
        out.nets.insert(
            nid,
            Net {
                driver: fid,
                sinks: vec![(sink, port)],
            },
        );
        added += 1;
    }
    (out, added)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::{validate_semantics, Mode, Opcode};
    use crate::sim::{equivalent_modulo_latency, simulate_dense_graph, Stimulus};
    use crate::sta::cycle_arrivals;

    fn stim(pairs: &[(&str, &[u16])]) -> Stimulus {
        Stimulus::Dense {
            inputs: pairs
                .iter()
                .map(|(id, vals)| (id.to_string(), vals.to_vec()))
                .collect(),
        }
    }

    fn io_in() -> Node {
        Node::bare(NodeKind::IoIn)
    }

    fn io_out() -> Node {
        Node::bare(NodeKind::IoOut)
    }

    fn add_net(g: &mut AppGraph, id: &str, driver: &str, sinks: &[(&str, &str)]) {
        g.nets.insert(
            id.to_string(),
            Net {
                driver: driver.to_string(),
                sinks: sinks
                    .iter()
                    .map(|(n, p)| (n.to_string(), p.to_string()))
                    .collect(),
            },
        );
    }

    /// a -> (mul3, then mul3 of that); both join in an add -> out.
    fn diamond() -> AppGraph {
        let mut g = AppGraph::new(Mode::Dense);
        g.nodes.insert("a".into(), io_in());
        let mut m = Node::pe(Opcode::Mul);
        m.consts.insert(1, 3);
        g.nodes.insert("m0".into(), m.clone());
        g.nodes.insert("m1".into(), m);
        g.nodes.insert("j".into(), Node::pe(Opcode::Add));
        g.nodes.insert("out".into(), io_out());
        add_net(&mut g, "na", "a", &[("m0", "in0")]);
        add_net(&mut g, "n0", "m0", &[("j", "in0"), ("m1", "in0")]);
        add_net(&mut g, "n1", "m1", &[("j", "in1")]);
        add_net(&mut g, "nj", "j", &[("out", "in")]);
        g
    }

    #[test]
    fn compute_pipeline_registers_and_balances() {
        let g = diamond();
        let (piped, added) = compute_pipeline(&g).unwrap();
        assert!(piped
            .nodes
            .values()
            .filter(|n| n.kind == NodeKind::Pe)
            .all(|n| n.input_regs));
        // j:in0 lags j:in1 by one cycle before balancing.
        assert_eq!(added, 1);
        assert!(validate_semantics(&piped).is_empty());
        assert!(cycle_arrivals(&piped).unwrap().is_balanced());

        let s = stim(&[("a", &[1, 2, 5])]);
        let t0 = simulate_dense_graph(&g, &s, None).unwrap();
        let t1 = simulate_dense_graph(&piped, &s, None).unwrap();
        let (ok, k) = equivalent_modulo_latency(&t0, &t1);
        assert!(ok);
        assert!(k > 0);
    }

    fn reg_chain(g: &mut AppGraph, len: usize) {
        g.nodes.insert("a".into(), io_in());
        g.nodes.insert("out".into(), io_out());
        let mut prev = "a".to_string();
        for i in 0..len {
            let id = format!("r{i}");
            g.nodes.insert(id.clone(), Node::bare(NodeKind::Reg));
            add_net(g, &format!("n{i}"), &prev, &[(&id, "in")]);
            prev = id;
        }
        add_net(g, "nout", &prev, &[("out", "in")]);
    }

    #[test]
    fn two_chain_collapses_to_one_shift() {
        let mut g = AppGraph::new(Mode::Dense);
        reg_chain(&mut g, 2);
        let (folded, removed) = collapse_register_chains(&g, 2, 32).unwrap();
        assert_eq!(removed, 2);
        assert!(validate_semantics(&folded).is_empty());
        let shifts: Vec<&Node> = folded
            .nodes
            .values()
            .filter(|n| n.kind == NodeKind::Shift)
            .collect();
        assert_eq!(shifts.len(), 1);
        assert_eq!(shifts[0].depth, Some(2));
        assert!(folded.nodes.values().all(|n| n.kind != NodeKind::Reg));

        let s = stim(&[("a", &[9, 4])]);
        let t0 = simulate_dense_graph(&g, &s, None).unwrap();
        let t1 = simulate_dense_graph(&folded, &s, None).unwrap();
        assert_eq!(equivalent_modulo_latency(&t0, &t1), (true, 0));
    }

    #[test]
    fn long_chain_splits_at_regfile_depth() {
        let mut g = AppGraph::new(Mode::Dense);
        reg_chain(&mut g, 70);
        let (folded, removed) = collapse_register_chains(&g, 4, 32).unwrap();
        assert_eq!(removed, 70);
        let mut depths: Vec<u16> = folded
            .nodes
            .values()
            .filter(|n| n.kind == NodeKind::Shift)
            .map(|n| n.depth.unwrap())
            .collect();
        depths.sort();
        assert_eq!(depths, vec![6, 32, 32]);
        assert!(validate_semantics(&folded).is_empty());
        // 70 cycles either way.
        assert_eq!(cycle_arrivals(&folded).unwrap().output["out"], 70);
    }

    #[test]
    fn short_chain_is_left_alone() {
        let mut g = AppGraph::new(Mode::Dense);
        reg_chain(&mut g, 3);
        let (folded, removed) = collapse_register_chains(&g, 4, 32).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(folded, g);
    }

    #[test]
    fn fanout_at_chain_end_still_collapses() {
        let mut g = AppGraph::new(Mode::Dense);
        reg_chain(&mut g, 4);
        g.nodes.insert("out2".into(), io_out());
        g.nets.get_mut("nout").unwrap().sinks.push(("out2".into(), "in".into()));
        let (folded, removed) = collapse_register_chains(&g, 4, 32).unwrap();
        assert_eq!(removed, 4);
        assert_eq!(folded.nets["nout"].sinks.len(), 2);
        assert!(validate_semantics(&folded).is_empty());
    }

    fn wide_fanout(n: usize) -> AppGraph {
        let mut g = AppGraph::new(Mode::Dense);
        g.nodes.insert("a".into(), io_in());
        let mut sinks = Vec::new();
        for i in 0..n {
            let pe = format!("p{i:02}");
            let mut node = Node::pe(Opcode::Abs);
            node.input_regs = true;
            g.nodes.insert(pe.clone(), node);
            g.nodes.insert(format!("o{i:02}"), io_out());
            add_net(&mut g, &format!("np{i:02}"), &pe, &[(&format!("o{i:02}"), "in")]);
            sinks.push((pe, "in0".to_string()));
        }
        g.nets.insert("big".into(), Net { driver: "a".into(), sinks });
        g
    }

    #[test]
    fn sixteen_sinks_get_four_registers_one_level() {
        let g = wide_fanout(16);
        let (treed, added) = pipeline_broadcasts(&g, &BTreeSet::new(), 8, 4, 256).unwrap();
        assert_eq!(added, 4);
        assert_eq!(treed.nets["big"].sinks.len(), 4);
        assert!(treed.nets["big"].sinks.iter().all(|(n, _)| n.starts_with("bc")));
        assert!(validate_semantics(&treed).is_empty());
        let arrivals = cycle_arrivals(&treed).unwrap();
        for i in 0..16 {
            assert_eq!(arrivals.input[&(format!("p{i:02}"), "in0".to_string())], 1);
        }
    }

    #[test]
    fn seventeen_sinks_get_seven_registers_two_levels() {
        let g = wide_fanout(17);
        let (treed, added) = pipeline_broadcasts(&g, &BTreeSet::new(), 8, 4, 256).unwrap();
        assert_eq!(added, 7);
        assert_eq!(treed.nets["big"].sinks.len(), 2);
        assert!(validate_semantics(&treed).is_empty());
        let arrivals = cycle_arrivals(&treed).unwrap();
        for i in 0..17 {
            assert_eq!(arrivals.input[&(format!("p{i:02}"), "in0".to_string())], 2);
        }
    }

    #[test]
    fn budget_too_small_skips_the_net() {
        let g = wide_fanout(16);
        let (same, added) = pipeline_broadcasts(&g, &BTreeSet::new(), 8, 4, 3).unwrap();
        assert_eq!(added, 0);
        assert_eq!(same, g);
    }

    #[test]
    fn hardened_net_is_not_treed() {
        let g = wide_fanout(16);
        let hardened: BTreeSet<String> = ["big".to_string()].into_iter().collect();
        let (same, added) = pipeline_broadcasts(&g, &hardened, 8, 4, 256).unwrap();
        assert_eq!(added, 0);
        assert_eq!(same, g);
    }

    #[test]
    fn full_pass_stack_preserves_behavior() {
        // Diamond plus a fanout-9 broadcast, run through all three passes.
        let mut g = diamond();
        for i in 0..9 {
            let pe = format!("q{i}");
            let mut node = Node::pe(Opcode::Add);
            node.consts.insert(1, i as u16);
            g.nodes.insert(pe.clone(), node);
            g.nodes.insert(format!("qo{i}"), io_out());
            add_net(&mut g, &format!("nq{i}"), &pe, &[(&format!("qo{i}"), "in")]);
            g.nets.get_mut("na").unwrap().sinks.push((pe, "in0".into()));
        }
        g.nets.get_mut("na").unwrap().sinks.sort();
        let s = stim(&[("a", &[3, 1, 4, 1, 5])]);
        let t0 = simulate_dense_graph(&g, &s, None).unwrap();

        let (g1, _) = compute_pipeline(&g).unwrap();
        let t1 = simulate_dense_graph(&g1, &s, None).unwrap();
        let (ok, k1) = equivalent_modulo_latency(&t0, &t1);
        assert!(ok && k1 >= 0);

        let (g2, _) = pipeline_broadcasts(&g1, &BTreeSet::new(), 8, 4, 256).unwrap();
        let t2 = simulate_dense_graph(&g2, &s, None).unwrap();
        let (ok, k2) = equivalent_modulo_latency(&t1, &t2);
        assert!(ok && k2 >= 0);

        let (g3, _) = collapse_register_chains(&g2, 2, 32).unwrap();
        let t3 = simulate_dense_graph(&g3, &s, None).unwrap();
        assert_eq!(equivalent_modulo_latency(&t2, &t3), (true, 0));
        assert!(validate_semantics(&g3).is_empty());
        assert!(cycle_arrivals(&g3).unwrap().is_balanced());
    }

    #[test]
    fn bare_sparse_inputs_get_fifos_once() {
        let mut g = AppGraph::new(crate::dfg::Mode::Sparse);
        g.nodes.insert("a".into(), Node::bare(NodeKind::IoIn));
        g.nodes.insert("b".into(), Node::bare(NodeKind::IoIn));
        let mut f = Node::bare(NodeKind::Fifo);
        f.depth = Some(2);
        g.nodes.insert("fb".into(), f);
        g.nodes.insert("p".into(), Node::pe(Opcode::Add));
        g.nodes.insert("y".into(), io_out());
        add_net(&mut g, "na", "a", &[("p", "in0")]);
        add_net(&mut g, "nb", "b", &[("fb", "in")]);
        add_net(&mut g, "nfb", "fb", &[("p", "in1")]);
        add_net(&mut g, "np", "p", &[("y", "in")]);
        assert!(validate_semantics(&g).is_empty());

        // Only the bare input gains a FIFO; the buffered one is left alone.
        let (g1, added) = ensure_input_fifos(&g, 2);
        assert_eq!(added, 1);
        let fifo = &g1.nodes["fin0"];
        assert_eq!(fifo.kind, NodeKind::Fifo);
        assert_eq!(fifo.depth, Some(2));
        assert_eq!(g1.nets["na"].sinks, vec![("fin0".to_string(), "in".to_string())]);
        assert_eq!(g1.nets["na__q0"].sinks, vec![("p".to_string(), "in0".to_string())]);
        assert!(validate_semantics(&g1).is_empty());

        let (g2, again) = ensure_input_fifos(&g1, 2);
        assert_eq!(again, 0);
        assert_eq!(g2, g1);
    }
}
