//! Regenerates the app graphs and stimulus files under `benchmarks/`.
//!
//! The arch files there are hand-maintained; the graphs and stimuli are
//! emitted through `serialize_app`/serde so they always match what the
//! parsers accept. Run from the workspace root:
//!
//! ```text
//! cargo run -p cascade-core --example gen_benchmarks
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use cascade_core::{
    parse_app, serialize_app, validate_semantics, AppGraph, Coord, Mode, Net, Node, NodeKind,
    Opcode, Stimulus, Token, Width,
};

fn net(driver: &str, sinks: &[(&str, &str)]) -> Net {
    Net {
        driver: driver.to_string(),
        sinks: sinks
            .iter()
            .map(|(n, p)| (n.to_string(), p.to_string()))
            .collect(),
    }
}

fn input(g: &mut AppGraph, id: &str, at: Option<(u16, u16)>) {
    let mut n = Node::bare(NodeKind::IoIn);
    n.at = at.map(|(r, c)| Coord::new(r, c));
    g.nodes.insert(id.to_string(), n);
}

fn output(g: &mut AppGraph, id: &str, at: Option<(u16, u16)>) {
    let mut n = Node::bare(NodeKind::IoOut);
    n.at = at.map(|(r, c)| Coord::new(r, c));
    g.nodes.insert(id.to_string(), n);
}

fn pe(g: &mut AppGraph, id: &str, op: Opcode, consts: &[(u8, u16)]) {
    let mut n = Node::pe(op);
    n.consts = consts.iter().copied().collect();
    g.nodes.insert(id.to_string(), n);
}

fn pinned_pe(g: &mut AppGraph, id: &str, op: Opcode, at: (u16, u16)) {
    let mut n = Node::pe(op);
    n.input_regs = true;
    n.at = Some(Coord::new(at.0, at.1));
    g.nodes.insert(id.to_string(), n);
}

/// 3x3 convolution with a gaussian-like integer kernel. Nine tap streams,
/// a multiplier per tap, an adder chain, and a flush line to every PE.
/// With `mem_stage` the sum is sampled through a scratchpad before the
/// output, exercising schedule updates.
fn conv3x3(mem_stage: bool) -> AppGraph {
    let weights: [u16; 9] = [1, 2, 1, 2, 4, 2, 1, 2, 1];
    let mut g = AppGraph::new(Mode::Dense);
    let mut flush_sinks: Vec<(String, String)> = Vec::new();
    for (i, w) in weights.iter().enumerate() {
        input(&mut g, &format!("x{i}"), None);
        pe(&mut g, &format!("m{i}"), Opcode::Mul, &[(1, *w)]);
        g.nets.insert(
            format!("nx{i}"),
            net(&format!("x{i}"), &[(&format!("m{i}"), "in0")]),
        );
        flush_sinks.push((format!("m{i}"), "flush".to_string()));
    }
    for i in 0..8usize {
        pe(&mut g, &format!("a{i}"), Opcode::Add, &[]);
        flush_sinks.push((format!("a{i}"), "flush".to_string()));
        let (src, port0) = if i == 0 {
            ("m0".to_string(), "in0")
        } else {
            (format!("a{}", i - 1), "in0")
        };
        g.nets
            .insert(format!("ns{i}"), net(&src, &[(&format!("a{i}"), port0)]));
        g.nets.insert(
            format!("nm{}", i + 1),
            net(&format!("m{}", i + 1), &[(&format!("a{i}"), "in1")]),
        );
    }
    output(&mut g, "y", None);
    if mem_stage {
        let mut mem = Node::bare(NodeKind::Mem);
        mem.latency = Some(1);
        mem.schedule = (0..16).collect();
        g.nodes.insert("sample".to_string(), mem);
        g.nets
            .insert("nsum".to_string(), net("a7", &[("sample", "in")]));
        g.nets
            .insert("nout".to_string(), net("sample", &[("y", "in")]));
    } else {
        let mut fl = Node::bare(NodeKind::IoIn);
        fl.width = Width::W1;
        g.nodes.insert("fl".to_string(), fl);
        g.nets.insert(
            "flush".to_string(),
            Net {
                driver: "fl".to_string(),
                sinks: flush_sinks,
            },
        );
        g.nets.insert("nout".to_string(), net("a7", &[("y", "in")]));
    }
    g
}

/// Pointwise activation: clamp negatives to zero, then add a small
/// fraction of the result back on.
fn relu() -> AppGraph {
    let mut g = AppGraph::new(Mode::Dense);
    input(&mut g, "x", None);
    pe(&mut g, "clamp", Opcode::Max, &[(1, 0)]);
    pe(&mut g, "frac", Opcode::Shr, &[(1, 4)]);
    pe(&mut g, "boost", Opcode::Add, &[]);
    output(&mut g, "y", None);
    g.nets.insert("nx".to_string(), net("x", &[("clamp", "in0")]));
    g.nets.insert(
        "nc".to_string(),
        net("clamp", &[("frac", "in0"), ("boost", "in0")]),
    );
    g.nets
        .insert("nf".to_string(), net("frac", &[("boost", "in1")]));
    g.nets.insert("ny".to_string(), net("boost", &[("y", "in")]));
    g
}

/// Two-stage unsharp mask over four lanes: subtract the blurred tap,
/// scale the detail by a shared amount stream, add it back.
fn unsharp() -> AppGraph {
    let mut g = AppGraph::new(Mode::Dense);
    input(&mut g, "amt", None);
    for lane in 0..4usize {
        input(&mut g, &format!("x{lane}"), None);
        input(&mut g, &format!("b{lane}"), None);
        pe(&mut g, &format!("d{lane}"), Opcode::Sub, &[]);
        pe(&mut g, &format!("s{lane}"), Opcode::Mul, &[]);
        pe(&mut g, &format!("o{lane}"), Opcode::Add, &[]);
        output(&mut g, &format!("y{lane}"), None);
        g.nets.insert(
            format!("nx{lane}"),
            net(
                &format!("x{lane}"),
                &[(&format!("d{lane}"), "in0"), (&format!("o{lane}"), "in0")],
            ),
        );
        g.nets.insert(
            format!("nb{lane}"),
            net(&format!("b{lane}"), &[(&format!("d{lane}"), "in1")]),
        );
        g.nets.insert(
            format!("nd{lane}"),
            net(&format!("d{lane}"), &[(&format!("s{lane}"), "in0")]),
        );
        g.nets.insert(
            format!("ns{lane}"),
            net(&format!("s{lane}"), &[(&format!("o{lane}"), "in1")]),
        );
        g.nets.insert(
            format!("ny{lane}"),
            net(&format!("o{lane}"), &[(&format!("y{lane}"), "in")]),
        );
    }
    let amt_sinks: Vec<(String, String)> = (0..4)
        .map(|lane| (format!("s{lane}"), "in1".to_string()))
        .collect();
    g.nets.insert(
        "namt".to_string(),
        Net {
            driver: "amt".to_string(),
            sinks: amt_sinks,
        },
    );
    g
}

/// Streaming vector add. The IO and the adder are pinned far apart so the
/// fabric has real distance to cover.
fn vecadd() -> AppGraph {
    let mut g = AppGraph::new(Mode::Sparse);
    input(&mut g, "a", Some((15, 0)));
    input(&mut g, "b", Some((15, 2)));
    pinned_pe(&mut g, "add", Opcode::Add, (13, 2));
    output(&mut g, "c", Some((0, 7)));
    g.nets.insert("na".to_string(), net("a", &[("add", "in0")]));
    g.nets.insert("nb".to_string(), net("b", &[("add", "in1")]));
    g.nets.insert("nc".to_string(), net("add", &[("c", "in")]));
    g
}

/// Two-lane elementwise multiply over matrix tiles streamed in row-major
/// order.
fn ewmul() -> AppGraph {
    let mut g = AppGraph::new(Mode::Sparse);
    let pins = [
        ("a0", (15, 5), "b0", (15, 7), "m0", (14, 6), "c0", (0, 0)),
        ("a1", (15, 2), "b1", (15, 0), "m1", (14, 1), "c1", (0, 7)),
    ];
    for (lane, (a, pa, b, pb, m, pm, c, pc)) in pins.into_iter().enumerate() {
        input(&mut g, a, Some(pa));
        input(&mut g, b, Some(pb));
        pinned_pe(&mut g, m, Opcode::Mul, pm);
        output(&mut g, c, Some(pc));
        g.nets.insert(format!("na{lane}"), net(a, &[(m, "in0")]));
        g.nets.insert(format!("nb{lane}"), net(b, &[(m, "in1")]));
        g.nets.insert(format!("nc{lane}"), net(m, &[(c, "in")]));
    }
    g
}

/// Tiny tensor-times-vector: a 2x2 tile against a length-2 vector. Sparse
/// nets are single-sink, so each vector element arrives as its own copy
/// per use.
fn ttv() -> AppGraph {
    let mut g = AppGraph::new(Mode::Sparse);
    let ins = [
        ("t00", 0),
        ("v0a", 1),
        ("t10", 2),
        ("v1a", 3),
        ("t01", 4),
        ("v0b", 5),
        ("t11", 6),
        ("v1b", 7),
    ];
    for (id, col) in ins {
        input(&mut g, id, Some((15, col)));
    }
    let muls = [
        ("mu00", "t00", "v0a"),
        ("mu10", "t10", "v1a"),
        ("mu01", "t01", "v0b"),
        ("mu11", "t11", "v1b"),
    ];
    for (id, t, v) in muls {
        pe(&mut g, id, Opcode::Mul, &[]);
        g.nodes.get_mut(id).unwrap().input_regs = true;
        g.nets.insert(format!("n{t}"), net(t, &[(id, "in0")]));
        g.nets.insert(format!("n{v}"), net(v, &[(id, "in1")]));
    }
    for id in ["o0", "o1"] {
        pe(&mut g, id, Opcode::Add, &[]);
        g.nodes.get_mut(id).unwrap().input_regs = true;
    }
    output(&mut g, "y0", Some((0, 7)));
    output(&mut g, "y1", Some((0, 0)));
    g.nets
        .insert("nmu00".to_string(), net("mu00", &[("o0", "in0")]));
    g.nets
        .insert("nmu10".to_string(), net("mu10", &[("o0", "in1")]));
    g.nets
        .insert("nmu01".to_string(), net("mu01", &[("o1", "in0")]));
    g.nets
        .insert("nmu11".to_string(), net("mu11", &[("o1", "in1")]));
    g.nets.insert("ny0".to_string(), net("o0", &[("y0", "in")]));
    g.nets.insert("ny1".to_string(), net("o1", &[("y1", "in")]));
    g
}

/// Sixteen cycles of deterministic pixel data for the conv taps plus a
/// held-high flush line.
fn conv_stim() -> Stimulus {
    let mut inputs = BTreeMap::new();
    let mut state = 7u32;
    for i in 0..9usize {
        let mut stream = Vec::with_capacity(16);
        for _ in 0..16 {
            state = state.wrapping_mul(1103515245).wrapping_add(12345);
            stream.push(((state >> 16) & 0xff) as u16);
        }
        inputs.insert(format!("x{i}"), stream);
    }
    inputs.insert("fl".to_string(), vec![1; 16]);
    Stimulus::Dense { inputs }
}

/// A short sparse run for the vector add, with a stall bubble on each
/// operand and a terminating end-of-stream marker.
fn vecadd_stim() -> Stimulus {
    let toks = |vals: &[u16], bubble_at: usize| -> Vec<Option<Token>> {
        let mut out: Vec<Option<Token>> = Vec::new();
        for (i, v) in vals.iter().enumerate() {
            if i == bubble_at {
                out.push(None);
            }
            out.push(Some(Token::Val(*v)));
        }
        out.push(Some(Token::Eos));
        out
    };
    let mut inputs = BTreeMap::new();
    inputs.insert("a".to_string(), toks(&[3, 5, 250, 9, 1000, 42], 2));
    inputs.insert("b".to_string(), toks(&[10, 20, 6, 30, 24, 58], 4));
    Stimulus::Sparse { inputs }
}

fn write_app(dir: &Path, name: &str, g: &AppGraph) {
    let violations = validate_semantics(g);
    assert!(violations.is_empty(), "{name}: {violations:?}");
    let text = serialize_app(g);
    parse_app(&text).unwrap_or_else(|e| panic!("{name} does not round-trip: {e}"));
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    println!("wrote {}", path.display());
}

fn main() {
    let dir = Path::new("benchmarks");
    std::fs::create_dir_all(dir).unwrap();
    write_app(dir, "conv3x3.json", &conv3x3(false));
    write_app(dir, "conv_mem.json", &conv3x3(true));
    write_app(dir, "relu.json", &relu());
    write_app(dir, "unsharp.json", &unsharp());
    write_app(dir, "sparse_vecadd.json", &vecadd());
    write_app(dir, "sparse_ewmul.json", &ewmul());
    write_app(dir, "sparse_ttv.json", &ttv());
    for (name, stim) in [
        ("conv3x3_stim.json", conv_stim()),
        ("sparse_vecadd_stim.json", vecadd_stim()),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, serde_json::to_string_pretty(&stim).unwrap()).unwrap();
        println!("wrote {}", path.display());
    }
}
