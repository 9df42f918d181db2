//! Shared fixtures for the integration suites: benchmark file loading, fast
//! annealing knobs, stimulus builders, and an independent register-bounded
//! path enumerator used as a timing oracle.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use cascade_core::{
    build_routing_graph, load_arch_file, parse_app, place, route, AppGraph, ArchSpec, Coord,
    DelayLibrary, NetRoute, Node, NodeKind, PnrParams, RoutedApp, SegEntry, Stimulus,
    Token, Width,
};
use rand::Rng;

pub fn bench_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks")
}

pub fn load_bench_arch(name: &str) -> (ArchSpec, DelayLibrary) {
    let text = std::fs::read_to_string(bench_dir().join(name))
        .unwrap_or_else(|e| panic!("reading {name}: {e}"));
    load_arch_file(&text).unwrap_or_else(|e| panic!("loading {name}: {e}"))
}

pub fn load_bench_app(name: &str) -> AppGraph {
    let text = std::fs::read_to_string(bench_dir().join(name))
        .unwrap_or_else(|e| panic!("reading {name}: {e}"));
    parse_app(&text).unwrap_or_else(|e| panic!("parsing {name}: {e}"))
}

/// Annealing and routing knobs sized for small randomized apps, where volume
/// matters more than placement quality.
pub fn fast_params(seed: u64) -> PnrParams {
    PnrParams {
        seed,
        initial_temp: Some(3.0),
        cooling_rate: 0.85,
        moves_per_temp: Some(48),
        route_iter_limit: 28,
        ..PnrParams::default()
    }
}

/// Placement and routing knobs for the benchmark compiles, where the result
/// quality feeds speedup and monotonicity checks.
pub fn bench_params(seed: u64) -> PnrParams {
    PnrParams {
        seed,
        moves_per_temp: Some(150),
        ..PnrParams::default()
    }
}

pub fn place_route(g: &AppGraph, spec: &ArchSpec, params: &PnrParams) -> Option<RoutedApp> {
    let rgraph = build_routing_graph(spec).ok()?;
    let (placement, _) = place(g, spec, params).ok()?;
    let (routed, _) = route(g, &placement, spec, &rgraph, params).ok()?;
    Some(routed)
}

/// Flips on a fraction of the free switch-box register sites, so timing and
/// round-trip checks cover registered interconnect.
pub fn enable_random_regs<R: Rng>(r: &mut RoutedApp, spec: &ArchSpec, rng: &mut R, p: f64) {
    if !spec.sb_register_sites {
        return;
    }
    for route in r.routes.values_mut() {
        for seg in route.segments.iter_mut() {
            if matches!(seg.entry, SegEntry::Side(_)) && rng.gen_bool(p) {
                seg.register_enabled = true;
            }
        }
    }
}

/// Deterministic dense streams, one per IO input, `len` words each.
pub fn dense_stim(g: &AppGraph, len: usize) -> Stimulus {
    let mut inputs = BTreeMap::new();
    for (k, (id, node)) in g
        .nodes
        .iter()
        .filter(|(_, n)| n.kind == NodeKind::IoIn)
        .enumerate()
    {
        let stream: Vec<u16> = (0..len)
            .map(|i| {
                let v = (i as u32 + 1).wrapping_mul(2654435761).wrapping_add(k as u32 * 40503);
                if node.width == Width::W1 {
                    1
                } else {
                    (v >> 9) as u16
                }
            })
            .collect();
        inputs.insert(id.clone(), stream);
    }
    Stimulus::Dense { inputs }
}

/// Deterministic sparse streams with a stall bubble partway through and a
/// terminating end-of-stream marker.
pub fn sparse_stim(g: &AppGraph, len: usize) -> Stimulus {
    let mut inputs = BTreeMap::new();
    for (k, (id, _)) in g
        .nodes
        .iter()
        .filter(|(_, n)| n.kind == NodeKind::IoIn)
        .enumerate()
    {
        let mut stream: Vec<Option<Token>> = Vec::new();
        for i in 0..len {
            if i % (k + 3) == 2 {
                stream.push(None);
            }
            let v = (i as u32 + 7).wrapping_mul(48271).wrapping_add(k as u32 * 131);
            stream.push(Some(Token::Val((v >> 7) as u16)));
        }
        stream.push(Some(Token::Eos));
        inputs.insert(id.clone(), stream);
    }
    Stimulus::Sparse { inputs }
}

/// Whether a value arriving at this input lands in a register there. Kept
/// deliberately separate from the library's model: the oracle re-derives the
/// timing rules.
fn oracle_registered_input(node: &Node, port: &str) -> bool {
    match node.kind {
        NodeKind::IoOut
        | NodeKind::Mem
        | NodeKind::Reg
        | NodeKind::Shift
        | NodeKind::Fifo
        | NodeKind::IoIn => true,
        NodeKind::Pe => node.input_regs || port == "flush",
    }
}

/// Walks one route tree by brute force. Returns `(tap key, arrival)` for the
/// connection-box taps and records a finished path for every enabled
/// switch-box register crossed.
fn oracle_walk_route(
    route: &NetRoute,
    tiles: &BTreeMap<String, Coord>,
    start: f64,
    spec: &ArchSpec,
    lib: &DelayLibrary,
    totals: &mut Vec<f64>,
) -> Vec<(String, f64)> {
    let n = route.segments.len();
    let parents: Vec<Option<usize>> = (0..n).map(|i| route.parent_segment(i, spec)).collect();
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut roots = Vec::new();
    for (i, p) in parents.iter().enumerate() {
        match p {
            Some(p) => kids[*p].push(i),
            None => roots.push(i),
        }
    }
    let mut taps_at: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (key, tap) in &route.taps {
        let tile = tiles[key];
        let parent = route
            .tap_parent(tile, tap, spec)
            .unwrap_or_else(|| panic!("tap {key} has no feeding segment"));
        taps_at.entry(parent).or_default().push(key.clone());
    }

    let mut arrivals = Vec::new();
    let mut stack: Vec<(usize, f64)> = roots.into_iter().map(|i| (i, start)).collect();
    while let Some((i, t_in)) = stack.pop() {
        let seg = &route.segments[i];
        let hop = match seg.entry {
            SegEntry::Core => 0.0,
            SegEntry::Side(entry) => {
                let kind = spec.tile_kind(seg.at).expect("segment on-grid");
                lib.hop_ns(kind, entry, seg.exit, seg.width)
                    .expect("hop delay defined")
            }
        };
        let t_wire = t_in + hop;
        let t_out = if seg.register_enabled {
            totals.push(t_wire + lib.setup_ns + lib.clock_skew_ns);
            lib.reg_clk_to_q_ns
        } else {
            t_wire
        };
        for k in &kids[i] {
            stack.push((*k, t_out));
        }
        for key in taps_at.get(&i).into_iter().flatten() {
            arrivals.push((key.clone(), t_out + lib.cb_in_ns));
        }
    }
    arrivals
}

/// Brute-force register-bounded critical path: enumerates every path from a
/// launching register (or constant source) to a capturing register, summing
/// element delays along the way, and returns the worst total. Independent of
/// the library's forward-propagation analysis.
pub fn oracle_total_ns(r: &RoutedApp, spec: &ArchSpec, lib: &DelayLibrary) -> f64 {
    let g = &r.graph;
    let mut totals: Vec<f64> = Vec::new();
    let driver_index = g.driver_index();

    // Data inputs that some routed net actually reaches; everything else is
    // constant or hardened and launches paths at its own core.
    let mut fed: BTreeMap<(String, String), bool> = BTreeMap::new();
    for (net_id, route) in &r.routes {
        if route.segments.is_empty() {
            continue;
        }
        for (sink, port) in &g.nets[net_id].sinks {
            fed.insert((sink.clone(), port.clone()), true);
        }
    }

    // Work list of node outputs with a known launch or arrival time.
    let mut work: Vec<(String, f64)> = Vec::new();
    for (id, node) in &g.nodes {
        match node.kind {
            NodeKind::IoIn | NodeKind::Reg | NodeKind::Shift | NodeKind::Fifo => {
                work.push((id.clone(), lib.reg_clk_to_q_ns));
            }
            NodeKind::Mem => work.push((id.clone(), lib.reg_clk_to_q_ns + lib.mem_core_ns)),
            NodeKind::Pe if node.input_regs => {
                work.push((id.clone(), lib.reg_clk_to_q_ns + lib.pe_core_ns));
            }
            NodeKind::Pe => {
                let any_fed = node
                    .data_in_ports()
                    .iter()
                    .any(|(port, _)| fed.contains_key(&(id.clone(), port.to_string())));
                if !any_fed {
                    work.push((id.clone(), lib.pe_core_ns));
                }
            }
            NodeKind::IoOut => {}
        }
    }

    while let Some((id, t)) = work.pop() {
        for net_id in driver_index.get(&id).into_iter().flatten() {
            let Some(route) = r.routes.get(net_id) else {
                continue;
            };
            if route.segments.is_empty() {
                continue;
            }
            let tiles = r.sink_tiles(net_id);
            let sink_of: BTreeMap<String, (String, String)> = g.nets[net_id]
                .sinks
                .iter()
                .map(|(n, p)| (format!("{n}:{p}"), (n.clone(), p.clone())))
                .collect();
            for (key, arrival) in oracle_walk_route(route, &tiles, t, spec, lib, &mut totals) {
                let (sink, port) = sink_of[&key].clone();
                let sink_node = &g.nodes[&sink];
                if oracle_registered_input(sink_node, &port) {
                    totals.push(arrival + lib.setup_ns + lib.clock_skew_ns);
                } else {
                    work.push((sink.clone(), arrival + lib.pe_core_ns));
                }
            }
        }
    }

    for routes in [&r.valid_routes, &r.ready_routes] {
        for (net_id, route) in routes.iter() {
            if route.segments.is_empty() {
                continue;
            }
            let tiles = r.sink_tiles(net_id);
            for (_, arrival) in oracle_walk_route(
                route,
                &tiles,
                lib.reg_clk_to_q_ns,
                spec,
                lib,
                &mut totals,
            ) {
                totals.push(arrival + lib.setup_ns + lib.clock_skew_ns);
            }
        }
    }

    totals.into_iter().fold(0.0, f64::max)
}
