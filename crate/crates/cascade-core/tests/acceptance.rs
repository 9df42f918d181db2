//! Release gate: one test per shipped guarantee, each printing a PASS/FAIL
//! line. Run with `cargo test --test acceptance -- --nocapture` to see the
//! summary lines.

mod common;

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::time::Instant;

use cascade_core::{
    build_routing_graph, collapse_register_chains, compute_pipeline, critical_path, cycle_arrivals,
    decode_config, duplicate_config, emit_config, ensure_input_fifos, equivalent_modulo_latency,
    hpwl, insert_sparse_fifos, net_cost, pipeline_broadcasts, post_pnr_pipeline,
    routed_apps_equivalent, simulate_dense_graph, simulate_dense_routed, simulate_sparse,
    AppGraph, ArchSpec, Coord, Net, NodeKind, Placement, PnrParams, PostPnrOptions,
    PostPnrReport, RoutedApp, Stimulus, Token,
};
use common::{
    bench_params, dense_stim, enable_random_regs, fast_params, load_bench_app, load_bench_arch,
    oracle_total_ns, place_route,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn verdict(label: &str, ok: bool, detail: &str) {
    println!(
        "ACCEPTANCE {label}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "{label}: {detail}");
}

/// The latency passes as the compile flow runs them: compute pipelining,
/// optionally broadcast treeing, then chain collapsing so the balancing
/// registers fit the array.
fn apply_passes(g: &AppGraph, spec: &ArchSpec, broadcast: bool) -> AppGraph {
    let (g1, _) = compute_pipeline(g).expect("compute pipelining");
    let g2 = if broadcast {
        pipeline_broadcasts(&g1, &spec.hardened_nets, 8, 4, 256)
            .expect("broadcast pipelining")
            .0
    } else {
        g1
    };
    collapse_register_chains(&g2, 4, spec.regfile_depth)
        .expect("chain collapsing")
        .0
}

fn compile(g: &AppGraph, spec: &ArchSpec, seed: u64, alpha: f64) -> RoutedApp {
    let params = PnrParams {
        alpha,
        ..bench_params(seed)
    };
    place_route(g, spec, &params).expect("benchmark placement and routing")
}

#[test]
fn sta_matches_exhaustive_path_enumeration() {
    let (spec, _) = load_bench_arch("arch_8x8.json");
    let start = Instant::now();
    let mut checked = 0u32;
    let mut seed = 0u64;
    let mut worst_gap = 0.0f64;
    while checked < 500 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = if seed % 5 == 0 {
            cascade_core::synth::random_sparse_app(&mut rng, 4)
        } else {
            cascade_core::synth::random_dense_app(&mut rng, 16)
        };
        let io = g
            .nodes
            .values()
            .filter(|n| matches!(n.kind, NodeKind::IoIn | NodeKind::IoOut))
            .count();
        if g.nodes.len() > 30 || io > 14 {
            continue;
        }
        let Some(mut r) = place_route(&g, &spec, &fast_params(seed)) else {
            continue;
        };
        if g.mode == cascade_core::Mode::Dense {
            enable_random_regs(&mut r, &spec, &mut rng, 0.2);
        }
        let lib = cascade_core::synth::random_delay_library(&mut rng);
        let report = critical_path(&r, &spec, &lib).expect("analyzable route");
        let oracle = oracle_total_ns(&r, &spec, &lib);
        worst_gap = worst_gap.max((report.total_ns - oracle).abs());
        assert_eq!(
            report.total_ns, oracle,
            "seed {seed}: analysis {} vs enumeration {}",
            report.total_ns, oracle
        );
        checked += 1;
    }
    let elapsed = start.elapsed();
    let ok = elapsed.as_secs_f64() < 10.0;
    verdict(
        "sta-oracle-equivalence",
        ok,
        &format!(
            "500 mapped apps, exact totals (worst gap {worst_gap:.2e}), {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn latency_passes_preserve_program_semantics() {
    let empty = BTreeSet::new();
    let mut checked = 0u32;
    let mut seed = 0u64;
    while checked < 200 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ seed);
        let g0 = cascade_core::synth::random_dense_app(&mut rng, 28);
        if g0.nodes.len() > 40 {
            continue;
        }
        let stim = dense_stim(&g0, 96);
        let base = simulate_dense_graph(&g0, &stim, None).expect("baseline run");

        let (g1, _) = compute_pipeline(&g0).expect("compute pipelining");
        let (g2, _) = pipeline_broadcasts(&g1, &empty, 8, 4, 256).expect("broadcast pipelining");
        let (g3, _) = collapse_register_chains(&g2, 4, 32).expect("chain collapsing");
        for (stage, g) in [("compute", &g1), ("broadcast", &g2), ("collapse", &g3)] {
            let arrivals = cycle_arrivals(g).expect("acyclic");
            assert!(
                arrivals.is_balanced(),
                "seed {seed}: arrivals skewed after {stage}"
            );
            let run = simulate_dense_graph(g, &stim, None).expect("transformed run");
            let (same, _) = equivalent_modulo_latency(&base, &run);
            assert!(same, "seed {seed}: streams diverge after {stage}");
        }
        checked += 1;
    }
    verdict(
        "pass-semantics-preservation",
        true,
        "200 dense DAGs, balanced joins and equivalent streams after every pass",
    );
}

#[test]
fn placement_cost_matches_hand_computations() {
    let place = |pairs: &[(&str, (u16, u16))]| Placement {
        loc: pairs
            .iter()
            .map(|(n, (r, c))| (n.to_string(), Coord::new(*r, *c)))
            .collect(),
    };
    let net = |driver: &str, sinks: &[&str]| Net {
        driver: driver.into(),
        sinks: sinks.iter().map(|s| (s.to_string(), "in0".into())).collect(),
    };
    let params = |alpha: f64, gamma: f64| PnrParams {
        alpha,
        gamma,
        ..PnrParams::default()
    };

    // Wirelength: a 2x3 bounding box, a single placed endpoint, and an
    // unplaced sink that must not count.
    let pa = place(&[("d", (0, 0)), ("s", (2, 3))]);
    assert_eq!(hpwl(&net("d", &["s"]), &pa), 5);
    let pb = place(&[("d", (4, 4))]);
    assert_eq!(hpwl(&net("d", &["s"]), &pb), 0);
    let pc = place(&[("d", (1, 1)), ("v", (4, 3))]);
    assert_eq!(hpwl(&net("d", &["u", "v"]), &pc), 5);

    // alpha=1: hpwl 5 plus gamma 2.5 over the two free interior tiles of a
    // (0,0)-(3,2) box gives exactly 10.
    let p1 = place(&[("d", (0, 0)), ("s", (3, 2))]);
    assert_eq!(net_cost(&net("d", &["s"]), &p1, &params(1.0, 2.5)), 10.0);

    // alpha=2, gamma=0: hpwl 4 squared.
    let p2 = place(&[("d", (0, 0)), ("s", (2, 2))]);
    assert_eq!(net_cost(&net("d", &["s"]), &p2, &params(2.0, 0.0)), 16.0);

    // alpha=2, gamma=2: hpwl 8, and 4 of the 9 interior tiles stay free once
    // five blockers move in, so (8 + 2*4)^2 = 256.
    let p3 = place(&[
        ("d", (0, 0)),
        ("s", (4, 4)),
        ("b0", (1, 1)),
        ("b1", (1, 2)),
        ("b2", (2, 3)),
        ("b3", (3, 1)),
        ("b4", (3, 3)),
    ]);
    assert_eq!(net_cost(&net("d", &["s"]), &p3, &params(2.0, 2.0)), 256.0);

    verdict(
        "placement-cost-hand-values",
        true,
        "hpwl 5/0/5 and net_cost 10/16/256 across the alpha and gamma cases",
    );
}

#[test]
fn conv_pipeline_speedup_at_least_5x() {
    let (spec, lib) = load_bench_arch("arch_8x8.json");
    let rgraph = build_routing_graph(&spec).expect("routing graph");
    let g = load_bench_app("conv3x3.json");

    let base = compile(&g, &spec, 1, 1.5);
    let base_ns = critical_path(&base, &spec, &lib).expect("baseline timing").total_ns;

    let piped = apply_passes(&g, &spec, true);
    let routed = compile(&piped, &spec, 1, 1.5);
    let (fast, _) = post_pnr_pipeline(&routed, &spec, &rgraph, &lib, &PostPnrOptions::default())
        .expect("post-PnR pipelining");
    let fast_ns = critical_path(&fast, &spec, &lib).expect("final timing").total_ns;

    let ratio = base_ns / fast_ns;
    verdict(
        "conv-pipeline-speedup",
        ratio >= 5.0,
        &format!("unpipelined {base_ns:.2} ns vs pipelined {fast_ns:.2} ns = {ratio:.1}x"),
    );
}

#[test]
fn ablation_critical_path_non_increasing() {
    let (spec, lib) = load_bench_arch("arch_8x8.json");
    let rgraph = build_routing_graph(&spec).expect("routing graph");
    let benchmarks = ["conv3x3.json", "conv_mem.json", "relu.json", "unsharp.json"];
    let mut summary = Vec::new();
    let mut all_ok = true;
    for name in benchmarks {
        let g = load_bench_app(name);
        let compute = apply_passes(&g, &spec, false);
        let broadcast = apply_passes(&g, &spec, true);
        let mut monotone = 0u32;
        for seed in 1..=10u64 {
            let t_none = critical_path(&compile(&g, &spec, seed, 1.0), &spec, &lib)
                .expect("timing")
                .total_ns;
            let r_comp = compile(&compute, &spec, seed, 1.0);
            let t_comp = critical_path(&r_comp, &spec, &lib).expect("timing").total_ns;
            let t_bcast = if broadcast == compute {
                t_comp
            } else {
                critical_path(&compile(&broadcast, &spec, seed, 1.0), &spec, &lib)
                    .expect("timing")
                    .total_ns
            };
            let r_alpha = compile(&broadcast, &spec, seed, 1.5);
            let t_alpha = critical_path(&r_alpha, &spec, &lib).expect("timing").total_ns;
            let (_, rep) = post_pnr_pipeline(&r_alpha, &spec, &rgraph, &lib, &PostPnrOptions::default())
                .expect("post-PnR pipelining");
            let t_post = *rep.history.last().expect("nonempty history");
            let chain = [t_none, t_comp, t_bcast, t_alpha, t_post];
            if chain.windows(2).all(|w| w[1] <= w[0] + 1e-9) {
                monotone += 1;
            }
        }
        summary.push(format!("{name} {monotone}/10"));
        all_ok &= monotone > 5;
    }
    verdict(
        "ablation-monotonicity",
        all_ok,
        &format!("seeds with non-increasing prefixes: {}", summary.join(", ")),
    );
}

fn check_history(label: &str, rep: &PostPnrReport, max_iters: u32) {
    assert!(
        rep.history.windows(2).all(|w| w[1] <= w[0] + 1e-9),
        "{label}: accepted step regressed: {:?}",
        rep.history
    );
    assert!(rep.iterations <= max_iters, "{label}: ran past the limit");
    assert_eq!(
        rep.history.len() as u32,
        rep.iterations + 1,
        "{label}: history and iteration count disagree"
    );
}

#[test]
fn postpnr_iterations_never_regress() {
    let (spec, lib) = load_bench_arch("arch_8x8.json");
    let rgraph = build_routing_graph(&spec).expect("routing graph");
    let opts = PostPnrOptions::default();
    let mut runs = 0u32;
    for name in ["conv3x3.json", "conv_mem.json", "relu.json", "unsharp.json"] {
        let piped = apply_passes(&load_bench_app(name), &spec, true);
        for seed in 1..=3u64 {
            let routed = compile(&piped, &spec, seed, 1.5);
            let (_, rep) = post_pnr_pipeline(&routed, &spec, &rgraph, &lib, &opts)
                .expect("post-PnR pipelining");
            check_history(&format!("{name} seed {seed}"), &rep, opts.max_iters);
            runs += 1;
        }
    }
    for name in ["sparse_vecadd.json", "sparse_ewmul.json", "sparse_ttv.json"] {
        let (g, _) = ensure_input_fifos(&load_bench_app(name), opts.fifo_depth);
        for seed in 1..=3u64 {
            let routed = compile(&g, &spec, seed, 1.5);
            let (_, rep) = insert_sparse_fifos(&routed, &spec, &rgraph, &lib, &opts)
                .expect("FIFO insertion");
            check_history(&format!("{name} seed {seed}"), &rep, opts.max_iters);
            runs += 1;
        }
    }
    verdict(
        "postpnr-loop-safety",
        true,
        &format!("{runs} runs terminated within the limit and never regressed"),
    );
}

fn sparse_tokens(vals: &[u16], bubble_at: usize) -> Vec<Option<Token>> {
    let mut out = Vec::new();
    for (i, v) in vals.iter().enumerate() {
        if i == bubble_at {
            out.push(None);
        }
        out.push(Some(Token::Val(*v)));
    }
    out.push(Some(Token::Eos));
    out
}

fn val_stream(vals: &[u16]) -> Vec<Token> {
    let mut out: Vec<Token> = vals.iter().map(|v| Token::Val(*v)).collect();
    out.push(Token::Eos);
    out
}

#[test]
fn sparse_fifo_insertion_keeps_tokens_and_speed() {
    let (spec, lib) = load_bench_arch("arch_8x8.json");
    let rgraph = build_routing_graph(&spec).expect("routing graph");
    let opts = PostPnrOptions::default();

    // Per kernel: input streams and the token sequences the kernel must emit.
    let a = [3u16, 5, 250, 9];
    let b = [10u16, 20, 6, 30];
    let t = [[2u16, 3], [4, 5]];
    let v = [7u16, 11];
    let cases: [(&str, Vec<(&str, Vec<Option<Token>>)>, Vec<(&str, Vec<Token>)>); 3] = [
        (
            "sparse_vecadd.json",
            vec![("a", sparse_tokens(&a, 1)), ("b", sparse_tokens(&b, 3))],
            vec![("c", val_stream(&[13, 25, 256, 39]))],
        ),
        (
            "sparse_ewmul.json",
            vec![
                ("a0", sparse_tokens(&a, 0)),
                ("b0", sparse_tokens(&b, 2)),
                ("a1", sparse_tokens(&b, 1)),
                ("b1", sparse_tokens(&a, 3)),
            ],
            vec![
                ("c0", val_stream(&[30, 100, 1500, 270])),
                ("c1", val_stream(&[30, 100, 1500, 270])),
            ],
        ),
        (
            "sparse_ttv.json",
            vec![
                ("t00", sparse_tokens(&[t[0][0]; 3], 0)),
                ("t01", sparse_tokens(&[t[0][1]; 3], 1)),
                ("t10", sparse_tokens(&[t[1][0]; 3], 2)),
                ("t11", sparse_tokens(&[t[1][1]; 3], 0)),
                ("v0a", sparse_tokens(&[v[0]; 3], 1)),
                ("v0b", sparse_tokens(&[v[0]; 3], 2)),
                ("v1a", sparse_tokens(&[v[1]; 3], 0)),
                ("v1b", sparse_tokens(&[v[1]; 3], 1)),
            ],
            vec![
                ("y0", val_stream(&[58; 3])),
                ("y1", val_stream(&[76; 3])),
            ],
        ),
    ];

    let mut summary = Vec::new();
    let mut all_ok = true;
    for (name, ins, outs) in cases {
        let stim = Stimulus::Sparse {
            inputs: ins
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        };
        let (g, _) = ensure_input_fifos(&load_bench_app(name), opts.fifo_depth);
        let routed = compile(&g, &spec, 1, 1.5);
        let base_ns = critical_path(&routed, &spec, &lib).expect("timing").total_ns;
        let base_run = simulate_sparse(&routed, &spec, &stim, 20_000).expect("baseline run");
        assert!(!base_run.deadlocked, "{name}: baseline deadlocked");

        let (piped, rep) =
            insert_sparse_fifos(&routed, &spec, &rgraph, &lib, &opts).expect("FIFO insertion");
        let piped_ns = critical_path(&piped, &spec, &lib).expect("timing").total_ns;
        let piped_run = simulate_sparse(&piped, &spec, &stim, 20_000).expect("pipelined run");
        assert!(!piped_run.deadlocked, "{name}: pipelined run deadlocked");
        assert!(rep.inserted_regs > 0, "{name}: nothing was inserted");

        for (out, expect) in &outs {
            assert_eq!(
                base_run.sparse_outputs[*out], *expect,
                "{name}: baseline tokens at {out}"
            );
            assert_eq!(
                piped_run.sparse_outputs[*out], *expect,
                "{name}: pipelined tokens at {out}"
            );
        }
        let ratio = base_ns / piped_ns;
        summary.push(format!("{name} {ratio:.2}x"));
        all_ok &= ratio >= 1.5;
    }
    verdict(
        "sparse-kernel-speedup",
        all_ok,
        &format!("exact tokens, no deadlock, speedups: {}", summary.join(", ")),
    );
}

#[test]
fn hardened_flush_stays_off_the_fabric() {
    let (spec, lib) = load_bench_arch("arch_8x8_flush.json");
    let rgraph = build_routing_graph(&spec).expect("routing graph");
    let g = load_bench_app("conv3x3.json");
    let piped = apply_passes(&g, &spec, true);
    let routed = compile(&piped, &spec, 1, 1.5);
    let (fast, _) = post_pnr_pipeline(&routed, &spec, &rgraph, &lib, &PostPnrOptions::default())
        .expect("post-PnR pipelining");

    let flush = &fast.routes["flush"];
    assert!(flush.segments.is_empty(), "flush crossed the fabric");
    assert!(flush.taps.is_empty(), "flush reached a connection box");

    let report = critical_path(&fast, &spec, &lib).expect("timing");
    assert!(
        report.critical_path.iter().all(|(el, _)| !el.contains("flush")),
        "flush showed up on the critical path: {:?}",
        report.critical_path
    );
    assert_eq!(
        report.per_net_slack["flush"], report.total_ns,
        "some register-bounded path crossed the flush net"
    );

    let config = emit_config(&fast, &spec).expect("config emission");
    assert!(config.hardened.contains_key("flush"));
    let tiles_json = serde_json::to_string(&config.tiles).expect("tile section");
    assert!(
        !tiles_json.contains("\"flush\""),
        "a tile record references the flush net"
    );
    let decoded = decode_config(&config, &spec).expect("config decode");
    assert!(routed_apps_equivalent(&fast, &decoded));

    verdict(
        "flush-hardening",
        true,
        "hardened flush has no segments or taps, full slack, and survives the round trip",
    );
}

#[test]
fn duplicated_regions_replicate_exactly() {
    let (spec, lib) = load_bench_arch("arch_8x8.json");
    let (target, _) = load_bench_arch("arch_16x8.json");
    let rgraph = build_routing_graph(&spec).expect("routing graph");
    let g = load_bench_app("conv3x3.json");
    let piped = apply_passes(&g, &spec, true);

    let build = || {
        let routed = compile(&piped, &spec, 1, 1.5);
        let (fast, _) =
            post_pnr_pipeline(&routed, &spec, &rgraph, &lib, &PostPnrOptions::default())
                .expect("post-PnR pipelining");
        emit_config(&fast, &spec).expect("config emission")
    };
    let config = build();
    let again = build();
    assert_eq!(
        serde_json::to_string(&config).unwrap(),
        serde_json::to_string(&again).unwrap(),
        "same seed produced different configs"
    );

    let single = decode_config(&config, &spec).expect("single decode");
    let stim = dense_stim(&single.graph, 24);
    let single_run = simulate_dense_routed(&single, &spec, &stim, None).expect("single run");
    let y_single = &single_run.dense_outputs["y"];

    let dup = duplicate_config(&config, 8, 8, 2, &target).expect("duplication");
    for r in 0..8u16 {
        for c in 0..8u16 {
            let a = dup.tiles.get(&Coord::new(r, c));
            let b = dup.tiles.get(&Coord::new(r + 8, c));
            let aj = a.map(|t| serde_json::to_string(t).unwrap());
            let bj = b.map(|t| serde_json::to_string(t).unwrap());
            assert_eq!(aj, bj, "tile ({r},{c}) differs from its copy");
        }
    }

    let dup_r = decode_config(&dup, &target).expect("duplicated decode");
    let Stimulus::Dense { inputs: base_in } = &stim else {
        unreachable!("dense stimulus")
    };
    let mut inputs = BTreeMap::new();
    for (id, node) in &dup_r.graph.nodes {
        if node.kind == NodeKind::IoIn {
            let base = id.split('#').next().expect("instance name");
            inputs.insert(id.clone(), base_in[base].clone());
        }
    }
    let dup_run = simulate_dense_routed(&dup_r, &target, &Stimulus::Dense { inputs }, None)
        .expect("duplicated run");
    assert_eq!(&dup_run.dense_outputs["y#0"], y_single);
    assert_eq!(&dup_run.dense_outputs["y#1"], y_single);

    verdict(
        "duplication-equivalence",
        true,
        "byte-identical tile blocks and instance outputs matching the single compile",
    );
}

#[test]
fn config_round_trip_lossless() {
    let (spec, _) = load_bench_arch("arch_8x8.json");
    let mut checked = 0u32;
    let mut seed = 0u64;
    while checked < 1000 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(0xf00d ^ seed);
        let g = if seed % 10 < 7 {
            cascade_core::synth::random_dense_app(&mut rng, 16)
        } else {
            cascade_core::synth::random_sparse_app(&mut rng, 4)
        };
        let io = g
            .nodes
            .values()
            .filter(|n| matches!(n.kind, NodeKind::IoIn | NodeKind::IoOut))
            .count();
        if g.nodes.len() > 30 || io > 14 {
            continue;
        }
        let Some(mut r) = place_route(&g, &spec, &fast_params(seed)) else {
            continue;
        };
        if g.mode == cascade_core::Mode::Dense {
            enable_random_regs(&mut r, &spec, &mut rng, 0.15);
        }
        let config = emit_config(&r, &spec).expect("config emission");
        let text = serde_json::to_string(&config).expect("config JSON");
        let back: cascade_core::Config = serde_json::from_str(&text).expect("config parse");
        let decoded = decode_config(&back, &spec).expect("config decode");
        assert!(
            routed_apps_equivalent(&r, &decoded),
            "seed {seed}: decode diverged from the emitted app"
        );
        checked += 1;
    }
    verdict(
        "config-round-trip",
        true,
        "1000 emitted configs decoded back to equivalent mapped apps",
    );
}
