//! Randomized invariants over generated apps: serialization identity,
//! topological order coverage, balancing idempotence, collapse arrival
//! preservation, and stream-shift detection.

mod common;

use std::collections::BTreeSet;

use cascade_core::{
    balance_branches, collapse_register_chains, compute_pipeline, cycle_arrivals,
    equivalent_modulo_latency, parse_app, serialize_app, topo_order, NodeKind, TraceResult, Value,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dense_app(seed: u64) -> cascade_core::AppGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cascade_core::synth::random_dense_app(&mut rng, 24)
}

fn sparse_app(seed: u64) -> cascade_core::AppGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cascade_core::synth::random_sparse_app(&mut rng, 5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialization_round_trips(seed in any::<u64>(), sparse in any::<bool>()) {
        // Parsing canonicalizes sink order, so compare in canonical form.
        let mut g = if sparse { sparse_app(seed) } else { dense_app(seed) };
        for net in g.nets.values_mut() {
            net.sinks.sort();
        }
        let text = serialize_app(&g);
        let back = parse_app(&text).expect("parseable");
        prop_assert_eq!(g, back);
    }

    #[test]
    fn topo_order_covers_every_node_once(seed in any::<u64>()) {
        let g = dense_app(seed);
        let order = topo_order(&g).expect("acyclic");
        let seen: BTreeSet<_> = order.iter().collect();
        prop_assert_eq!(order.len(), g.nodes.len());
        prop_assert_eq!(seen.len(), g.nodes.len());
        for id in order.iter() {
            prop_assert!(g.nodes.contains_key(id));
        }
    }

    #[test]
    fn balancing_is_idempotent(seed in any::<u64>()) {
        let g = dense_app(seed);
        let (once, _) = balance_branches(&g).expect("balanceable");
        prop_assert!(cycle_arrivals(&once).expect("acyclic").is_balanced());
        let (twice, added) = balance_branches(&once).expect("balanceable");
        prop_assert_eq!(added, 0);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn collapsing_keeps_output_arrivals(seed in any::<u64>()) {
        let g = dense_app(seed);
        let (piped, _) = compute_pipeline(&g).expect("pipelinable");
        let (folded, _) = collapse_register_chains(&piped, 3, 32).expect("collapsible");
        let before = cycle_arrivals(&piped).expect("acyclic");
        let after = cycle_arrivals(&folded).expect("acyclic");
        for (id, node) in &piped.nodes {
            if node.kind == NodeKind::IoOut {
                let key = (id.clone(), "in".to_string());
                prop_assert_eq!(before.input.get(&key), after.input.get(&key));
                prop_assert!(before.input.contains_key(&key));
            }
        }
    }

    #[test]
    fn stream_shift_is_detected(
        vals in proptest::collection::vec(any::<u16>(), 1..24),
        shift in 0usize..8,
        corrupt in any::<bool>(),
    ) {
        let mut a = TraceResult::default();
        let mut b = TraceResult::default();
        let direct: Vec<Value> = vals.iter().map(|v| Value::V(*v)).collect();
        let mut delayed = vec![Value::Undef; shift];
        delayed.extend(direct.iter().copied());
        a.dense_outputs.insert("y".into(), direct);
        b.dense_outputs.insert("y".into(), delayed);
        if corrupt {
            let last = b.dense_outputs.get_mut("y").unwrap().last_mut().unwrap();
            *last = Value::V(vals[vals.len() - 1].wrapping_add(1));
            let (same, _) = equivalent_modulo_latency(&a, &b);
            prop_assert!(!same);
        } else {
            let (same, offset) = equivalent_modulo_latency(&a, &b);
            prop_assert!(same);
            prop_assert_eq!(offset, shift as i64);
        }
    }
}
