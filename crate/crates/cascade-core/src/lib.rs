//! Compiler back end for a coarse-grained reconfigurable array with a
//! single-cycle multi-hop interconnect.
//!
//! The pipeline is: parse an application dataflow graph ([`dfg`]), optionally
//! rewrite it with latency-adding passes ([`passes`]), place and route it onto
//! an architecture ([`arch`], [`pnr`]), tighten the clock with post-PnR
//! pipelining ([`postpnr`]), and check every step against a cycle-accurate
//! simulator ([`sim`]). Static timing lives in [`sta`].

pub mod arch;
pub mod dfg;
pub mod passes;
pub mod pnr;
pub mod postpnr;
pub mod sim;
pub mod sta;
pub mod synth;

pub use arch::{
    build_routing_graph, enumerate_tile_paths, load_arch_file, load_delay_library, validate_arch,
    ArchError, ArchSpec, Coord, DelayLibrary, PathClass, RoutingGraph, Side, TileKind, Width,
};
pub use dfg::{
    parse_app, serialize_app, topo_order, validate_semantics, AppGraph, DfgError, Mode, Net, Node,
    NodeKind, Opcode,
};
pub use passes::{
    collapse_register_chains, compute_pipeline, ensure_input_fifos, pipeline_broadcasts,
};
pub use pnr::{
    hpwl, net_cost, place, route, NetRoute, Placement, PnrError, PnrParams, RoutedApp, SegEntry,
    Segment, Tap,
};
pub use postpnr::{
    config::{decode_config, duplicate_config, emit_config, routed_apps_equivalent, Config},
    insert_sparse_fifos, post_pnr_pipeline, schedule_deltas, update_schedule, PostPnrError,
    PostPnrOptions, PostPnrReport, StopReason,
};
pub use sim::{
    equivalent_modulo_latency, simulate_dense_graph, simulate_dense_routed, simulate_sparse,
    SimError, Stimulus, Token, TraceResult, Value,
};
pub use sta::{
    arrival_times_ns, balance_branches, critical_path, cycle_arrivals, cycle_arrivals_routed,
    CycleArrivals, StaError, TimingReport,
};
