//! Static timing analysis in two domains.
//!
//! The cycle domain counts whole clock cycles: every register, shift stage,
//! MEM access, and enabled switch-box register adds one. Dense graphs must be
//! balanced in this domain so that values joining at a node arrive in the same
//! cycle; [`balance_branches`] inserts REG chains to make that hold.
//!
//! The nanosecond domain bounds the clock period. A path starts at a register
//! output (IO pads count as registered at the boundary), accumulates core,
//! switch-box hop, and connection-box delays, and ends at the next register
//! with setup and clock skew added once. The clock must be no shorter than
//! the longest such path, so `fmax_mhz = 1000 / total_ns`. Hardened nets are
//! routed outside the fabric and carry no timing arcs.

use crate::arch::{ArchError, ArchSpec, Coord, DelayLibrary};
use crate::dfg::{
    topo_order, AppGraph, DfgError, Mode, Net, NetId, Node, NodeId, NodeKind, Port,
};
use crate::pnr::{tap_key, NetRoute, RoutedApp, SegEntry};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StaError {
    #[error(transparent)]
    Graph(#[from] DfgError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("timing: {0}")]
    Analysis(String),
}

/// Cycles from a node's inputs being captured to its output launching.
pub fn latency_cycles(node: &Node) -> u64 {
    match node.kind {
        NodeKind::IoIn | NodeKind::IoOut => 0,
        NodeKind::Pe => node.input_regs as u64,
        NodeKind::Mem => node.latency.unwrap_or(1) as u64,
        NodeKind::Reg => 1,
        NodeKind::Shift => node.depth.unwrap_or(1) as u64,
        NodeKind::Fifo => 1,
    }
}

/// Cycle-domain arrivals: the cycle each data input is captured and each
/// output launches, counting from cycle 0 at the IO inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleArrivals {
    pub input: BTreeMap<(NodeId, Port), u64>,
    pub output: BTreeMap<NodeId, u64>,
}

impl CycleArrivals {
    /// Largest arrival spread across one node's data inputs, per node.
    pub fn skew(&self) -> BTreeMap<NodeId, u64> {
        let mut lo: BTreeMap<&str, u64> = BTreeMap::new();
        let mut hi: BTreeMap<&str, u64> = BTreeMap::new();
        for ((node, _), cycle) in &self.input {
            let l = lo.entry(node).or_insert(*cycle);
            *l = (*l).min(*cycle);
            let h = hi.entry(node).or_insert(*cycle);
            *h = (*h).max(*cycle);
        }
        lo.into_iter()
            .map(|(node, l)| (node.to_string(), hi[node] - l))
            .collect()
    }

    pub fn is_balanced(&self) -> bool {
        self.skew().values().all(|s| *s == 0)
    }
}

fn cycle_arrivals_with(
    g: &AppGraph,
    extra: impl Fn(&str, &str, &str) -> u64,
) -> Result<CycleArrivals, StaError> {
    let order = topo_order(g)?;
    let mut input = BTreeMap::new();
    let mut output: BTreeMap<NodeId, u64> = BTreeMap::new();
    for id in order {
        let node = &g.nodes[&id];
        let mut worst = 0u64;
        for (port, net_id) in g.input_nets(&id) {
            let net = &g.nets[&net_id];
            let a = output[&net.driver] + extra(&net_id, &id, &port);
            worst = worst.max(a);
            input.insert((id.clone(), port), a);
        }
        output.insert(id, worst + latency_cycles(node));
    }
    Ok(CycleArrivals { input, output })
}

/// Cycle arrivals of a bare graph, before any routing delay exists.
pub fn cycle_arrivals(g: &AppGraph) -> Result<CycleArrivals, StaError> {
    cycle_arrivals_with(g, |_, _, _| 0)
}

/// Cycle arrivals including enabled switch-box registers along each route
/// branch.
pub fn cycle_arrivals_routed(r: &RoutedApp, spec: &ArchSpec) -> Result<CycleArrivals, StaError> {
    cycle_arrivals_with(&r.graph, |net_id, node, port| {
        r.sink_registers(net_id, node, port, spec) as u64
    })
}

/// Inserts REG chains so that every node's data inputs arrive in the same
/// cycle, then pads the outputs so every IO_OUT sits at the same depth. New
/// registers are named `bal{k}` and new nets `{net}__b{j}`. Flush inputs are
/// control, not data, and are left alone. Returns the balanced graph and the
/// number of registers added.
pub fn balance_branches(g: &AppGraph) -> Result<(AppGraph, u32), StaError> {
    if g.mode == Mode::Sparse {
        return Err(StaError::Analysis(
            "branch balancing applies to dense graphs".into(),
        ));
    }
    let order = topo_order(g)?;
    let mut out = g.clone();
    let mut arr: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut added = 0u32;
    for id in &order {
        let inputs = out.input_nets(id);
        let arrivals: BTreeMap<Port, u64> = inputs
            .iter()
            .map(|(port, net_id)| (port.clone(), arr[&out.nets[net_id].driver]))
            .collect();
        let worst = arrivals.values().copied().max().unwrap_or(0);
        for (port, net_id) in inputs {
            pad_input(&mut out, &net_id, id, &port, worst - arrivals[&port], &mut added);
        }
        arr.insert(id.clone(), worst + latency_cycles(&out.nodes[id]));
    }
    // Outputs form one frontier: the whole kernel carries a single latency,
    // so every output stream shifts by the same amount and traces stay
    // comparable port for port.
    let outs: Vec<NodeId> = out
        .nodes
        .iter()
        .filter(|(_, n)| n.kind == NodeKind::IoOut)
        .map(|(id, _)| id.clone())
        .collect();
    let frontier = outs.iter().map(|id| arr[id]).max().unwrap_or(0);
    for id in outs {
        let need = frontier - arr[&id];
        if let Some((port, net_id)) = out.input_nets(&id).into_iter().next() {
            pad_input(&mut out, &net_id, &id, &port, need, &mut added);
        }
    }
    Ok((out, added))
}

/// Splices a chain of `need` registers in front of one sink of `net_id`.
fn pad_input(
    out: &mut AppGraph,
    net_id: &str,
    sink_id: &str,
    port: &str,
    need: u64,
    added: &mut u32,
) {
    if need == 0 {
        return;
    }
    let width = out
        .net_width(&out.nets[net_id])
        .expect("driver produces a value");
    let mut regs = Vec::with_capacity(need as usize);
    for _ in 0..need {
        let reg_id = out.fresh_node_id(&format!("bal{added}"));
        *added += 1;
        let mut reg = Node::bare(NodeKind::Reg);
        reg.width = width;
        out.nodes.insert(reg_id.clone(), reg);
        regs.push(reg_id);
    }
    let sinks = &mut out.nets.get_mut(net_id).expect("known net").sinks;
    let pos = sinks
        .iter()
        .position(|(n, p)| n == sink_id && p == port)
        .expect("sink present");
    sinks[pos] = (regs[0].clone(), "in".into());
    for (j, reg_id) in regs.iter().enumerate() {
        let sink = match regs.get(j + 1) {
            Some(next) => (next.clone(), "in".to_string()),
            None => (sink_id.to_string(), port.to_string()),
        };
        let new_net = out.fresh_net_id(&format!("{net_id}__b{j}"));
        out.nets.insert(
            new_net,
            Net {
                driver: reg_id.clone(),
                sinks: vec![sink],
            },
        );
    }
}

/// Physical channel of a net an element belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Channel {
    Data,
    Valid,
    Ready,
}

/// One switch-box traversal on a timing path, with enough identity to toggle
/// its register site.
#[derive(Debug, Clone, PartialEq)]
pub struct PathHop {
    pub net: NetId,
    pub channel: Channel,
    pub seg_index: usize,
    pub at: Coord,
    /// Path time after this traversal, before setup and skew.
    pub arrival_ns: f64,
}

/// Nanosecond-domain result. `critical_path` lists the worst path's elements
/// in traversal order; summing the delays gives `total_ns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub critical_path: Vec<(String, f64)>,
    pub total_ns: f64,
    pub fmax_mhz: f64,
    /// Per net: critical-path total minus the worst path touching the net.
    pub per_net_slack: BTreeMap<NetId, f64>,
}

/// A register-bounded path under construction: elements since the last
/// launching register, in order.
#[derive(Debug, Clone, Default)]
struct PathAcc {
    sum: f64,
    chain: Vec<(String, f64)>,
    nets: BTreeSet<NetId>,
    hops: Vec<PathHop>,
}

impl PathAcc {
    fn push(&mut self, points: &mut BTreeMap<String, f64>, id: String, ns: f64) {
        self.sum += ns;
        points.insert(id.clone(), self.sum);
        self.chain.push((id, ns));
    }
}

fn end_path(mut acc: PathAcc, lib: &DelayLibrary, candidates: &mut Vec<PathAcc>) {
    acc.sum += lib.setup_ns;
    acc.chain.push(("setup".into(), lib.setup_ns));
    acc.sum += lib.clock_skew_ns;
    acc.chain.push(("clock_skew".into(), lib.clock_skew_ns));
    candidates.push(acc);
}

/// Whether a value arriving at this input is captured by a register there.
fn input_is_registered(node: &Node, port: &str) -> bool {
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

pub(crate) struct Analysis {
    pub report: TimingReport,
    /// Arrival after each launch/core/hop/cb element.
    pub points: BTreeMap<String, f64>,
    /// Switch-box traversals of the critical path, in order.
    pub critical_hops: Vec<PathHop>,
}

/// Walks one route tree from `launch`, recording SB-register captures as path
/// ends, and returns the arrival at each tap (connection-box delay applied).
#[allow(clippy::too_many_arguments)]
fn walk_route(
    label: &str,
    net_id: &str,
    channel: Channel,
    route: &NetRoute,
    tiles: &BTreeMap<String, Coord>,
    launch: &PathAcc,
    spec: &ArchSpec,
    lib: &DelayLibrary,
    points: &mut BTreeMap<String, f64>,
    candidates: &mut Vec<PathAcc>,
) -> Result<Vec<(String, PathAcc)>, StaError> {
    let n = route.segments.len();
    let parent: Vec<Option<usize>> = (0..n).map(|i| route.parent_segment(i, spec)).collect();
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    while order.len() < n {
        let before = order.len();
        for i in 0..n {
            if placed[i] {
                continue;
            }
            let ready = match parent[i] {
                None => {
                    if route.segments[i].entry != SegEntry::Core {
                        return Err(StaError::Analysis(format!(
                            "net {label}: segment {i} enters from a side no segment drives"
                        )));
                    }
                    true
                }
                Some(p) => placed[p],
            };
            if ready {
                order.push(i);
                placed[i] = true;
            }
        }
        if order.len() == before {
            return Err(StaError::Analysis(format!(
                "net {label}: route segments form a cycle"
            )));
        }
    }

    let mut seg_acc: Vec<Option<PathAcc>> = vec![None; n];
    for i in order {
        let seg = &route.segments[i];
        let mut acc = match parent[i] {
            None => {
                let mut a = launch.clone();
                a.nets.insert(net_id.to_string());
                a
            }
            Some(p) => {
                let mut a = seg_acc[p].clone().expect("parent processed");
                let kind = spec.tile_kind(seg.at).ok_or_else(|| {
                    StaError::Analysis(format!("net {label}: segment at {} off-grid", seg.at))
                })?;
                let SegEntry::Side(entry) = seg.entry else {
                    unreachable!("parented segment enters from a side");
                };
                let ns = lib.hop_ns(kind, entry, seg.exit, seg.width)?;
                a.push(points, format!("hop:{label}:{i}:{}", seg.at), ns);
                a.hops.push(PathHop {
                    net: net_id.to_string(),
                    channel,
                    seg_index: i,
                    at: seg.at,
                    arrival_ns: a.sum,
                });
                a
            }
        };
        if seg.register_enabled {
            end_path(acc.clone(), lib, candidates);
            let mut fresh = PathAcc::default();
            fresh.nets.insert(net_id.to_string());
            fresh.push(points, format!("launch:{label}:seg{i}"), lib.reg_clk_to_q_ns);
            acc = fresh;
        }
        seg_acc[i] = Some(acc);
    }

    let mut arrivals = Vec::new();
    for (key, tap) in &route.taps {
        let tile = tiles.get(key).ok_or_else(|| {
            StaError::Analysis(format!("net {label}: tap {key} has no placed sink"))
        })?;
        let p = route.tap_parent(*tile, tap, spec).ok_or_else(|| {
            StaError::Analysis(format!("net {label}: tap {key} is not fed by any segment"))
        })?;
        let mut acc = seg_acc[p].clone().expect("segment processed");
        acc.push(points, format!("cb:{label}:{key}"), lib.cb_in_ns);
        arrivals.push((key.clone(), acc));
    }
    Ok(arrivals)
}

pub(crate) fn analyze(
    r: &RoutedApp,
    spec: &ArchSpec,
    lib: &DelayLibrary,
) -> Result<Analysis, StaError> {
    let g = &r.graph;
    let order = topo_order(g)?;
    let driver_index = g.driver_index();
    let mut points: BTreeMap<String, f64> = BTreeMap::new();
    let mut candidates: Vec<PathAcc> = Vec::new();
    let mut in_acc: BTreeMap<(NodeId, Port), PathAcc> = BTreeMap::new();

    for id in &order {
        let node = &g.nodes[id];
        let out_acc = match node.kind {
            NodeKind::IoOut => None,
            NodeKind::IoIn | NodeKind::Reg | NodeKind::Shift | NodeKind::Fifo => {
                let mut acc = PathAcc::default();
                acc.push(&mut points, format!("launch:{id}"), lib.reg_clk_to_q_ns);
                Some(acc)
            }
            NodeKind::Mem => {
                let mut acc = PathAcc::default();
                acc.push(&mut points, format!("launch:{id}"), lib.reg_clk_to_q_ns);
                acc.push(&mut points, format!("core:{id}"), lib.mem_core_ns);
                Some(acc)
            }
            NodeKind::Pe if node.input_regs => {
                let mut acc = PathAcc::default();
                acc.push(&mut points, format!("launch:{id}"), lib.reg_clk_to_q_ns);
                acc.push(&mut points, format!("core:{id}"), lib.pe_core_ns);
                Some(acc)
            }
            NodeKind::Pe => {
                let mut acc = node
                    .data_in_ports()
                    .iter()
                    .filter_map(|(port, _)| in_acc.get(&(id.clone(), port.to_string())))
                    .max_by(|a, b| a.sum.total_cmp(&b.sum))
                    .cloned()
                    .unwrap_or_default();
                acc.push(&mut points, format!("core:{id}"), lib.pe_core_ns);
                Some(acc)
            }
        };
        let Some(out_acc) = out_acc else { continue };
        for net_id in driver_index.get(id).into_iter().flatten() {
            let Some(route) = r.routes.get(net_id) else {
                continue;
            };
            if route.segments.is_empty() {
                continue;
            }
            let tiles = r.sink_tiles(net_id);
            let sink_of: BTreeMap<String, (NodeId, Port)> = g.nets[net_id]
                .sinks
                .iter()
                .map(|(n, p)| (tap_key(n, p), (n.clone(), p.clone())))
                .collect();
            let arrivals = walk_route(
                net_id,
                net_id,
                Channel::Data,
                route,
                &tiles,
                &out_acc,
                spec,
                lib,
                &mut points,
                &mut candidates,
            )?;
            for (key, acc) in arrivals {
                let (sink, port) = sink_of
                    .get(&key)
                    .ok_or_else(|| {
                        StaError::Analysis(format!("net {net_id}: tap {key} matches no sink"))
                    })?
                    .clone();
                if input_is_registered(&g.nodes[&sink], &port) {
                    end_path(acc, lib, &mut candidates);
                } else {
                    in_acc.insert((sink, port), acc);
                }
            }
        }
    }

    // Handshake channels launch from the producer's valid register and the
    // consumer's ready register; the handshake gating itself is free.
    for (routes, channel, suffix) in [
        (&r.valid_routes, Channel::Valid, "v"),
        (&r.ready_routes, Channel::Ready, "r"),
    ] {
        for (net_id, route) in routes.iter() {
            if route.segments.is_empty() {
                continue;
            }
            let label = format!("{net_id}.{suffix}");
            let tiles = r.sink_tiles(net_id);
            let mut launch = PathAcc::default();
            launch.push(&mut points, format!("launch:{label}"), lib.reg_clk_to_q_ns);
            let arrivals = walk_route(
                &label,
                net_id,
                channel,
                route,
                &tiles,
                &launch,
                spec,
                lib,
                &mut points,
                &mut candidates,
            )?;
            for (_, acc) in arrivals {
                end_path(acc, lib, &mut candidates);
            }
        }
    }

    let worst = candidates
        .iter()
        .max_by(|a, b| a.sum.total_cmp(&b.sum))
        .cloned()
        .unwrap_or_default();
    let total_ns = worst.sum;
    let fmax_mhz = if total_ns > 0.0 {
        1000.0 / total_ns
    } else {
        f64::INFINITY
    };
    let mut per_net_slack = BTreeMap::new();
    for net_id in g.nets.keys() {
        let net_worst = candidates
            .iter()
            .filter(|c| c.nets.contains(net_id))
            .map(|c| c.sum)
            .max_by(f64::total_cmp)
            .unwrap_or(0.0);
        per_net_slack.insert(net_id.clone(), total_ns - net_worst);
    }
    Ok(Analysis {
        report: TimingReport {
            critical_path: worst.chain,
            total_ns,
            fmax_mhz,
            per_net_slack,
        },
        points,
        critical_hops: worst.hops,
    })
}

/// Arrival time after every launch, core, hop, and connection-box element.
pub fn arrival_times_ns(
    r: &RoutedApp,
    spec: &ArchSpec,
    lib: &DelayLibrary,
) -> Result<BTreeMap<String, f64>, StaError> {
    Ok(analyze(r, spec, lib)?.points)
}

/// Full report: worst register-to-register path, clock bound, per-net slack.
pub fn critical_path(
    r: &RoutedApp,
    spec: &ArchSpec,
    lib: &DelayLibrary,
) -> Result<TimingReport, StaError> {
    Ok(analyze(r, spec, lib)?.report)
}
