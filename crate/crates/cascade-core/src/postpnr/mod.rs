//! Post-place-and-route pipelining.
//!
//! Once routes exist, the clock can be tightened without touching the
//! application: dense flows enable switch-box registers at critical hops and
//! re-establish cycle-arrival consistency; sparse flows split long nets with
//! skid-buffer FIFOs, which carry their own synchronization. Both loops are
//! greedy one-change-per-iteration with an accept-if-improved rule, so the
//! reported critical path never rises across accepted steps. [`config`]
//! turns the final RoutedApp into a per-tile configuration and back.

pub mod config;

use crate::arch::{ArchSpec, Coord, DelayLibrary, RoutingGraph, TileKind};
use crate::dfg::{topo_order, AppGraph, Mode, Net, NetId, Node, NodeId, NodeKind, Port};
use crate::pnr::{route_single_net, tap_key, PnrError, PnrParams, RoutedApp};
use crate::sta::{analyze, latency_cycles, Channel, PathHop, StaError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PostPnrError {
    #[error(transparent)]
    Timing(#[from] StaError),
    #[error(transparent)]
    Route(#[from] PnrError),
    #[error("{0}")]
    Config(String),
    #[error("schedule underflow: {0}")]
    Schedule(String),
}

#[derive(Debug, Clone)]
pub struct PostPnrOptions {
    pub max_iters: u32,
    /// An iteration counts only when the critical path shrinks by at least
    /// this much; prevents oscillating on tie-broken paths.
    pub improvement_tolerance_ns: f64,
    /// Depth of inserted sparse FIFOs. Two keeps full throughput across the
    /// registered handshake.
    pub fifo_depth: u16,
}

impl Default for PostPnrOptions {
    fn default() -> Self {
        PostPnrOptions {
            max_iters: 16,
            improvement_tolerance_ns: 0.01,
            fifo_depth: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    IterationLimit,
    /// The critical path crosses no hop whose register site is still free.
    NoRegisterableHop,
    /// The best candidate no longer improves the total.
    NoImprovement,
    /// Balancing or insertion ran out of sites, tiles, or routes; the result
    /// is the best accepted state.
    Infeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PostPnrReport {
    /// STA total after each accepted step, starting with the input's.
    pub history: Vec<f64>,
    pub iterations: u32,
    pub stop: StopReason,
    pub enabled_sb_regs: u32,
    pub inserted_regs: u32,
}

/// Breaks the critical path of a dense RoutedApp by enabling the switch-box
/// register nearest the path's delay midpoint, rebalancing cycle arrivals
/// after each enable. Stops at `max_iters`, at a fixpoint, or when the best
/// candidate stops improving; the result is never worse than the input.
pub fn post_pnr_pipeline(
    r: &RoutedApp,
    spec: &ArchSpec,
    rgraph: &RoutingGraph,
    lib: &DelayLibrary,
    opts: &PostPnrOptions,
) -> Result<(RoutedApp, PostPnrReport), PostPnrError> {
    if r.graph.mode != Mode::Dense {
        return Err(PostPnrError::Config(
            "switch-box register pipelining applies to dense apps".into(),
        ));
    }
    let mut cur = r.clone();
    let mut analysis = analyze(&cur, spec, lib)?;
    let mut report = PostPnrReport {
        history: vec![analysis.report.total_ns],
        iterations: 0,
        stop: StopReason::IterationLimit,
        enabled_sb_regs: 0,
        inserted_regs: 0,
    };
    while report.iterations < opts.max_iters {
        let total = analysis.report.total_ns;
        let Some(hop) = pick_free_site(&analysis.critical_hops, &cur, spec, total) else {
            report.stop = StopReason::NoRegisterableHop;
            return Ok((cur, report));
        };
        let (net_id, seg) = (hop.net.clone(), hop.seg_index);
        let mut next = cur.clone();
        next.routes
            .get_mut(&net_id)
            .expect("hop came from a live route")
            .segments[seg]
            .register_enabled = true;
        let mut enabled = 1u32;
        let mut inserted = 0u32;
        if rebalance_routed(&mut next, spec, rgraph, &mut enabled, &mut inserted).is_err() {
            report.stop = StopReason::Infeasible;
            return Ok((cur, report));
        }
        let next_analysis = analyze(&next, spec, lib)?;
        if next_analysis.report.total_ns > total - opts.improvement_tolerance_ns {
            report.stop = StopReason::NoImprovement;
            return Ok((cur, report));
        }
        cur = next;
        analysis = next_analysis;
        report.iterations += 1;
        report.history.push(analysis.report.total_ns);
        report.enabled_sb_regs += enabled;
        report.inserted_regs += inserted;
    }
    Ok((cur, report))
}

/// The data-channel hop whose cumulative delay is closest to half the path
/// total, among hops whose register site is still free. Ties keep the
/// earlier hop.
fn pick_free_site<'a>(
    hops: &'a [PathHop],
    r: &RoutedApp,
    spec: &ArchSpec,
    total: f64,
) -> Option<&'a PathHop> {
    if !spec.sb_register_sites {
        return None;
    }
    let mut best: Option<(&PathHop, f64)> = None;
    for hop in hops {
        if hop.channel != Channel::Data {
            continue;
        }
        let Some(route) = r.routes.get(&hop.net) else {
            continue;
        };
        if route.segments[hop.seg_index].register_enabled {
            continue;
        }
        let d = (hop.arrival_ns - total / 2.0).abs();
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((hop, d));
        }
    }
    best.map(|(h, _)| h)
}

/// Restores cycle-arrival consistency over routed register counts: every
/// node's data inputs arrive together and all IO_OUTs sit at one depth.
/// Skewed branches are fixed by enabling free switch-box sites exclusive to
/// the branch, and where sites run out, by REG nodes on free PE tiles with
/// an incremental reroute of the touched nets.
pub fn rebalance_routed(
    r: &mut RoutedApp,
    spec: &ArchSpec,
    rgraph: &RoutingGraph,
    enabled: &mut u32,
    inserted: &mut u32,
) -> Result<(), PostPnrError> {
    let params = PnrParams::default();
    let step_limit = 64 + 16 * r.graph.nodes.len();
    for _ in 0..step_limit {
        let Some((net_id, node, port, need)) = first_deficit(r, spec)? else {
            return Ok(());
        };
        let got = enable_free_sites(r, &net_id, &node, &port, need, spec, enabled);
        if got < need {
            insert_pad_regs(
                r,
                &net_id,
                &node,
                &port,
                need - got,
                spec,
                rgraph,
                &params,
                inserted,
            )?;
        }
    }
    Err(PostPnrError::Config(
        "cycle rebalancing did not converge".into(),
    ))
}

/// First branch whose arrival falls short of its node's target, together
/// with the shortfall. Targets are the balanced closure: every node's inputs
/// aligned, every output at the deepest output's arrival.
fn first_deficit(
    r: &RoutedApp,
    spec: &ArchSpec,
) -> Result<Option<(NetId, NodeId, Port, u64)>, PostPnrError> {
    let order = topo_order(&r.graph).map_err(StaError::from)?;
    let mut target: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut deficits: Vec<(NetId, NodeId, Port, u64)> = Vec::new();
    for id in &order {
        let inputs = r.graph.input_nets(id);
        let arrivals: BTreeMap<Port, (NetId, u64)> = inputs
            .into_iter()
            .map(|(port, net_id)| {
                let a = target[&r.graph.nets[&net_id].driver]
                    + r.sink_registers(&net_id, id, &port, spec) as u64;
                (port, (net_id, a))
            })
            .collect();
        let tin = arrivals.values().map(|(_, a)| *a).max().unwrap_or(0);
        for (port, (net_id, a)) in arrivals {
            if a < tin {
                deficits.push((net_id, id.clone(), port, tin - a));
            }
        }
        target.insert(id.clone(), tin + latency_cycles(&r.graph.nodes[id]));
    }
    let outs: Vec<&NodeId> = r
        .graph
        .nodes
        .iter()
        .filter(|(_, n)| n.kind == NodeKind::IoOut)
        .map(|(id, _)| id)
        .collect();
    let frontier = outs.iter().map(|id| target[*id]).max().unwrap_or(0);
    for id in outs {
        let need = frontier - target[id];
        if need > 0 {
            let (port, net_id) = r
                .graph
                .input_nets(id)
                .into_iter()
                .next()
                .expect("outputs read one net");
            deficits.push((net_id, id.clone(), port, need));
        }
    }
    Ok(deficits.into_iter().next())
}

/// Enables up to `need` registers on segments exclusive to this branch,
/// splitting the longest unregistered run each time. Returns how many were
/// enabled.
fn enable_free_sites(
    r: &mut RoutedApp,
    net_id: &str,
    node: &str,
    port: &str,
    need: u64,
    spec: &ArchSpec,
    enabled: &mut u32,
) -> u64 {
    if !spec.sb_register_sites {
        return 0;
    }
    let Some(route) = r.routes.get(net_id) else {
        return 0;
    };
    let Some(tile) = r.placement.tile_of(node) else {
        return 0;
    };
    let Some(tap) = route.taps.get(&tap_key(node, port)) else {
        return 0;
    };
    let Some(chain) = route.chain_to_tap(tile, tap, spec) else {
        return 0;
    };
    let mut usage: BTreeMap<usize, usize> = BTreeMap::new();
    for (key, t) in &route.taps {
        let Some((sink, _)) = key.rsplit_once(':') else {
            continue;
        };
        let Some(sink_tile) = r.placement.tile_of(sink) else {
            continue;
        };
        for i in route.chain_to_tap(sink_tile, t, spec).unwrap_or_default() {
            *usage.entry(i).or_default() += 1;
        }
    }
    let mut eligible: Vec<bool> = chain
        .iter()
        .map(|i| usage.get(i) == Some(&1) && !route.segments[*i].register_enabled)
        .collect();
    let mut picks = Vec::new();
    for _ in 0..need {
        let mut best: Option<(usize, usize)> = None;
        let mut i = 0;
        while i < eligible.len() {
            if eligible[i] {
                let start = i;
                while i < eligible.len() && eligible[i] {
                    i += 1;
                }
                let len = i - start;
                if best.map_or(true, |(_, bl)| len > bl) {
                    best = Some((start, len));
                }
            } else {
                i += 1;
            }
        }
        let Some((start, len)) = best else {
            break;
        };
        let mid = start + len / 2;
        eligible[mid] = false;
        picks.push(chain[mid]);
    }
    let route = r.routes.get_mut(net_id).expect("checked above");
    for i in &picks {
        route.segments[*i].register_enabled = true;
    }
    *enabled += picks.len() as u32;
    picks.len() as u64
}

/// Splices a chain of `need` REG nodes in front of `node:port`, placing each
/// on a free PE tile near the sink, then reroutes the split net and the new
/// chain nets.
#[allow(clippy::too_many_arguments)]
fn insert_pad_regs(
    r: &mut RoutedApp,
    net_id: &str,
    node: &str,
    port: &str,
    need: u64,
    spec: &ArchSpec,
    rgraph: &RoutingGraph,
    params: &PnrParams,
    inserted: &mut u32,
) -> Result<(), PostPnrError> {
    let sink_tile = r
        .placement
        .tile_of(node)
        .ok_or_else(|| PostPnrError::Config(format!("{node} is not placed")))?;
    let width = r
        .graph
        .net_width(&r.graph.nets[net_id])
        .expect("driver produces a value");
    let mut regs = Vec::with_capacity(need as usize);
    for _ in 0..need {
        let tile = free_pe_tile_near(r, spec, sink_tile).ok_or_else(|| {
            PostPnrError::Config("no free PE tile for a balancing register".into())
        })?;
        let reg_id = r.graph.fresh_node_id(&format!("pbal{}", *inserted));
        *inserted += 1;
        let mut reg = Node::bare(NodeKind::Reg);
        reg.width = width;
        r.graph.nodes.insert(reg_id.clone(), reg);
        r.placement.loc.insert(reg_id.clone(), tile);
        regs.push(reg_id);
    }
    let sinks = &mut r.graph.nets.get_mut(net_id).expect("known net").sinks;
    let pos = sinks
        .iter()
        .position(|(n, p)| n == node && p == port)
        .expect("sink present");
    sinks[pos] = (regs[0].clone(), "in".into());
    let mut new_nets = Vec::new();
    for (j, reg_id) in regs.iter().enumerate() {
        let sink = match regs.get(j + 1) {
            Some(next) => (next.clone(), "in".to_string()),
            None => (node.to_string(), port.to_string()),
        };
        let nid = r.graph.fresh_net_id(&format!("{net_id}__p{j}"));
        r.graph.nets.insert(
            nid.clone(),
            Net {
                driver: reg_id.clone(),
                sinks: vec![sink],
            },
        );
        new_nets.push(nid);
    }
    route_single_net(r, net_id, spec, rgraph, params)?;
    for nid in &new_nets {
        route_single_net(r, nid, spec, rgraph, params)?;
    }
    Ok(())
}

/// Nearest unoccupied PE tile to `around`, by Manhattan distance then
/// coordinate order.
fn free_pe_tile_near(r: &RoutedApp, spec: &ArchSpec, around: Coord) -> Option<Coord> {
    let occupied = r.placement.occupied();
    spec.tiles_of_kind(TileKind::Pe)
        .into_iter()
        .filter(|c| !occupied.contains(c))
        .min_by_key(|c| {
            let d = (c.row as i32 - around.row as i32).unsigned_abs()
                + (c.col as i32 - around.col as i32).unsigned_abs();
            (d, *c)
        })
}

/// Same accept-if-improved loop for sparse apps, but the insertion is a
/// depth-`fifo_depth` FIFO splitting the chosen net near the midpoint hop.
/// The FIFO registers data and valid forward and ready backward at once, and
/// the handshake keeps the streams aligned without any balancing.
pub fn insert_sparse_fifos(
    r: &RoutedApp,
    spec: &ArchSpec,
    rgraph: &RoutingGraph,
    lib: &DelayLibrary,
    opts: &PostPnrOptions,
) -> Result<(RoutedApp, PostPnrReport), PostPnrError> {
    if r.graph.mode != Mode::Sparse {
        return Err(PostPnrError::Config(
            "FIFO insertion applies to sparse apps".into(),
        ));
    }
    let mut cur = r.clone();
    let mut analysis = analyze(&cur, spec, lib)?;
    let mut report = PostPnrReport {
        history: vec![analysis.report.total_ns],
        iterations: 0,
        stop: StopReason::IterationLimit,
        enabled_sb_regs: 0,
        inserted_regs: 0,
    };
    while report.iterations < opts.max_iters {
        let total = analysis.report.total_ns;
        // Any channel's hop will do: the FIFO breaks all three together.
        let mut best: Option<(&PathHop, f64)> = None;
        for hop in &analysis.critical_hops {
            let d = (hop.arrival_ns - total / 2.0).abs();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((hop, d));
            }
        }
        let Some((hop, _)) = best else {
            report.stop = StopReason::NoRegisterableHop;
            return Ok((cur, report));
        };
        let (net_id, at) = (hop.net.clone(), hop.at);
        let mut next = cur.clone();
        let mut inserted = report.inserted_regs;
        if split_with_fifo(&mut next, &net_id, at, opts, spec, rgraph, &mut inserted).is_err() {
            report.stop = StopReason::Infeasible;
            return Ok((cur, report));
        }
        let next_analysis = analyze(&next, spec, lib)?;
        if next_analysis.report.total_ns > total - opts.improvement_tolerance_ns {
            report.stop = StopReason::NoImprovement;
            return Ok((cur, report));
        }
        cur = next;
        analysis = next_analysis;
        report.iterations += 1;
        report.history.push(analysis.report.total_ns);
        report.inserted_regs = inserted;
    }
    Ok((cur, report))
}

fn split_with_fifo(
    r: &mut RoutedApp,
    net_id: &str,
    near: Coord,
    opts: &PostPnrOptions,
    spec: &ArchSpec,
    rgraph: &RoutingGraph,
    inserted: &mut u32,
) -> Result<(), PostPnrError> {
    let (snode, sport) = r.graph.nets[net_id].sinks[0].clone();
    let tile = free_pe_tile_near(r, spec, near)
        .ok_or_else(|| PostPnrError::Config("no free PE tile for a FIFO".into()))?;
    let fid = r.graph.fresh_node_id(&format!("pfifo{}", *inserted));
    *inserted += 1;
    let mut fifo = Node::bare(NodeKind::Fifo);
    fifo.depth = Some(opts.fifo_depth);
    r.graph.nodes.insert(fid.clone(), fifo);
    r.placement.loc.insert(fid.clone(), tile);
    r.graph.nets.get_mut(net_id).expect("known net").sinks = vec![(fid.clone(), "in".into())];
    let nid = r.graph.fresh_net_id(&format!("{net_id}__f0"));
    r.graph.nets.insert(
        nid.clone(),
        Net {
            driver: fid,
            sinks: vec![(snode, sport)],
        },
    );
    let params = PnrParams::default();
    route_single_net(r, net_id, spec, rgraph, &params)?;
    route_single_net(r, &nid, spec, rgraph, &params)?;
    Ok(())
}

/// Cycle-arrival change at each MEM input between the bare graph the
/// schedules were written against and the final routed app. Feed the result
/// to [`update_schedule`].
pub fn schedule_deltas(
    original: &AppGraph,
    finalr: &RoutedApp,
    spec: &ArchSpec,
) -> Result<BTreeMap<NodeId, i64>, PostPnrError> {
    let before = crate::sta::cycle_arrivals(original)?;
    let after = crate::sta::cycle_arrivals_routed(finalr, spec)?;
    let mut deltas = BTreeMap::new();
    for (id, node) in &original.nodes {
        if node.kind != NodeKind::Mem {
            continue;
        }
        let key = (id.clone(), "in".to_string());
        let b = *before.input.get(&key).ok_or_else(|| {
            PostPnrError::Config(format!("{id} has no input arrival in the original graph"))
        })? as i64;
        let a = *after.input.get(&key).ok_or_else(|| {
            PostPnrError::Config(format!("{id} has no input arrival in the routed app"))
        })? as i64;
        deltas.insert(id.clone(), a - b);
    }
    Ok(deltas)
}

/// Shifts every schedule offset of each listed MEM node by its delta, so the
/// samples land on the same stream positions they did before pipelining.
pub fn update_schedule(
    g: &AppGraph,
    deltas: &BTreeMap<NodeId, i64>,
) -> Result<AppGraph, PostPnrError> {
    let mut out = g.clone();
    for (id, delta) in deltas {
        let node = out
            .nodes
            .get_mut(id)
            .ok_or_else(|| PostPnrError::Config(format!("{id} is not in the graph")))?;
        if node.kind != NodeKind::Mem {
            return Err(PostPnrError::Config(format!("{id} is not a MEM node")));
        }
        for off in node.schedule.iter_mut() {
            let shifted = *off as i64 + delta;
            if shifted < 0 {
                return Err(PostPnrError::Schedule(format!(
                    "{id}: offset {off} shifted by {delta}"
                )));
            }
            *off = shifted as u64;
        }
    }
    Ok(out)
}
