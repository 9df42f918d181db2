//! Negotiated-congestion routing over the switch-box graph.
//!
//! Each net becomes a tree: drive onto a connection point at the driver tile,
//! wire hops between tiles, crossings inside tiles, and one tap per sink.
//! All nets are ripped up and rerouted every iteration; a connection point
//! used by more than one route gets an ever-growing history cost until the
//! overuse disappears. Sparse nets route three times: the 16-bit data path,
//! a 1-bit valid path over the same tile sides, and a 1-bit ready path over
//! the same tile sides in the reverse direction, each on its own track.

use super::{
    port_index, required_tile_kind, tap_key, NetRoute, Placement, PnrError, PnrParams, RoutedApp,
    SegEntry, Segment, Tap,
};
use crate::arch::{ArchSpec, Coord, RoutingGraph, RrEdge, RrNode, Side, Width};
use crate::dfg::{AppGraph, Mode, NetId};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

#[derive(Debug, Clone, PartialEq)]
pub struct RouteStats {
    pub iterations: usize,
    pub rip_up_count: usize,
}

struct RouterState<'a> {
    rgraph: &'a RoutingGraph,
    spec: &'a ArchSpec,
    /// Route-key ids occupying each connection point.
    usage: Vec<BTreeSet<u32>>,
    history: Vec<f64>,
    pen: f64,
    /// When set, any node used by another route is impassable.
    hard: bool,
}

impl<'a> RouterState<'a> {
    fn new(rgraph: &'a RoutingGraph, spec: &'a ArchSpec, hard: bool) -> RouterState<'a> {
        RouterState {
            rgraph,
            spec,
            usage: vec![BTreeSet::new(); rgraph.len()],
            history: vec![1.0; rgraph.len()],
            pen: 1.0,
            hard,
        }
    }

    fn others(&self, node: u32, me: u32) -> usize {
        let set = &self.usage[node as usize];
        set.len() - set.contains(&me) as usize
    }

    /// Cost of a new step onto `node`, `None` when impassable.
    fn step_cost(&self, node: u32, me: u32) -> Option<f64> {
        let others = self.others(node, me);
        if self.hard && others > 0 {
            return None;
        }
        Some(self.history[node as usize] * (1.0 + self.pen * others as f64))
    }

    /// Congestion the 1-bit mirror of a 16-bit step would pay: the two
    /// cheapest 1-bit tracks at the same tile side (valid plus ready).
    fn mirror_cost(&self, at: Coord, side: Side, me_v: u32, me_r: u32) -> Option<f64> {
        let mut costs = Vec::new();
        for track in 0..self.spec.tracks1 {
            let node = self.rgraph.sb(at, side, track, Width::W1)?;
            let others = self
                .usage
                .get(node as usize)
                .map(|s| s.len() - s.contains(&me_v) as usize - s.contains(&me_r) as usize)
                .unwrap_or(0);
            if self.hard && others > 0 {
                continue;
            }
            costs.push(self.history[node as usize] * (1.0 + self.pen * others as f64));
        }
        if costs.len() < 2 {
            return None;
        }
        costs.sort_by(f64::total_cmp);
        Some(costs[0] + costs[1])
    }

    fn occupy(&mut self, nodes: &BTreeSet<u32>, key: u32) {
        for n in nodes {
            self.usage[*n as usize].insert(key);
        }
    }

    fn release(&mut self, nodes: &BTreeSet<u32>, key: u32) {
        for n in nodes {
            self.usage[*n as usize].remove(&key);
        }
    }
}

const ARRIVAL: u32 = 0;
const EXIT: u32 = 1;

#[derive(PartialEq)]
struct HeapKey {
    cost: f64,
    state: u32,
}

impl Eq for HeapKey {}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.state.cmp(&other.state))
    }
}

/// Route tree under construction: node -> (parent, incoming edge kind).
#[derive(Default, Clone)]
struct Tree {
    nodes: BTreeMap<u32, (Option<u32>, RrEdge)>,
}

fn sb_fields(rgraph: &RoutingGraph, node: u32) -> (Coord, Side, u8, Width) {
    match rgraph.node(node) {
        RrNode::Sb {
            at,
            side,
            track,
            width,
        } => (*at, *side, *track, *width),
        other => panic!("route step on non-track node {other:?}"),
    }
}

/// A tree node a sink at `tile` may tap: a wire arrival there, or the drive
/// connection point itself when the sink shares the driver's tile.
fn tappable(tree: &Tree, tile: Coord, driver_tile: Coord, rgraph: &RoutingGraph) -> Option<u32> {
    tree.nodes.iter().find_map(|(n, (_, kind))| {
        let (at, ..) = sb_fields(rgraph, *n);
        if at != tile {
            return None;
        }
        match kind {
            RrEdge::Wire => Some(*n),
            RrEdge::Drive if tile == driver_tile => Some(*n),
            _ => None,
        }
    })
}

struct MirrorKeys {
    me_v: u32,
    me_r: u32,
}

/// Shortest path from the tree (or the driver's drive points when the tree
/// is empty) to a wire arrival at `sink_tile`. States are (connection point,
/// role): arrivals may cross inside the tile, exits may ride their wire out.
/// Returns the tree node the path grows from (`None` for a fresh drive root)
/// and the new nodes with their incoming edge kinds, root first.
#[allow(clippy::too_many_arguments)]
fn dijkstra(
    state: &RouterState,
    tree: &Tree,
    driver_tile: Coord,
    width: Width,
    sink_tile: Coord,
    me: u32,
    mirror: Option<&MirrorKeys>,
) -> Option<(Option<u32>, Vec<(u32, RrEdge)>)> {
    let rgraph = state.rgraph;
    let n = rgraph.len();
    let mut dist = vec![f64::INFINITY; 2 * n];
    let mut prev = vec![u32::MAX; 2 * n];
    let mut heap: BinaryHeap<Reverse<HeapKey>> = BinaryHeap::new();

    let enter_cost = |node: u32| -> Option<f64> {
        let base = state.step_cost(node, me)?;
        match mirror {
            Some(keys) => {
                let (at, side, ..) = sb_fields(rgraph, node);
                Some(base + state.mirror_cost(at, side, keys.me_v, keys.me_r)?)
            }
            None => Some(base),
        }
    };

    if tree.nodes.is_empty() {
        for side in Side::ALL {
            for track in 0..state.spec.tracks(width) {
                let node = rgraph.sb(driver_tile, side, track, width)?;
                let Some(cost) = enter_cost(node) else { continue };
                let s = node * 2 + EXIT;
                if cost < dist[s as usize] {
                    dist[s as usize] = cost;
                    heap.push(Reverse(HeapKey { cost, state: s }));
                }
            }
        }
    } else {
        for (node, (_, kind)) in &tree.nodes {
            let role = if *kind == RrEdge::Wire { ARRIVAL } else { EXIT };
            let s = node * 2 + role;
            dist[s as usize] = 0.0;
            heap.push(Reverse(HeapKey { cost: 0.0, state: s }));
        }
    }

    let goal = loop {
        let Reverse(HeapKey { cost, state: s }) = heap.pop()?;
        if cost > dist[s as usize] {
            continue;
        }
        let node = s / 2;
        let role = s % 2;
        let (at, ..) = sb_fields(rgraph, node);
        let in_tree = tree.nodes.contains_key(&node);
        if at == sink_tile && !in_tree {
            if role == ARRIVAL {
                break s;
            }
            // Same-tile sink served straight off a drive point.
            if driver_tile == sink_tile && prev[s as usize] == u32::MAX {
                break s;
            }
        }
        for (to, kind) in rgraph.out_edges(node) {
            let next_role = match (role, kind) {
                (EXIT, RrEdge::Wire) => ARRIVAL,
                (ARRIVAL, RrEdge::Cross) => EXIT,
                _ => continue,
            };
            let Some(step) = enter_cost(*to) else { continue };
            let s2 = to * 2 + next_role;
            let cand = cost + step;
            if cand < dist[s2 as usize] {
                dist[s2 as usize] = cand;
                prev[s2 as usize] = s;
                heap.push(Reverse(HeapKey {
                    cost: cand,
                    state: s2,
                }));
            }
        }
    };

    // Walk back to the tree or to a drive seed.
    let mut path = Vec::new();
    let mut attach = None;
    let mut cur = goal;
    loop {
        let node = cur / 2;
        let role = cur % 2;
        if tree.nodes.contains_key(&node) {
            attach = Some(node);
            break;
        }
        let p = prev[cur as usize];
        let kind = if role == ARRIVAL {
            RrEdge::Wire
        } else if p == u32::MAX {
            RrEdge::Drive
        } else {
            RrEdge::Cross
        };
        path.push((node, kind));
        if p == u32::MAX {
            break;
        }
        cur = p;
    }
    path.reverse();
    Some((attach, path))
}

fn grow_tree(tree: &mut Tree, path: &[(u32, RrEdge)], attach: Option<u32>) {
    let mut parent = attach;
    for (node, kind) in path {
        let p = if *kind == RrEdge::Drive { None } else { parent };
        tree.nodes.insert(*node, (p, *kind));
        parent = Some(*node);
    }
}

/// Emits segments driver-outward: drive roots first, then each crossing in
/// depth-first order.
fn tree_segments(tree: &Tree, rgraph: &RoutingGraph) -> Vec<Segment> {
    let mut children: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut roots = Vec::new();
    for (node, (parent, _)) in &tree.nodes {
        match parent {
            Some(p) => children.entry(*p).or_default().push(*node),
            None => roots.push(*node),
        }
    }
    let mut segments = Vec::new();
    let mut stack: Vec<u32> = roots.into_iter().rev().collect();
    let mut visited = BTreeSet::new();
    while let Some(node) = stack.pop() {
        if !visited.insert(node) {
            continue;
        }
        let (parent, kind) = tree.nodes[&node];
        let (at, side, track, width) = sb_fields(rgraph, node);
        match kind {
            RrEdge::Drive => segments.push(Segment {
                at,
                entry: SegEntry::Core,
                exit: side,
                track,
                width,
                register_enabled: false,
            }),
            RrEdge::Cross => {
                let p = parent.expect("crossing has a parent");
                let (_, entry_side, ..) = sb_fields(rgraph, p);
                segments.push(Segment {
                    at,
                    entry: SegEntry::Side(entry_side),
                    exit: side,
                    track,
                    width,
                    register_enabled: false,
                });
            }
            _ => {}
        }
        if let Some(kids) = children.get(&node) {
            for k in kids.iter().rev() {
                stack.push(*k);
            }
        }
    }
    segments
}

fn tree_node_set(tree: &Tree) -> BTreeSet<u32> {
    tree.nodes.keys().copied().collect()
}

/// Routes one net as a tree: sinks in (distance, key) order, each either
/// tapping the existing tree or extending it by a shortest path.
fn route_net_tree(
    state: &RouterState,
    driver_tile: Coord,
    width: Width,
    sinks: &[(String, Coord)],
    me: u32,
    mirror: Option<&MirrorKeys>,
) -> Result<(Tree, BTreeMap<String, Tap>), String> {
    let mut order: Vec<&(String, Coord)> = sinks.iter().collect();
    order.sort_by_key(|(key, tile)| {
        let d = tile.row.abs_diff(driver_tile.row) + tile.col.abs_diff(driver_tile.col);
        (d, key.clone())
    });
    let mut tree = Tree::default();
    let mut taps = BTreeMap::new();
    for (key, tile) in order {
        let node = match tappable(&tree, *tile, driver_tile, state.rgraph) {
            Some(n) => n,
            None => {
                let (attach, path) =
                    dijkstra(state, &tree, driver_tile, width, *tile, me, mirror)
                        .ok_or_else(|| format!("no path from {driver_tile} to {tile}"))?;
                let goal = path.last().expect("nonempty path").0;
                grow_tree(&mut tree, &path, attach);
                goal
            }
        };
        let (_, side, track, _) = sb_fields(state.rgraph, node);
        taps.insert(key.clone(), Tap { side, track });
    }
    Ok((tree, taps))
}

/// Ordered data segments from root to the sink's tap, for deriving the
/// handshake routes of a sparse net.
fn ordered_chain(route: &NetRoute, sink_tile: Coord, tap: &Tap, spec: &ArchSpec) -> Vec<Segment> {
    route
        .chain_to_tap(sink_tile, tap, spec)
        .map(|idx| idx.into_iter().map(|i| route.segments[i]).collect())
        .unwrap_or_default()
}

/// Valid mirrors the data path on a 1-bit track.
fn derive_valid(chain: &[Segment], track: u8, sink_key: String, tap: &Tap) -> NetRoute {
    let segments = chain
        .iter()
        .map(|s| Segment {
            track,
            width: Width::W1,
            register_enabled: false,
            ..*s
        })
        .collect();
    NetRoute {
        segments,
        taps: [(sink_key, Tap { side: tap.side, track })].into_iter().collect(),
    }
}

/// Ready retraces the data path from the sink back to the driver.
fn derive_ready(
    chain: &[Segment],
    data_tap: &Tap,
    sink_tile: Coord,
    track: u8,
    driver_key: String,
) -> NetRoute {
    let mut segments = Vec::new();
    let root = chain.first().expect("chain nonempty");
    if chain.len() == 1 && root.at == sink_tile {
        // Driver and sink share a tile; ready is a local drive point too.
        segments.push(Segment {
            at: sink_tile,
            entry: SegEntry::Core,
            exit: data_tap.side,
            track,
            width: Width::W1,
            register_enabled: false,
        });
        let taps = [(driver_key, Tap { side: data_tap.side, track })]
            .into_iter()
            .collect();
        return NetRoute { segments, taps };
    }
    segments.push(Segment {
        at: sink_tile,
        entry: SegEntry::Core,
        exit: data_tap.side,
        track,
        width: Width::W1,
        register_enabled: false,
    });
    for pair in chain.windows(2).rev() {
        let (prevseg, seg) = (&pair[0], &pair[1]);
        segments.push(Segment {
            at: seg.at,
            entry: SegEntry::Side(seg.exit),
            exit: prevseg.exit.opposite(),
            track,
            width: Width::W1,
            register_enabled: false,
        });
    }
    let taps = [(driver_key, Tap { side: root.exit, track })]
        .into_iter()
        .collect();
    NetRoute { segments, taps }
}

/// Least-conflicted 1-bit track for a route over `points`, skipping
/// `exclude`. `None` in hard mode when every track is blocked somewhere.
fn pick_w1_track(
    state: &RouterState,
    points: &BTreeSet<(Coord, Side)>,
    me: u32,
    exclude: Option<u8>,
) -> Option<u8> {
    let mut best: Option<(usize, u8)> = None;
    for track in 0..state.spec.tracks1 {
        if exclude == Some(track) {
            continue;
        }
        let mut conflicts = 0;
        for (at, side) in points {
            let node = state.rgraph.sb(*at, *side, track, Width::W1)?;
            conflicts += state.others(node, me);
        }
        if state.hard && conflicts > 0 {
            continue;
        }
        if best.map_or(true, |(c, _)| conflicts < c) {
            best = Some((conflicts, track));
        }
    }
    best.map(|(_, t)| t)
}

fn route_nodes(route: &NetRoute, sink_tiles: &BTreeMap<String, Coord>, rgraph: &RoutingGraph) -> BTreeSet<u32> {
    route
        .nodes(sink_tiles)
        .into_iter()
        .filter_map(|(at, side, track, width)| rgraph.sb(at, side, track, width))
        .collect()
}

struct NetTask {
    net_id: NetId,
    driver_tile: Coord,
    width: Width,
    sinks: Vec<(String, Coord)>,
    /// Data / valid / ready key ids (valid and ready only in sparse mode).
    keys: [u32; 3],
    sparse: bool,
    /// Tap keys for the handshake channels.
    sink_hs_key: String,
    sink_tile: Coord,
    driver_hs_key: String,
}

fn build_tasks(g: &AppGraph, placement: &Placement, spec: &ArchSpec) -> Result<Vec<NetTask>, PnrError> {
    let sparse = g.mode == Mode::Sparse;
    let mut tasks = Vec::new();
    let mut next_key = 0u32;
    for (net_id, net) in &g.nets {
        if spec.hardened_nets.contains(net_id) {
            continue;
        }
        let driver_tile = placement
            .tile_of(&net.driver)
            .ok_or_else(|| PnrError::Place(format!("{} is not placed", net.driver)))?;
        let width = g
            .net_width(net)
            .ok_or_else(|| PnrError::Place(format!("net {net_id} has no driver width")))?;
        let mut sinks = Vec::new();
        for (node, port) in &net.sinks {
            let tile = placement
                .tile_of(node)
                .ok_or_else(|| PnrError::Place(format!("{node} is not placed")))?;
            sinks.push((tap_key(node, port), tile));
        }
        let (sink_hs_key, sink_tile, driver_hs_key) = if sparse {
            let (node, port) = &net.sinks[0];
            (
                tap_key(node, &format!("hs_v{}", port_index(port))),
                placement.tile_of(node).expect("checked above"),
                tap_key(&net.driver, "hs_r"),
            )
        } else {
            (String::new(), driver_tile, String::new())
        };
        let keys = [next_key, next_key + 1, next_key + 2];
        next_key += 3;
        tasks.push(NetTask {
            net_id: net_id.clone(),
            driver_tile,
            width,
            sinks,
            keys,
            sparse,
            sink_hs_key,
            sink_tile,
            driver_hs_key,
        });
    }
    Ok(tasks)
}

struct TaskRoutes {
    data: NetRoute,
    valid: Option<NetRoute>,
    ready: Option<NetRoute>,
    nodes: [BTreeSet<u32>; 3],
}

fn route_task(state: &RouterState, task: &NetTask) -> Result<TaskRoutes, String> {
    let mirror_keys = MirrorKeys {
        me_v: task.keys[1],
        me_r: task.keys[2],
    };
    let mirror = task.sparse.then_some(&mirror_keys);
    let (tree, taps) = route_net_tree(
        state,
        task.driver_tile,
        task.width,
        &task.sinks,
        task.keys[0],
        mirror,
    )?;
    let segments = tree_segments(&tree, state.rgraph);
    let data = NetRoute { segments, taps };
    let mut data_nodes = tree_node_set(&tree);
    // Tap arrival points are tree nodes already; keep the set as is.
    if !task.sparse {
        return Ok(TaskRoutes {
            data,
            valid: None,
            ready: None,
            nodes: [data_nodes, BTreeSet::new(), BTreeSet::new()],
        });
    }

    let (sink_key, _) = &task.sinks[0];
    let tap = data.taps[sink_key];
    let chain = ordered_chain(&data, task.sink_tile, &tap, state.spec);
    if chain.is_empty() {
        return Err(format!("net {} has a broken chain", task.net_id));
    }
    let points: BTreeSet<(Coord, Side)> = data
        .nodes(&[(sink_key.clone(), task.sink_tile)].into_iter().collect())
        .into_iter()
        .map(|(at, side, ..)| (at, side))
        .collect();
    let kv = pick_w1_track(state, &points, task.keys[1], None)
        .ok_or_else(|| format!("net {}: no valid-track available", task.net_id))?;
    let kr = pick_w1_track(state, &points, task.keys[2], Some(kv))
        .ok_or_else(|| format!("net {}: no ready-track available", task.net_id))?;
    let valid = derive_valid(&chain, kv, task.sink_hs_key.clone(), &tap);
    let ready = derive_ready(&chain, &tap, task.sink_tile, kr, task.driver_hs_key.clone());

    let valid_nodes = route_nodes(
        &valid,
        &[(task.sink_hs_key.clone(), task.sink_tile)].into_iter().collect(),
        state.rgraph,
    );
    let ready_nodes = route_nodes(
        &ready,
        &[(task.driver_hs_key.clone(), task.driver_tile)].into_iter().collect(),
        state.rgraph,
    );
    // The data tap arrival is a tree node except for same-tile feeds.
    data_nodes.extend(route_nodes(
        &data,
        &task.sinks.iter().cloned().collect(),
        state.rgraph,
    ));
    Ok(TaskRoutes {
        data,
        valid: Some(valid),
        ready: Some(ready),
        nodes: [data_nodes, valid_nodes, ready_nodes],
    })
}

/// Routes every non-hardened net of a placed graph. Iterates rip-up and
/// reroute with growing congestion costs until no connection point is shared.
pub fn route(
    g: &AppGraph,
    placement: &Placement,
    spec: &ArchSpec,
    rgraph: &RoutingGraph,
    params: &PnrParams,
) -> Result<(RoutedApp, RouteStats), PnrError> {
    if g.mode == Mode::Sparse && spec.tracks1 < 2 {
        return Err(PnrError::Capacity(
            "sparse routing needs tracks1 >= 2 for valid and ready".to_string(),
        ));
    }
    let tasks = build_tasks(g, placement, spec)?;
    let mut state = RouterState::new(rgraph, spec, false);
    let mut results: BTreeMap<NetId, TaskRoutes> = BTreeMap::new();
    let mut stats = RouteStats {
        iterations: 0,
        rip_up_count: 0,
    };

    for iter in 0..params.route_iter_limit.max(1) {
        stats.iterations = iter + 1;
        for task in &tasks {
            if let Some(old) = results.remove(&task.net_id) {
                for (i, nodes) in old.nodes.iter().enumerate() {
                    state.release(nodes, task.keys[i]);
                }
                stats.rip_up_count += 1;
            }
            let routed = route_task(&state, task).map_err(PnrError::Verify)?;
            for (i, nodes) in routed.nodes.iter().enumerate() {
                state.occupy(nodes, task.keys[i]);
            }
            results.insert(task.net_id.clone(), routed);
        }
        let mut overused = 0usize;
        for (n, set) in state.usage.iter().enumerate() {
            if set.len() > 1 {
                overused += 1;
                state.history[n] += (set.len() - 1) as f64;
            }
        }
        if overused == 0 {
            let routed = assemble(g, placement, results);
            verify_routed(&routed, spec, rgraph)?;
            return Ok((routed, stats));
        }
        if iter + 1 == params.route_iter_limit.max(1) {
            if std::env::var("ROUTE_DEBUG").is_ok() {
                for (n, set) in state.usage.iter().enumerate() {
                    if set.len() > 1 {
                        eprintln!("overused {:?} <- {:?}", rgraph.nodes[n], set);
                    }
                }
            }
            return Err(PnrError::Unroutable {
                iterations: stats.iterations,
                overused,
            });
        }
        state.pen *= params.congestion_growth;
    }
    unreachable!("loop returns or errors");
}

fn assemble(
    g: &AppGraph,
    placement: &Placement,
    results: BTreeMap<NetId, TaskRoutes>,
) -> RoutedApp {
    let mut routes = BTreeMap::new();
    let mut valid_routes = BTreeMap::new();
    let mut ready_routes = BTreeMap::new();
    for (net_id, r) in results {
        routes.insert(net_id.clone(), r.data);
        if let Some(v) = r.valid {
            valid_routes.insert(net_id.clone(), v);
        }
        if let Some(v) = r.ready {
            ready_routes.insert(net_id.clone(), v);
        }
    }
    // Hardened nets stay in the map with empty routes.
    for net_id in g.nets.keys() {
        routes.entry(net_id.clone()).or_default();
    }
    RoutedApp {
        graph: g.clone(),
        placement: placement.clone(),
        routes,
        valid_routes,
        ready_routes,
    }
}

/// Reroutes one net with every other route frozen in place. Used after the
/// pipelining passes split a net or add a node; fails rather than disturb
/// the rest of the routing.
pub fn route_single_net(
    routed: &mut RoutedApp,
    net_id: &str,
    spec: &ArchSpec,
    rgraph: &RoutingGraph,
    _params: &PnrParams,
) -> Result<(), PnrError> {
    let mut state = RouterState::new(rgraph, spec, true);
    // Key 0..2 belongs to the net under reroute; others get unique ids.
    let mut next = 3u32;
    for (other_id, route) in &routed.routes {
        if other_id == net_id {
            continue;
        }
        let nodes = route_nodes(route, &routed.sink_tiles(other_id), rgraph);
        state.occupy(&nodes, next);
        next += 1;
    }
    for (other_id, route) in routed.valid_routes.iter().chain(routed.ready_routes.iter()) {
        if other_id == net_id {
            continue;
        }
        let nodes = route_nodes(route, &routed.sink_tiles(other_id), rgraph);
        state.occupy(&nodes, next);
        next += 1;
    }

    let tasks = build_tasks(&routed.graph, &routed.placement, spec)?;
    let task = tasks
        .into_iter()
        .find(|t| t.net_id == net_id)
        .ok_or_else(|| PnrError::Verify(format!("net {net_id} not routable (hardened or absent)")))?;
    let task = NetTask {
        keys: [0, 1, 2],
        ..task
    };
    let result = route_task(&state, &task).map_err(PnrError::Verify)?;
    routed.routes.insert(net_id.to_string(), result.data);
    if let Some(v) = result.valid {
        routed.valid_routes.insert(net_id.to_string(), v);
    }
    if let Some(v) = result.ready {
        routed.ready_routes.insert(net_id.to_string(), v);
    }
    Ok(())
}

/// Checks a routed app end to end: legal placement, structurally sound route
/// trees, taps for every sink, and exclusive connection-point occupancy.
pub fn verify_routed(r: &RoutedApp, spec: &ArchSpec, rgraph: &RoutingGraph) -> Result<(), PnrError> {
    let g = &r.graph;
    let mut seen_tiles = BTreeSet::new();
    for (id, node) in &g.nodes {
        let at = r
            .placement
            .tile_of(id)
            .ok_or_else(|| PnrError::Verify(format!("{id} is not placed")))?;
        let want = required_tile_kind(node.kind);
        if spec.tile_kind(at) != Some(want) {
            return Err(PnrError::Verify(format!(
                "{id} placed on {at}, not a {} tile",
                want.name()
            )));
        }
        if !seen_tiles.insert(at) {
            return Err(PnrError::Verify(format!("two nodes share tile {at}")));
        }
    }

    let sparse = g.mode == Mode::Sparse;
    if !sparse && (!r.valid_routes.is_empty() || !r.ready_routes.is_empty()) {
        return Err(PnrError::Verify(
            "dense app carries handshake routes".to_string(),
        ));
    }

    let mut occupancy: BTreeMap<(Coord, Side, u8, Width), String> = BTreeMap::new();
    let mut claim = |nodes: BTreeSet<(Coord, Side, u8, Width)>, owner: String| -> Result<(), PnrError> {
        for key in nodes {
            if let Some(prev) = occupancy.insert(key, owner.clone()) {
                return Err(PnrError::Verify(format!(
                    "{owner} and {prev} both use track {} side {} at {}",
                    key.2, key.1, key.0
                )));
            }
        }
        Ok(())
    };

    for (net_id, net) in &g.nets {
        let hardened = spec.hardened_nets.contains(net_id);
        let route = r
            .routes
            .get(net_id)
            .ok_or_else(|| PnrError::Verify(format!("net {net_id} has no route entry")))?;
        if hardened {
            if !route.segments.is_empty() || !route.taps.is_empty() {
                return Err(PnrError::Verify(format!(
                    "hardened net {net_id} carries segments"
                )));
            }
            continue;
        }
        let width = g
            .net_width(net)
            .ok_or_else(|| PnrError::Verify(format!("net {net_id} has no width")))?;
        let driver_tile = r.placement.tile_of(&net.driver).expect("placement checked");
        check_route(
            net_id, route, width, driver_tile, spec, rgraph,
        )?;
        for (node, port) in &net.sinks {
            let key = tap_key(node, port);
            let tile = r.placement.tile_of(node).expect("placement checked");
            let tap = route
                .taps
                .get(&key)
                .ok_or_else(|| PnrError::Verify(format!("net {net_id}: no tap for {key}")))?;
            if route.tap_parent(tile, tap, spec).is_none() {
                return Err(PnrError::Verify(format!(
                    "net {net_id}: tap {key} is not fed by the route"
                )));
            }
        }
        claim(route.nodes(&r.sink_tiles(net_id)), format!("{net_id}"))?;

        if sparse {
            let (sink_node, sink_port) = &net.sinks[0];
            let sink_tile = r.placement.tile_of(sink_node).expect("placement checked");
            let valid = r
                .valid_routes
                .get(net_id)
                .ok_or_else(|| PnrError::Verify(format!("net {net_id} has no valid route")))?;
            check_route(net_id, valid, Width::W1, driver_tile, spec, rgraph)?;
            let vkey = tap_key(sink_node, &format!("hs_v{}", port_index(sink_port)));
            let vtap = valid
                .taps
                .get(&vkey)
                .ok_or_else(|| PnrError::Verify(format!("net {net_id}: no valid tap")))?;
            if valid.tap_parent(sink_tile, vtap, spec).is_none() {
                return Err(PnrError::Verify(format!(
                    "net {net_id}: valid tap is not fed by its route"
                )));
            }
            claim(valid.nodes(&r.sink_tiles(net_id)), format!("{net_id}.valid"))?;

            let ready = r
                .ready_routes
                .get(net_id)
                .ok_or_else(|| PnrError::Verify(format!("net {net_id} has no ready route")))?;
            check_route(net_id, ready, Width::W1, sink_tile, spec, rgraph)?;
            let rkey = tap_key(&net.driver, "hs_r");
            let rtap = ready
                .taps
                .get(&rkey)
                .ok_or_else(|| PnrError::Verify(format!("net {net_id}: no ready tap")))?;
            if ready.tap_parent(driver_tile, rtap, spec).is_none() {
                return Err(PnrError::Verify(format!(
                    "net {net_id}: ready tap is not fed by its route"
                )));
            }
            claim(ready.nodes(&r.sink_tiles(net_id)), format!("{net_id}.ready"))?;
        }
    }
    Ok(())
}

fn check_route(
    net_id: &str,
    route: &NetRoute,
    width: Width,
    root_tile: Coord,
    spec: &ArchSpec,
    rgraph: &RoutingGraph,
) -> Result<(), PnrError> {
    for (i, seg) in route.segments.iter().enumerate() {
        if seg.width != width {
            return Err(PnrError::Verify(format!(
                "net {net_id}: segment {i} is {} wide on a {} net",
                seg.width, width
            )));
        }
        let node = rgraph
            .sb(seg.at, seg.exit, seg.track, seg.width)
            .ok_or_else(|| {
                PnrError::Verify(format!(
                    "net {net_id}: segment {i} exits a missing track at {}",
                    seg.at
                ))
            })?;
        if seg.register_enabled && !rgraph.register_site[node as usize] {
            return Err(PnrError::Verify(format!(
                "net {net_id}: segment {i} enables a register with no site"
            )));
        }
        match seg.entry {
            SegEntry::Core => {
                if seg.at != root_tile {
                    return Err(PnrError::Verify(format!(
                        "net {net_id}: segment {i} drives from {} but the root is {root_tile}",
                        seg.at
                    )));
                }
            }
            SegEntry::Side(entry) => {
                if entry == seg.exit {
                    return Err(PnrError::Verify(format!(
                        "net {net_id}: segment {i} u-turns on side {entry}"
                    )));
                }
                if rgraph.sb(seg.at, entry, seg.track, seg.width).is_none() {
                    return Err(PnrError::Verify(format!(
                        "net {net_id}: segment {i} enters a missing track"
                    )));
                }
                if route.parent_segment(i, spec).is_none() {
                    return Err(PnrError::Verify(format!(
                        "net {net_id}: segment {i} at {} has no feeding segment",
                        seg.at
                    )));
                }
            }
        }
    }
    Ok(())
}
