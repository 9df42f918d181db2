//! Place and route.
//!
//! Placement binds every graph node to one tile of a compatible kind. Routing
//! binds every non-hardened net to a tree of switch-box resources: a list of
//! [`Segment`]s (one per switch-box traversal) plus one [`Tap`] per sink. The
//! occupancy invariant is that no `(tile, side, track, width)` connection
//! point is used by more than one route.

mod place;
mod route;

pub use place::{place, PlaceStats};
pub use route::{route, route_single_net, verify_routed, RouteStats};

use crate::arch::{ArchError, ArchSpec, Coord, Side, TileKind, Width};
use crate::dfg::{AppGraph, Net, NetId, Node, NodeId, NodeKind};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnrError {
    #[error("placement: {0}")]
    Place(String),
    #[error("insufficient capacity: {0}")]
    Capacity(String),
    #[error("routing failed after {iterations} iterations: {overused} overused track resources")]
    Unroutable { iterations: usize, overused: usize },
    #[error("route verification: {0}")]
    Verify(String),
    #[error("pnr file: {0}")]
    File(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

/// Knobs for both placement and routing.
#[derive(Debug, Clone)]
pub struct PnrParams {
    /// Exponent on per-net cost; values above 1 penalize long nets harder.
    pub alpha: f64,
    /// Weight of the pass-through term against wirelength.
    pub gamma: f64,
    pub seed: u64,
    /// Annealing start temperature; measured from move deltas when unset.
    pub initial_temp: Option<f64>,
    pub cooling_rate: f64,
    /// Moves per temperature level; `10 * movable nodes` when unset.
    pub moves_per_temp: Option<usize>,
    pub route_iter_limit: usize,
    /// Multiplier on the congestion penalty after each routing iteration.
    pub congestion_growth: f64,
}

impl Default for PnrParams {
    fn default() -> PnrParams {
        PnrParams {
            alpha: 1.5,
            gamma: 1.0,
            seed: 1,
            initial_temp: None,
            cooling_rate: 0.95,
            moves_per_temp: None,
            route_iter_limit: 40,
            congestion_growth: 1.5,
        }
    }
}

/// Tile kind a node of this kind must sit on. Registers, shift registers,
/// and FIFOs occupy PE tiles (pass-through configurations of the PE fabric).
pub fn required_tile_kind(kind: NodeKind) -> TileKind {
    match kind {
        NodeKind::IoIn | NodeKind::IoOut => TileKind::Io,
        NodeKind::Mem => TileKind::Mem,
        NodeKind::Pe | NodeKind::Reg | NodeKind::Shift | NodeKind::Fifo => TileKind::Pe,
    }
}

/// Physical tile port for a node-level input port.
pub fn tile_in_port(node: &Node, port: &str) -> (&'static str, Width) {
    match (node.kind, port) {
        (NodeKind::Pe, "in0") => ("in0", Width::W16),
        (NodeKind::Pe, "in1") => ("in1", Width::W16),
        (NodeKind::Pe, "in2") => ("in2", Width::W16),
        (NodeKind::Pe, "inb0") => ("inb0", Width::W1),
        (NodeKind::Mem, "in") => ("in", Width::W16),
        (_, "flush") => ("flush", Width::W1),
        (NodeKind::IoOut, "in") | (NodeKind::Reg, "in") if node.width == Width::W1 => {
            match node.kind {
                NodeKind::IoOut => ("inb", Width::W1),
                _ => ("inb0", Width::W1),
            }
        }
        (NodeKind::IoOut, "in") => ("in", Width::W16),
        (NodeKind::Reg | NodeKind::Shift | NodeKind::Fifo, "in") => ("in0", Width::W16),
        _ => ("in0", Width::W16),
    }
}

/// Physical tile port a node drives.
pub fn tile_out_port(node: &Node) -> (&'static str, Width) {
    match node.kind {
        NodeKind::IoIn | NodeKind::Reg if node.width == Width::W1 => ("outb", Width::W1),
        _ => ("out", Width::W16),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub loc: BTreeMap<NodeId, Coord>,
}

impl Placement {
    pub fn tile_of(&self, node: &str) -> Option<Coord> {
        self.loc.get(node).copied()
    }

    pub fn occupied(&self) -> BTreeSet<Coord> {
        self.loc.values().copied().collect()
    }
}

/// Half-perimeter wirelength of a net's bounding box over placed endpoints.
pub fn hpwl(net: &Net, placement: &Placement) -> u32 {
    let mut pts = Vec::new();
    if let Some(c) = placement.tile_of(&net.driver) {
        pts.push(c);
    }
    for (node, _) in &net.sinks {
        if let Some(c) = placement.tile_of(node) {
            pts.push(c);
        }
    }
    let Some(first) = pts.first() else { return 0 };
    let (mut rmin, mut rmax, mut cmin, mut cmax) =
        (first.row, first.row, first.col, first.col);
    for p in &pts[1..] {
        rmin = rmin.min(p.row);
        rmax = rmax.max(p.row);
        cmin = cmin.min(p.col);
        cmax = cmax.max(p.col);
    }
    (rmax - rmin) as u32 + (cmax - cmin) as u32
}

fn bbox(net: &Net, placement: &Placement) -> Option<(Coord, Coord)> {
    let mut pts = Vec::new();
    if let Some(c) = placement.tile_of(&net.driver) {
        pts.push(c);
    }
    for (node, _) in &net.sinks {
        if let Some(c) = placement.tile_of(node) {
            pts.push(c);
        }
    }
    let first = pts.first()?;
    let (mut rmin, mut rmax, mut cmin, mut cmax) =
        (first.row, first.row, first.col, first.col);
    for p in &pts[1..] {
        rmin = rmin.min(p.row);
        rmax = rmax.max(p.row);
        cmin = cmin.min(p.col);
        cmax = cmax.max(p.col);
    }
    Some((Coord::new(rmin, cmin), Coord::new(rmax, cmax)))
}

/// Unoccupied tiles strictly inside the net's bounding box: the room a route
/// has to cross the region without competing with placed cores.
pub fn passthrough_tiles(net: &Net, placement: &Placement, occupied: &BTreeSet<Coord>) -> u32 {
    let Some((lo, hi)) = bbox(net, placement) else {
        return 0;
    };
    let mut n = 0;
    for r in lo.row.saturating_add(1)..hi.row {
        for c in lo.col.saturating_add(1)..hi.col {
            if !occupied.contains(&Coord::new(r, c)) {
                n += 1;
            }
        }
    }
    n
}

/// Placement cost of one net: `(hpwl + gamma * passthrough)^alpha`.
pub fn net_cost(net: &Net, placement: &Placement, params: &PnrParams) -> f64 {
    let occupied = placement.occupied();
    net_cost_with(net, placement, &occupied, params)
}

pub(crate) fn net_cost_with(
    net: &Net,
    placement: &Placement,
    occupied: &BTreeSet<Coord>,
    params: &PnrParams,
) -> f64 {
    let w = hpwl(net, placement) as f64;
    let pt = passthrough_tiles(net, placement, occupied) as f64;
    (w + params.gamma * pt).powf(params.alpha)
}

/// Where a segment takes its value from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SegEntry {
    /// The tile's own core output (the root of a route tree).
    Core,
    /// The track arriving on this side of the tile.
    Side(Side),
}

impl Serialize for SegEntry {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SegEntry::Core => s.serialize_str("CORE"),
            SegEntry::Side(side) => s.serialize_str(side.letter()),
        }
    }
}

impl<'de> Deserialize<'de> for SegEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "CORE" {
            return Ok(SegEntry::Core);
        }
        Side::from_letter(&s)
            .map(SegEntry::Side)
            .ok_or_else(|| D::Error::custom(format!("unknown segment entry {s:?}")))
    }
}

/// One switch-box traversal: the route enters tile `at` from `entry` (or from
/// the tile's core) and leaves through the connection point on side `exit`,
/// track `track`. When `register_enabled` the register at that connection
/// point is active and the signal takes one extra cycle. Serialized as
/// `["r,c", entry, exit, track, width, reg]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Segment {
    pub at: Coord,
    pub entry: SegEntry,
    pub exit: Side,
    pub track: u8,
    pub width: Width,
    pub register_enabled: bool,
}

impl Serialize for Segment {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (
            self.at,
            self.entry,
            self.exit,
            self.track,
            self.width,
            self.register_enabled,
        )
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Segment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (at, entry, exit, track, width, register_enabled) =
            <(Coord, SegEntry, Side, u8, Width, bool)>::deserialize(d)?;
        Ok(Segment {
            at,
            entry,
            exit,
            track,
            width,
            register_enabled,
        })
    }
}

/// Connection-box tap at a sink tile: the sink reads the track arriving on
/// `side`, index `track`. Serialized as `[side, track]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Tap {
    pub side: Side,
    pub track: u8,
}

impl Serialize for Tap {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (self.side, self.track).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Tap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (side, track) = <(Side, u8)>::deserialize(d)?;
        Ok(Tap { side, track })
    }
}

/// Tree of segments plus one tap per sink, keyed `"node:port"`. Hardened
/// nets keep both empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetRoute {
    pub segments: Vec<Segment>,
    pub taps: BTreeMap<String, Tap>,
}

pub fn tap_key(node: &str, port: &str) -> String {
    format!("{node}:{port}")
}

impl NetRoute {
    /// Index of the segment that feeds segment `i`: the segment at the
    /// neighbor tile beyond `entry` whose exit faces back, same track.
    pub fn parent_segment(&self, i: usize, spec: &ArchSpec) -> Option<usize> {
        let seg = &self.segments[i];
        let SegEntry::Side(entry) = seg.entry else {
            return None;
        };
        let from = spec.neighbor(seg.at, entry)?;
        self.segments.iter().position(|s| {
            s.at == from
                && s.exit == entry.opposite()
                && s.track == seg.track
                && s.width == seg.width
        })
    }

    /// Index of the segment whose exit wire (or drive) feeds a tap at `tile`.
    pub fn tap_parent(&self, tile: Coord, tap: &Tap, spec: &ArchSpec) -> Option<usize> {
        if let Some(from) = spec.neighbor(tile, tap.side) {
            if let Some(i) = self.segments.iter().position(|s| {
                s.at == from && s.exit == tap.side.opposite() && s.track == tap.track
            }) {
                return Some(i);
            }
        }
        // Same-tile tap straight off the drive connection point.
        self.segments.iter().position(|s| {
            s.at == tile && s.entry == SegEntry::Core && s.exit == tap.side && s.track == tap.track
        })
    }

    /// Segment indices from the route root to the segment feeding this tap,
    /// root first.
    pub fn chain_to_tap(&self, tile: Coord, tap: &Tap, spec: &ArchSpec) -> Option<Vec<usize>> {
        let mut chain = vec![self.tap_parent(tile, tap, spec)?];
        loop {
            let last = *chain.last().expect("nonempty");
            match self.parent_segment(last, spec) {
                Some(p) => {
                    if chain.contains(&p) {
                        return None;
                    }
                    chain.push(p);
                }
                None => break,
            }
        }
        chain.reverse();
        Some(chain)
    }

    /// Pipeline registers a value crosses from the route root to this tap.
    pub fn registers_to_tap(&self, tile: Coord, tap: &Tap, spec: &ArchSpec) -> usize {
        self.chain_to_tap(tile, tap, spec)
            .map(|chain| {
                chain
                    .iter()
                    .filter(|i| self.segments[**i].register_enabled)
                    .count()
            })
            .unwrap_or(0)
    }

    /// Every connection point this route occupies.
    pub fn nodes(&self, sink_tiles: &BTreeMap<String, Coord>) -> BTreeSet<(Coord, Side, u8, Width)> {
        let mut set = BTreeSet::new();
        let mut width = Width::W16;
        for seg in &self.segments {
            width = seg.width;
            set.insert((seg.at, seg.exit, seg.track, seg.width));
            if let SegEntry::Side(entry) = seg.entry {
                set.insert((seg.at, entry, seg.track, seg.width));
            }
        }
        for (key, tap) in &self.taps {
            if let Some(tile) = sink_tiles.get(key) {
                set.insert((*tile, tap.side, tap.track, width));
            }
        }
        set
    }
}

/// A fully placed and routed application. Dense apps use only `routes`;
/// sparse apps add a valid route (same direction) and a ready route (reverse
/// direction) per data net.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedApp {
    pub graph: AppGraph,
    pub placement: Placement,
    pub routes: BTreeMap<NetId, NetRoute>,
    pub valid_routes: BTreeMap<NetId, NetRoute>,
    pub ready_routes: BTreeMap<NetId, NetRoute>,
}

impl RoutedApp {
    /// Tile of each tap's sink node for a data or valid net (keyed by tap key).
    pub fn sink_tiles(&self, net_id: &str) -> BTreeMap<String, Coord> {
        let mut out = BTreeMap::new();
        let Some(net) = self.graph.nets.get(net_id) else {
            return out;
        };
        for (node, port) in &net.sinks {
            if let Some(tile) = self.placement.tile_of(node) {
                out.insert(tap_key(node, port), tile);
                // Sparse handshake taps land at the same tiles.
                out.insert(tap_key(node, &format!("hs_v{}", port_index(port))), tile);
            }
        }
        if let Some(tile) = self.placement.tile_of(&net.driver) {
            out.insert(tap_key(&net.driver, "hs_r"), tile);
        }
        out
    }

    /// Registers between the driver and one sink of a data net. Zero for
    /// hardened (empty) routes.
    pub fn sink_registers(&self, net_id: &str, node: &str, port: &str, spec: &ArchSpec) -> usize {
        let Some(route) = self.routes.get(net_id) else {
            return 0;
        };
        let Some(tile) = self.placement.tile_of(node) else {
            return 0;
        };
        let key = tap_key(node, port);
        match route.taps.get(&key) {
            Some(tap) => route.registers_to_tap(tile, tap, spec),
            None => 0,
        }
    }
}

/// Input index a sink port corresponds to, for handshake tap naming.
pub fn port_index(port: &str) -> usize {
    match port {
        "in1" => 1,
        "in2" => 2,
        _ => 0,
    }
}

#[derive(Serialize, Deserialize)]
struct PnrFile {
    placement: BTreeMap<NodeId, Coord>,
    routes: BTreeMap<NetId, Vec<Segment>>,
    taps: BTreeMap<NetId, BTreeMap<String, Tap>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    valid_routes: BTreeMap<NetId, Vec<Segment>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    valid_taps: BTreeMap<NetId, BTreeMap<String, Tap>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    ready_routes: BTreeMap<NetId, Vec<Segment>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    ready_taps: BTreeMap<NetId, BTreeMap<String, Tap>>,
}

fn split_routes(
    m: &BTreeMap<NetId, NetRoute>,
) -> (
    BTreeMap<NetId, Vec<Segment>>,
    BTreeMap<NetId, BTreeMap<String, Tap>>,
) {
    let mut segs = BTreeMap::new();
    let mut taps = BTreeMap::new();
    for (id, r) in m {
        segs.insert(id.clone(), r.segments.clone());
        taps.insert(id.clone(), r.taps.clone());
    }
    (segs, taps)
}

fn join_routes(
    segs: BTreeMap<NetId, Vec<Segment>>,
    mut taps: BTreeMap<NetId, BTreeMap<String, Tap>>,
) -> BTreeMap<NetId, NetRoute> {
    let mut out = BTreeMap::new();
    for (id, segments) in segs {
        let taps = taps.remove(&id).unwrap_or_default();
        out.insert(id, NetRoute { segments, taps });
    }
    out
}

/// Serializes placement and routes (the graph travels in its own file).
pub fn routed_to_json(r: &RoutedApp) -> String {
    let (routes, taps) = split_routes(&r.routes);
    let (valid_routes, valid_taps) = split_routes(&r.valid_routes);
    let (ready_routes, ready_taps) = split_routes(&r.ready_routes);
    let file = PnrFile {
        placement: r.placement.loc.clone(),
        routes,
        taps,
        valid_routes,
        valid_taps,
        ready_routes,
        ready_taps,
    };
    serde_json::to_string_pretty(&file).expect("pnr serialization")
}

/// Parses a placement-and-routes file against its graph.
pub fn routed_from_json(text: &str, graph: AppGraph) -> Result<RoutedApp, PnrError> {
    let file: PnrFile = serde_json::from_str(text)
        .map_err(|e| PnrError::File(format!("line {}: {}", e.line(), e)))?;
    Ok(RoutedApp {
        graph,
        placement: Placement {
            loc: file.placement,
        },
        routes: join_routes(file.routes, file.taps),
        valid_routes: join_routes(file.valid_routes, file.valid_taps),
        ready_routes: join_routes(file.ready_routes, file.ready_taps),
    })
}
