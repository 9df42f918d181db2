//! Tile-level configuration emission and decoding.
//!
//! A [`Config`] is the flow's final product: one record per tile saying what
//! the core runs, which switch-box outputs are driven from where (and
//! whether their registers are on), and which arriving tracks feed the
//! core's input ports. Tile records carry no ids and no coordinates, so a
//! kernel copied to another region of the array serializes byte for byte
//! identically; application-level names survive only in `io_bindings` and
//! (for hardened nets) in `hardened`. [`decode_config`] rebuilds a
//! [`RoutedApp`] from that, which is how round-trip equivalence and
//! duplication are checked.

use super::PostPnrError;
use crate::arch::{ArchSpec, Coord, Side, Width};
use crate::dfg::{AppGraph, Mode, Net, NetId, Node, NodeId, NodeKind, Opcode};
use crate::pnr::{required_tile_kind, tap_key, NetRoute, Placement, RoutedApp, SegEntry, Segment, Tap};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// What a tile's core runs. Field set mirrors the node kinds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CellConfig {
    IoIn {
        width: Width,
    },
    IoOut {
        width: Width,
    },
    Pe {
        op: Opcode,
        input_regs: bool,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        consts: BTreeMap<u8, u16>,
    },
    Mem {
        latency: u32,
        schedule: Vec<u64>,
    },
    Reg {
        width: Width,
    },
    Shift {
        depth: u16,
    },
    Fifo {
        depth: u16,
    },
}

/// One driven switch-box output: its source (`"CORE"` or an entry side) and
/// whether the output register is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbOut {
    pub src: SegEntry,
    pub reg: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TileConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<CellConfig>,
    /// `sb[width]["N"]["0"]`: the north output of track 0 in that width
    /// class is driven, from `src`, optionally registered.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sb: BTreeMap<String, BTreeMap<String, BTreeMap<String, SbOut>>>,
    /// `cb[port] = [side, track, width]`: the cell reads the track arriving
    /// on `side`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cb: BTreeMap<String, (Side, u8, Width)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardenedNet {
    pub driver: Coord,
    pub sinks: Vec<(Coord, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub mode: Mode,
    pub rows: u16,
    pub cols: u16,
    pub tiles: BTreeMap<Coord, TileConfig>,
    /// Application names of IO nodes, the only ids a config preserves.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub io_bindings: BTreeMap<NodeId, Coord>,
    /// Nets carried outside the interconnect, by application name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub hardened: BTreeMap<NetId, HardenedNet>,
}

fn kind_prefix(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::IoIn => "io_in",
        NodeKind::IoOut => "io_out",
        NodeKind::Pe => "pe",
        NodeKind::Mem => "mem",
        NodeKind::Reg => "reg",
        NodeKind::Shift => "shift",
        NodeKind::Fifo => "fifo",
    }
}

/// The tile record a node configures, stripped of identity.
fn cell_of(node: &Node) -> CellConfig {
    match node.kind {
        NodeKind::IoIn => CellConfig::IoIn { width: node.width },
        NodeKind::IoOut => CellConfig::IoOut { width: node.width },
        NodeKind::Pe => CellConfig::Pe {
            op: node.op.expect("PE has an opcode"),
            input_regs: node.input_regs,
            consts: node.consts.clone(),
        },
        NodeKind::Mem => CellConfig::Mem {
            latency: node.latency.unwrap_or(0),
            schedule: node.schedule.clone(),
        },
        NodeKind::Reg => CellConfig::Reg { width: node.width },
        NodeKind::Shift => CellConfig::Shift {
            depth: node.depth.unwrap_or(1),
        },
        NodeKind::Fifo => CellConfig::Fifo {
            depth: node.depth.unwrap_or(1),
        },
    }
}

fn node_of(cell: &CellConfig) -> Node {
    match cell {
        CellConfig::IoIn { width } => {
            let mut n = Node::bare(NodeKind::IoIn);
            n.width = *width;
            n
        }
        CellConfig::IoOut { width } => {
            let mut n = Node::bare(NodeKind::IoOut);
            n.width = *width;
            n
        }
        CellConfig::Pe {
            op,
            input_regs,
            consts,
        } => {
            let mut n = Node::pe(*op);
            n.input_regs = *input_regs;
            n.consts = consts.clone();
            n
        }
        CellConfig::Mem { latency, schedule } => {
            let mut n = Node::bare(NodeKind::Mem);
            n.latency = Some(*latency);
            n.schedule = schedule.clone();
            n
        }
        CellConfig::Reg { width } => {
            let mut n = Node::bare(NodeKind::Reg);
            n.width = *width;
            n
        }
        CellConfig::Shift { depth } => {
            let mut n = Node::bare(NodeKind::Shift);
            n.depth = Some(*depth);
            n
        }
        CellConfig::Fifo { depth } => {
            let mut n = Node::bare(NodeKind::Fifo);
            n.depth = Some(*depth);
            n
        }
    }
}

fn cell_kind(cell: &CellConfig) -> NodeKind {
    match cell {
        CellConfig::IoIn { .. } => NodeKind::IoIn,
        CellConfig::IoOut { .. } => NodeKind::IoOut,
        CellConfig::Pe { .. } => NodeKind::Pe,
        CellConfig::Mem { .. } => NodeKind::Mem,
        CellConfig::Reg { .. } => NodeKind::Reg,
        CellConfig::Shift { .. } => NodeKind::Shift,
        CellConfig::Fifo { .. } => NodeKind::Fifo,
    }
}

/// Emits the final configuration of a routed app. Every node must be placed
/// and connection-point usage must be exclusive (both hold for router
/// output).
pub fn emit_config(r: &RoutedApp, spec: &ArchSpec) -> Result<Config, PostPnrError> {
    let mut config = Config {
        mode: r.graph.mode,
        rows: spec.rows,
        cols: spec.cols,
        tiles: BTreeMap::new(),
        io_bindings: BTreeMap::new(),
        hardened: BTreeMap::new(),
    };
    for (id, node) in &r.graph.nodes {
        let at = r
            .placement
            .tile_of(id)
            .ok_or_else(|| PostPnrError::Config(format!("{id} is not placed")))?;
        let tile = config.tiles.entry(at).or_default();
        if tile.cell.is_some() {
            return Err(PostPnrError::Config(format!("two cells on tile {at}")));
        }
        tile.cell = Some(cell_of(node));
        if matches!(node.kind, NodeKind::IoIn | NodeKind::IoOut) {
            config.io_bindings.insert(id.clone(), at);
        }
    }
    let all_routes = r
        .routes
        .values()
        .chain(r.valid_routes.values())
        .chain(r.ready_routes.values());
    for route in all_routes {
        for seg in &route.segments {
            let slot = config
                .tiles
                .entry(seg.at)
                .or_default()
                .sb
                .entry(seg.width.label().to_string())
                .or_default()
                .entry(seg.exit.letter().to_string())
                .or_default()
                .insert(
                    seg.track.to_string(),
                    SbOut {
                        src: seg.entry,
                        reg: seg.register_enabled,
                    },
                );
            if slot.is_some() {
                return Err(PostPnrError::Config(format!(
                    "switch-box output {}:{}:{} driven twice",
                    seg.at, seg.exit, seg.track
                )));
            }
        }
    }
    let tap_sets: [(&BTreeMap<NetId, NetRoute>, bool); 3] = [
        (&r.routes, false),
        (&r.valid_routes, true),
        (&r.ready_routes, true),
    ];
    for (routes, handshake) in tap_sets {
        for (net_id, route) in routes {
            let width = if handshake {
                Width::W1
            } else {
                r.graph
                    .net_width(&r.graph.nets[net_id])
                    .ok_or_else(|| PostPnrError::Config(format!("net {net_id} has no width")))?
            };
            for (key, tap) in &route.taps {
                let (node, port) = key
                    .rsplit_once(':')
                    .ok_or_else(|| PostPnrError::Config(format!("malformed tap key {key}")))?;
                let at = r
                    .placement
                    .tile_of(node)
                    .ok_or_else(|| PostPnrError::Config(format!("{node} is not placed")))?;
                let prev = config
                    .tiles
                    .entry(at)
                    .or_default()
                    .cb
                    .insert(port.to_string(), (tap.side, tap.track, width));
                if prev.is_some() {
                    return Err(PostPnrError::Config(format!(
                        "input {port} on tile {at} tapped twice"
                    )));
                }
            }
        }
    }
    for net_id in spec.hardened_nets.iter() {
        let Some(net) = r.graph.nets.get(net_id) else {
            continue;
        };
        let driver = r
            .placement
            .tile_of(&net.driver)
            .ok_or_else(|| PostPnrError::Config(format!("{} is not placed", net.driver)))?;
        let mut sinks = Vec::new();
        for (node, port) in &net.sinks {
            let at = r
                .placement
                .tile_of(node)
                .ok_or_else(|| PostPnrError::Config(format!("{node} is not placed")))?;
            sinks.push((at, port.clone()));
        }
        config
            .hardened
            .insert(net_id.clone(), HardenedNet { driver, sinks });
    }
    Ok(config)
}

/// One reconstructed routing tree and the taps it feeds.
struct Component {
    root: Coord,
    width: Width,
    segments: Vec<Segment>,
    /// (tile, port, tap)
    taps: Vec<(Coord, String, Tap)>,
}

#[derive(PartialEq, Clone, Copy)]
enum Class {
    Data,
    Valid,
    Ready,
}

impl Component {
    fn class(&self) -> Result<Class, PostPnrError> {
        let mut class = None;
        for (_, port, _) in &self.taps {
            let c = if port == "hs_r" {
                Class::Ready
            } else if port.starts_with("hs_v") {
                Class::Valid
            } else {
                Class::Data
            };
            if *class.get_or_insert(c) != c {
                return Err(PostPnrError::Config(format!(
                    "route tree at {} mixes data and handshake taps",
                    self.root
                )));
            }
        }
        class.ok_or_else(|| {
            PostPnrError::Config(format!("route tree at {} feeds no input", self.root))
        })
    }
}

/// Rebuilds a RoutedApp from a configuration. Node ids are synthesized from
/// kind and position except IO nodes, which take their bound application
/// names; net ids are `n_{driver}`. Every referenced resource is checked
/// against `spec`.
pub fn decode_config(c: &Config, spec: &ArchSpec) -> Result<RoutedApp, PostPnrError> {
    if c.rows != spec.rows || c.cols != spec.cols {
        return Err(PostPnrError::Config(format!(
            "config is {}x{}, architecture is {}x{}",
            c.rows, c.cols, spec.rows, spec.cols
        )));
    }
    let io_names: BTreeMap<Coord, &NodeId> =
        c.io_bindings.iter().map(|(id, at)| (*at, id)).collect();
    let mut r = RoutedApp {
        graph: AppGraph::new(c.mode),
        placement: Placement {
            loc: BTreeMap::new(),
        },
        routes: BTreeMap::new(),
        valid_routes: BTreeMap::new(),
        ready_routes: BTreeMap::new(),
    };
    let mut cell_ids: BTreeMap<Coord, NodeId> = BTreeMap::new();
    for (at, tile) in &c.tiles {
        let Some(cell) = &tile.cell else {
            continue;
        };
        let kind = cell_kind(cell);
        match spec.tile_kind(*at) {
            Some(k) if k == required_tile_kind(kind) => {}
            Some(k) => {
                return Err(PostPnrError::Config(format!(
                    "{kind:?} cell on {k:?} tile {at}"
                )))
            }
            None => {
                return Err(PostPnrError::Config(format!(
                    "cell on out-of-bounds tile {at}"
                )))
            }
        }
        let id = match kind {
            NodeKind::IoIn | NodeKind::IoOut => (*io_names.get(at).ok_or_else(|| {
                PostPnrError::Config(format!("IO cell at {at} has no io_binding"))
            })?)
            .clone(),
            _ => format!("{}_{}_{}", kind_prefix(kind), at.row, at.col),
        };
        r.graph.nodes.insert(id.clone(), node_of(cell));
        r.placement.loc.insert(id.clone(), *at);
        cell_ids.insert(*at, id);
    }

    // Flatten the switch-box records back into segments, validating each
    // against the architecture.
    let mut segments: Vec<Segment> = Vec::new();
    for (at, tile) in &c.tiles {
        for (wlabel, sides) in &tile.sb {
            let width = match wlabel.as_str() {
                "16" => Width::W16,
                "1" => Width::W1,
                other => {
                    return Err(PostPnrError::Config(format!(
                        "unknown track width class {other:?} at {at}"
                    )))
                }
            };
            for (sletter, tracks) in sides {
                let exit = Side::from_letter(sletter).ok_or_else(|| {
                    PostPnrError::Config(format!("unknown side {sletter:?} at {at}"))
                })?;
                for (tlabel, out) in tracks {
                    let track: u8 = tlabel.parse().map_err(|_| {
                        PostPnrError::Config(format!("bad track index {tlabel:?} at {at}"))
                    })?;
                    if track >= spec.tracks(width) {
                        return Err(PostPnrError::Config(format!(
                            "track {track} exceeds the {width}-bit tracks at {at}"
                        )));
                    }
                    if out.reg && !spec.sb_register_sites {
                        return Err(PostPnrError::Config(format!(
                            "register enabled at {at} but the architecture has no register sites"
                        )));
                    }
                    if let SegEntry::Side(entry) = out.src {
                        if spec.neighbor(*at, entry).is_none() {
                            return Err(PostPnrError::Config(format!(
                                "segment at {at} enters from outside the array"
                            )));
                        }
                    }
                    segments.push(Segment {
                        at: *at,
                        entry: out.src,
                        exit,
                        track,
                        width,
                        register_enabled: out.reg,
                    });
                }
            }
        }
    }
    let mut taps: Vec<(Coord, String, Tap, Width)> = Vec::new();
    for (at, tile) in &c.tiles {
        for (port, (side, track, width)) in &tile.cb {
            if *track >= spec.tracks(*width) {
                return Err(PostPnrError::Config(format!(
                    "tap track {track} exceeds the {width}-bit tracks at {at}"
                )));
            }
            if tile.cell.is_none() {
                return Err(PostPnrError::Config(format!(
                    "tap {port} on empty tile {at}"
                )));
            }
            taps.push((
                *at,
                port.clone(),
                Tap {
                    side: *side,
                    track: *track,
                },
                *width,
            ));
        }
    }

    let components = group_components(&segments, &taps, spec)?;
    // A driver's trees (one per exit side off its core) make up one net, so
    // drivers are assumed to drive a single net each; a second net from the
    // same driver would decode merged into the first. Handshake trees are
    // deferred until the data nets they attach to exist. Ready trees are
    // never merged: a consumer roots one per input, told apart by which
    // producer they tap.
    let mut merged: BTreeMap<(Coord, Width), Vec<Component>> = BTreeMap::new();
    let mut handshake_valid: Vec<Component> = Vec::new();
    let mut handshake_ready: Vec<Component> = Vec::new();
    for comp in components {
        match comp.class()? {
            Class::Data => merged
                .entry((comp.root, comp.width))
                .or_default()
                .push(comp),
            Class::Valid => handshake_valid.push(comp),
            Class::Ready => handshake_ready.push(comp),
        }
    }
    for ((root, _), comps) in merged {
        let mut segments = Vec::new();
        let mut comp_taps = Vec::new();
        for mut comp in comps {
            segments.append(&mut comp.segments);
            comp_taps.append(&mut comp.taps);
        }
        let driver = cell_ids
            .get(&root)
            .ok_or_else(|| PostPnrError::Config(format!("route rooted at empty tile {root}")))?
            .clone();
        let net_id = format!("n_{driver}");
        let mut net = Net {
            driver,
            sinks: Vec::new(),
        };
        let mut route = NetRoute {
            segments,
            taps: BTreeMap::new(),
        };
        for (at, port, tap) in comp_taps {
            let node = cell_ids
                .get(&at)
                .ok_or_else(|| PostPnrError::Config(format!("tap on empty tile {at}")))?
                .clone();
            route.taps.insert(tap_key(&node, &port), tap);
            net.sinks.push((node, port));
        }
        net.sinks.sort();
        r.graph.nets.insert(net_id.clone(), net);
        r.routes.insert(net_id, route);
    }
    for comp in handshake_valid {
        valid_insert(&mut r, &cell_ids, comp)?;
    }
    for comp in handshake_ready {
        ready_insert(&mut r, &cell_ids, comp)?;
    }
    for (name, h) in &c.hardened {
        let driver = cell_ids
            .get(&h.driver)
            .ok_or_else(|| {
                PostPnrError::Config(format!("hardened net {name} driven from empty tile"))
            })?
            .clone();
        let mut sinks = Vec::new();
        for (at, port) in &h.sinks {
            let node = cell_ids.get(at).ok_or_else(|| {
                PostPnrError::Config(format!("hardened net {name} sinks into empty tile {at}"))
            })?;
            sinks.push((node.clone(), port.clone()));
        }
        r.graph.nets.insert(name.clone(), Net { driver, sinks });
        // The router keeps hardened nets in the map with empty routes.
        r.routes.insert(name.clone(), NetRoute::default());
    }
    let semantic = crate::dfg::validate_semantics(&r.graph);
    if !semantic.is_empty() {
        return Err(PostPnrError::Config(format!(
            "decoded graph is not well formed: {}",
            semantic.join("; ")
        )));
    }
    Ok(r)
}

/// Attaches a decoded valid tree to the data net sharing its driver tile.
fn valid_insert(
    r: &mut RoutedApp,
    cell_ids: &BTreeMap<Coord, NodeId>,
    comp: Component,
) -> Result<(), PostPnrError> {
    let driver = cell_ids
        .get(&comp.root)
        .ok_or_else(|| PostPnrError::Config(format!("valid tree rooted at empty tile {}", comp.root)))?;
    let (net_id, _) = r
        .graph
        .nets
        .iter()
        .find(|(_, n)| n.driver == *driver && !n.sinks.is_empty())
        .ok_or_else(|| {
            PostPnrError::Config(format!("valid tree at {} has no data net", comp.root))
        })?;
    let net_id = net_id.clone();
    let mut route = NetRoute {
        segments: comp.segments,
        taps: BTreeMap::new(),
    };
    for (at, port, tap) in comp.taps {
        let node = cell_ids
            .get(&at)
            .ok_or_else(|| PostPnrError::Config(format!("tap on empty tile {at}")))?;
        route.taps.insert(tap_key(node, &port), tap);
    }
    r.valid_routes.insert(net_id, route);
    Ok(())
}

/// Attaches a decoded ready tree: rooted at the consumer, tapping `hs_r` at
/// the producer, so it belongs to the net between those two cells.
fn ready_insert(
    r: &mut RoutedApp,
    cell_ids: &BTreeMap<Coord, NodeId>,
    comp: Component,
) -> Result<(), PostPnrError> {
    let [(tap_at, port, tap)] = &comp.taps[..] else {
        return Err(PostPnrError::Config(format!(
            "ready tree at {} must feed exactly one producer",
            comp.root
        )));
    };
    let producer = cell_ids
        .get(tap_at)
        .ok_or_else(|| PostPnrError::Config(format!("tap on empty tile {tap_at}")))?;
    let consumer = cell_ids
        .get(&comp.root)
        .ok_or_else(|| PostPnrError::Config(format!("ready tree rooted at empty tile {}", comp.root)))?;
    let (net_id, _) = r
        .graph
        .nets
        .iter()
        .find(|(_, n)| n.driver == *producer && n.sinks.iter().any(|(s, _)| s == consumer))
        .ok_or_else(|| {
            PostPnrError::Config(format!(
                "ready tree from {} to {tap_at} matches no net",
                comp.root
            ))
        })?;
    let net_id = net_id.clone();
    let mut taps = BTreeMap::new();
    taps.insert(tap_key(producer, port), *tap);
    r.ready_routes.insert(
        net_id,
        NetRoute {
            segments: comp.segments,
            taps,
        },
    );
    Ok(())
}

/// Groups segments and taps into connected route trees. A segment's parent
/// is the segment driving the wire it enters from; a tap's parent is the
/// segment driving the wire it reads. Connection-point exclusivity makes
/// both unique.
fn group_components(
    segments: &[Segment],
    taps: &[(Coord, String, Tap, Width)],
    spec: &ArchSpec,
) -> Result<Vec<Component>, PostPnrError> {
    // Wire identity: the driving segment of (tile, exit side, track, width).
    let mut driver_of: BTreeMap<(Coord, Side, u8, Width), usize> = BTreeMap::new();
    for (i, seg) in segments.iter().enumerate() {
        driver_of.insert((seg.at, seg.exit, seg.track, seg.width), i);
    }
    let mut comp_of: Vec<Option<usize>> = vec![None; segments.len()];
    let mut comps: Vec<Component> = Vec::new();
    fn assign(
        i: usize,
        segments: &[Segment],
        driver_of: &BTreeMap<(Coord, Side, u8, Width), usize>,
        comp_of: &mut Vec<Option<usize>>,
        comps: &mut Vec<Component>,
        spec: &ArchSpec,
        depth: usize,
    ) -> Result<usize, PostPnrError> {
        if let Some(c) = comp_of[i] {
            return Ok(c);
        }
        if depth > segments.len() {
            return Err(PostPnrError::Config(
                "switch-box configuration contains a wire cycle".into(),
            ));
        }
        let seg = &segments[i];
        let c = match seg.entry {
            SegEntry::Core => {
                comps.push(Component {
                    root: seg.at,
                    width: seg.width,
                    segments: Vec::new(),
                    taps: Vec::new(),
                });
                comps.len() - 1
            }
            SegEntry::Side(entry) => {
                let from = spec.neighbor(seg.at, entry).ok_or_else(|| {
                    PostPnrError::Config(format!("segment at {} has no source tile", seg.at))
                })?;
                let parent = driver_of
                    .get(&(from, entry.opposite(), seg.track, seg.width))
                    .ok_or_else(|| {
                        PostPnrError::Config(format!(
                            "segment at {} reads an undriven wire from {from}",
                            seg.at
                        ))
                    })?;
                assign(*parent, segments, driver_of, comp_of, comps, spec, depth + 1)?
            }
        };
        comp_of[i] = Some(c);
        comps[c].segments.push(*seg);
        Ok(c)
    }
    for i in 0..segments.len() {
        assign(i, segments, &driver_of, &mut comp_of, &mut comps, spec, 0)?;
    }
    for (at, port, tap, width) in taps {
        // The wire a tap reads: driven by the neighbor toward `side`, or by
        // this tile's own core-rooted segment on that side.
        let neighbor_driver = spec
            .neighbor(*at, tap.side)
            .and_then(|from| driver_of.get(&(from, tap.side.opposite(), tap.track, *width)));
        let same_tile_driver = driver_of
            .get(&(*at, tap.side, tap.track, *width))
            .filter(|i| segments[**i].entry == SegEntry::Core && segments[**i].at == *at);
        let seg_idx = neighbor_driver.or(same_tile_driver).ok_or_else(|| {
            PostPnrError::Config(format!("tap {port} at {at} reads an undriven wire"))
        })?;
        let c = comp_of[*seg_idx].expect("all segments assigned");
        comps[c].taps.push((*at, port.clone(), *tap));
    }
    Ok(comps)
}

/// Copies a compiled base region `factor` times down the array, renaming IO
/// bindings and hardened nets `name#k` per instance. Tile records are reused
/// untouched, which is what makes the duplicates byte-identical.
pub fn duplicate_config(
    c: &Config,
    base_rows: u16,
    base_cols: u16,
    factor: u16,
    target: &ArchSpec,
) -> Result<Config, PostPnrError> {
    if factor == 0 {
        return Err(PostPnrError::Config("duplication factor must be >= 1".into()));
    }
    if base_cols > target.cols || base_rows.checked_mul(factor).is_none_or(|r| r > target.rows) {
        return Err(PostPnrError::Config(format!(
            "{factor} copies of {base_rows}x{base_cols} do not fit {}x{}",
            target.rows, target.cols
        )));
    }
    for at in c.tiles.keys() {
        if at.row >= base_rows || at.col >= base_cols {
            return Err(PostPnrError::Config(format!(
                "tile {at} lies outside the {base_rows}x{base_cols} base region"
            )));
        }
    }
    let mut out = Config {
        mode: c.mode,
        rows: target.rows,
        cols: target.cols,
        tiles: BTreeMap::new(),
        io_bindings: BTreeMap::new(),
        hardened: BTreeMap::new(),
    };
    for k in 0..factor {
        let off = k * base_rows;
        let shift = |at: &Coord| Coord::new(at.row + off, at.col);
        for (at, tile) in &c.tiles {
            out.tiles.insert(shift(at), tile.clone());
        }
        for (id, at) in &c.io_bindings {
            out.io_bindings.insert(format!("{id}#{k}"), shift(at));
        }
        for (name, h) in &c.hardened {
            out.hardened.insert(
                format!("{name}#{k}"),
                HardenedNet {
                    driver: shift(&h.driver),
                    sinks: h.sinks.iter().map(|(at, p)| (shift(at), p.clone())).collect(),
                },
            );
        }
    }
    Ok(out)
}

/// Structural equality of two routed apps modulo node and net renaming.
/// Identity is taken from position: nodes compare as (kind, tile, cell
/// fields), nets as renamed driver/sink sets plus their exact routes.
pub fn routed_apps_equivalent(a: &RoutedApp, b: &RoutedApp) -> bool {
    match (canonical(a), canonical(b)) {
        (Some(ca), Some(cb)) => ca == cb,
        _ => false,
    }
}

fn canonical(r: &RoutedApp) -> Option<(Mode, BTreeMap<String, String>, BTreeSet<String>)> {
    let mut rename: BTreeMap<&str, String> = BTreeMap::new();
    let mut nodes: BTreeMap<String, String> = BTreeMap::new();
    for (id, node) in &r.graph.nodes {
        let at = r.placement.tile_of(id)?;
        let canon = format!("{}_{}_{}", kind_prefix(node.kind), at.row, at.col);
        rename.insert(id, canon.clone());
        if nodes
            .insert(canon, serde_json::to_string(&cell_of(node)).ok()?)
            .is_some()
        {
            return None;
        }
    }
    let route_repr = |route: Option<&NetRoute>| -> Option<serde_json::Value> {
        let route = route?;
        let mut segments = route.segments.clone();
        segments.sort();
        let taps: BTreeMap<String, &Tap> = route
            .taps
            .iter()
            .map(|(key, tap)| {
                let (node, port) = key.rsplit_once(':').expect("tap keys are node:port");
                (format!("{}:{port}", rename[node]), tap)
            })
            .collect();
        Some(serde_json::json!({ "segments": segments, "taps": taps }))
    };
    let mut nets = BTreeSet::new();
    for (net_id, net) in &r.graph.nets {
        let mut sinks: Vec<(String, &str)> = net
            .sinks
            .iter()
            .map(|(n, p)| (rename[n.as_str()].clone(), p.as_str()))
            .collect();
        sinks.sort();
        let repr = serde_json::json!({
            "driver": rename[net.driver.as_str()],
            "sinks": sinks,
            "data": route_repr(r.routes.get(net_id)),
            "valid": route_repr(r.valid_routes.get(net_id)),
            "ready": route_repr(r.ready_routes.get(net_id)),
        });
        nets.insert(repr.to_string());
    }
    Some((r.graph.mode, nodes, nets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_routing_graph, TileKind};
    use crate::dfg::{AppGraph, Mode, Node, NodeKind, Opcode};
    use crate::pnr::{place, route, PnrParams};
    use std::collections::BTreeSet;

    fn arch(rows: &[&str]) -> ArchSpec {
        let mut tiles = BTreeMap::new();
        let mut io_rows = BTreeSet::new();
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                let kind = match ch {
                    'I' => TileKind::Io,
                    'M' => TileKind::Mem,
                    _ => TileKind::Pe,
                };
                if kind == TileKind::Io {
                    io_rows.insert(r as u16);
                }
                tiles.insert(Coord::new(r as u16, c as u16), kind);
            }
        }
        ArchSpec {
            rows: rows.len() as u16,
            cols: rows[0].len() as u16,
            tiles,
            tracks16: 2,
            tracks1: 2,
            sb_register_sites: true,
            pe_input_registers: 1,
            regfile_depth: 32,
            hardened_nets: BTreeSet::new(),
            io_rows,
        }
    }

    fn node_at(mut n: Node, at: (u16, u16)) -> Node {
        n.at = Some(Coord::new(at.0, at.1));
        n
    }

    fn graph(
        mode: Mode,
        nodes: &[(&str, Node)],
        nets: &[(&str, &str, &[(&str, &str)])],
    ) -> AppGraph {
        let mut g = AppGraph::new(mode);
        for (id, n) in nodes {
            g.nodes.insert(id.to_string(), n.clone());
        }
        for (id, driver, sinks) in nets {
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
        g
    }

    fn routed(g: &AppGraph, spec: &ArchSpec) -> RoutedApp {
        let rgraph = build_routing_graph(spec).unwrap();
        let params = PnrParams::default();
        let (placement, _) = place(g, spec, &params).unwrap();
        route(g, &placement, spec, &rgraph, &params).unwrap().0
    }

    fn diamond() -> AppGraph {
        let mut p0 = Node::pe(Opcode::Abs);
        p0.input_regs = true;
        let p1 = p0.clone();
        graph(
            Mode::Dense,
            &[
                ("x", node_at(Node::bare(NodeKind::IoIn), (0, 3))),
                ("p0", node_at(p0, (1, 2))),
                ("p1", node_at(p1, (1, 4))),
                ("pj", node_at(Node::pe(Opcode::Add), (3, 3))),
                ("y", node_at(Node::bare(NodeKind::IoOut), (4, 3))),
            ],
            &[
                ("nx", "x", &[("p0", "in0"), ("p1", "in0")]),
                ("n0", "p0", &[("pj", "in0")]),
                ("n1", "p1", &[("pj", "in1")]),
                ("ny", "pj", &[("y", "in")]),
            ],
        )
    }

    #[test]
    fn dense_round_trip_recovers_the_app() {
        let spec = arch(&["IIIIIII", "PPPPPPP", "PPPPPPP", "PPPPPPP", "IIIIIII"]);
        let r = routed(&diamond(), &spec);
        let cfg = emit_config(&r, &spec).unwrap();
        assert_eq!(cfg.io_bindings.len(), 2);

        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let parsed: Config = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, cfg);

        let back = decode_config(&parsed, &spec).unwrap();
        assert!(routed_apps_equivalent(&r, &back));
        assert_eq!(back.graph.nodes.len(), 5);
        assert_eq!(back.graph.nets.len(), 4);
    }

    #[test]
    fn sparse_round_trip_recovers_the_handshake() {
        let spec = arch(&["IPPPPPPI"]);
        let mut p = Node::pe(Opcode::Add);
        p.consts.insert(1, 5);
        let g = graph(
            Mode::Sparse,
            &[
                ("a", node_at(Node::bare(NodeKind::IoIn), (0, 0))),
                ("f0", {
                    let mut f = Node::bare(NodeKind::Fifo);
                    f.depth = Some(2);
                    f
                }),
                ("p", p),
                ("y", node_at(Node::bare(NodeKind::IoOut), (0, 7))),
            ],
            &[
                ("na", "a", &[("f0", "in")]),
                ("nf", "f0", &[("p", "in0")]),
                ("np", "p", &[("y", "in")]),
            ],
        );
        let r = routed(&g, &spec);
        assert_eq!(r.valid_routes.len(), 3);
        assert_eq!(r.ready_routes.len(), 3);
        let cfg = emit_config(&r, &spec).unwrap();
        let back = decode_config(&cfg, &spec).unwrap();
        assert_eq!(back.valid_routes.len(), 3);
        assert_eq!(back.ready_routes.len(), 3);
        assert!(routed_apps_equivalent(&r, &back));
    }

    #[test]
    fn enabled_register_survives_the_trip() {
        let spec = arch(&["IIIIIII", "PPPPPPP", "PPPPPPP", "PPPPPPP", "IIIIIII"]);
        let mut r = routed(&diamond(), &spec);
        let route = r.routes.get_mut("ny").unwrap();
        route.segments[0].register_enabled = true;
        let cfg = emit_config(&r, &spec).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(json.matches("\"reg\":true").count(), 1);

        let back = decode_config(&cfg, &spec).unwrap();
        let regs: usize = back
            .routes
            .values()
            .map(|rt| rt.segments.iter().filter(|s| s.register_enabled).count())
            .sum();
        assert_eq!(regs, 1);
        assert!(routed_apps_equivalent(&r, &back));
    }

    #[test]
    fn register_bit_needs_hardware_sites() {
        let mut spec = arch(&["IIIIIII", "PPPPPPP", "PPPPPPP", "PPPPPPP", "IIIIIII"]);
        let mut r = routed(&diamond(), &spec);
        r.routes.get_mut("ny").unwrap().segments[0].register_enabled = true;
        let cfg = emit_config(&r, &spec).unwrap();
        spec.sb_register_sites = false;
        assert!(decode_config(&cfg, &spec).is_err());
    }

    #[test]
    fn duplicated_regions_serialize_byte_identical() {
        let base_spec = arch(&["IPPI"]);
        let g = graph(
            Mode::Dense,
            &[
                ("x", node_at(Node::bare(NodeKind::IoIn), (0, 0))),
                ("p", {
                    let mut p = Node::pe(Opcode::Abs);
                    p.input_regs = true;
                    p
                }),
                ("y", node_at(Node::bare(NodeKind::IoOut), (0, 3))),
            ],
            &[("n1", "x", &[("p", "in0")]), ("n2", "p", &[("y", "in")])],
        );
        let r = routed(&g, &base_spec);
        let cfg = emit_config(&r, &base_spec).unwrap();

        let target = arch(&["IPPI", "IPPI", "IPPI"]);
        let out = duplicate_config(&cfg, 1, 4, 3, &target).unwrap();
        assert_eq!(out.tiles.len(), 3 * cfg.tiles.len());
        for (at, tile) in &cfg.tiles {
            let base = serde_json::to_string(tile).unwrap();
            for k in 0..3u16 {
                let shifted = Coord::new(at.row + k, at.col);
                let copy = serde_json::to_string(&out.tiles[&shifted]).unwrap();
                assert_eq!(copy, base);
            }
        }
        assert_eq!(out.io_bindings.len(), 6);
        assert_eq!(out.io_bindings["x#2"], Coord::new(2, 0));

        let back = decode_config(&out, &target).unwrap();
        assert_eq!(back.graph.nodes.len(), 9);
        assert!(crate::dfg::validate_semantics(&back.graph).is_empty());

        // A region that spills outside the base bounds is rejected.
        assert!(duplicate_config(&cfg, 1, 3, 3, &target).is_err());
        // More copies than the target holds as well.
        assert!(duplicate_config(&cfg, 1, 4, 4, &target).is_err());
    }

    #[test]
    fn hardened_nets_skip_the_fabric() {
        let mut spec = arch(&["IIIIIII", "PPPPPPP", "PPPPPPP", "PPPPPPP", "IIIIIII"]);
        spec.hardened_nets.insert("flush".to_string());
        let mut fl = Node::bare(NodeKind::IoIn);
        fl.width = Width::W1;
        let mut p = Node::pe(Opcode::Abs);
        p.input_regs = true;
        let g = graph(
            Mode::Dense,
            &[
                ("x", node_at(Node::bare(NodeKind::IoIn), (0, 3))),
                ("fl", node_at(fl, (0, 1))),
                ("p", p),
                ("y", node_at(Node::bare(NodeKind::IoOut), (4, 3))),
            ],
            &[
                ("n1", "x", &[("p", "in0")]),
                ("flush", "fl", &[("p", "flush")]),
                ("n2", "p", &[("y", "in")]),
            ],
        );
        let r = routed(&g, &spec);
        assert!(r.routes["flush"].segments.is_empty());
        let cfg = emit_config(&r, &spec).unwrap();
        assert_eq!(cfg.hardened.len(), 1);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(!json.contains("\"1\":{"), "no 1-bit fabric tracks: {json}");

        let back = decode_config(&cfg, &spec).unwrap();
        let flush = &back.graph.nets["flush"];
        assert_eq!(flush.sinks.len(), 1);
        assert_eq!(flush.sinks[0].1, "flush");
        assert!(back.routes["flush"].segments.is_empty());
        assert!(routed_apps_equivalent(&r, &back));
    }

    #[test]
    fn decode_rejects_corrupt_records() {
        let spec = arch(&["IIIIIII", "PPPPPPP", "PPPPPPP", "PPPPPPP", "IIIIIII"]);
        let r = routed(&diamond(), &spec);
        let cfg = emit_config(&r, &spec).unwrap();

        // Wrong grid.
        let small = arch(&["IPPI"]);
        assert!(decode_config(&cfg, &small).is_err());

        // IO cell with no binding.
        let mut broken = cfg.clone();
        broken.io_bindings.clear();
        assert!(decode_config(&broken, &spec).is_err());

        // Track index beyond the architecture.
        let mut broken = cfg.clone();
        let tile = broken.tiles.values_mut().find(|t| !t.sb.is_empty()).unwrap();
        let outs = tile.sb.values_mut().next().unwrap().values_mut().next().unwrap();
        let out = outs.values().next().unwrap().clone();
        outs.insert("9".to_string(), out);
        assert!(decode_config(&broken, &spec).is_err());

        // A segment reading a wire nothing drives.
        let mut broken = cfg.clone();
        broken
            .tiles
            .entry(Coord::new(2, 0))
            .or_default()
            .sb
            .entry("16".to_string())
            .or_default()
            .entry("W".to_string())
            .or_default()
            .insert(
                "0".to_string(),
                SbOut {
                    src: SegEntry::Side(Side::East),
                    reg: false,
                },
            );
        assert!(decode_config(&broken, &spec).is_err());
    }
}
