//! Application dataflow graphs.
//!
//! An application is a DAG of operator nodes joined by named nets. A net has
//! one driver and one or more (node, port) sinks. `dense` graphs are
//! statically scheduled: every value moves exactly one timing stage per cycle
//! and correctness depends on balanced arrival cycles. `sparse` graphs are
//! elastic: values are tokens moved by a ready/valid handshake and FIFOs
//! absorb rate mismatches, so arrival cycles may drift.

use crate::arch::{Coord, Width};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub type NodeId = String;
pub type NetId = String;
pub type Port = String;

#[derive(Debug, Error)]
pub enum DfgError {
    #[error("application file: {0}")]
    Parse(String),
    #[error("invalid application: {0}")]
    Invalid(String),
    #[error("graph has a cycle through {0:?}")]
    Cycle(Vec<NodeId>),
}

/// Execution discipline of the whole graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "dense")]
    Dense,
    #[serde(rename = "sparse")]
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "IO_IN")]
    IoIn,
    #[serde(rename = "IO_OUT")]
    IoOut,
    #[serde(rename = "PE")]
    Pe,
    #[serde(rename = "MEM")]
    Mem,
    #[serde(rename = "REG")]
    Reg,
    #[serde(rename = "SHIFT")]
    Shift,
    #[serde(rename = "FIFO")]
    Fifo,
}

/// PE operation. Word width is 16 bits; compares and `abs`/`min`/`max` treat
/// words as two's-complement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Opcode {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Gt,
    Lt,
    Eq,
    Mux,
    Abs,
    Min,
    Max,
}

impl Opcode {
    /// Number of data inputs the op reads, counted from `in0`.
    pub fn arity(self) -> usize {
        match self {
            Opcode::Abs => 1,
            Opcode::Mux => 3,
            _ => 2,
        }
    }

    /// Combinational result for inputs `(in0, in1, in2)`. Add/sub/mul wrap,
    /// shifts use the low 4 bits of `in1`, `mux` picks `in1` when `in0` is
    /// nonzero, and `abs(i16::MIN)` wraps to itself.
    pub fn eval(self, a: u16, b: u16, c: u16) -> u16 {
        let (sa, sb) = (a as i16, b as i16);
        match self {
            Opcode::Add => a.wrapping_add(b),
            Opcode::Sub => a.wrapping_sub(b),
            Opcode::Mul => a.wrapping_mul(b),
            Opcode::And => a & b,
            Opcode::Or => a | b,
            Opcode::Xor => a ^ b,
            Opcode::Shl => a << (b & 15),
            Opcode::Shr => a >> (b & 15),
            Opcode::Gt => (sa > sb) as u16,
            Opcode::Lt => (sa < sb) as u16,
            Opcode::Eq => (a == b) as u16,
            Opcode::Mux => {
                if a != 0 {
                    b
                } else {
                    c
                }
            }
            Opcode::Abs => sa.wrapping_abs() as u16,
            Opcode::Min => sa.min(sb) as u16,
            Opcode::Max => sa.max(sb) as u16,
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn default_w16() -> Width {
    Width::W16
}

fn is_w16(w: &Width) -> bool {
    *w == Width::W16
}

/// One operator. Fields apply by kind: `op`/`consts`/`input_regs` to PE,
/// `latency`/`schedule` to MEM, `depth` to SHIFT and FIFO, `width` to IO and
/// REG. `at` pins placement to a tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<Opcode>,
    /// Compile-time constants by input index; a const port takes no net.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub consts: BTreeMap<u8, u16>,
    /// When set, every data input of this PE is registered, adding one cycle.
    #[serde(default, skip_serializing_if = "is_false")]
    pub input_regs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<u32>,
    /// Cycles at which the MEM samples its input, strictly increasing. The
    /// sampled value appears on the output `latency` cycles later.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<u16>,
    #[serde(default = "default_w16", skip_serializing_if = "is_w16")]
    pub width: Width,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<Coord>,
}

impl Node {
    pub fn pe(op: Opcode) -> Node {
        Node {
            kind: NodeKind::Pe,
            op: Some(op),
            ..Node::bare(NodeKind::Pe)
        }
    }

    pub fn bare(kind: NodeKind) -> Node {
        Node {
            kind,
            op: None,
            consts: BTreeMap::new(),
            input_regs: false,
            latency: None,
            schedule: Vec::new(),
            depth: None,
            width: Width::W16,
            at: None,
        }
    }

    /// Width of the value this node produces, `None` for sinks.
    pub fn out_width(&self) -> Option<Width> {
        match self.kind {
            NodeKind::IoOut => None,
            NodeKind::IoIn | NodeKind::Reg => Some(self.width),
            NodeKind::Pe | NodeKind::Mem | NodeKind::Shift | NodeKind::Fifo => Some(Width::W16),
        }
    }

    /// Data ports a net may drive, with widths. Excludes `flush`.
    pub fn data_in_ports(&self) -> Vec<(&'static str, Width)> {
        match self.kind {
            NodeKind::IoIn => Vec::new(),
            NodeKind::IoOut => vec![("in", self.width)],
            NodeKind::Pe => {
                let arity = self.op.map(Opcode::arity).unwrap_or(0);
                ["in0", "in1", "in2"][..arity]
                    .iter()
                    .map(|p| (*p, Width::W16))
                    .collect()
            }
            NodeKind::Mem | NodeKind::Shift | NodeKind::Fifo => vec![("in", Width::W16)],
            NodeKind::Reg => vec![("in", self.width)],
        }
    }

    pub fn accepts_flush(&self) -> bool {
        matches!(self.kind, NodeKind::Pe | NodeKind::Mem)
    }

    /// Index of `port` when that input is tied to a constant.
    pub fn const_port(&self, port: &str) -> Option<u8> {
        let idx = match port {
            "in0" => 0,
            "in1" => 1,
            "in2" => 2,
            _ => return None,
        };
        self.consts.contains_key(&idx).then_some(idx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Net {
    pub driver: NodeId,
    pub sinks: Vec<(NodeId, Port)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppGraph {
    pub mode: Mode,
    pub nodes: BTreeMap<NodeId, Node>,
    pub nets: BTreeMap<NetId, Net>,
}

impl AppGraph {
    pub fn new(mode: Mode) -> AppGraph {
        AppGraph {
            mode,
            nodes: BTreeMap::new(),
            nets: BTreeMap::new(),
        }
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    /// Width of the value a net carries, from its driver.
    pub fn net_width(&self, net: &Net) -> Option<Width> {
        self.nodes.get(&net.driver).and_then(Node::out_width)
    }

    /// Map from (sink node, port) to the net driving it.
    pub fn sink_index(&self) -> BTreeMap<(NodeId, Port), NetId> {
        let mut idx = BTreeMap::new();
        for (net_id, net) in &self.nets {
            for (node, port) in &net.sinks {
                idx.insert((node.clone(), port.clone()), net_id.clone());
            }
        }
        idx
    }

    /// Nets driven by each node.
    pub fn driver_index(&self) -> BTreeMap<NodeId, Vec<NetId>> {
        let mut idx: BTreeMap<NodeId, Vec<NetId>> = BTreeMap::new();
        for (net_id, net) in &self.nets {
            idx.entry(net.driver.clone()).or_default().push(net_id.clone());
        }
        idx
    }

    /// Nets arriving at each node's data ports (flush excluded), keyed by port.
    pub fn input_nets(&self, node_id: &str) -> BTreeMap<Port, NetId> {
        let mut out = BTreeMap::new();
        for (net_id, net) in &self.nets {
            for (node, port) in &net.sinks {
                if node == node_id && port != "flush" {
                    out.insert(port.clone(), net_id.clone());
                }
            }
        }
        out
    }

    /// A node id with `base` as prefix that is not yet taken.
    pub fn fresh_node_id(&self, base: &str) -> NodeId {
        if !self.nodes.contains_key(base) {
            return base.to_string();
        }
        let mut k = 1usize;
        loop {
            let id = format!("{base}_{k}");
            if !self.nodes.contains_key(&id) {
                return id;
            }
            k += 1;
        }
    }

    /// A net id with `base` as prefix that is not yet taken.
    pub fn fresh_net_id(&self, base: &str) -> NetId {
        if !self.nets.contains_key(base) {
            return base.to_string();
        }
        let mut k = 1usize;
        loop {
            let id = format!("{base}_{k}");
            if !self.nets.contains_key(&id) {
                return id;
            }
            k += 1;
        }
    }
}

/// Parses an application file, sorts each net's sink list, and validates. The
/// format is JSON with `mode`, `nodes`, and `nets` keys.
pub fn parse_app(text: &str) -> Result<AppGraph, DfgError> {
    let mut g: AppGraph = serde_json::from_str(text)
        .map_err(|e| DfgError::Parse(format!("line {}: {}", e.line(), e)))?;
    for net in g.nets.values_mut() {
        net.sinks.sort();
    }
    let violations = validate_semantics(&g);
    if !violations.is_empty() {
        return Err(DfgError::Invalid(violations.join("; ")));
    }
    topo_order(&g)?;
    Ok(g)
}

/// Canonical serialization: sorted node/net names, sorted sink lists,
/// defaulted fields omitted.
pub fn serialize_app(g: &AppGraph) -> String {
    let mut sorted = g.clone();
    for net in sorted.nets.values_mut() {
        net.sinks.sort();
    }
    serde_json::to_string_pretty(&sorted).expect("app serialization")
}

/// Checks structural and per-kind rules. Returns an empty list when the graph
/// is usable; cycles are reported separately by [`topo_order`].
pub fn validate_semantics(g: &AppGraph) -> Vec<String> {
    let mut v = Vec::new();
    for (id, node) in &g.nodes {
        match node.kind {
            NodeKind::Pe => {
                if node.op.is_none() {
                    v.push(format!("PE {id} has no op"));
                }
                if let Some(op) = node.op {
                    for idx in node.consts.keys() {
                        if *idx as usize >= op.arity() {
                            v.push(format!("{id}: const index {idx} beyond {op:?} arity"));
                        }
                    }
                }
            }
            NodeKind::Mem => {
                match node.latency {
                    None => v.push(format!("MEM {id} has no latency")),
                    Some(0) => v.push(format!("MEM {id} latency must be >= 1")),
                    Some(_) => {}
                }
                if node.schedule.is_empty() {
                    v.push(format!("MEM {id} has an empty schedule"));
                }
                if node.schedule.windows(2).any(|w| w[0] >= w[1]) {
                    v.push(format!("MEM {id} schedule is not strictly increasing"));
                }
            }
            NodeKind::Shift => match node.depth {
                None | Some(0) => v.push(format!("SHIFT {id} needs depth >= 1")),
                Some(_) => {}
            },
            NodeKind::Fifo => match node.depth {
                None | Some(0) => v.push(format!("FIFO {id} needs depth >= 1")),
                Some(_) => {}
            },
            NodeKind::IoIn | NodeKind::IoOut | NodeKind::Reg => {}
        }
        let fields_ok = match node.kind {
            NodeKind::Pe => node.latency.is_none() && node.depth.is_none(),
            NodeKind::Mem => node.op.is_none() && node.depth.is_none(),
            _ => node.op.is_none() && node.latency.is_none() && node.consts.is_empty(),
        };
        if !fields_ok {
            v.push(format!("{id}: fields not applicable to {:?}", node.kind));
        }
        if g.mode == Mode::Sparse
            && !matches!(
                node.kind,
                NodeKind::IoIn | NodeKind::IoOut | NodeKind::Pe | NodeKind::Fifo
            )
        {
            v.push(format!("{id}: {:?} not allowed in sparse mode", node.kind));
        }
        if g.mode == Mode::Sparse
            && matches!(node.kind, NodeKind::IoIn | NodeKind::IoOut)
            && node.width != Width::W16
        {
            v.push(format!("{id}: sparse IO must be 16-bit"));
        }
    }

    let mut driven: BTreeSet<(NodeId, Port)> = BTreeSet::new();
    for (net_id, net) in &g.nets {
        let Some(driver) = g.nodes.get(&net.driver) else {
            v.push(format!("net {net_id}: driver {} does not exist", net.driver));
            continue;
        };
        let Some(width) = driver.out_width() else {
            v.push(format!("net {net_id}: {} cannot drive a net", net.driver));
            continue;
        };
        if net.sinks.is_empty() {
            v.push(format!("net {net_id} has no sinks"));
        }
        if g.mode == Mode::Sparse && net.sinks.len() != 1 {
            v.push(format!("net {net_id}: sparse nets have exactly one sink"));
        }
        for (node_id, port) in &net.sinks {
            let Some(node) = g.nodes.get(node_id) else {
                v.push(format!("net {net_id}: sink {node_id} does not exist"));
                continue;
            };
            if !driven.insert((node_id.clone(), port.clone())) {
                v.push(format!("{node_id}:{port} driven more than once"));
            }
            if port == "flush" {
                if !node.accepts_flush() {
                    v.push(format!("net {net_id}: {node_id} has no flush port"));
                } else if g.mode == Mode::Sparse {
                    v.push(format!("net {net_id}: flush ports unused in sparse mode"));
                } else if width != Width::W1 {
                    v.push(format!("net {net_id}: flush into {node_id} must be 1-bit"));
                }
                continue;
            }
            match node.data_in_ports().iter().find(|(p, _)| p == port) {
                None => v.push(format!("net {net_id}: {node_id} does not read port {port}")),
                Some((_, pw)) => {
                    if *pw != width {
                        v.push(format!(
                            "net {net_id}: {width}-bit value into {pw}-bit {node_id}:{port}"
                        ));
                    }
                }
            }
            if node.const_port(port).is_some() {
                v.push(format!("{node_id}:{port} is const but also driven by {net_id}"));
            }
        }
    }

    for (id, node) in &g.nodes {
        for (port, _) in node.data_in_ports() {
            let has_net = driven.contains(&(id.clone(), port.to_string()));
            let has_const = node.const_port(port).is_some();
            if !has_net && !has_const {
                v.push(format!("{id}:{port} is undriven"));
            }
        }
    }
    v
}

/// Topological order over all net edges (flush included), lexicographic among
/// ready nodes so the order is deterministic.
pub fn topo_order(g: &AppGraph) -> Result<Vec<NodeId>, DfgError> {
    let mut indeg: BTreeMap<&str, usize> = g.nodes.keys().map(|id| (id.as_str(), 0)).collect();
    let mut succs: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for net in g.nets.values() {
        if !g.nodes.contains_key(&net.driver) {
            continue;
        }
        for (node, _) in &net.sinks {
            if let Some(d) = indeg.get_mut(node.as_str()) {
                *d += 1;
                succs
                    .entry(net.driver.as_str())
                    .or_default()
                    .push(node.as_str());
            }
        }
    }
    let mut ready: BTreeSet<&str> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut order = Vec::new();
    while let Some(&id) = ready.iter().next() {
        ready.remove(id);
        order.push(id.to_string());
        for succ in succs.get(id).into_iter().flatten() {
            let d = indeg.get_mut(succ).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.insert(succ);
            }
        }
    }
    if order.len() != g.nodes.len() {
        let stuck: Vec<NodeId> = indeg
            .iter()
            .filter(|(_, d)| **d > 0)
            .map(|(id, _)| id.to_string())
            .collect();
        return Err(DfgError::Cycle(stuck));
    }
    Ok(order)
}
