//! Functional simulation, the oracle every compile step is checked against.
//!
//! Dense graphs run as a synchronous machine: combinational nodes settle
//! within the cycle in topological order, state elements (REG, SHIFT, MEM,
//! registered PE inputs, enabled switch-box registers) capture at the cycle
//! edge. Flush inputs are configuration-time control and are ignored here.
//!
//! Sparse graphs move tokens under a ready/valid handshake. Valid never waits
//! for ready, FIFOs report occupancy from the start of the cycle, and every
//! endpoint acts on its own (possibly delayed) view of the wires. With zero
//! wire delay the views agree and streams are exact; a pipeline register
//! dropped naked into a handshake desynchronizes the views, which is why
//! sparse pipelining goes through FIFO insertion instead.

use crate::arch::ArchSpec;
use crate::dfg::{topo_order, AppGraph, DfgError, Mode, NetId, NodeId, NodeKind, Port};
use crate::pnr::RoutedApp;
use crate::sta::latency_cycles;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// Cycles of total silence after which a sparse run is declared dead.
pub const QUIESCENCE_WINDOW: u64 = 64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] DfgError),
    #[error("stimulus: {0}")]
    Input(String),
}

/// A dense wire value: a 16-bit word or not-yet-defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Value {
    Undef,
    V(u16),
}

impl Value {
    pub fn defined(self) -> Option<u16> {
        match self {
            Value::Undef => None,
            Value::V(v) => Some(v),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Undef => s.serialize_none(),
            Value::V(v) => s.serialize_u16(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match Option::<u16>::deserialize(d)? {
            None => Value::Undef,
            Some(v) => Value::V(v),
        })
    }
}

/// A sparse stream element: a word or end-of-stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Token {
    Val(u16),
    Eos,
}

impl Serialize for Token {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Token::Val(v) => s.serialize_u16(*v),
            Token::Eos => s.serialize_str("eos"),
        }
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match &v {
            serde_json::Value::Number(n) => n
                .as_u64()
                .filter(|n| *n <= u16::MAX as u64)
                .map(|n| Token::Val(n as u16))
                .ok_or_else(|| D::Error::custom("token out of 16-bit range")),
            serde_json::Value::String(s) if s == "eos" => Ok(Token::Eos),
            other => Err(D::Error::custom(format!("bad token {other}"))),
        }
    }
}

/// Input streams. Dense inputs present one word per cycle until the stream
/// runs out. Sparse inputs offer one optional token per slot; a `null` slot
/// offers nothing for one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum Stimulus {
    #[serde(rename = "dense")]
    Dense { inputs: BTreeMap<NodeId, Vec<u16>> },
    #[serde(rename = "sparse")]
    Sparse {
        inputs: BTreeMap<NodeId, Vec<Option<Token>>>,
    },
}

/// What a run produced. Dense outputs record the wire value on every cycle;
/// sparse outputs record the accepted token stream.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceResult {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dense_outputs: BTreeMap<NodeId, Vec<Value>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sparse_outputs: BTreeMap<NodeId, Vec<Token>>,
    pub cycles: u64,
    /// A MEM sampled an undefined value, or data arrived without its valid:
    /// static schedule and physical arrival disagree.
    pub arrival_mismatch: bool,
    /// The sparse network went silent before its outputs finished.
    pub deadlocked: bool,
}

impl TraceResult {
    /// Defined samples of one dense output as (cycle, word) pairs.
    pub fn defined_samples(&self, port: &str) -> Vec<(u64, u16)> {
        self.dense_outputs
            .get(port)
            .into_iter()
            .flatten()
            .enumerate()
            .filter_map(|(c, v)| v.defined().map(|v| (c as u64, v)))
            .collect()
    }
}

/// Whether two traces carry the same values with a single common cycle shift
/// (positive when `b` is later). Sparse token streams must match exactly.
pub fn equivalent_modulo_latency(a: &TraceResult, b: &TraceResult) -> (bool, i64) {
    if a.sparse_outputs != b.sparse_outputs {
        return (false, 0);
    }
    let keys_a: BTreeSet<&NodeId> = a.dense_outputs.keys().collect();
    let keys_b: BTreeSet<&NodeId> = b.dense_outputs.keys().collect();
    if keys_a != keys_b {
        return (false, 0);
    }
    let mut offset: Option<i64> = None;
    for port in keys_a {
        let sa = a.defined_samples(port);
        let sb = b.defined_samples(port);
        if sa.is_empty() && sb.is_empty() {
            continue;
        }
        if sa.len() != sb.len() {
            return (false, 0);
        }
        let k = sb[0].0 as i64 - sa[0].0 as i64;
        for ((ca, va), (cb, vb)) in sa.iter().zip(&sb) {
            if *cb as i64 - *ca as i64 != k || va != vb {
                return (false, 0);
            }
        }
        match offset {
            None => offset = Some(k),
            Some(o) if o != k => return (false, 0),
            Some(_) => {}
        }
    }
    (true, offset.unwrap_or(0))
}

fn dense_inputs<'a>(
    g: &AppGraph,
    stim: &'a Stimulus,
) -> Result<&'a BTreeMap<NodeId, Vec<u16>>, SimError> {
    let Stimulus::Dense { inputs } = stim else {
        return Err(SimError::Input("dense graph needs a dense stimulus".into()));
    };
    for (id, node) in &g.nodes {
        if node.kind == NodeKind::IoIn && !inputs.contains_key(id) {
            return Err(SimError::Input(format!("no stream for input {id}")));
        }
    }
    Ok(inputs)
}

/// One net sink with its wire delay and a delay line of that length.
struct Branch {
    net: NetId,
    sink: NodeId,
    port: Port,
    line: VecDeque<Value>,
}

fn dense_engine(
    g: &AppGraph,
    stim: &Stimulus,
    cycles: Option<u64>,
    branch_regs: impl Fn(&str, &str, &str) -> usize,
) -> Result<TraceResult, SimError> {
    let inputs = dense_inputs(g, stim)?;
    let order = topo_order(g)?;

    let mut branches: Vec<Branch> = Vec::new();
    let mut max_line = 0usize;
    for (net_id, net) in &g.nets {
        for (sink, port) in &net.sinks {
            if port == "flush" {
                continue;
            }
            let regs = branch_regs(net_id, sink, port);
            max_line = max_line.max(regs);
            branches.push(Branch {
                net: net_id.clone(),
                sink: sink.clone(),
                port: port.clone(),
                line: VecDeque::from(vec![Value::Undef; regs]),
            });
        }
    }
    let total_latency: u64 = g.nodes.values().map(latency_cycles).sum();
    let stim_len = inputs.values().map(Vec::len).max().unwrap_or(0) as u64;
    let cycles = cycles.unwrap_or(stim_len + total_latency + max_line as u64 + 8);

    // Per-node state.
    let mut reg_state: BTreeMap<NodeId, Value> = BTreeMap::new();
    let mut shift_state: BTreeMap<NodeId, VecDeque<Value>> = BTreeMap::new();
    let mut pe_held: BTreeMap<(NodeId, Port), Value> = BTreeMap::new();
    let mut mem_pending: BTreeMap<NodeId, BTreeMap<u64, Value>> = BTreeMap::new();
    for (id, node) in &g.nodes {
        match node.kind {
            NodeKind::Reg | NodeKind::Fifo => {
                reg_state.insert(id.clone(), Value::Undef);
            }
            NodeKind::Shift => {
                let d = node.depth.unwrap_or(1) as usize;
                shift_state.insert(id.clone(), VecDeque::from(vec![Value::Undef; d]));
            }
            NodeKind::Mem => {
                mem_pending.insert(id.clone(), BTreeMap::new());
            }
            NodeKind::Pe if node.input_regs => {
                for (port, _) in node.data_in_ports() {
                    pe_held.insert((id.clone(), port.to_string()), Value::Undef);
                }
            }
            _ => {}
        }
    }

    let mut trace = TraceResult {
        cycles,
        ..TraceResult::default()
    };
    for (id, node) in &g.nodes {
        if node.kind == NodeKind::IoOut {
            trace.dense_outputs.insert(id.clone(), Vec::new());
        }
    }

    for c in 0..cycles {
        // Values on each sink port this cycle, after wire delay.
        let mut out_now: BTreeMap<&str, Value> = BTreeMap::new();
        let mut in_now: BTreeMap<(&str, &str), Value> = BTreeMap::new();
        for branch in &branches {
            if !branch.line.is_empty() {
                in_now.insert(
                    (branch.sink.as_str(), branch.port.as_str()),
                    *branch.line.front().expect("sized line"),
                );
            }
        }
        for id in &order {
            let node = &g.nodes[id];
            // Zero-delay branches read the driver settled earlier this cycle.
            for branch in &branches {
                if branch.line.is_empty() && branch.sink == *id {
                    let v = out_now
                        .get(g.nets[&branch.net].driver.as_str())
                        .copied()
                        .unwrap_or(Value::Undef);
                    in_now.insert((branch.sink.as_str(), branch.port.as_str()), v);
                }
            }
            let read = |port: &str| -> Value {
                in_now
                    .get(&(id.as_str(), port))
                    .copied()
                    .unwrap_or(Value::Undef)
            };
            let out = match node.kind {
                NodeKind::IoIn => inputs[id]
                    .get(c as usize)
                    .map(|v| Value::V(*v))
                    .unwrap_or(Value::Undef),
                NodeKind::IoOut => {
                    trace
                        .dense_outputs
                        .get_mut(id)
                        .expect("output registered")
                        .push(read("in"));
                    Value::Undef
                }
                NodeKind::Pe => {
                    let op = node.op.expect("validated PE");
                    let mut args = [0u16; 3];
                    let mut all_defined = true;
                    for (i, (port, _)) in node.data_in_ports().iter().enumerate() {
                        let v = if let Some(k) = node.consts.get(&(i as u8)) {
                            Value::V(*k)
                        } else if node.input_regs {
                            pe_held[&(id.clone(), port.to_string())]
                        } else {
                            read(port)
                        };
                        match v.defined() {
                            Some(v) => args[i] = v,
                            None => all_defined = false,
                        }
                    }
                    if all_defined {
                        Value::V(op.eval(args[0], args[1], args[2]))
                    } else {
                        Value::Undef
                    }
                }
                NodeKind::Reg | NodeKind::Fifo => reg_state[id],
                NodeKind::Shift => *shift_state[id].front().expect("depth >= 1"),
                NodeKind::Mem => mem_pending[id].get(&c).copied().unwrap_or(Value::Undef),
            };
            out_now.insert(id.as_str(), out);
        }

        // Cycle edge: capture state and advance wire delay lines.
        for id in &order {
            let node = &g.nodes[id];
            let read = |port: &str| -> Value {
                in_now
                    .get(&(id.as_str(), port))
                    .copied()
                    .unwrap_or(Value::Undef)
            };
            match node.kind {
                NodeKind::Reg | NodeKind::Fifo => {
                    reg_state.insert(id.clone(), read("in"));
                }
                NodeKind::Shift => {
                    let line = shift_state.get_mut(id).expect("known shift");
                    line.pop_front();
                    line.push_back(read("in"));
                }
                NodeKind::Pe if node.input_regs => {
                    for (port, _) in node.data_in_ports() {
                        pe_held.insert((id.clone(), port.to_string()), read(port));
                    }
                }
                NodeKind::Mem => {
                    if node.schedule.binary_search(&c).is_ok() {
                        let v = read("in");
                        if v == Value::Undef {
                            trace.arrival_mismatch = true;
                        }
                        let latency = node.latency.unwrap_or(1) as u64;
                        mem_pending
                            .get_mut(id)
                            .expect("known mem")
                            .insert(c + latency, v);
                    }
                }
                _ => {}
            }
        }
        for branch in &mut branches {
            if !branch.line.is_empty() {
                let driver = g.nets[&branch.net].driver.as_str();
                let v = out_now.get(driver).copied().unwrap_or(Value::Undef);
                branch.line.pop_front();
                branch.line.push_back(v);
            }
        }
    }
    Ok(trace)
}

/// Runs a dense graph with zero wire delay: node latencies only.
pub fn simulate_dense_graph(
    g: &AppGraph,
    stim: &Stimulus,
    cycles: Option<u64>,
) -> Result<TraceResult, SimError> {
    if g.mode != Mode::Dense {
        return Err(SimError::Input("graph is not dense".into()));
    }
    dense_engine(g, stim, cycles, |_, _, _| 0)
}

/// Runs a dense placed-and-routed app: each enabled switch-box register on a
/// route branch delays that branch by one cycle.
pub fn simulate_dense_routed(
    r: &RoutedApp,
    spec: &ArchSpec,
    stim: &Stimulus,
    cycles: Option<u64>,
) -> Result<TraceResult, SimError> {
    if r.graph.mode != Mode::Dense {
        return Err(SimError::Input("app is not dense".into()));
    }
    dense_engine(&r.graph, stim, cycles, |net, sink, port| {
        r.sink_registers(net, sink, port, spec)
    })
}

/// Forward (data/valid) and reverse (ready) wire state of one sparse net.
struct HsWire {
    /// Token in flight per forward delay stage; `None` is an idle wire.
    fwd: VecDeque<Option<Token>>,
    /// Ready in flight per reverse delay stage.
    rev: VecDeque<bool>,
}

impl HsWire {
    fn new(d_fwd: usize, d_rev: usize) -> HsWire {
        HsWire {
            fwd: VecDeque::from(vec![None; d_fwd]),
            rev: VecDeque::from(vec![false; d_rev]),
        }
    }
}

/// Runs a sparse app until every output has seen end-of-stream, the network
/// quiesces with work unfinished (deadlock), or `max_cycles` elapse. Wire
/// delays come from enabled switch-box registers on each channel's route;
/// fresh routes have none and the views stay coherent.
pub fn simulate_sparse(
    r: &RoutedApp,
    spec: &ArchSpec,
    stim: &Stimulus,
    max_cycles: u64,
) -> Result<TraceResult, SimError> {
    let g = &r.graph;
    if g.mode != Mode::Sparse {
        return Err(SimError::Input("app is not sparse".into()));
    }
    let Stimulus::Sparse { inputs } = stim else {
        return Err(SimError::Input("sparse app needs a sparse stimulus".into()));
    };
    for (id, node) in &g.nodes {
        if node.kind == NodeKind::IoIn && !inputs.contains_key(id) {
            return Err(SimError::Input(format!("no stream for input {id}")));
        }
    }
    let order = topo_order(g)?;
    let rev_order: Vec<&NodeId> = order.iter().rev().collect();
    let driver_index = g.driver_index();
    let mut in_nets_of: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
    for (net_id, net) in &g.nets {
        for (sink, port) in &net.sinks {
            in_nets_of
                .entry(sink.as_str())
                .or_default()
                .push((net_id.as_str(), port.as_str()));
        }
    }

    // Sparse nets have exactly one sink.
    let mut wires: BTreeMap<NetId, HsWire> = BTreeMap::new();
    for (net_id, net) in &g.nets {
        let (sink, port) = &net.sinks[0];
        let d_fwd = r.sink_registers(net_id, sink, port, spec);
        let d_rev = match (r.ready_routes.get(net_id), r.placement.tile_of(&net.driver)) {
            (Some(route), Some(tile)) => match route.taps.values().next() {
                Some(tap) => route.registers_to_tap(tile, tap, spec),
                None => 0,
            },
            _ => 0,
        };
        wires.insert(net_id.clone(), HsWire::new(d_fwd, d_rev));
    }

    let mut fifo: BTreeMap<NodeId, VecDeque<Token>> = BTreeMap::new();
    let mut cursor: BTreeMap<NodeId, usize> = BTreeMap::new();
    for (id, node) in &g.nodes {
        match node.kind {
            NodeKind::Fifo => {
                fifo.insert(id.clone(), VecDeque::new());
            }
            NodeKind::IoIn => {
                cursor.insert(id.clone(), 0);
            }
            _ => {}
        }
    }

    let mut trace = TraceResult::default();
    let mut done: BTreeMap<NodeId, bool> = BTreeMap::new();
    for (id, node) in &g.nodes {
        if node.kind == NodeKind::IoOut {
            trace.sparse_outputs.insert(id.clone(), Vec::new());
            done.insert(id.clone(), false);
        }
    }

    let mut silent = 0u64;
    let mut cycle = 0u64;
    while cycle < max_cycles {
        if done.values().all(|d| *d) && !done.is_empty() {
            break;
        }
        // Offers: what each driver puts on its net this cycle.
        let mut offer: BTreeMap<&str, Option<Token>> = BTreeMap::new();
        // What each node sees on each input after forward wire delay.
        let mut seen: BTreeMap<(&str, &str), Option<Token>> = BTreeMap::new();
        for id in &order {
            let node = &g.nodes[id];
            for (net_id, port) in in_nets_of.get(id.as_str()).into_iter().flatten() {
                let wire = &wires[*net_id];
                let view = if wire.fwd.is_empty() {
                    offer
                        .get(g.nets[*net_id].driver.as_str())
                        .copied()
                        .flatten()
                } else {
                    *wire.fwd.front().expect("sized line")
                };
                seen.insert((id.as_str(), *port), view);
            }
            let tok = match node.kind {
                NodeKind::IoIn => {
                    let at = cursor[id];
                    inputs[id].get(at).copied().flatten()
                }
                NodeKind::Fifo => fifo[id].front().copied(),
                NodeKind::Pe => pe_join(node, id, &seen),
                NodeKind::IoOut => None,
                _ => None,
            };
            offer.insert(id.as_str(), tok);
        }

        // Readiness of each consumer, walking consumers before producers.
        let mut ready_now: BTreeMap<&str, bool> = BTreeMap::new();
        for id in &rev_order {
            let node = &g.nodes[id.as_str()];
            // Ready of this node's output net, as this node sees it.
            let out_ready = driver_index
                .get(id.as_str())
                .and_then(|nets| nets.first())
                .map(|net_id| {
                    let wire = &wires[net_id];
                    if wire.rev.is_empty() {
                        let (sink, _) = &g.nets[net_id].sinks[0];
                        ready_now.get(sink.as_str()).copied().unwrap_or(false)
                    } else {
                        *wire.rev.front().expect("sized line")
                    }
                })
                .unwrap_or(false);
            let accepts = match node.kind {
                NodeKind::IoOut => !done[id.as_str()],
                NodeKind::Fifo => fifo[id.as_str()].len() < node.depth.unwrap_or(1) as usize,
                NodeKind::Pe => {
                    // A join consumes all inputs at once: ready only when
                    // every input is visible and downstream can take the
                    // result.
                    let all_in = in_nets_of
                        .get(id.as_str())
                        .into_iter()
                        .flatten()
                        .all(|(_, port)| {
                            seen.get(&(id.as_str(), *port)).copied().flatten().is_some()
                        });
                    all_in && out_ready
                }
                _ => false,
            };
            ready_now.insert(id.as_str(), accepts);
        }

        // Transfers. Producers act on their delayed view of ready; consumers
        // act on their delayed view of valid.
        let mut moved = false;
        for (net_id, net) in &g.nets {
            let wire = &wires[net_id];
            let producer_sees_ready = if wire.rev.is_empty() {
                ready_now.get(net.sinks[0].0.as_str()).copied().unwrap_or(false)
            } else {
                *wire.rev.front().expect("sized line")
            };
            let offered = offer.get(net.driver.as_str()).copied().flatten();
            if offered.is_some() && producer_sees_ready {
                moved = true;
                match g.nodes[&net.driver].kind {
                    NodeKind::IoIn => {
                        *cursor.get_mut(&net.driver).expect("input cursor") += 1;
                    }
                    NodeKind::Fifo => {
                        fifo.get_mut(&net.driver).expect("known fifo").pop_front();
                    }
                    // A PE dequeues nothing itself; its input nets do.
                    _ => {}
                }
            }
            let consumer_sees = if wire.fwd.is_empty() {
                offered
            } else {
                *wire.fwd.front().expect("sized line")
            };
            let (sink, _) = &net.sinks[0];
            if let Some(tok) = consumer_sees {
                if ready_now.get(sink.as_str()).copied().unwrap_or(false) {
                    moved = true;
                    match g.nodes[sink].kind {
                        NodeKind::IoOut => {
                            let stream =
                                trace.sparse_outputs.get_mut(sink).expect("output stream");
                            stream.push(tok);
                            if tok == Token::Eos {
                                done.insert(sink.clone(), true);
                            }
                        }
                        NodeKind::Fifo => {
                            fifo.get_mut(sink).expect("known fifo").push_back(tok);
                        }
                        // PE inputs are consumed combinationally by the join.
                        _ => {}
                    }
                }
            }
        }
        // Stalled input streams burn their null slot even without a transfer.
        for (id, at) in cursor.iter_mut() {
            if inputs[id].get(*at) == Some(&None) {
                *at += 1;
                moved = true;
            }
        }

        // Advance wire delay lines.
        for (net_id, wire) in wires.iter_mut() {
            let net = &g.nets[net_id];
            if !wire.fwd.is_empty() {
                wire.fwd.pop_front();
                wire.fwd
                    .push_back(offer.get(net.driver.as_str()).copied().flatten());
            }
            if !wire.rev.is_empty() {
                wire.rev.pop_front();
                wire.rev
                    .push_back(ready_now.get(net.sinks[0].0.as_str()).copied().unwrap_or(false));
            }
        }

        silent = if moved { 0 } else { silent + 1 };
        cycle += 1;
        if silent >= QUIESCENCE_WINDOW {
            if !done.values().all(|d| *d) {
                trace.deadlocked = true;
            }
            break;
        }
    }
    trace.cycles = cycle;
    Ok(trace)
}

/// Combinational join: fires a result token when every input is visible.
/// Any end-of-stream input ends the output stream.
fn pe_join(
    node: &crate::dfg::Node,
    id: &str,
    seen: &BTreeMap<(&str, &str), Option<Token>>,
) -> Option<Token> {
    let op = node.op.expect("validated PE");
    let mut args = [0u16; 3];
    let mut eos = false;
    for (i, (port, _)) in node.data_in_ports().iter().enumerate() {
        if let Some(k) = node.consts.get(&(i as u8)) {
            args[i] = *k;
            continue;
        }
        match seen.get(&(id, *port)).copied().flatten() {
            Some(Token::Val(v)) => args[i] = v,
            Some(Token::Eos) => eos = true,
            None => return None,
        }
    }
    Some(if eos {
        Token::Eos
    } else {
        Token::Val(op.eval(args[0], args[1], args[2]))
    })
}
