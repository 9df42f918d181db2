//! Simulated-annealing placement.
//!
//! Cost is the sum over non-hardened nets of `(hpwl + gamma * pt)^alpha`,
//! where `pt` counts unoccupied tiles strictly inside the net's bounding box.
//! Moves either relocate a node to an empty compatible tile or swap two nodes
//! that sit on the same tile kind. Pinned nodes never move.

use super::{net_cost_with, required_tile_kind, Placement, PnrError, PnrParams};
use crate::arch::{ArchSpec, Coord, TileKind};
use crate::dfg::{AppGraph, NetId, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceStats {
    pub initial_cost: f64,
    pub best_cost: f64,
    pub moves_attempted: u64,
    pub moves_accepted: u64,
    pub temperature_levels: u32,
}

struct CostModel<'a> {
    g: &'a AppGraph,
    params: &'a PnrParams,
    costed_nets: Vec<&'a NetId>,
    /// Nets touching each node, by index into `costed_nets`.
    nets_of: BTreeMap<&'a str, Vec<usize>>,
}

impl<'a> CostModel<'a> {
    fn new(g: &'a AppGraph, spec: &ArchSpec, params: &'a PnrParams) -> CostModel<'a> {
        let costed_nets: Vec<&NetId> = g
            .nets
            .keys()
            .filter(|id| !spec.hardened_nets.contains(*id))
            .collect();
        let mut nets_of: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, id) in costed_nets.iter().enumerate() {
            let net = &g.nets[*id];
            nets_of.entry(net.driver.as_str()).or_default().push(i);
            for (node, _) in &net.sinks {
                let entry = nets_of.entry(node.as_str()).or_default();
                if entry.last() != Some(&i) {
                    entry.push(i);
                }
            }
        }
        CostModel {
            g,
            params,
            costed_nets,
            nets_of,
        }
    }

    fn net_cost(&self, i: usize, placement: &Placement, occupied: &BTreeSet<Coord>) -> f64 {
        let net = &self.g.nets[self.costed_nets[i]];
        net_cost_with(net, placement, occupied, self.params)
    }

    fn all_costs(&self, placement: &Placement, occupied: &BTreeSet<Coord>) -> Vec<f64> {
        (0..self.costed_nets.len())
            .map(|i| self.net_cost(i, placement, occupied))
            .collect()
    }

    /// Nets whose cost a move of `nodes` between `tiles` can change: nets
    /// touching the nodes plus nets whose open bounding-box interior covers
    /// one of the tiles (their pass-through count shifts with occupancy).
    fn affected(&self, nodes: &[&str], tiles: &[Coord], placement: &Placement) -> Vec<usize> {
        let mut set = BTreeSet::new();
        for node in nodes {
            if let Some(v) = self.nets_of.get(node) {
                set.extend(v.iter().copied());
            }
        }
        for (i, id) in self.costed_nets.iter().enumerate() {
            if set.contains(&i) {
                continue;
            }
            if let Some((lo, hi)) = super::bbox(&self.g.nets[*id], placement) {
                for t in tiles {
                    if t.row > lo.row && t.row < hi.row && t.col > lo.col && t.col < hi.col {
                        set.insert(i);
                        break;
                    }
                }
            }
        }
        set.into_iter().collect()
    }
}

/// One candidate move: node `a` goes to `to`; when `to` is occupied by a
/// movable node `b`, the two swap.
struct Move {
    a: NodeId,
    from: Coord,
    to: Coord,
    b: Option<NodeId>,
}

impl Move {
    fn touched(&self) -> Vec<&str> {
        match &self.b {
            Some(b) => vec![self.a.as_str(), b.as_str()],
            None => vec![self.a.as_str()],
        }
    }
}

fn propose_move(
    rng: &mut ChaCha8Rng,
    g: &AppGraph,
    movable: &[&NodeId],
    sites: &BTreeMap<TileKind, Vec<Coord>>,
    pinned_tiles: &BTreeSet<Coord>,
    by_tile: &BTreeMap<Coord, NodeId>,
    placement: &Placement,
) -> Option<Move> {
    let a = movable[rng.gen_range(0..movable.len())];
    let kind = required_tile_kind(g.nodes[a.as_str()].kind);
    let cand = &sites[&kind];
    let to = cand[rng.gen_range(0..cand.len())];
    let from = placement.tile_of(a).expect("placed");
    if to == from || pinned_tiles.contains(&to) {
        return None;
    }
    Some(Move {
        a: a.clone(),
        from,
        to,
        b: by_tile.get(&to).cloned(),
    })
}

fn apply(m: &Move, placement: &mut Placement, occupied: &mut BTreeSet<Coord>) {
    placement.loc.insert(m.a.clone(), m.to);
    match &m.b {
        Some(b) => {
            placement.loc.insert(b.clone(), m.from);
        }
        None => {
            occupied.remove(&m.from);
            occupied.insert(m.to);
        }
    }
}

fn undo(m: &Move, placement: &mut Placement, occupied: &mut BTreeSet<Coord>) {
    placement.loc.insert(m.a.clone(), m.from);
    match &m.b {
        Some(b) => {
            placement.loc.insert(b.clone(), m.to);
        }
        None => {
            occupied.remove(&m.to);
            occupied.insert(m.from);
        }
    }
}

fn capacity_check(g: &AppGraph, spec: &ArchSpec) -> Result<(), PnrError> {
    let mut need: BTreeMap<TileKind, usize> = BTreeMap::new();
    for node in g.nodes.values() {
        *need.entry(required_tile_kind(node.kind)).or_default() += 1;
    }
    let mut deficits = Vec::new();
    for (kind, n) in &need {
        let have = spec.tiles_of_kind(*kind).len();
        if have < *n {
            deficits.push(format!("{} {} tiles needed, {} available", n, kind.name(), have));
        }
    }
    if deficits.is_empty() {
        Ok(())
    } else {
        Err(PnrError::Capacity(deficits.join("; ")))
    }
}

fn initial_placement(
    g: &AppGraph,
    spec: &ArchSpec,
) -> Result<(Placement, BTreeSet<NodeId>), PnrError> {
    let mut loc = BTreeMap::new();
    let mut taken: BTreeSet<Coord> = BTreeSet::new();
    let mut pinned: BTreeSet<NodeId> = BTreeSet::new();
    for (id, node) in &g.nodes {
        let Some(at) = node.at else { continue };
        if !spec.in_bounds(at) {
            return Err(PnrError::Place(format!("{id} pinned outside the grid at {at}")));
        }
        let want = required_tile_kind(node.kind);
        if spec.tile_kind(at) != Some(want) {
            return Err(PnrError::Place(format!(
                "{id} pinned to {at}, which is not a {} tile",
                want.name()
            )));
        }
        if !taken.insert(at) {
            return Err(PnrError::Place(format!("two nodes pinned to {at}")));
        }
        loc.insert(id.clone(), at);
        pinned.insert(id.clone());
    }
    let mut free: BTreeMap<TileKind, Vec<Coord>> = BTreeMap::new();
    for kind in [TileKind::Pe, TileKind::Mem, TileKind::Io] {
        free.insert(
            kind,
            spec.tiles_of_kind(kind)
                .into_iter()
                .filter(|c| !taken.contains(c))
                .collect(),
        );
    }
    for (id, node) in &g.nodes {
        if pinned.contains(id) {
            continue;
        }
        let kind = required_tile_kind(node.kind);
        let slots = free.get_mut(&kind).expect("all kinds present");
        let at = slots.pop().ok_or_else(|| {
            PnrError::Capacity(format!("no {} tile left for {id}", kind.name()))
        })?;
        loc.insert(id.clone(), at);
    }
    Ok((Placement { loc }, pinned))
}

/// Places every node onto a compatible tile, one node per tile, honoring
/// pins, then anneals the non-pinned nodes under the net cost.
pub fn place(
    g: &AppGraph,
    spec: &ArchSpec,
    params: &PnrParams,
) -> Result<(Placement, PlaceStats), PnrError> {
    capacity_check(g, spec)?;
    let (mut placement, pinned) = initial_placement(g, spec)?;
    let mut occupied = placement.occupied();

    let model = CostModel::new(g, spec, params);
    let mut net_costs = model.all_costs(&placement, &occupied);
    let mut total: f64 = net_costs.iter().sum();
    let initial_cost = total;

    let movable: Vec<&NodeId> = g.nodes.keys().filter(|id| !pinned.contains(*id)).collect();
    let mut stats = PlaceStats {
        initial_cost,
        best_cost: total,
        moves_attempted: 0,
        moves_accepted: 0,
        temperature_levels: 0,
    };
    if movable.is_empty() || model.costed_nets.is_empty() {
        return Ok((placement, stats));
    }

    let sites: BTreeMap<TileKind, Vec<Coord>> = [TileKind::Pe, TileKind::Mem, TileKind::Io]
        .into_iter()
        .map(|k| (k, spec.tiles_of_kind(k)))
        .collect();
    let pinned_tiles: BTreeSet<Coord> = pinned
        .iter()
        .filter_map(|id| placement.tile_of(id))
        .collect();
    let mut by_tile: BTreeMap<Coord, NodeId> = placement
        .loc
        .iter()
        .map(|(id, at)| (*at, id.clone()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // Move deltas estimate the starting temperature when none is given.
    let initial_temp = match params.initial_temp {
        Some(t) => t,
        None => {
            let mut probe = ChaCha8Rng::seed_from_u64(params.seed ^ 0x9e37_79b9_7f4a_7c15);
            let mut deltas = Vec::new();
            for _ in 0..100 {
                let Some(m) =
                    propose_move(&mut probe, g, &movable, &sites, &pinned_tiles, &by_tile, &placement)
                else {
                    continue;
                };
                let affected = model.affected(&m.touched(), &[m.from, m.to], &placement);
                let before: f64 = affected.iter().map(|i| net_costs[*i]).sum();
                apply(&m, &mut placement, &mut occupied);
                let after: f64 = affected
                    .iter()
                    .map(|i| model.net_cost(*i, &placement, &occupied))
                    .sum();
                undo(&m, &mut placement, &mut occupied);
                deltas.push(after - before);
            }
            if deltas.is_empty() {
                1.0
            } else {
                let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
                let var =
                    deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / deltas.len() as f64;
                var.sqrt().max(1.0)
            }
        }
    };

    let moves_per_temp = params.moves_per_temp.unwrap_or(10 * movable.len());
    let mut best = placement.clone();
    let mut temp = initial_temp;
    while temp > initial_temp * 1e-4 && stats.temperature_levels < 400 {
        for _ in 0..moves_per_temp {
            stats.moves_attempted += 1;
            let Some(m) =
                propose_move(&mut rng, g, &movable, &sites, &pinned_tiles, &by_tile, &placement)
            else {
                continue;
            };
            let affected = model.affected(&m.touched(), &[m.from, m.to], &placement);
            let before: f64 = affected.iter().map(|i| net_costs[*i]).sum();
            apply(&m, &mut placement, &mut occupied);
            let after: f64 = affected
                .iter()
                .map(|i| model.net_cost(*i, &placement, &occupied))
                .sum();
            let delta = after - before;
            if delta < 0.0 || rng.gen::<f64>() < (-delta / temp).exp() {
                stats.moves_accepted += 1;
                total += delta;
                for i in &affected {
                    net_costs[*i] = model.net_cost(*i, &placement, &occupied);
                }
                match &m.b {
                    Some(b) => {
                        by_tile.insert(m.to, m.a.clone());
                        by_tile.insert(m.from, b.clone());
                    }
                    None => {
                        by_tile.remove(&m.from);
                        by_tile.insert(m.to, m.a.clone());
                    }
                }
                if total < stats.best_cost {
                    stats.best_cost = total;
                    best = placement.clone();
                }
            } else {
                undo(&m, &mut placement, &mut occupied);
            }
        }
        temp *= params.cooling_rate;
        stats.temperature_levels += 1;
    }

    Ok((best, stats))
}
