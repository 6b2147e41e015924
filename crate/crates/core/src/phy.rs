//! SINR evaluation, the two-condition reception rule, round simulation
//! without collision detection, and communication-graph extraction.
//!
//! A station `u` hears a transmitter `v` in a round iff both
//!
//! * `SINR(v, u, T) >= beta`, where the SINR ratio divides the received
//!   power `P * dist(v,u)^-alpha` by the ambient noise plus the summed
//!   power of all other transmitters, and
//! * the received power alone clears the sensitivity threshold
//!   `(1 + eps) * beta * noise`.
//!
//! The sensitivity condition caps the communication range at
//! `r = (P / ((1+eps) * beta * noise))^(1/alpha)`; we evaluate it in the
//! equivalent form `dist(v,u) <= r` so that stations placed exactly on the
//! range circle (the lower-bound family does this on purpose) behave
//! identically no matter how the distance decomposes into coordinates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{box_of, dist, GridCoord, GridSpec, Point};
use crate::Result;

/// Physical constants of the model. `beta = noise = power = 1` is the
/// normalized default; all three stay settable, and the range `r` is always
/// derived, never configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub noise: f64,
    pub eps: f64,
    pub power: f64,
}

impl ModelParams {
    pub fn new(alpha: f64, beta: f64, noise: f64, eps: f64, power: f64) -> Result<Self> {
        let p = ModelParams { alpha, beta, noise, eps, power };
        p.validate()?;
        Ok(p)
    }

    /// Normalized parameters with the given path-loss exponent and
    /// sensitivity, `beta = noise = power = 1`.
    pub fn normalized(alpha: f64, eps: f64) -> Result<Self> {
        ModelParams::new(alpha, 1.0, 1.0, eps, 1.0)
    }

    // negated comparisons reject NaN parameters as well
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 2.0) {
            return Err(Error::InvalidParams(format!("alpha = {} must be >= 2", self.alpha)));
        }
        if !(self.beta >= 1.0) {
            return Err(Error::InvalidParams(format!("beta = {} must be >= 1", self.beta)));
        }
        if !(self.noise >= 1.0) {
            return Err(Error::InvalidParams(format!("noise = {} must be >= 1", self.noise)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParams(format!("eps = {} must be > 0", self.eps)));
        }
        if !(self.power > 0.0) {
            return Err(Error::InvalidParams(format!("power = {} must be > 0", self.power)));
        }
        Ok(())
    }

    /// Communication range of a lone transmitter,
    /// `r = (P / ((1+eps) * beta * noise))^(1/alpha)`; under the normalized
    /// parameters this reduces to `(1+eps)^(-1/alpha)`.
    pub fn range(&self) -> f64 {
        (self.power / ((1.0 + self.eps) * self.beta * self.noise)).powf(1.0 / self.alpha)
    }

    /// Received power at distance `d`.
    pub fn received_power(&self, d: f64) -> f64 {
        self.power * d.powf(-self.alpha)
    }
}

/// A station: unique integer ID in `[1, N]` plus a planar position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: u32,
    #[serde(flatten)]
    pub pos: Point,
}

impl Station {
    pub fn new(id: u32, pos: Point) -> Self {
        Station { id, pos }
    }
}

/// A network instance: stations, the ID range `N` and the per-box density
/// bound `Delta` of the pivotal grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub id_range: u32,
    pub delta: u32,
    pub stations: Vec<Station>,
}

impl Network {
    /// Builds a network and validates its invariants: distinct IDs within
    /// `[1, id_range]` and at most `delta` stations in every pivotal box.
    pub fn new(stations: Vec<Station>, id_range: u32, delta: u32, params: &ModelParams) -> Result<Self> {
        let net = Network { id_range, delta, stations };
        net.validate(params)?;
        Ok(net)
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.stations.len() as u32 > self.id_range {
            return Err(Error::InvalidNetwork(format!(
                "{} stations exceed the ID range {}",
                self.stations.len(),
                self.id_range
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.stations {
            if s.id == 0 || s.id > self.id_range {
                return Err(Error::InvalidNetwork(format!(
                    "station id {} outside [1, {}]",
                    s.id, self.id_range
                )));
            }
            if !seen.insert(s.id) {
                return Err(Error::InvalidNetwork(format!("duplicate station id {}", s.id)));
            }
            if !(s.pos.x.is_finite() && s.pos.y.is_finite()) {
                return Err(Error::InvalidNetwork(format!("station {} has non-finite coordinates", s.id)));
            }
        }
        let g = GridSpec::pivotal(params);
        let mut per_box: BTreeMap<GridCoord, u32> = BTreeMap::new();
        for s in &self.stations {
            let c = per_box.entry(box_of(s.pos, g)).or_insert(0);
            *c += 1;
            if *c > self.delta {
                return Err(Error::InvalidNetwork(format!(
                    "box {} holds more than delta = {} stations",
                    box_of(s.pos, g),
                    self.delta
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn station(&self, id: u32) -> Option<&Station> {
        self.stations.iter().find(|s| s.id == id)
    }
}

/// Reception record of one station in one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reception<M> {
    Nothing,
    Heard { from: u32, payload: M },
}

/// Outcome of one simulated round: a reception record per station, keyed by
/// station ID. Transmitting stations always record `Nothing` (half-duplex).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundOutcome<M> {
    pub receptions: BTreeMap<u32, Reception<M>>,
}

impl<M> RoundOutcome<M> {
    pub fn heard_by(&self, id: u32) -> Option<(u32, &M)> {
        match self.receptions.get(&id) {
            Some(Reception::Heard { from, payload }) => Some((*from, payload)),
            _ => None,
        }
    }
}

/// The SINR ratio of Eq. (1): received power over noise plus interference.
///
/// `v` must transmit (`v` in `T`), `u` must listen. Errors with
/// [`Error::CoLocatedTransceiver`] when any transmitter sits exactly on `u`.
pub fn sinr(v: &Station, u: &Station, transmitters: &[&Station], params: &ModelParams) -> Result<f64> {
    debug_assert!(transmitters.iter().any(|t| t.id == v.id));
    let d = dist(v.pos, u.pos);
    if d == 0.0 {
        return Err(Error::CoLocatedTransceiver { transmitter: v.id, receiver: u.id });
    }
    let mut interference = 0.0;
    for w in transmitters {
        if w.id == v.id {
            continue;
        }
        let dw = dist(w.pos, u.pos);
        if dw == 0.0 {
            return Err(Error::CoLocatedTransceiver { transmitter: w.id, receiver: u.id });
        }
        interference += params.received_power(dw);
    }
    Ok(params.received_power(d) / (params.noise + interference))
}

/// The two-condition reception rule: `u` hears `v` iff the SINR ratio clears
/// `beta` and `v` is within the sensitivity range `r`.
pub fn hears(v: &Station, u: &Station, transmitters: &[&Station], params: &ModelParams) -> Result<bool> {
    let s = sinr(v, u, transmitters, params)?;
    Ok(s >= params.beta && dist(v.pos, u.pos) <= params.range())
}

/// Simulates one synchronous round: stations listed in `tx` transmit their
/// payloads, everyone else listens. A listener hears the unique transmitter
/// passing the reception rule; with `beta >= 1` at most one can pass.
pub fn simulate_round<M: Clone>(
    net: &Network,
    tx: &BTreeMap<u32, M>,
    params: &ModelParams,
) -> Result<RoundOutcome<M>> {
    for id in tx.keys() {
        if net.station(*id).is_none() {
            return Err(Error::InvalidNetwork(format!("transmitter id {id} not in network")));
        }
    }
    let transmitters: Vec<&Station> = net.stations.iter().filter(|s| tx.contains_key(&s.id)).collect();
    let mut receptions = BTreeMap::new();
    for u in &net.stations {
        if tx.contains_key(&u.id) {
            receptions.insert(u.id, Reception::Nothing);
            continue;
        }
        let mut heard: Vec<u32> = Vec::new();
        for v in &transmitters {
            if hears(v, u, &transmitters, params)? {
                heard.push(v.id);
            }
        }
        debug_assert!(!(params.beta >= 1.0 && heard.len() > 1), "beta >= 1 admits one hearer at most");
        let rec = if heard.len() == 1 {
            Reception::Heard { from: heard[0], payload: tx[&heard[0]].clone() }
        } else {
            Reception::Nothing
        };
        receptions.insert(u.id, rec);
    }
    Ok(RoundOutcome { receptions })
}

/// Communication graph plus the derived summary values.
#[derive(Debug, Clone)]
pub struct CommGraph {
    /// Station IDs in network order.
    pub ids: Vec<u32>,
    /// Adjacency lists as indices into `ids`.
    pub adj: Vec<Vec<usize>>,
    pub degrees: Vec<usize>,
    pub max_degree: usize,
    /// Diameter of the graph (0 for a single station); for a disconnected
    /// graph this is the largest eccentricity within any component.
    pub diameter: usize,
    pub connected: bool,
}

impl CommGraph {
    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        match (self.index_of(a), self.index_of(b)) {
            (Some(i), Some(j)) => self.adj[i].contains(&j),
            _ => false,
        }
    }

    /// Largest admissible degree for a density bound `delta`: a node's
    /// neighbors live in its own box plus the 20 DIR boxes.
    pub fn degree_bound(delta: u32) -> usize {
        (21 * delta - 1) as usize
    }
}

/// Extracts the communication graph: an edge `(v, u)` iff `u` hears `v` when
/// `v` is the only transmitter, i.e. iff `dist(v, u) <= r`.
pub fn communication_graph(net: &Network, params: &ModelParams) -> Result<CommGraph> {
    let n = net.stations.len();
    let r = params.range();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = dist(net.stations[i].pos, net.stations[j].pos);
            if d == 0.0 {
                return Err(Error::CoLocatedTransceiver {
                    transmitter: net.stations[i].id,
                    receiver: net.stations[j].id,
                });
            }
            if d <= r {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    let degrees: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let max_degree = degrees.iter().copied().max().unwrap_or(0);

    // BFS from every node for eccentricities; desk scale keeps this cheap.
    let mut diameter = 0usize;
    let mut connected = n <= 1;
    if n > 0 {
        let mut reach_first = 0usize;
        for start in 0..n {
            let mut seen = vec![usize::MAX; n];
            seen[start] = 0;
            let mut queue = std::collections::VecDeque::from([start]);
            let mut count = 1usize;
            while let Some(x) = queue.pop_front() {
                for &y in &adj[x] {
                    if seen[y] == usize::MAX {
                        seen[y] = seen[x] + 1;
                        diameter = diameter.max(seen[y]);
                        count += 1;
                        queue.push_back(y);
                    }
                }
            }
            if start == 0 {
                reach_first = count;
            }
        }
        connected = reach_first == n;
    }
    Ok(CommGraph {
        ids: net.stations.iter().map(|s| s.id).collect(),
        adj,
        degrees,
        max_degree,
        diameter,
        connected,
    })
}

/// Precomputed per-network simulation caches for the protocol engines:
/// positions, pairwise received powers, adjacency, and pivotal-box
/// assignment. Index space is network order (`0..n`).
pub struct SimContext<'a> {
    pub net: &'a Network,
    pub params: ModelParams,
    pub grid: GridSpec,
    pub range: f64,
    /// `power[v][u]` = received power at `u` from a transmission of `v`.
    pub power: Vec<Vec<f64>>,
    /// Communication-graph adjacency (indices).
    pub adj: Vec<Vec<usize>>,
    /// Pivotal box of each station.
    pub boxes: Vec<GridCoord>,
    /// Station indices per nonempty box.
    pub box_members: BTreeMap<GridCoord, Vec<usize>>,
    /// id -> index.
    pub index: BTreeMap<u32, usize>,
}

/// Reusable scratch buffers for the sparse round engine.
pub struct SimScratch {
    is_tx: Vec<bool>,
    stamp: Vec<u32>,
    heard_stamp: Vec<u32>,
    heard_val: Vec<usize>,
    cur: u32,
    candidates: Vec<usize>,
}

impl SimScratch {
    pub fn new(n: usize) -> Self {
        SimScratch {
            is_tx: vec![false; n],
            stamp: vec![0; n],
            heard_stamp: vec![0; n],
            heard_val: vec![0; n],
            cur: 0,
            candidates: Vec::new(),
        }
    }
}

/// Sparse result of one engine round.
#[derive(Debug, Default, Clone)]
pub struct RoundResult {
    /// `(listener, transmitter)` index pairs for every reception.
    pub receptions: Vec<(usize, usize)>,
    /// Transmitter indices whose transmission was r-successful (heard by
    /// every communication-graph neighbor).
    pub successful: Vec<usize>,
}

/// Result of one engine round in dense form.
pub struct EngineRound {
    pub heard: Vec<Option<usize>>,
    pub r_successful: Vec<bool>,
}

impl<'a> SimContext<'a> {
    pub fn new(net: &'a Network, params: &ModelParams) -> Result<Self> {
        let n = net.stations.len();
        let grid = GridSpec::pivotal(params);
        let range = params.range();
        let mut power = vec![vec![0.0; n]; n];
        let mut adj = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = dist(net.stations[i].pos, net.stations[j].pos);
                if d == 0.0 {
                    return Err(Error::CoLocatedTransceiver {
                        transmitter: net.stations[i].id,
                        receiver: net.stations[j].id,
                    });
                }
                power[i][j] = params.received_power(d);
                if i < j && d <= range {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        let boxes: Vec<GridCoord> = net.stations.iter().map(|s| box_of(s.pos, grid)).collect();
        let mut box_members: BTreeMap<GridCoord, Vec<usize>> = BTreeMap::new();
        for (i, b) in boxes.iter().enumerate() {
            box_members.entry(*b).or_default().push(i);
        }
        let index = net.stations.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        Ok(SimContext { net, params: *params, grid, range, power, adj, boxes, box_members, index })
    }

    pub fn id(&self, idx: usize) -> u32 {
        self.net.stations[idx].id
    }

    /// Runs one round with the given transmitter indices, writing sparse
    /// receptions and the r-successful transmitters into `out`. Matches
    /// [`simulate_round`] decision for decision on the same inputs; only
    /// stations adjacent to some transmitter are probed, since the
    /// sensitivity condition silences everyone else.
    pub fn round_into(&self, scratch: &mut SimScratch, transmitters: &[usize], out: &mut RoundResult) {
        out.receptions.clear();
        out.successful.clear();
        if transmitters.is_empty() {
            return;
        }
        scratch.cur = scratch.cur.wrapping_add(1);
        if scratch.cur == 0 {
            scratch.stamp.iter_mut().for_each(|s| *s = 0);
            scratch.heard_stamp.iter_mut().for_each(|s| *s = 0);
            scratch.cur = 1;
        }
        let cur = scratch.cur;
        for &t in transmitters {
            scratch.is_tx[t] = true;
        }
        scratch.candidates.clear();
        for &t in transmitters {
            for &u in &self.adj[t] {
                if !scratch.is_tx[u] && scratch.stamp[u] != cur {
                    scratch.stamp[u] = cur;
                    scratch.candidates.push(u);
                }
            }
        }
        for ci in 0..scratch.candidates.len() {
            let u = scratch.candidates[ci];
            let mut total = 0.0;
            for &t in transmitters {
                total += self.power[t][u];
            }
            let mut winner = None;
            for &v in &self.adj[u] {
                if !scratch.is_tx[v] {
                    continue;
                }
                let signal = self.power[v][u];
                let interference = self.params.noise + (total - signal);
                if signal >= self.params.beta * interference {
                    debug_assert!(
                        !(self.params.beta >= 1.0 && winner.is_some()),
                        "beta >= 1 admits one hearer at most"
                    );
                    winner = Some(v);
                    if self.params.beta >= 1.0 {
                        break;
                    }
                }
            }
            if let Some(v) = winner {
                out.receptions.push((u, v));
                scratch.heard_stamp[u] = cur;
                scratch.heard_val[u] = v;
            }
        }
        // r-successful: every neighbor listens and heard exactly this sender
        for &v in transmitters {
            let ok = self.adj[v].iter().all(|&u| {
                !scratch.is_tx[u] && scratch.heard_stamp[u] == cur && scratch.heard_val[u] == v
            });
            if ok {
                out.successful.push(v);
            }
        }
        for &t in transmitters {
            scratch.is_tx[t] = false;
        }
    }

    /// Dense wrapper around [`SimContext::round_into`].
    pub fn round(&self, transmitters: &[usize]) -> EngineRound {
        let n = self.net.stations.len();
        let mut scratch = SimScratch::new(n);
        let mut res = RoundResult::default();
        self.round_into(&mut scratch, transmitters, &mut res);
        let mut heard = vec![None; n];
        for &(u, v) in &res.receptions {
            heard[u] = Some(v);
        }
        let mut r_successful = vec![false; n];
        for &v in &res.successful {
            r_successful[v] = true;
        }
        EngineRound { heard, r_successful }
    }
}


#[cfg(test)]
mod parity_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        /// The cached engine path must agree with `simulate_round` on
        /// arbitrary placements and transmitter sets.
        #[test]
        fn engine_parity_on_random_configurations(seed in 0u64..400) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = ModelParams::normalized(2.0 + 2.0 * rng.gen::<f64>(), 0.2 + rng.gen::<f64>()).unwrap();
            let n = 3 + (rng.gen::<u32>() % 10);
            let stations: Vec<Station> = (1..=n)
                .map(|id| Station::new(id, Point::new(rng.gen::<f64>() * 3.0, rng.gen::<f64>() * 3.0)))
                .collect();
            let net = Network { id_range: n, delta: n, stations };
            let ctx = SimContext::new(&net, &p).unwrap();
            let tx_ids: Vec<u32> = (1..=n).filter(|_| rng.gen::<bool>()).collect();
            let mut tx = std::collections::BTreeMap::new();
            for id in &tx_ids {
                tx.insert(*id, *id);
            }
            let slow = simulate_round(&net, &tx, &p).unwrap();
            let idxs: Vec<usize> = tx_ids.iter().map(|t| ctx.index[t]).collect();
            let fast = ctx.round(&idxs);
            for (i, s) in net.stations.iter().enumerate() {
                let fast_heard = fast.heard[i].map(|v| ctx.id(v));
                let slow_heard = slow.heard_by(s.id).map(|(f, _)| f);
                prop_assert_eq!(fast_heard, slow_heard, "station {}", s.id);
            }
        }
    }
}
