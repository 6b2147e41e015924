//! The four-phase backbone construction: per-box leader election over a
//! SINR-selector, local learning of box rosters, neighborhood learning of
//! designated senders and receivers, and the multi-round engine that
//! simulates one message-passing round on the box graph.
//!
//! The resulting structure `H` (leaders plus senders plus receivers) is a
//! connected dominating set of the communication graph, holds at most
//! `1 + 2 * |DIR|` stations per box, and associates every station with the
//! leader of its box.
//!
//! ```
//! use sinr_backbone::backbone::build_backbone;
//! use sinr_backbone::geometry::{GridSpec, Point};
//! use sinr_backbone::phy::{ModelParams, Network, Station};
//! use sinr_backbone::selector::SelectorSpec;
//!
//! let params = ModelParams::normalized(3.0, 1.0).unwrap();
//! let cell = GridSpec::pivotal(&params).cell;
//! let net = Network::new(
//!     vec![
//!         Station::new(4, Point::new(0.4 * cell, 0.4 * cell)),
//!         Station::new(8, Point::new(0.8 * cell, 0.5 * cell)),
//!         Station::new(2, Point::new(1.2 * cell, 0.5 * cell)),
//!     ],
//!     16,
//!     2,
//!     &params,
//! )
//! .unwrap();
//! let bb = build_backbone(&net, &params, &SelectorSpec::new(16, 2), 1).unwrap();
//! assert_eq!(bb.nonempty_boxes(), 2);
//! // the two box leaders are the smallest IDs per box
//! assert!(bb.h.contains(&4) && bb.h.contains(&2));
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{dir_set, is_diluted, GridCoord};
use crate::phy::{ModelParams, Network, RoundResult, SimContext, SimScratch};
use crate::schedule::{dilution_constant, GeometricSchedule, ScheduleBuckets};
use crate::selector::SelectorSpec;
use crate::Result;

/// JSON helpers: maps with structured keys travel as arrays of pairs.
pub(crate) mod serde_pairs {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<K, V, S>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error>
    where
        K: Serialize + Ord,
        V: Serialize,
        S: Serializer,
    {
        let pairs: Vec<(&K, &V)> = map.iter().collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        let pairs: Vec<(K, V)> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().collect())
    }
}

/// Control-bit budget for one protocol message: a constant plus a multiple
/// of `log2 N`. Pred-set messages carry up to `|DIR|` box coordinates, which
/// dominates the constant.
pub fn message_bit_budget(id_range: u32) -> u32 {
    let log = (32 - u32::leading_zeros(id_range.max(2) - 1)).max(1);
    128 + 96 * log
}

pub(crate) fn ceil_log2(n: u32) -> u32 {
    (32 - u32::leading_zeros(n.max(2) - 1)).max(1)
}

/// Per-box summary produced by the construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxRecord {
    pub coord: GridCoord,
    /// Box leader; after local learning this is re-pointed at the smallest
    /// roster ID, which the election and broadcast layers assume.
    pub leader: u32,
    /// Full box membership in the confirmation order of local learning
    /// (the electing leader seeds itself first).
    pub roster: Vec<u32>,
    /// Designated sender per direction with a neighbor box there.
    #[serde(with = "serde_pairs")]
    pub senders: BTreeMap<(i32, i32), u32>,
    /// Designated receiver per incoming direction.
    #[serde(with = "serde_pairs")]
    pub receivers: BTreeMap<(i32, i32), u32>,
}

/// Physical-round spend per construction phase.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RoundsBreakdown {
    pub leader_election: u64,
    pub local_learning: u64,
    pub neighborhood_learning: u64,
}

impl RoundsBreakdown {
    pub fn total(&self) -> u64 {
        self.leader_election + self.local_learning + self.neighborhood_learning
    }
}

/// The backbone: per-box records, the set `H`, the station-to-leader
/// association, and the multi-round frame parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneStructure {
    #[serde(with = "serde_pairs")]
    pub boxes: BTreeMap<GridCoord, BoxRecord>,
    pub h: BTreeSet<u32>,
    pub assoc: BTreeMap<u32, u32>,
    /// Dilution parameter of multi-rounds and roster sweeps.
    pub dilution_prime: u32,
    /// Physical rounds per multi-round: `(1 + 2 * |DIR|) * delta'^2`.
    pub multi_round_len: u32,
    /// Box-graph adjacency realized by actual station pairs.
    #[serde(with = "serde_pairs")]
    pub box_adjacency: BTreeMap<GridCoord, BTreeSet<GridCoord>>,
    /// Contested-set sizes logged per selector execution of the election.
    pub contest_log: Vec<usize>,
    pub rounds: RoundsBreakdown,
}

impl BackboneStructure {
    pub fn nonempty_boxes(&self) -> usize {
        self.boxes.len()
    }

    /// BFS distances over the box graph from `from`.
    pub fn box_distances(&self, from: GridCoord) -> BTreeMap<GridCoord, usize> {
        let mut dist = BTreeMap::new();
        dist.insert(from, 0usize);
        let mut queue = std::collections::VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let d = dist[&c];
            if let Some(nbrs) = self.box_adjacency.get(&c) {
                for n in nbrs {
                    if !dist.contains_key(n) {
                        dist.insert(*n, d + 1);
                        queue.push_back(*n);
                    }
                }
            }
        }
        dist
    }

    /// Eccentricity of `from` in the box graph.
    pub fn box_eccentricity(&self, from: GridCoord) -> usize {
        self.box_distances(from).values().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Active,
    Passive,
    Leader,
}

/// Local leader election: `ceil(log2 N)` executions of the selector with
/// only active stations transmitting; a station that hears a same-box
/// message goes passive immediately, and whoever is still active at the end
/// leads its box.
///
/// Returns the leader of every nonempty box, the per-execution contested-set
/// sizes `|M(i)|` (`i = 0` is the initial state), and the physical rounds
/// used.
pub fn local_leader_election(
    net: &Network,
    sel: &GeometricSchedule,
    params: &ModelParams,
) -> Result<(BTreeMap<GridCoord, u32>, Vec<usize>, u64)> {
    let ctx = SimContext::new(net, params)?;
    local_leader_election_ctx(&ctx, sel)
}

pub(crate) fn local_leader_election_ctx(
    ctx: &SimContext<'_>,
    sel: &GeometricSchedule,
) -> Result<(BTreeMap<GridCoord, u32>, Vec<usize>, u64)> {
    let n = ctx.net.len();
    let mut role = vec![Role::Active; n];
    let buckets = ScheduleBuckets::new(sel, ctx);
    let mut scratch = SimScratch::new(n);
    let mut res = RoundResult::default();
    let mut tx = Vec::new();

    let contested = |role: &[Role]| -> usize {
        ctx.box_members
            .values()
            .map(|members| {
                let active = members.iter().filter(|&&i| role[i] == Role::Active).count();
                if active >= 2 {
                    active
                } else {
                    0
                }
            })
            .sum()
    };

    let reps = ceil_log2(sel.id_range);
    let mut contest_log = vec![contested(&role)];
    let mut rounds = 0u64;
    for _rep in 0..reps {
        for bucket in &buckets.rounds {
            rounds += 1;
            if bucket.is_empty() {
                continue;
            }
            tx.clear();
            tx.extend(bucket.iter().copied().filter(|&i| role[i] == Role::Active));
            if tx.is_empty() {
                continue;
            }
            ctx.round_into(&mut scratch, &tx, &mut res);
            for &(u, v) in &res.receptions {
                if ctx.boxes[u] == ctx.boxes[v] && role[u] == Role::Active {
                    role[u] = Role::Passive;
                }
            }
        }
        contest_log.push(contested(&role));
    }

    let mut leaders = BTreeMap::new();
    for (coord, members) in &ctx.box_members {
        let active: Vec<usize> = members.iter().copied().filter(|&i| role[i] == Role::Active).collect();
        if active.len() > 1 {
            return Err(Error::ContestedBox { i: coord.i, j: coord.j, active: active.len() });
        }
        // a nonempty box always retains an active station: actives only
        // drop out by hearing a same-box station, which stays active
        let winner = active.first().copied().ok_or_else(|| Error::BackboneProperty(
            format!("box {coord} lost all active stations during the election"),
        ))?;
        leaders.insert(*coord, ctx.id(winner));
    }
    Ok((leaders, contest_log, rounds))
}

/// Per-station direction flags and twins known inside each box: for every
/// roster member, the directions with a neighbor and the smallest-ID
/// neighbor there.
type BoxKnowledge = BTreeMap<GridCoord, BTreeMap<u32, BTreeMap<(i32, i32), u32>>>;

/// Leader-collected payload lists per box, in roster order.
pub type CollectedPayloads<M> = BTreeMap<GridCoord, Vec<(u32, M)>>;

/// Per-station roster copy maintained during local learning.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct RosterCopy {
    count: u32,
    set_arr: Vec<u32>,
}

/// Local learning: `ceil(log2 N)` selector executions over the non-leaders,
/// each selector round followed by one confirmation round in which every
/// leader that just heard a same-box station broadcasts `(u, count)`.
/// Confirmed stations go passive; every box member snoops confirmations to
/// keep an identical roster copy.
///
/// The confirmation rounds inherit the selector round's dilution: leaders
/// confirming after round `t` all sit in boxes of the single residue class
/// transmitting at `t`, one per box, so their broadcasts are r-successful.
pub fn local_learning(
    net: &Network,
    sel: &GeometricSchedule,
    leaders: &BTreeMap<GridCoord, u32>,
    params: &ModelParams,
) -> Result<(BTreeMap<GridCoord, Vec<u32>>, u64)> {
    let ctx = SimContext::new(net, params)?;
    local_learning_ctx(&ctx, sel, leaders)
}

#[allow(clippy::needless_range_loop)]
pub(crate) fn local_learning_ctx(
    ctx: &SimContext<'_>,
    sel: &GeometricSchedule,
    leaders: &BTreeMap<GridCoord, u32>,
) -> Result<(BTreeMap<GridCoord, Vec<u32>>, u64)> {
    let n = ctx.net.len();
    let mut role = vec![Role::Active; n];
    let mut copies: Vec<RosterCopy> = vec![RosterCopy::default(); n];
    for (coord, id) in leaders {
        let idx = ctx.index[id];
        debug_assert_eq!(ctx.boxes[idx], *coord);
        role[idx] = Role::Leader;
    }
    // the leader seeds its own roster: confirmations cover only
    // non-leaders, yet the roster must list every box member
    for i in 0..n {
        let leader = leaders.get(&ctx.boxes[i]).copied().ok_or_else(|| {
            Error::BackboneProperty(format!("box {} has no elected leader", ctx.boxes[i]))
        })?;
        copies[i] = RosterCopy { count: 1, set_arr: vec![leader] };
    }

    let buckets = ScheduleBuckets::new(sel, ctx);
    let mut scratch = SimScratch::new(n);
    let mut res = RoundResult::default();
    let mut tx = Vec::new();
    let mut confirmers: Vec<(usize, u32, u32)> = Vec::new(); // (leader idx, confirmed id, count)
    let mut rounds = 0u64;

    for _rep in 0..ceil_log2(sel.id_range) {
        for bucket in &buckets.rounds {
            // selector round t
            rounds += 1;
            confirmers.clear();
            if !bucket.is_empty() {
                tx.clear();
                tx.extend(bucket.iter().copied().filter(|&i| role[i] == Role::Active));
                if !tx.is_empty() {
                    ctx.round_into(&mut scratch, &tx, &mut res);
                    for &(u, v) in &res.receptions {
                        if role[u] == Role::Leader && ctx.boxes[u] == ctx.boxes[v] {
                            let vid = ctx.id(v);
                            if !copies[u].set_arr.contains(&vid) {
                                copies[u].count += 1;
                                let count = copies[u].count;
                                copies[u].set_arr.push(vid);
                                confirmers.push((u, vid, count));
                            }
                        }
                    }
                }
            }
            // confirmation round t'
            rounds += 1;
            if confirmers.is_empty() {
                continue;
            }
            tx.clear();
            tx.extend(confirmers.iter().map(|&(l, _, _)| l));
            ctx.round_into(&mut scratch, &tx, &mut res);
            for &(w, l) in &res.receptions {
                if ctx.boxes[w] != ctx.boxes[l] {
                    continue;
                }
                let &(_, confirmed, count) = confirmers.iter().find(|&&(x, _, _)| x == l).unwrap();
                if copies[w].set_arr.len() as u32 + 1 == count && !copies[w].set_arr.contains(&confirmed) {
                    copies[w].count = count;
                    copies[w].set_arr.push(confirmed);
                }
                if ctx.id(w) == confirmed {
                    role[w] = Role::Passive;
                }
            }
        }
    }

    let unconfirmed: Vec<u32> = (0..n)
        .filter(|&i| role[i] == Role::Active)
        .map(|i| ctx.id(i))
        .collect();
    if !unconfirmed.is_empty() {
        return Err(Error::UnconfirmedStations(unconfirmed));
    }

    // all stations of a box must hold identical (count, set_arr)
    let mut rosters = BTreeMap::new();
    for (coord, members) in &ctx.box_members {
        let leader_idx = ctx.index[&leaders[coord]];
        let authoritative = &copies[leader_idx];
        for &m in members {
            if copies[m] != *authoritative {
                return Err(Error::BackboneProperty(format!(
                    "inconsistent roster copies in box {coord}: station {} holds {:?}, leader holds {:?}",
                    ctx.id(m),
                    copies[m].set_arr,
                    authoritative.set_arr
                )));
            }
        }
        if authoritative.set_arr.len() != members.len() {
            return Err(Error::BackboneProperty(format!(
                "roster of box {coord} lists {} of {} members",
                authoritative.set_arr.len(),
                members.len()
            )));
        }
        rosters.insert(*coord, authoritative.set_arr.clone());
    }
    Ok((rosters, rounds))
}

/// Runs `delta'`-diluted slot blocks (`delta'^2` physical rounds each): in
/// the sub-slot of residue `(a, b)` exactly the scheduled stations whose box
/// is congruent to `(a, b)` transmit. Every transmission is checked to be
/// r-successful and the per-round transmitter sets are checked to be
/// one-per-box and diluted.
struct DilutedBlock<'c, 'n> {
    ctx: &'c SimContext<'n>,
    delta_prime: u32,
    scratch: SimScratch,
    res: RoundResult,
}

impl<'c, 'n> DilutedBlock<'c, 'n> {
    fn new(ctx: &'c SimContext<'n>, delta_prime: u32) -> Self {
        DilutedBlock {
            ctx,
            delta_prime,
            scratch: SimScratch::new(ctx.net.len()),
            res: RoundResult::default(),
        }
    }

    /// `scheduled`: station indices, at most one per box. Calls `on_rx` for
    /// each reception `(listener, transmitter)`. Errors unless every
    /// scheduled transmission is r-successful; also feeds the per-round
    /// transmitter log when provided.
    fn run(
        &mut self,
        scheduled: &[usize],
        mut on_rx: impl FnMut(usize, usize),
        mut log: Option<&mut Vec<Vec<usize>>>,
    ) -> Result<()> {
        let dp = self.delta_prime as i64;
        {
            let mut seen = BTreeSet::new();
            for &s in scheduled {
                if !seen.insert(self.ctx.boxes[s]) {
                    return Err(Error::BackboneProperty(format!(
                        "two scheduled stations share box {}",
                        self.ctx.boxes[s]
                    )));
                }
            }
        }
        for a in 0..dp {
            for b in 0..dp {
                let tx: Vec<usize> = scheduled
                    .iter()
                    .copied()
                    .filter(|&s| {
                        let c = self.ctx.boxes[s];
                        (c.i as i64).rem_euclid(dp) == a && (c.j as i64).rem_euclid(dp) == b
                    })
                    .collect();
                if let Some(log) = log.as_deref_mut() {
                    log.push(tx.clone());
                }
                if tx.is_empty() {
                    continue;
                }
                let boxes: Vec<GridCoord> = tx.iter().map(|&s| self.ctx.boxes[s]).collect();
                debug_assert!(is_diluted(boxes.iter(), self.delta_prime));
                self.ctx.round_into(&mut self.scratch, &tx, &mut self.res);
                for &(u, v) in &self.res.receptions {
                    on_rx(u, v);
                }
                if self.res.successful.len() != tx.len() {
                    let failed: Vec<u32> = tx
                        .iter()
                        .filter(|&&v| !self.res.successful.contains(&v))
                        .map(|&v| self.ctx.id(v))
                        .collect();
                    return Err(Error::BackboneProperty(format!(
                        "diluted slot transmission not r-successful for stations {failed:?} (delta' = {} too small?)",
                        self.delta_prime
                    )));
                }
            }
        }
        Ok(())
    }

    fn rounds_per_block(&self) -> u64 {
        (self.delta_prime as u64) * (self.delta_prime as u64)
    }
}

/// Neighborhood learning: two roster-indexed sweeps (first to learn
/// neighborhoods, second to spread per-station direction flags and twins),
/// the local sender/receiver computation, and the sender-to-receiver
/// handshake block.
pub fn neighborhood_learning(
    net: &Network,
    rosters: &BTreeMap<GridCoord, Vec<u32>>,
    params: &ModelParams,
    delta_prime: u32,
) -> Result<(BTreeMap<GridCoord, BoxRecord>, u64)> {
    let ctx = SimContext::new(net, params)?;
    neighborhood_learning_ctx(&ctx, rosters, delta_prime)
}

#[allow(clippy::needless_range_loop)]
pub(crate) fn neighborhood_learning_ctx(
    ctx: &SimContext<'_>,
    rosters: &BTreeMap<GridCoord, Vec<u32>>,
    delta_prime: u32,
) -> Result<(BTreeMap<GridCoord, BoxRecord>, u64)> {
    let n = ctx.net.len();
    let delta = ctx.net.delta;
    let dirs = dir_set();
    let mut block = DilutedBlock::new(ctx, delta_prime);
    let mut rounds = 0u64;

    // sweep 1: every station transmits once, per roster index; everyone
    // collects its neighborhood
    let mut gamma: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for i in 0..delta as usize {
        let scheduled: Vec<usize> = rosters
            .values()
            .filter_map(|r| r.get(i))
            .map(|id| ctx.index[id])
            .collect();
        rounds += block.rounds_per_block();
        let mut rx: Vec<(usize, usize)> = Vec::new();
        block.run(&scheduled, |u, v| rx.push((u, v)), None)?;
        for (u, v) in rx {
            gamma[u].insert(v);
        }
    }
    // r-successful sweeps must teach everyone exactly the communication graph
    for u in 0..n {
        let expect: BTreeSet<usize> = ctx.adj[u].iter().copied().collect();
        if gamma[u] != expect {
            return Err(Error::BackboneProperty(format!(
                "station {} learned neighborhood {:?} but the communication graph says {:?}",
                ctx.id(u),
                gamma[u].iter().map(|&i| ctx.id(i)).collect::<Vec<_>>(),
                expect.iter().map(|&i| ctx.id(i)).collect::<Vec<_>>()
            )));
        }
    }

    // direction flags and twins, derived from sweep 1 knowledge
    let flags_of = |v: usize| -> BTreeMap<(i32, i32), u32> {
        let home = ctx.boxes[v];
        let mut flags: BTreeMap<(i32, i32), u32> = BTreeMap::new();
        for &u in &gamma[v] {
            let b = ctx.boxes[u];
            let d = (b.i - home.i, b.j - home.j);
            if d == (0, 0) {
                continue;
            }
            let id = ctx.id(u);
            flags.entry(d).and_modify(|t| *t = (*t).min(id)).or_insert(id);
        }
        flags
    };

    // sweep 2: same slot structure; the payload (D(v) plus twins) spreads
    // box-wide because each transmission is r-successful
    let mut box_knowledge: BoxKnowledge = BTreeMap::new();
    for i in 0..delta as usize {
        let scheduled: Vec<usize> = rosters
            .values()
            .filter_map(|r| r.get(i))
            .map(|id| ctx.index[id])
            .collect();
        rounds += block.rounds_per_block();
        let mut rx: Vec<(usize, usize)> = Vec::new();
        block.run(&scheduled, |u, v| rx.push((u, v)), None)?;
        for (u, v) in rx {
            if ctx.boxes[u] == ctx.boxes[v] {
                box_knowledge
                    .entry(ctx.boxes[u])
                    .or_default()
                    .insert(ctx.id(v), flags_of(v));
            }
        }
        // the transmitter itself knows its own flags
        for &v in &scheduled {
            box_knowledge
                .entry(ctx.boxes[v])
                .or_default()
                .insert(ctx.id(v), flags_of(v));
        }
    }

    // local computation of senders; the twin of a sender is the receiver of
    // the opposite box
    let mut records: BTreeMap<GridCoord, BoxRecord> = rosters
        .iter()
        .map(|(coord, roster)| {
            (*coord, BoxRecord {
                coord: *coord,
                leader: *roster.iter().min().expect("nonempty roster"),
                roster: roster.clone(),
                senders: BTreeMap::new(),
                receivers: BTreeMap::new(),
            })
        })
        .collect();
    let mut handshakes: Vec<((i32, i32), usize, usize)> = Vec::new(); // (dir, sender idx, receiver idx)
    for (coord, roster) in rosters {
        let knowledge = box_knowledge.get(coord).cloned().unwrap_or_default();
        for &d in &dirs {
            let mut nb: Vec<u32> = roster
                .iter()
                .copied()
                .filter(|id| knowledge.get(id).is_some_and(|f| f.contains_key(&d)))
                .collect();
            if nb.is_empty() {
                continue;
            }
            nb.sort_unstable();
            let sender = nb[0];
            let twin = knowledge[&sender][&d];
            records.get_mut(coord).unwrap().senders.insert(d, sender);
            let opposite = coord.offset(d);
            let rec = records.get_mut(&opposite).ok_or(Error::MissingReceiver {
                sender,
                d1: d.0,
                d2: d.1,
            })?;
            rec.receivers.insert((-d.0, -d.1), twin);
            handshakes.push((d, ctx.index[&sender], ctx.index[&twin]));
        }
    }

    // handshake: one diluted block per direction; the designated receiver
    // must hear its sender
    for &d in &dirs {
        let scheduled: Vec<usize> = handshakes
            .iter()
            .filter(|(hd, _, _)| *hd == d)
            .map(|&(_, s, _)| s)
            .collect();
        rounds += block.rounds_per_block();
        let mut rx: Vec<(usize, usize)> = Vec::new();
        block.run(&scheduled, |u, v| rx.push((u, v)), None)?;
        for &(hd, s, r) in &handshakes {
            if hd != d {
                continue;
            }
            if !rx.contains(&(r, s)) {
                return Err(Error::MissingReceiver { sender: ctx.id(s), d1: d.0, d2: d.1 });
            }
        }
    }

    Ok((records, rounds))
}

/// One multi-round's worth of deliveries.
#[derive(Debug, Clone)]
pub struct MultiRoundOutcome<M: Clone + Ord> {
    /// Per-station received `(origin box, message)` pairs.
    pub per_station: Vec<BTreeSet<(GridCoord, M)>>,
    /// Consistent per-box inbox: messages relayed into the box (own leader
    /// broadcast included).
    pub box_inbox: BTreeMap<GridCoord, BTreeMap<GridCoord, M>>,
    /// Transmitter indices per physical round.
    pub round_log: Vec<Vec<usize>>,
    pub physical_rounds: u64,
}

/// Runtime companion of a backbone: index tables resolved against a
/// simulation context.
pub struct BackboneRuntime<'n> {
    pub ctx: SimContext<'n>,
    pub bb: BackboneStructure,
    pub dirs: Vec<(i32, i32)>,
    leader_idx: BTreeMap<GridCoord, usize>,
    sender_idx: BTreeMap<(GridCoord, (i32, i32)), usize>,
    receiver_idx: BTreeMap<(GridCoord, (i32, i32)), usize>,
}

impl<'n> BackboneRuntime<'n> {
    pub fn new(net: &'n Network, params: &ModelParams, bb: BackboneStructure) -> Result<Self> {
        let ctx = SimContext::new(net, params)?;
        let dirs = dir_set();
        let mut leader_idx = BTreeMap::new();
        let mut sender_idx = BTreeMap::new();
        let mut receiver_idx = BTreeMap::new();
        for (coord, rec) in &bb.boxes {
            leader_idx.insert(*coord, ctx.index[&rec.leader]);
            for (d, s) in &rec.senders {
                sender_idx.insert((*coord, *d), ctx.index[s]);
            }
            for (d, r) in &rec.receivers {
                receiver_idx.insert((*coord, *d), ctx.index[r]);
            }
        }
        Ok(BackboneRuntime { ctx, bb, dirs, leader_idx, sender_idx, receiver_idx })
    }

    pub fn leader_index(&self, coord: GridCoord) -> Option<usize> {
        self.leader_idx.get(&coord).copied()
    }

    /// Executes one multi-round: a leader slot block, then a sender and a
    /// receiver slot block per direction, each diluted. Every box with an
    /// entry in `outbox` broadcasts that message to its own stations and to
    /// every neighbor box.
    pub fn multi_round<M: Clone + Ord>(
        &self,
        outbox: &BTreeMap<GridCoord, M>,
    ) -> Result<MultiRoundOutcome<M>> {
        for coord in outbox.keys() {
            if !self.bb.boxes.contains_key(coord) {
                return Err(Error::BackboneProperty(format!("outbox names unknown box {coord}")));
            }
        }
        let n = self.ctx.net.len();
        let mut per_station: Vec<BTreeSet<(GridCoord, M)>> = vec![BTreeSet::new(); n];
        let mut round_log = Vec::new();
        let mut block = DilutedBlock::new(&self.ctx, self.bb.dilution_prime);
        let mut rounds = 0u64;

        // message currently carried by each transmitting station index
        let mut carried: BTreeMap<usize, (GridCoord, M)> = BTreeMap::new();

        // leader slot block
        let scheduled: Vec<usize> = outbox.keys().map(|c| self.leader_idx[c]).collect();
        for (c, m) in outbox {
            carried.insert(self.leader_idx[c], (*c, m.clone()));
        }
        rounds += block.rounds_per_block();
        {
            let mut rx = Vec::new();
            block.run(&scheduled, |u, v| rx.push((u, v)), Some(&mut round_log))?;
            for (u, v) in rx {
                let (origin, m) = carried[&v].clone();
                per_station[u].insert((origin, m));
            }
        }

        // per direction: senders forward, receivers relay
        for &d in &self.dirs {
            // round 1: senders of boxes with an outbox message
            let mut senders = Vec::new();
            for c in outbox.keys() {
                if let Some(&s) = self.sender_idx.get(&(*c, d)) {
                    senders.push(s);
                    carried.insert(s, (*c, outbox[c].clone()));
                }
            }
            rounds += block.rounds_per_block();
            let mut pending: BTreeMap<usize, (GridCoord, M)> = BTreeMap::new();
            {
                let mut rx = Vec::new();
                block.run(&senders, |u, v| rx.push((u, v)), Some(&mut round_log))?;
                for (u, v) in rx {
                    let (origin, m) = carried[&v].clone();
                    per_station[u].insert((origin, m.clone()));
                    // the designated receiver of the opposite box keeps it
                    let ucoord = self.ctx.boxes[u];
                    if self.receiver_idx.get(&(ucoord, (-d.0, -d.1))) == Some(&u)
                        && ucoord == self.ctx.boxes[v].offset(d)
                    {
                        pending.insert(u, (origin, m));
                    }
                }
            }
            // the pairing receiver must have heard its sender
            for c in outbox.keys() {
                if self.sender_idx.contains_key(&(*c, d)) {
                    let opposite = c.offset(d);
                    let r = self.receiver_idx[&(opposite, (-d.0, -d.1))];
                    if !pending.contains_key(&r) {
                        return Err(Error::BackboneProperty(format!(
                            "receiver {} of box {opposite} missed the round-1 message from box {c}",
                            self.ctx.id(r)
                        )));
                    }
                }
            }
            // round 2: receivers relay what they just received
            let relays: Vec<usize> = pending.keys().copied().collect();
            for (&r, pm) in &pending {
                carried.insert(r, pm.clone());
            }
            rounds += block.rounds_per_block();
            {
                let mut rx = Vec::new();
                block.run(&relays, |u, v| rx.push((u, v)), Some(&mut round_log))?;
                for (u, v) in rx {
                    let (origin, m) = carried[&v].clone();
                    per_station[u].insert((origin, m));
                }
            }
            // relays are r-successful, so their whole box holds the message
            for (&r, (origin, m)) in &pending {
                per_station[r].insert((*origin, m.clone()));
            }
        }

        // a box's own outbox message reaches all its stations via the leader
        for (c, m) in outbox {
            for &w in &self.ctx.box_members[c] {
                per_station[w].insert((*c, m.clone()));
            }
        }

        // derive the consistent per-box inbox and verify box-level delivery:
        // each box receives the outbox message of itself and every neighbor
        let mut box_inbox: BTreeMap<GridCoord, BTreeMap<GridCoord, M>> = BTreeMap::new();
        for coord in self.bb.boxes.keys() {
            let mut inbox = BTreeMap::new();
            if let Some(m) = outbox.get(coord) {
                inbox.insert(*coord, m.clone());
            }
            for nbr in &self.bb.box_adjacency[coord] {
                if let Some(m) = outbox.get(nbr) {
                    inbox.insert(*nbr, m.clone());
                }
            }
            for &w in &self.ctx.box_members[coord] {
                for (origin, m) in &inbox {
                    if !per_station[w].contains(&(*origin, m.clone())) {
                        return Err(Error::BackboneProperty(format!(
                            "station {} in box {coord} missed the multi-round message from box {origin}",
                            self.ctx.id(w)
                        )));
                    }
                }
            }
            box_inbox.insert(*coord, inbox);
        }

        debug_assert_eq!(rounds, self.bb.multi_round_len as u64);
        Ok(MultiRoundOutcome { per_station, box_inbox, round_log, physical_rounds: rounds })
    }

    /// Convergecast (protocol A2): a roster-indexed round-robin delivering
    /// every station's payload to its box leader in `Delta * delta'^2`
    /// physical rounds; leaders return payload lists in roster order.
    pub fn convergecast<M: Clone + Ord>(
        &self,
        payloads: &BTreeMap<u32, M>,
    ) -> Result<(CollectedPayloads<M>, u64)> {
        let mut block = DilutedBlock::new(&self.ctx, self.bb.dilution_prime);
        let mut collected: CollectedPayloads<M> = BTreeMap::new();
        let mut rounds = 0u64;
        for i in 0..self.ctx.net.delta as usize {
            let scheduled: Vec<usize> = self
                .bb
                .boxes
                .values()
                .filter_map(|rec| rec.roster.get(i))
                .filter(|id| payloads.contains_key(id))
                .map(|id| self.ctx.index[id])
                .collect();
            rounds += block.rounds_per_block();
            let mut rx = Vec::new();
            block.run(&scheduled, |u, v| rx.push((u, v)), None)?;
            for (u, v) in rx {
                if self.leader_idx.get(&self.ctx.boxes[u]) == Some(&u)
                    && self.ctx.boxes[u] == self.ctx.boxes[v]
                {
                    let vid = self.ctx.id(v);
                    collected.entry(self.ctx.boxes[u]).or_default().push((vid, payloads[&vid].clone()));
                }
            }
            // a transmitting leader keeps its own payload
            for &v in &scheduled {
                if self.leader_idx.get(&self.ctx.boxes[v]) == Some(&v) {
                    let vid = self.ctx.id(v);
                    collected.entry(self.ctx.boxes[v]).or_default().push((vid, payloads[&vid].clone()));
                }
            }
        }
        Ok((collected, rounds))
    }
}

/// Round budget factor: construction must finish within
/// `BUDGET_FACTOR * Delta * ceil(log2 N)^3` physical rounds for `alpha > 2`.
/// The factor absorbs the constant dilution `delta'^2 <= 64` that dominates
/// the selector length at small `N` (three selector passes of
/// `c_len * Delta * log N * delta'^2` rounds each).
pub const BUDGET_FACTOR: u64 = 1024;

/// Full construction: election, learning, neighborhood learning, property
/// checks. The box leader is re-pointed at the smallest roster ID once
/// rosters are known, which is what the election and broadcast layers
/// assume.
pub fn build_backbone(
    net: &Network,
    params: &ModelParams,
    spec: &SelectorSpec,
    seed: u64,
) -> Result<BackboneStructure> {
    build_backbone_with(net, params, spec, seed, None)
}

pub fn build_backbone_with(
    net: &Network,
    params: &ModelParams,
    spec: &SelectorSpec,
    seed: u64,
    delta_prime_override: Option<u32>,
) -> Result<BackboneStructure> {
    let graph = crate::phy::communication_graph(net, params)?;
    if !graph.connected {
        return Err(Error::InvalidNetwork("communication graph is not connected".into()));
    }
    if graph.max_degree > crate::phy::CommGraph::degree_bound(net.delta) {
        return Err(Error::InvalidNetwork(format!(
            "max degree {} exceeds the 21*Delta-1 bound {}",
            graph.max_degree,
            crate::phy::CommGraph::degree_bound(net.delta)
        )));
    }
    let ctx = SimContext::new(net, params)?;
    let delta_prime = match delta_prime_override {
        Some(d) => d,
        None => dilution_constant(params)?,
    };
    let sel = crate::selector::build_selector(spec, seed, params)?;

    let (elected, contest_log, r_elect) = local_leader_election_ctx(&ctx, &sel)?;
    let (rosters, r_learn) = local_learning_ctx(&ctx, &sel, &elected)?;
    let (records, r_nbr) = neighborhood_learning_ctx(&ctx, &rosters, delta_prime)?;

    let dirs = dir_set();
    let mut h: BTreeSet<u32> = BTreeSet::new();
    let mut assoc = BTreeMap::new();
    let mut box_adjacency: BTreeMap<GridCoord, BTreeSet<GridCoord>> = BTreeMap::new();
    for (coord, rec) in &records {
        h.insert(rec.leader);
        h.extend(rec.senders.values());
        h.extend(rec.receivers.values());
        for id in &rec.roster {
            assoc.insert(*id, rec.leader);
        }
        box_adjacency.insert(
            *coord,
            rec.senders.keys().map(|d| coord.offset(*d)).collect(),
        );
    }

    let bb = BackboneStructure {
        boxes: records,
        h,
        assoc,
        dilution_prime: delta_prime,
        multi_round_len: (1 + 2 * dirs.len() as u32) * delta_prime * delta_prime,
        box_adjacency,
        contest_log,
        rounds: RoundsBreakdown {
            leader_election: r_elect,
            local_learning: r_learn,
            neighborhood_learning: r_nbr,
        },
    };
    check_properties(&bb, &ctx)?;

    if params.alpha > 2.0 {
        let log = ceil_log2(net.id_range) as u64;
        let budget = BUDGET_FACTOR * net.delta as u64 * log * log * log;
        if bb.rounds.total() > budget {
            return Err(Error::BackboneProperty(format!(
                "construction used {} physical rounds, over the budget {budget}",
                bb.rounds.total()
            )));
        }
    }
    Ok(bb)
}

/// Re-checks P1, P2 and P3 for an already-built structure.
pub fn validate_backbone(bb: &BackboneStructure, net: &Network, params: &ModelParams) -> Result<()> {
    let ctx = SimContext::new(net, params)?;
    check_properties(bb, &ctx)
}

/// P1, P2 (per-box testable form) and P3, plus the box-adjacency oracle
/// cross-check.
fn check_properties(bb: &BackboneStructure, ctx: &SimContext<'_>) -> Result<()> {
    let dirs = dir_set();
    // P2: |H ∩ box| <= 1 + 2 |DIR|
    let cap = 1 + 2 * dirs.len();
    for (coord, members) in &ctx.box_members {
        let in_h = members.iter().filter(|&&i| bb.h.contains(&ctx.id(i))).count();
        if in_h > cap {
            return Err(Error::BackboneProperty(format!(
                "box {coord} holds {in_h} backbone stations, over the {cap} cap"
            )));
        }
    }
    // P3: assoc maps each station to its own box leader, a neighbor or itself
    for (i, st) in ctx.net.stations.iter().enumerate() {
        let leader = *bb.assoc.get(&st.id).ok_or_else(|| {
            Error::BackboneProperty(format!("station {} has no associated leader", st.id))
        })?;
        let rec = &bb.boxes[&ctx.boxes[i]];
        if leader != rec.leader {
            return Err(Error::BackboneProperty(format!(
                "station {} associated with {leader}, expected box leader {}",
                st.id, rec.leader
            )));
        }
        if leader != st.id {
            let l_idx = ctx.index[&leader];
            if !ctx.adj[i].contains(&l_idx) {
                return Err(Error::BackboneProperty(format!(
                    "station {} is not adjacent to its leader {leader}",
                    st.id
                )));
            }
        }
    }
    // box adjacency must match the geometric oracle
    for (coord, members) in &ctx.box_members {
        let mut oracle: BTreeSet<GridCoord> = BTreeSet::new();
        for &m in members {
            for &u in &ctx.adj[m] {
                if ctx.boxes[u] != *coord {
                    oracle.insert(ctx.boxes[u]);
                }
            }
        }
        if bb.box_adjacency[coord] != oracle {
            return Err(Error::BackboneProperty(format!(
                "box {coord} adjacency {:?} disagrees with the oracle {:?}",
                bb.box_adjacency[coord], oracle
            )));
        }
    }
    // P1: H is a dominating set (via P3) and connected
    let h_idx: Vec<usize> = ctx
        .net
        .stations
        .iter()
        .enumerate()
        .filter(|(_, s)| bb.h.contains(&s.id))
        .map(|(i, _)| i)
        .collect();
    if !h_idx.is_empty() {
        let inside: BTreeSet<usize> = h_idx.iter().copied().collect();
        let mut seen = BTreeSet::from([h_idx[0]]);
        let mut queue = std::collections::VecDeque::from([h_idx[0]]);
        while let Some(x) = queue.pop_front() {
            for &y in &ctx.adj[x] {
                if inside.contains(&y) && seen.insert(y) {
                    queue.push_back(y);
                }
            }
        }
        if seen.len() != h_idx.len() {
            return Err(Error::BackboneProperty(format!(
                "H is disconnected: component of size {} out of {}",
                seen.len(),
                h_idx.len()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GridSpec, Point};
    use crate::phy::Station;

    fn params() -> ModelParams {
        ModelParams::normalized(3.0, 1.0).unwrap()
    }

    fn spec(n: u32, delta: u32) -> SelectorSpec {
        SelectorSpec::new(n, delta)
    }

    /// One station per box on a w x h block, jittered inside box interiors.
    fn grid_net(w: i64, h: i64, p: &ModelParams) -> Network {
        let g = GridSpec::pivotal(p);
        let mut stations = Vec::new();
        let mut id = 1;
        for i in 0..w {
            for j in 0..h {
                stations.push(Station::new(
                    id,
                    Point::new((i as f64 + 0.41) * g.cell, (j as f64 + 0.53) * g.cell),
                ));
                id += 1;
            }
        }
        Network::new(stations, (w * h).max(4) as u32, 1, p).unwrap()
    }

    #[test]
    fn election_one_station_per_box_all_lead() {
        let p = params();
        let net = grid_net(4, 3, &p);
        let sel = crate::selector::build_selector(&spec(12, 1), 3, &p).unwrap();
        let (leaders, contest, _) = local_leader_election(&net, &sel, &p).unwrap();
        assert_eq!(leaders.len(), 12);
        // M(0) is empty: no box has two active stations
        assert!(contest.iter().all(|&m| m == 0));
    }

    #[test]
    fn election_two_station_box_elects_one() {
        let p = params();
        let g = GridSpec::pivotal(&p);
        let net = Network::new(
            vec![
                Station::new(5, Point::new(0.3 * g.cell, 0.3 * g.cell)),
                Station::new(9, Point::new(0.7 * g.cell, 0.6 * g.cell)),
            ],
            16,
            2,
            &p,
        )
        .unwrap();
        let sel = crate::selector::build_selector(&spec(16, 2), 1, &p).unwrap();
        let (leaders, contest, _) = local_leader_election(&net, &sel, &p).unwrap();
        assert_eq!(leaders.len(), 1);
        let leader = *leaders.values().next().unwrap();
        assert!(leader == 5 || leader == 9);
        assert_eq!(contest[0], 2);
        assert_eq!(*contest.last().unwrap(), 0);
        for w in contest.windows(2) {
            assert!(w[1] == 0 || 2 * w[1] <= w[0]);
        }
    }

    #[test]
    fn election_empty_network() {
        let p = params();
        let net = Network::new(vec![], 8, 2, &p).unwrap();
        let sel = crate::selector::build_selector(&spec(8, 2), 1, &p).unwrap();
        let (leaders, _, _) = local_leader_election(&net, &sel, &p).unwrap();
        assert!(leaders.is_empty());
    }

    #[test]
    fn local_learning_rosters() {
        let p = params();
        let g = GridSpec::pivotal(&p);
        let net = Network::new(
            vec![
                Station::new(5, Point::new(0.3 * g.cell, 0.3 * g.cell)),
                Station::new(9, Point::new(0.7 * g.cell, 0.6 * g.cell)),
                Station::new(2, Point::new(2.4 * g.cell, 0.5 * g.cell)),
            ],
            16,
            2,
            &p,
        )
        .unwrap();
        let sel = crate::selector::build_selector(&spec(16, 2), 1, &p).unwrap();
        let (leaders, _, _) = local_leader_election(&net, &sel, &p).unwrap();
        let (rosters, rounds) = local_learning(&net, &sel, &leaders, &p).unwrap();
        // physical length: each selector round followed by one confirmation
        assert_eq!(rounds, 2 * sel.length as u64 * ceil_log2(16) as u64);
        let two_box = rosters[&GridCoord::new(0, 0)].clone();
        let mut sorted = two_box.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![5, 9]);
        // leader seeds itself first
        assert_eq!(two_box[0], leaders[&GridCoord::new(0, 0)]);
        let single = rosters[&GridCoord::new(2, 0)].clone();
        assert_eq!(single, vec![2]);
    }

    #[test]
    fn backbone_single_box() {
        let p = params();
        let g = GridSpec::pivotal(&p);
        let net = Network::new(
            vec![
                Station::new(7, Point::new(0.2 * g.cell, 0.2 * g.cell)),
                Station::new(3, Point::new(0.8 * g.cell, 0.7 * g.cell)),
            ],
            16,
            2,
            &p,
        )
        .unwrap();
        let bb = build_backbone(&net, &p, &spec(16, 2), 1).unwrap();
        assert_eq!(bb.boxes.len(), 1);
        let rec = bb.boxes.values().next().unwrap();
        assert_eq!(rec.leader, 3); // min-ID re-designation
        assert_eq!(bb.h, BTreeSet::from([3]));
        assert!(rec.senders.is_empty());
        assert_eq!(bb.box_eccentricity(rec.coord), 0);
    }

    #[test]
    fn backbone_two_neighbor_boxes() {
        let p = params();
        let g = GridSpec::pivotal(&p);
        let net = Network::new(
            vec![
                Station::new(4, Point::new(0.4 * g.cell, 0.4 * g.cell)),
                Station::new(8, Point::new(0.8 * g.cell, 0.5 * g.cell)),
                Station::new(2, Point::new(1.2 * g.cell, 0.5 * g.cell)),
            ],
            16,
            2,
            &p,
        )
        .unwrap();
        let bb = build_backbone(&net, &p, &spec(16, 2), 1).unwrap();
        assert_eq!(bb.boxes.len(), 2);
        let left = &bb.boxes[&GridCoord::new(0, 0)];
        let right = &bb.boxes[&GridCoord::new(1, 0)];
        assert_eq!(left.leader, 4);
        assert_eq!(right.leader, 2);
        assert!(left.senders.contains_key(&(1, 0)));
        assert!(right.senders.contains_key(&(-1, 0)));
        assert!(bb.h.len() <= 2 + 2 * 2);
    }

    #[test]
    fn sender_is_min_id_of_candidates() {
        let p = params();
        let g = GridSpec::pivotal(&p);
        // 3 and 7 both reach box (1,0); 3 must be the sender
        let net = Network::new(
            vec![
                Station::new(7, Point::new(0.6 * g.cell, 0.35 * g.cell)),
                Station::new(3, Point::new(0.7 * g.cell, 0.6 * g.cell)),
                Station::new(5, Point::new(1.3 * g.cell, 0.5 * g.cell)),
            ],
            16,
            2,
            &p,
        )
        .unwrap();
        let bb = build_backbone(&net, &p, &spec(16, 2), 1).unwrap();
        let left = &bb.boxes[&GridCoord::new(0, 0)];
        assert_eq!(left.senders[&(1, 0)], 3);
        assert_eq!(bb.boxes[&GridCoord::new(1, 0)].receivers[&(-1, 0)], 5);
    }

    #[test]
    fn multi_round_hops_along_a_path_of_boxes() {
        let p = params();
        let net = grid_net(3, 1, &p);
        let bb = build_backbone(&net, &p, &spec(3, 1), 1).unwrap();
        assert_eq!(
            bb.multi_round_len,
            (1 + 2 * 20) * bb.dilution_prime * bb.dilution_prime
        );
        let rt = BackboneRuntime::new(&net, &p, bb).unwrap();
        let mut outbox = BTreeMap::new();
        outbox.insert(GridCoord::new(0, 0), "m");
        let out1 = rt.multi_round(&outbox).unwrap();
        // after one multi-round the whole neighbor box holds it; the box two
        // hops away has not consumed it (stations there may overhear the
        // relay, but the box inbox carries neighbor-box messages only)
        let b1 = rt.ctx.box_members[&GridCoord::new(1, 0)][0];
        assert!(out1.per_station[b1].contains(&(GridCoord::new(0, 0), "m")));
        assert!(out1.box_inbox[&GridCoord::new(1, 0)].contains_key(&GridCoord::new(0, 0)));
        assert!(!out1.box_inbox[&GridCoord::new(2, 0)].contains_key(&GridCoord::new(0, 0)));
        // the middle box relays in a second multi-round
        let mut outbox2 = BTreeMap::new();
        outbox2.insert(GridCoord::new(1, 0), "m");
        let out2 = rt.multi_round(&outbox2).unwrap();
        assert!(out2.box_inbox[&GridCoord::new(2, 0)].contains_key(&GridCoord::new(1, 0)));
        assert_eq!(out1.physical_rounds, rt.bb.multi_round_len as u64);
    }

    #[test]
    fn multi_round_isolated_box_reaches_own_members_only() {
        let p = params();
        let g = GridSpec::pivotal(&p);
        let net = Network::new(
            vec![
                Station::new(1, Point::new(0.3 * g.cell, 0.4 * g.cell)),
                Station::new(2, Point::new(0.6 * g.cell, 0.6 * g.cell)),
            ],
            8,
            2,
            &p,
        )
        .unwrap();
        let bb = build_backbone(&net, &p, &spec(8, 2), 2).unwrap();
        let rt = BackboneRuntime::new(&net, &p, bb).unwrap();
        let mut outbox = BTreeMap::new();
        outbox.insert(GridCoord::new(0, 0), 42u32);
        let out = rt.multi_round(&outbox).unwrap();
        for i in 0..2 {
            assert!(out.per_station[i].contains(&(GridCoord::new(0, 0), 42)));
        }
    }

    #[test]
    fn convergecast_collects_in_roster_order() {
        let p = params();
        let g = GridSpec::pivotal(&p);
        let net = Network::new(
            vec![
                Station::new(5, Point::new(0.3 * g.cell, 0.3 * g.cell)),
                Station::new(9, Point::new(0.7 * g.cell, 0.6 * g.cell)),
            ],
            16,
            2,
            &p,
        )
        .unwrap();
        let bb = build_backbone(&net, &p, &spec(16, 2), 1).unwrap();
        let roster = bb.boxes[&GridCoord::new(0, 0)].roster.clone();
        let rt = BackboneRuntime::new(&net, &p, bb).unwrap();
        let mut payloads = BTreeMap::new();
        payloads.insert(5u32, "p5");
        payloads.insert(9u32, "p9");
        let (collected, rounds) = rt.convergecast(&payloads).unwrap();
        let list = &collected[&GridCoord::new(0, 0)];
        let expect: Vec<(u32, &str)> = roster
            .iter()
            .map(|&id| (id, if id == 5 { "p5" } else { "p9" }))
            .collect();
        assert_eq!(list, &expect);
        assert_eq!(rounds, net.delta as u64 * (rt.bb.dilution_prime as u64).pow(2));
    }

    #[test]
    fn convergecast_round_count_example() {
        // Delta = 8, delta' = 3: exactly 72 physical rounds
        let p = params();
        let mut net = grid_net(2, 2, &p);
        net.delta = 8;
        let bb = build_backbone_with(&net, &p, &spec(4, 8), 1, Some(3)).unwrap();
        let rt = BackboneRuntime::new(&net, &p, bb).unwrap();
        let payloads: BTreeMap<u32, u8> = (1..=4).map(|i| (i, i as u8)).collect();
        let (_, rounds) = rt.convergecast(&payloads).unwrap();
        assert_eq!(rounds, 72);
    }

    #[test]
    fn singleton_boxes_convergecast_self_only() {
        let p = params();
        let net = grid_net(2, 1, &p);
        let bb = build_backbone(&net, &p, &spec(2, 1), 4).unwrap();
        let rt = BackboneRuntime::new(&net, &p, bb).unwrap();
        let payloads: BTreeMap<u32, u8> = [(1, 10), (2, 20)].into();
        let (collected, _) = rt.convergecast(&payloads).unwrap();
        for (coord, list) in &collected {
            let rec = &rt.bb.boxes[coord];
            assert_eq!(list.len(), 1);
            assert_eq!(list[0].0, rec.leader);
        }
    }


    #[test]
    fn all_zeros_selector_leaves_boxes_contested() {
        // with nobody transmitting, a two-station box never resolves
        let p = params();
        let g = GridSpec::pivotal(&p);
        let net = Network::new(
            vec![
                Station::new(1, Point::new(0.3 * g.cell, 0.3 * g.cell)),
                Station::new(2, Point::new(0.7 * g.cell, 0.6 * g.cell)),
            ],
            8,
            2,
            &p,
        )
        .unwrap();
        let zeros = GeometricSchedule::zeros(8, 2, 16).unwrap();
        let err = local_leader_election(&net, &zeros, &p).unwrap_err();
        assert!(matches!(err, Error::ContestedBox { active: 2, .. }), "{err}");
    }

    #[test]
    fn all_zeros_selector_reports_unconfirmed_stations() {
        // a silent non-leader is never confirmed by its leader
        let p = params();
        let g = GridSpec::pivotal(&p);
        let net = Network::new(
            vec![
                Station::new(1, Point::new(0.3 * g.cell, 0.3 * g.cell)),
                Station::new(2, Point::new(0.7 * g.cell, 0.6 * g.cell)),
            ],
            8,
            2,
            &p,
        )
        .unwrap();
        let zeros = GeometricSchedule::zeros(8, 2, 16).unwrap();
        let leaders = BTreeMap::from([(GridCoord::new(0, 0), 1u32)]);
        let err = local_learning(&net, &zeros, &leaders, &p).unwrap_err();
        assert!(matches!(err, Error::UnconfirmedStations(ref ids) if ids == &vec![2]), "{err}");
    }

    #[test]
    fn neighborhood_learning_round_count() {
        // 2 sweeps of Delta diluted index steps plus the handshake block
        let p = params();
        let net = grid_net(3, 2, &p);
        let ctx = SimContext::new(&net, &p).unwrap();
        let rosters: BTreeMap<GridCoord, Vec<u32>> = ctx
            .box_members
            .iter()
            .map(|(c, m)| (*c, m.iter().map(|&i| ctx.id(i)).collect()))
            .collect();
        let dp = dilution_constant(&p).unwrap();
        let (_, rounds) = neighborhood_learning(&net, &rosters, &p, dp).unwrap();
        let block = (dp as u64).pow(2);
        assert_eq!(rounds, 2 * net.delta as u64 * block + 20 * block);
    }
}
