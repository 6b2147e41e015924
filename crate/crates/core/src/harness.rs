//! Network generators (random density-bounded, grid, and the two-row
//! lower-bound family), the (P1)/(P2) property checker, the scenario
//! pipeline with its metrics CSV, and DOT export.
//!
//! All generators draw from explicitly seeded generators and keep every
//! station away from decision boundaries (grid lines and range circles) by
//! a relative margin, so floating-point rounding can never flip a
//! reception decision.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::apps::{multi_broadcast, ChoiceRule};
use crate::backbone::{build_backbone_with, BackboneRuntime, BackboneStructure};
use crate::error::Error;
use crate::geometry::{box_of, dist, GridCoord, GridSpec, Point};
use crate::phy::{communication_graph, ModelParams, Network, Station};
use crate::selector::SelectorSpec;
use crate::Result;

/// Relative margin kept from every decision boundary.
const BOUNDARY_MARGIN: f64 = 1e-6;

fn margin_ok(net_points: &[Point], candidate: Point, params: &ModelParams) -> bool {
    let g = GridSpec::pivotal(params);
    let r = params.range();
    // stay off grid lines
    for c in [candidate.x / g.cell, candidate.y / g.cell] {
        if (c - c.round()).abs() < BOUNDARY_MARGIN {
            return false;
        }
    }
    // stay off every range circle and away from co-location
    for p in net_points {
        let d = dist(*p, candidate);
        if d < BOUNDARY_MARGIN * r || (d - r).abs() < BOUNDARY_MARGIN * r {
            return false;
        }
    }
    true
}

fn assign_ids(stations: &mut [Station], id_range: u32, rng: &mut ChaCha12Rng) {
    let mut ids: BTreeSet<u32> = BTreeSet::new();
    while ids.len() < stations.len() {
        ids.insert(rng.gen_range(1..=id_range));
    }
    for (s, id) in stations.iter_mut().zip(ids) {
        s.id = id;
    }
}

/// Uniform placements in an `extent_x x extent_y` (in pivotal cells) area,
/// rejected and re-sampled until the per-box bound holds, the communication
/// graph is connected, and every margin constraint is met. Deterministic in
/// the seed.
pub fn gen_random_network(
    n: usize,
    extent_x: u32,
    extent_y: u32,
    delta: u32,
    id_range: u32,
    params: &ModelParams,
    seed: u64,
) -> Result<Network> {
    assert!(n >= 1);
    if (n as u32) > id_range {
        return Err(Error::GenerationInfeasible {
            attempts: 0,
            detail: format!("{n} stations cannot fit in ID range {id_range}"),
        });
    }
    let g = GridSpec::pivotal(params);
    let r = params.range();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let attempts_cap = 400;
    for attempt in 0..attempts_cap {
        // uniform candidates, but each accepted point must attach to the
        // component grown so far; connectivity then holds by construction
        // and the post-checks below stay the arbiter
        let mut points: Vec<Point> = Vec::with_capacity(n);
        let mut per_box: BTreeMap<GridCoord, u32> = BTreeMap::new();
        let mut tries = 0;
        while points.len() < n && tries < 50_000 {
            tries += 1;
            let p = Point::new(
                rng.gen::<f64>() * extent_x as f64 * g.cell,
                rng.gen::<f64>() * extent_y as f64 * g.cell,
            );
            if !margin_ok(&points, p, params) {
                continue;
            }
            if !points.is_empty() && !points.iter().any(|q| dist(*q, p) <= r) {
                continue;
            }
            let b = box_of(p, g);
            let c = per_box.entry(b).or_insert(0);
            if *c >= delta {
                continue;
            }
            *c += 1;
            points.push(p);
        }
        if points.len() < n {
            continue;
        }
        let mut stations: Vec<Station> = points.into_iter().map(|p| Station::new(0, p)).collect();
        assign_ids(&mut stations, id_range, &mut rng);
        let net = Network { id_range, delta, stations };
        if net.validate(params).is_err() {
            continue;
        }
        let graph = communication_graph(&net, params)?;
        if graph.connected && graph.max_degree <= crate::phy::CommGraph::degree_bound(delta) {
            return Ok(net);
        }
        let _ = attempt;
    }
    Err(Error::GenerationInfeasible {
        attempts: attempts_cap,
        detail: format!(
            "n={n}, extent={extent_x}x{extent_y}, delta={delta}: no connected margin-safe placement found"
        ),
    })
}

/// `per_box` stations in every box of a `boxes_x x boxes_y` block, jittered
/// inside box interiors. Connected by construction (neighbor boxes are
/// mutually in range).
pub fn gen_grid_network(
    boxes_x: u32,
    boxes_y: u32,
    per_box: u32,
    delta: u32,
    id_range: u32,
    params: &ModelParams,
    seed: u64,
) -> Result<Network> {
    assert!(per_box >= 1 && per_box <= delta);
    let g = GridSpec::pivotal(params);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = (boxes_x * boxes_y * per_box) as usize;
    if n as u32 > id_range {
        return Err(Error::GenerationInfeasible {
            attempts: 0,
            detail: format!("{n} stations cannot fit in ID range {id_range}"),
        });
    }
    let mut points = Vec::with_capacity(n);
    for i in 0..boxes_x {
        for j in 0..boxes_y {
            for _ in 0..per_box {
                loop {
                    let p = Point::new(
                        (i as f64 + 0.15 + 0.7 * rng.gen::<f64>()) * g.cell,
                        (j as f64 + 0.15 + 0.7 * rng.gen::<f64>()) * g.cell,
                    );
                    if margin_ok(&points, p, params) {
                        points.push(p);
                        break;
                    }
                }
            }
        }
    }
    let mut stations: Vec<Station> = points.into_iter().map(|p| Station::new(0, p)).collect();
    assign_ids(&mut stations, id_range, &mut rng);
    Network::new(stations, id_range, delta, params)
}

/// The two-row lower-bound instance: `2*Delta - 1` candidate positions per
/// row spaced `d` apart, rows at `y = 0` and `y = r`, with chosen index
/// sets of size `Delta` sharing exactly one column. The communication graph
/// is two cliques joined by the single bridge edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowerBoundInstance {
    pub delta: u32,
    pub spacing: f64,
    /// Chosen column indices (1-based) per row.
    pub x0: Vec<u32>,
    pub x1: Vec<u32>,
    /// The shared column.
    pub bridge: u32,
    pub network: Network,
}

impl LowerBoundInstance {
    pub fn row0_ids(&self) -> Vec<u32> {
        self.x0.clone()
    }

    pub fn row1_ids(&self) -> Vec<u32> {
        self.x1.iter().map(|j| 2 * self.delta + j).collect()
    }
}

/// Spacing bound: the stricter of `r / (2 Delta)` and the interference
/// bound `((1/eps)^(1/alpha) - (1+eps)^(-1/alpha)) / (2 Delta)`, scaled by
/// 0.9 because the underlying inequalities are strict.
pub fn lower_bound_spacing(delta: u32, params: &ModelParams) -> f64 {
    let r = params.range();
    let a = r / (2.0 * delta as f64);
    let b = ((1.0 / params.eps).powf(1.0 / params.alpha)
        - (1.0 + params.eps).powf(-1.0 / params.alpha))
        / (2.0 * delta as f64);
    0.9 * a.min(b)
}

/// Samples a valid `(X0, X1)` pair and realizes the instance with the
/// two-row ID scheme (`z_{0,j}` gets ID `j`, `z_{1,j}` gets `2*Delta + j`).
pub fn gen_lower_bound_instance(
    delta: u32,
    params: &ModelParams,
    seed: u64,
) -> Result<LowerBoundInstance> {
    if delta < 2 {
        return Err(Error::GenerationInfeasible {
            attempts: 0,
            detail: "the lower-bound family needs delta >= 2".into(),
        });
    }
    let d = lower_bound_spacing(delta, params);
    if d <= 0.0 {
        return Err(Error::GenerationInfeasible {
            attempts: 0,
            detail: "no positive spacing satisfies the interference bound".into(),
        });
    }
    let r = params.range();
    let cols = 2 * delta - 1;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // pick the shared column, then fill both rows with distinct columns
    let bridge = rng.gen_range(1..=cols);
    let pick = |rng: &mut ChaCha12Rng, bridge: u32| -> Vec<u32> {
        let mut set = BTreeSet::from([bridge]);
        while set.len() < delta as usize {
            set.insert(rng.gen_range(1..=cols));
        }
        set.into_iter().collect()
    };
    let x0 = pick(&mut rng, bridge);
    let mut x1 = pick(&mut rng, bridge);
    // the rows must share exactly the bridge column
    while x0.iter().filter(|j| x1.contains(j)).count() != 1 {
        x1 = pick(&mut rng, bridge);
    }
    let mut stations = Vec::new();
    for &j in &x0 {
        stations.push(Station::new(j, Point::new((j - 1) as f64 * d, 0.0)));
    }
    for &j in &x1 {
        stations.push(Station::new(2 * delta + j, Point::new((j - 1) as f64 * d, r)));
    }
    let network = Network::new(stations, 4 * delta, 2 * delta, params)?;
    Ok(LowerBoundInstance { delta, spacing: d, x0, x1, bridge, network })
}

/// Report of the (P1)/(P2) check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct P1P2Report {
    pub exhaustive: bool,
    pub patterns_checked: u64,
    pub p1_violations: Vec<String>,
    pub p2_violations: Vec<String>,
}

impl P1P2Report {
    pub fn pass(&self) -> bool {
        self.p1_violations.is_empty() && self.p2_violations.is_empty()
    }
}

/// Outcome of a round for one station: what it received, if anything.
fn round_view(
    net: &Network,
    tx: &BTreeSet<u32>,
    params: &ModelParams,
) -> Result<BTreeMap<u32, Option<u32>>> {
    let payload: BTreeMap<u32, u32> = tx.iter().map(|id| (*id, *id)).collect();
    let out = crate::phy::simulate_round(net, &payload, params)?;
    Ok(net
        .stations
        .iter()
        .map(|s| (s.id, out.heard_by(s.id).map(|(from, _)| from)))
        .collect())
}

/// Verifies (P1): with at least one same-row transmitter, a station's
/// round outcome does not depend on the other row; and (P2): a row with
/// two or more transmitters is never heard across. Exhaustive for
/// `delta <= 5`, sampled within `budget` patterns beyond.
pub fn check_p1_p2(
    inst: &LowerBoundInstance,
    params: &ModelParams,
    budget: u64,
) -> Result<P1P2Report> {
    let rows = [inst.row0_ids(), inst.row1_ids()];
    let delta = inst.delta as usize;
    let exhaustive = inst.delta <= 5;
    let total = 1u64 << (2 * delta);
    let patterns: Vec<(BTreeSet<u32>, BTreeSet<u32>)> = if exhaustive {
        (0..total)
            .map(|bits| {
                let t0: BTreeSet<u32> = rows[0]
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| bits & (1 << k) != 0)
                    .map(|(_, id)| *id)
                    .collect();
                let t1: BTreeSet<u32> = rows[1]
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| bits & (1 << (delta + k)) != 0)
                    .map(|(_, id)| *id)
                    .collect();
                (t0, t1)
            })
            .collect()
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(0x1b);
        (0..budget)
            .map(|_| {
                let t0 = rows[0].iter().copied().filter(|_| rng.gen::<bool>()).collect();
                let t1 = rows[1].iter().copied().filter(|_| rng.gen::<bool>()).collect();
                (t0, t1)
            })
            .collect()
    };

    let mut p1_violations = Vec::new();
    let mut p2_violations = Vec::new();
    // baselines: outcomes with the other row silent
    let mut checked = 0u64;
    for (t0, t1) in &patterns {
        checked += 1;
        let combined: BTreeSet<u32> = t0.union(t1).copied().collect();
        let view = round_view(&inst.network, &combined, params)?;
        for (i, ti) in [(0usize, t0), (1usize, t1)] {
            if !ti.is_empty() {
                // (P1): same outcome as with the other row silent
                let solo = round_view(&inst.network, ti, params)?;
                for id in &rows[i] {
                    if view[id] != solo[id] {
                        p1_violations.push(format!(
                            "station {id}: outcome {:?} with both rows vs {:?} with row {} alone (T0={t0:?}, T1={t1:?})",
                            view[id], solo[id], i
                        ));
                    }
                }
            }
            if ti.len() >= 2 {
                // (P2): nothing from this row is heard across
                for id in &rows[1 - i] {
                    if let Some(from) = view[id] {
                        if ti.contains(&from) {
                            p2_violations.push(format!(
                                "station {id} heard {from} though row {i} had {} transmitters (T0={t0:?}, T1={t1:?})",
                                ti.len()
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(P1P2Report { exhaustive, patterns_checked: checked, p1_violations, p2_violations })
}

/// Generator selection inside a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    Random { n: usize, extent_x: u32, extent_y: u32 },
    Grid { boxes_x: u32, boxes_y: u32, per_box: u32 },
    LowerBound,
}

/// Selector knobs inside a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectorConfig {
    #[serde(default = "default_eps_fraction")]
    pub eps_fraction: f64,
    #[serde(default = "default_c_len")]
    pub c_len: u32,
    #[serde(default = "default_c_d")]
    pub c_d: f64,
    #[serde(default)]
    pub certify_trials: Option<u32>,
    #[serde(default = "default_retry_cap")]
    pub retry_cap: u32,
}

fn default_eps_fraction() -> f64 {
    0.5
}
fn default_c_len() -> u32 {
    8
}
fn default_c_d() -> f64 {
    4.0
}
fn default_retry_cap() -> u32 {
    16
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            eps_fraction: 0.5,
            c_len: 8,
            c_d: 4.0,
            certify_trials: None,
            retry_cap: 16,
        }
    }
}

/// Seeds for each randomized stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Seeds {
    pub network: u64,
    pub selector: u64,
}

/// Pipeline stages a scenario can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Selector,
    Backbone,
    Election,
    Multibroadcast,
    LowerBoundCheck,
}

/// A full scenario description; see the README for the JSON schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub generator: GeneratorConfig,
    pub id_range: u32,
    pub delta: u32,
    pub params: ModelParams,
    #[serde(default)]
    pub selector: SelectorConfig,
    pub seeds: Seeds,
    pub stages: Vec<Stage>,
    /// Message counts per station for multi-broadcast ("id" -> count); when
    /// empty, one message at the smallest station ID.
    #[serde(default)]
    pub payload_counts: BTreeMap<String, u32>,
    /// Also run the naive one-station-per-slot baseline for comparison.
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// One row of the metrics CSV; the column order is fixed.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Metrics {
    pub name: String,
    pub seed_network: u64,
    pub seed_selector: u64,
    pub n: usize,
    pub id_range: u32,
    pub delta: u32,
    pub alpha: f64,
    pub eps: f64,
    pub gamma: f64,
    pub boxes: usize,
    pub comm_diameter: usize,
    pub box_diameter: usize,
    pub delta_prime: u32,
    pub selector_delta: u32,
    pub selector_length: u32,
    pub backbone_size: usize,
    pub backbone_rounds: u64,
    pub election_phases: usize,
    pub election_multirounds: u64,
    pub election_rounds: u64,
    pub k_total: u64,
    pub broadcast_collect_multirounds: u64,
    pub broadcast_flood_multirounds: u64,
    pub broadcast_rounds: u64,
    pub baseline_rounds_per_multiround: u64,
    pub invariants_ok: bool,
}

pub const METRICS_COLUMNS: [&str; 26] = [
    "name",
    "seed_network",
    "seed_selector",
    "n",
    "id_range",
    "delta",
    "alpha",
    "eps",
    "gamma",
    "boxes",
    "comm_diameter",
    "box_diameter",
    "delta_prime",
    "selector_delta",
    "selector_length",
    "backbone_size",
    "backbone_rounds",
    "election_phases",
    "election_multirounds",
    "election_rounds",
    "k_total",
    "broadcast_collect_multirounds",
    "broadcast_flood_multirounds",
    "broadcast_rounds",
    "baseline_rounds_per_multiround",
    "invariants_ok",
];

impl Metrics {
    pub fn csv_header() -> String {
        METRICS_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        [
            self.name.clone(),
            self.seed_network.to_string(),
            self.seed_selector.to_string(),
            self.n.to_string(),
            self.id_range.to_string(),
            self.delta.to_string(),
            self.alpha.to_string(),
            self.eps.to_string(),
            self.gamma.to_string(),
            self.boxes.to_string(),
            self.comm_diameter.to_string(),
            self.box_diameter.to_string(),
            self.delta_prime.to_string(),
            self.selector_delta.to_string(),
            self.selector_length.to_string(),
            self.backbone_size.to_string(),
            self.backbone_rounds.to_string(),
            self.election_phases.to_string(),
            self.election_multirounds.to_string(),
            self.election_rounds.to_string(),
            self.k_total.to_string(),
            self.broadcast_collect_multirounds.to_string(),
            self.broadcast_flood_multirounds.to_string(),
            self.broadcast_rounds.to_string(),
            self.baseline_rounds_per_multiround.to_string(),
            self.invariants_ok.to_string(),
        ]
        .join(",")
    }
}

/// Everything a scenario produced, for callers that want more than the CSV.
pub struct ScenarioOutcome {
    pub metrics: Metrics,
    pub network: Network,
    pub backbone: Option<BackboneStructure>,
    pub lower_bound: Option<P1P2Report>,
}

fn stage_err(stage: &'static str, e: Error) -> Error {
    Error::Stage { stage, source: Box::new(e) }
}

/// Runs the configured pipeline. Every stage's internal invariants are
/// enforced by the stage itself; any violation surfaces as a stage error.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    let params = cfg.params;
    params.validate()?;
    let net = match &cfg.generator {
        GeneratorConfig::Random { n, extent_x, extent_y } => gen_random_network(
            *n,
            *extent_x,
            *extent_y,
            cfg.delta,
            cfg.id_range,
            &params,
            cfg.seeds.network,
        )
        .map_err(|e| stage_err("generate", e))?,
        GeneratorConfig::Grid { boxes_x, boxes_y, per_box } => gen_grid_network(
            *boxes_x,
            *boxes_y,
            *per_box,
            cfg.delta,
            cfg.id_range,
            &params,
            cfg.seeds.network,
        )
        .map_err(|e| stage_err("generate", e))?,
        GeneratorConfig::LowerBound => {
            gen_lower_bound_instance(cfg.delta, &params, cfg.seeds.network)
                .map_err(|e| stage_err("generate", e))?
                .network
        }
    };
    let graph = communication_graph(&net, &params)?;
    let mut metrics = Metrics {
        name: cfg.name.clone(),
        seed_network: cfg.seeds.network,
        seed_selector: cfg.seeds.selector,
        n: net.len(),
        id_range: cfg.id_range,
        delta: cfg.delta,
        alpha: params.alpha,
        eps: params.eps,
        gamma: crate::geometry::pivotal_gamma(&params),
        comm_diameter: graph.diameter,
        invariants_ok: true,
        ..Metrics::default()
    };

    let mut spec = SelectorSpec::new(cfg.id_range, cfg.delta);
    spec.eps_fraction = cfg.selector.eps_fraction;
    spec.c_len = cfg.selector.c_len;
    spec.c_d = cfg.selector.c_d;

    if cfg.stages.contains(&Stage::Selector) {
        if let Some(trials) = cfg.selector.certify_trials {
            let (_, _, report) = crate::selector::build_certified(
                &spec,
                cfg.seeds.selector,
                &params,
                trials,
                cfg.selector.retry_cap,
            )
            .map_err(|e| stage_err("selector", e))?;
            metrics.invariants_ok &= report.pass;
        }
        let sel = crate::selector::build_selector(&spec, cfg.seeds.selector, &params)
            .map_err(|e| stage_err("selector", e))?;
        metrics.selector_delta = sel.delta;
        metrics.selector_length = sel.length;
    }

    let mut backbone = None;
    let mut lower_bound = None;

    if cfg.stages.contains(&Stage::Backbone)
        || cfg.stages.contains(&Stage::Election)
        || cfg.stages.contains(&Stage::Multibroadcast)
    {
        let bb = build_backbone_with(&net, &params, &spec, cfg.seeds.selector, None)
            .map_err(|e| stage_err("backbone", e))?;
        metrics.boxes = bb.nonempty_boxes();
        metrics.delta_prime = bb.dilution_prime;
        metrics.backbone_size = bb.h.len();
        metrics.backbone_rounds = bb.rounds.total();
        let rt = BackboneRuntime::new(&net, &params, bb.clone())
            .map_err(|e| stage_err("backbone", e))?;
        if cfg.baseline {
            metrics.baseline_rounds_per_multiround =
                baseline_exchange_rounds(&rt).map_err(|e| stage_err("baseline", e))?;
        }

        if cfg.stages.contains(&Stage::Election) || cfg.stages.contains(&Stage::Multibroadcast) {
            let election =
                crate::apps::global_leader_election(&rt).map_err(|e| stage_err("election", e))?;
            crate::apps::check_follow_discipline(&rt, &election)
                .map_err(|e| stage_err("election", e))?;
            metrics.box_diameter = election.d;
            metrics.election_phases = election.phases;
            metrics.election_multirounds = election.multirounds;
            metrics.election_rounds = election.physical_rounds;
        }

        if cfg.stages.contains(&Stage::Multibroadcast) {
            let placement: BTreeMap<u32, u32> = if cfg.payload_counts.is_empty() {
                let min_id = net.stations.iter().map(|s| s.id).min().unwrap();
                BTreeMap::from([(min_id, 1)])
            } else {
                cfg.payload_counts
                    .iter()
                    .map(|(k, v)| {
                        k.parse::<u32>()
                            .map(|id| (id, *v))
                            .map_err(|_| Error::InvalidNetwork(format!("bad payload station id `{k}`")))
                    })
                    .collect::<Result<_>>()?
            };
            let outcome = multi_broadcast(&rt, &placement, ChoiceRule::MinTag)
                .map_err(|e| stage_err("multibroadcast", e))?;
            metrics.k_total = outcome.counters.k_total;
            metrics.broadcast_collect_multirounds = outcome.counters.collect_multirounds;
            metrics.broadcast_flood_multirounds = outcome.counters.flood_multirounds;
            metrics.broadcast_rounds = outcome.counters.physical_rounds;
        }
        backbone = Some(bb);
    }

    if cfg.stages.contains(&Stage::LowerBoundCheck) {
        let inst = gen_lower_bound_instance(cfg.delta.max(2), &params, cfg.seeds.network)
            .map_err(|e| stage_err("lower_bound", e))?;
        let report = check_p1_p2(&inst, &params, 10_000).map_err(|e| stage_err("lower_bound", e))?;
        metrics.invariants_ok &= report.pass();
        lower_bound = Some(report);
    }

    Ok(ScenarioOutcome { metrics, network: net, backbone, lower_bound })
}

/// The naive round-robin baseline: delivering one box-graph exchange by
/// giving every station its own slot costs `N` physical rounds, against
/// `(1 + 2|DIR|) * delta'^2` for a multi-round. Verifies the round-robin
/// sweep is collision-free and returns its round count.
pub fn baseline_exchange_rounds(rt: &BackboneRuntime<'_>) -> Result<u64> {
    use crate::phy::{RoundResult, SimScratch};
    let mut scratch = SimScratch::new(rt.ctx.net.len());
    let mut res = RoundResult::default();
    for id in 1..=rt.ctx.net.id_range {
        if let Some(&idx) = rt.ctx.index.get(&id) {
            rt.ctx.round_into(&mut scratch, &[idx], &mut res);
            if res.successful != vec![idx] {
                return Err(Error::BackboneProperty(format!(
                    "lone round-robin transmission of station {id} was not r-successful"
                )));
            }
        }
    }
    Ok(rt.ctx.net.id_range as u64)
}

/// Writes network JSON in the documented schema.
#[derive(Debug, Serialize, Deserialize)]
pub struct NetworkJson {
    pub id_range: u32,
    pub delta: u32,
    pub params: ModelParams,
    pub stations: Vec<Station>,
}

impl NetworkJson {
    pub fn pack(net: &Network, params: &ModelParams) -> Self {
        NetworkJson {
            id_range: net.id_range,
            delta: net.delta,
            params: *params,
            stations: net.stations.clone(),
        }
    }

    pub fn unpack(self) -> Result<(Network, ModelParams)> {
        let net = Network::new(self.stations, self.id_range, self.delta, &self.params)?;
        Ok((net, self.params))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_string_pretty(value)?;
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let data = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&data)?)
}

/// DOT export: the communication graph in gray with the backbone `H`
/// highlighted and backbone sender/receiver links drawn solid.
pub fn export_dot(net: &Network, params: &ModelParams, bb: Option<&BackboneStructure>) -> Result<String> {
    let graph = communication_graph(net, params)?;
    let mut out = String::from("graph backbone {\n  node [shape=circle];\n");
    for s in &net.stations {
        let in_h = bb.is_some_and(|b| b.h.contains(&s.id));
        let style = if in_h { ",style=filled,fillcolor=lightblue" } else { "" };
        out.push_str(&format!(
            "  v{} [label=\"{}\",pos=\"{:.4},{:.4}!\"{}];\n",
            s.id, s.id, s.pos.x, s.pos.y, style
        ));
    }
    for (i, nbrs) in graph.adj.iter().enumerate() {
        for &j in nbrs {
            if i < j {
                let a = graph.ids[i];
                let b = graph.ids[j];
                let both_h = bb.is_some_and(|bbx| bbx.h.contains(&a) && bbx.h.contains(&b));
                let style = if both_h { "" } else { " [color=gray,style=dashed]" };
                out.push_str(&format!("  v{a} -- v{b}{style};\n"));
            }
        }
    }
    out.push_str("}\n");
    Ok(out)
}
