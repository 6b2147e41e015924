use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sinr_backbone::apps::{self, ChoiceRule};
use sinr_backbone::backbone::{build_backbone_with, BackboneRuntime, BackboneStructure};
use sinr_backbone::harness::{
    self, export_dot, gen_grid_network, gen_lower_bound_instance, gen_random_network, read_json,
    write_json, Metrics, NetworkJson, ScenarioConfig,
};
use sinr_backbone::phy::ModelParams;
use sinr_backbone::schedule::GeometricSchedule;
use sinr_backbone::selector::{build_certified, build_selector, verify_selector, SelectorSpec};

/// Deterministic SINR-network simulator and backbone protocol suite.
#[derive(Parser)]
#[command(name = "sinr-backbone", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ParamArgs {
    /// Path-loss exponent (>= 2).
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    /// Sensitivity parameter (> 0).
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    /// SINR threshold (>= 1).
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Ambient noise (>= 1).
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Uniform transmission power (> 0).
    #[arg(long, default_value_t = 1.0)]
    power: f64,
}

impl ParamArgs {
    fn build(&self) -> sinr_backbone::Result<ModelParams> {
        ModelParams::new(self.alpha, self.beta, self.noise, self.eps, self.power)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random or grid network and write it as JSON.
    GenNetwork {
        #[command(flatten)]
        params: ParamArgs,
        /// Number of stations (random kind) .
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Extent in pivotal cells along x.
        #[arg(long, default_value_t = 10)]
        extent_x: u32,
        /// Extent in pivotal cells along y.
        #[arg(long, default_value_t = 10)]
        extent_y: u32,
        /// Per-box density bound.
        #[arg(long, default_value_t = 4)]
        delta: u32,
        /// ID range N.
        #[arg(long, default_value_t = 256)]
        id_range: u32,
        /// Grid generator instead of random: stations per box.
        #[arg(long)]
        grid_per_box: Option<u32>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a two-row lower-bound instance.
    GenLowerBound {
        #[command(flatten)]
        params: ParamArgs,
        /// Density parameter Delta (>= 2).
        #[arg(long, default_value_t = 4)]
        delta: u32,
        #[arg(long)]
        seed: u64,
        /// Network JSON output.
        #[arg(long)]
        out: PathBuf,
        /// Also run the exhaustive/sampled (P1)/(P2) check.
        #[arg(long)]
        check: bool,
    },
    /// Sample a selector candidate, certify it, and write the schedule.
    BuildSelector {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        id_range: u32,
        /// Per-box density bound Delta.
        #[arg(long)]
        delta: u32,
        #[arg(long)]
        seed: u64,
        /// Certification trials (0 skips certification).
        #[arg(long, default_value_t = 50)]
        certify_trials: u32,
        #[arg(long, default_value_t = 16)]
        retry_cap: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a selector against a network and an active-set file.
    VerifySelector {
        /// Selector JSON (geometric schedule).
        #[arg(long)]
        selector: PathBuf,
        #[arg(long)]
        network: PathBuf,
        /// JSON file {"ids": [...]} naming the active set A.
        #[arg(long = "set")]
        set_file: PathBuf,
        /// Report output (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Success fraction to check against.
        #[arg(long, default_value_t = 0.5)]
        eps_fraction: f64,
    },
    /// Build the backbone over a network.
    RunBackbone {
        #[arg(long)]
        network: PathBuf,
        /// Optional pre-built selector schedule; sampled from the seed when
        /// omitted.
        #[arg(long)]
        selector: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Construction trace (JSONL).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// DOT rendering of H over the communication graph.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Run global leader election over a built backbone.
    RunLeader {
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-phase state trace (JSONL).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run multi-broadcast over a built backbone.
    RunMultibroadcast {
        #[arg(long)]
        backbone: PathBuf,
        /// JSON file {"payload_counts": {"<station id>": count}}.
        #[arg(long)]
        payloads: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Flood arrival trace (JSONL).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a full configured pipeline and write the metrics CSV.
    RunScenario {
        #[arg(long)]
        config: PathBuf,
    },
    /// Export the communication graph (and backbone, if given) as DOT.
    ExportDot {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Self-contained backbone artifact: the network it was built over plus the
/// structure itself.
#[derive(Serialize, Deserialize)]
struct BackboneJson {
    network: NetworkJson,
    backbone: BackboneStructure,
}

#[derive(Serialize)]
struct ElectionJson {
    leader: u32,
    winner_box: sinr_backbone::geometry::GridCoord,
    phases: usize,
    multirounds: u64,
    physical_rounds: u64,
    d: usize,
}

#[derive(Serialize, Deserialize)]
struct ActiveSetJson {
    ids: Vec<u32>,
}

#[derive(Serialize, Deserialize, Default)]
struct PayloadsJson {
    payload_counts: BTreeMap<String, u32>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> sinr_backbone::Result<ExitCode> {
    match cli.command {
        Command::GenNetwork {
            params,
            n,
            extent_x,
            extent_y,
            delta,
            id_range,
            grid_per_box,
            seed,
            out,
        } => {
            let p = params.build()?;
            let net = match grid_per_box {
                Some(per_box) => gen_grid_network(extent_x, extent_y, per_box, delta, id_range, &p, seed)?,
                None => gen_random_network(n, extent_x, extent_y, delta, id_range, &p, seed)?,
            };
            write_json(&out, &NetworkJson::pack(&net, &p))?;
            eprintln!("wrote {} stations to {}", net.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::GenLowerBound { params, delta, seed, out, check } => {
            let p = params.build()?;
            let inst = gen_lower_bound_instance(delta, &p, seed)?;
            write_json(&out, &NetworkJson::pack(&inst.network, &p))?;
            eprintln!(
                "lower-bound instance: delta={delta}, spacing={:.6}, bridge column {}",
                inst.spacing, inst.bridge
            );
            if check {
                let report = harness::check_p1_p2(&inst, &p, 10_000)?;
                println!("{}", serde_json::to_string_pretty(&report)?);
                if !report.pass() {
                    return Ok(ExitCode::FAILURE);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::BuildSelector {
            params,
            id_range,
            delta,
            seed,
            certify_trials,
            retry_cap,
            out,
        } => {
            let p = params.build()?;
            let spec = SelectorSpec::new(id_range, delta);
            let schedule = if certify_trials > 0 {
                let (s, resamples, report) = build_certified(&spec, seed, &p, certify_trials, retry_cap)?;
                eprintln!(
                    "certified after {resamples} re-samples; min fractions a={:.3} b={:.3}",
                    report.min_fraction_a, report.min_fraction_b
                );
                s
            } else {
                build_selector(&spec, seed, &p)?
            };
            write_json(&out, &schedule.to_json())?;
            eprintln!(
                "selector: delta={}, length={} rounds -> {}",
                schedule.delta,
                schedule.length,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifySelector { selector, network, set_file, out, eps_fraction } => {
            let sched = GeometricSchedule::from_json(&read_json(&selector)?)?;
            let (net, p) = read_json::<NetworkJson>(&network)?.unpack()?;
            let set: ActiveSetJson = read_json(&set_file)?;
            let active: BTreeSet<u32> = set.ids.into_iter().collect();
            let mut spec = SelectorSpec::new(net.id_range, net.delta);
            spec.eps_fraction = eps_fraction;
            let report = verify_selector(&sched, &net, &active, &spec, &p)?;
            let rendered = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => std::fs::write(path, rendered + "\n")?,
                None => println!("{rendered}"),
            }
            Ok(if report.pass() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::RunBackbone { network, selector, seed, out, trace, dot } => {
            let (net, p) = read_json::<NetworkJson>(&network)?.unpack()?;
            let spec = SelectorSpec::new(net.id_range, net.delta);
            let bb = match selector {
                Some(path) => {
                    let sched = GeometricSchedule::from_json(&read_json(&path)?)?;
                    build_backbone_from_schedule(&net, &p, &sched)?
                }
                None => build_backbone_with(&net, &p, &spec, seed, None)?,
            };
            if let Some(path) = trace {
                let mut lines = String::new();
                for (i, m) in bb.contest_log.iter().enumerate() {
                    lines.push_str(&serde_json::to_string(
                        &serde_json::json!({"event": "contest", "execution": i, "contested": m}),
                    )?);
                    lines.push('\n');
                }
                lines.push_str(&serde_json::to_string(
                    &serde_json::json!({"event": "rounds", "breakdown": bb.rounds}),
                )?);
                lines.push('\n');
                std::fs::write(path, lines)?;
            }
            if let Some(path) = dot {
                std::fs::write(path, export_dot(&net, &p, Some(&bb))?)?;
            }
            eprintln!(
                "backbone: {} boxes, |H| = {}, {} construction rounds",
                bb.nonempty_boxes(),
                bb.h.len(),
                bb.rounds.total()
            );
            write_json(&out, &BackboneJson { network: NetworkJson::pack(&net, &p), backbone: bb })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::RunLeader { backbone, out, trace } => {
            let artifact: BackboneJson = read_json(&backbone)?;
            let (net, p) = artifact.network.unpack()?;
            let rt = BackboneRuntime::new(&net, &p, artifact.backbone)?;
            let result = apps::global_leader_election(&rt)?;
            apps::check_follow_discipline(&rt, &result)?;
            if let Some(path) = trace {
                let mut lines = String::new();
                for (i, snap) in result.trace.iter().enumerate() {
                    let entries: Vec<_> = snap
                        .iter()
                        .map(|(c, (ld, st))| serde_json::json!({"box": c, "ld": ld, "st": st}))
                        .collect();
                    lines.push_str(&serde_json::to_string(
                        &serde_json::json!({"phase": i + 1, "boxes": entries}),
                    )?);
                    lines.push('\n');
                }
                std::fs::write(path, lines)?;
            }
            write_json(
                &out,
                &ElectionJson {
                    leader: result.leader,
                    winner_box: result.winner_box,
                    phases: result.phases,
                    multirounds: result.multirounds,
                    physical_rounds: result.physical_rounds,
                    d: result.d,
                },
            )?;
            eprintln!(
                "leader {} elected in {} phases ({} physical rounds), D = {}",
                result.leader, result.phases, result.physical_rounds, result.d
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::RunMultibroadcast { backbone, payloads, out, trace } => {
            let artifact: BackboneJson = read_json(&backbone)?;
            let (net, p) = artifact.network.unpack()?;
            let rt = BackboneRuntime::new(&net, &p, artifact.backbone)?;
            let pj: PayloadsJson = read_json(&payloads)?;
            let placement: BTreeMap<u32, u32> = pj
                .payload_counts
                .iter()
                .map(|(k, v)| {
                    k.parse::<u32>().map(|id| (id, *v)).map_err(|_| {
                        sinr_backbone::Error::InvalidNetwork(format!("bad station id `{k}`"))
                    })
                })
                .collect::<sinr_backbone::Result<_>>()?;
            let outcome = apps::multi_broadcast(&rt, &placement, ChoiceRule::MinTag)?;
            if let Some(path) = trace {
                let mut lines = String::new();
                lines.push_str(&serde_json::to_string(
                    &serde_json::json!({"event": "counters", "counters": outcome.counters}),
                )?);
                lines.push('\n');
                for (coord, arrivals) in &outcome.flood_arrivals {
                    for (tag, round) in arrivals {
                        lines.push_str(&serde_json::to_string(&serde_json::json!({
                            "event": "flood_arrival",
                            "box": coord,
                            "origin": tag.origin,
                            "seq": tag.seq,
                            "multiround": round,
                        }))?);
                        lines.push('\n');
                    }
                }
                std::fs::write(path, lines)?;
            }
            write_json(&out, &outcome.counters)?;
            eprintln!(
                "multi-broadcast: k = {}, collect {} + flood {} multi-rounds, {} physical rounds",
                outcome.counters.k_total,
                outcome.counters.collect_multirounds,
                outcome.counters.flood_multirounds,
                outcome.counters.physical_rounds
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::RunScenario { config } => {
            let cfg: ScenarioConfig = read_json(&config)?;
            let outcome = harness::run_scenario(&cfg)?;
            let out_dir = std::env::var_os("SINR_BACKBONE_OUT_DIR")
                .map(PathBuf::from)
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&out_dir)?;
            let csv = format!("{}\n{}\n", Metrics::csv_header(), outcome.metrics.csv_row());
            std::fs::write(out_dir.join("metrics.csv"), csv)?;
            write_json(
                &out_dir.join("network.json"),
                &NetworkJson::pack(&outcome.network, &cfg.params),
            )?;
            if let Some(bb) = &outcome.backbone {
                write_json(
                    &out_dir.join("backbone.json"),
                    &BackboneJson {
                        network: NetworkJson::pack(&outcome.network, &cfg.params),
                        backbone: bb.clone(),
                    },
                )?;
            }
            if let Some(report) = &outcome.lower_bound {
                write_json(&out_dir.join("lower_bound.json"), report)?;
            }
            println!("{}", outcome.metrics.csv_row());
            Ok(if outcome.metrics.invariants_ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::ExportDot { network, backbone, out } => {
            let (net, p) = read_json::<NetworkJson>(&network)?.unpack()?;
            let bb = match backbone {
                Some(path) => Some(read_json::<BackboneJson>(&path)?.backbone),
                None => None,
            };
            std::fs::write(&out, export_dot(&net, &p, bb.as_ref())?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Backbone construction from an explicit pre-built selector schedule.
fn build_backbone_from_schedule(
    net: &sinr_backbone::phy::Network,
    params: &ModelParams,
    sched: &GeometricSchedule,
) -> sinr_backbone::Result<BackboneStructure> {
    use sinr_backbone::backbone as bb;
    use sinr_backbone::geometry::dir_set;
    let delta_prime = sinr_backbone::schedule::dilution_constant(params)?;
    let (elected, contest_log, r_elect) = bb::local_leader_election(net, sched, params)?;
    let (rosters, r_learn) = bb::local_learning(net, sched, &elected, params)?;
    let (records, r_nbr) = bb::neighborhood_learning(net, &rosters, params, delta_prime)?;
    let dirs = dir_set();
    let mut h = BTreeSet::new();
    let mut assoc = BTreeMap::new();
    let mut box_adjacency: BTreeMap<_, BTreeSet<_>> = BTreeMap::new();
    for (coord, rec) in &records {
        h.insert(rec.leader);
        h.extend(rec.senders.values());
        h.extend(rec.receivers.values());
        for id in &rec.roster {
            assoc.insert(*id, rec.leader);
        }
        box_adjacency.insert(*coord, rec.senders.keys().map(|d| coord.offset(*d)).collect());
    }
    let built = BackboneStructure {
        boxes: records,
        h,
        assoc,
        dilution_prime: delta_prime,
        multi_round_len: (1 + 2 * dirs.len() as u32) * delta_prime * delta_prime,
        box_adjacency,
        contest_log,
        rounds: bb::RoundsBreakdown {
            leader_election: r_elect,
            local_learning: r_learn,
            neighborhood_learning: r_nbr,
        },
    };
    bb::validate_backbone(&built, net, params)?;
    Ok(built)
}
