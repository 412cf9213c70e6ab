//! Trial runner, parameter sweeps, statistics, and result files.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{error, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    bottleneck, parse_duration, parse_lengths, symmetric, Cell, Experiment, LinkMode, SweepConfig, DEFAULT_SIM_TIME,
    DEFAULT_TRIALS, TC_RATIOS,
};

use crate::error::{Error, Result};
use crate::link::{Agent, LinkConfig, LinkSource, Mlp, Policy, SyntheticParams};
use crate::network::{main_loop, ChainTopology, Controller, DeliveryEvent, Protocol};
use crate::physics::{skr_utility, PhysicsConstants};
use crate::trainer::{policy_file_name, BANK_TC_RATIOS};

/// Environment variable holding the sweep worker count.
pub const WORKERS_ENV: &str = "SWAPSIM_WORKERS";

/// Worker count from `SWAPSIM_WORKERS`, or the number of available cores.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Outcome of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub deliveries: usize,
    pub mean_fidelity: Option<f64>,
    /// Emission time of the last delivery, or 0.
    pub t_last: f64,
    pub u_skr: f64,
    pub dwell_sum: f64,
    pub mean_dwell: Option<f64>,
    #[serde(skip)]
    pub events: Vec<DeliveryEvent>,
}

impl TrialResult {
    pub fn from_events(seed: u64, events: Vec<DeliveryEvent>, keep: bool) -> Self {
        let n = events.len();
        let fsum: f64 = events.iter().map(|e| e.fidelity).sum();
        let dwell_sum: f64 = events.iter().map(|e| e.dwell).sum();
        let t_last = events.last().map_or(0.0, |e| e.t_emit);
        let mean_fidelity = (n > 0).then(|| fsum / n as f64);
        let u_skr = match mean_fidelity {
            Some(f) => skr_utility(f, t_last / n as f64, n),
            None => 0.0,
        };
        Self {
            seed,
            deliveries: n,
            mean_fidelity,
            t_last,
            u_skr,
            dwell_sum,
            mean_dwell: (n > 0).then(|| dwell_sum / n as f64),
            events: if keep { events } else { Vec::new() },
        }
    }
}

/// Builds link sources for a cell, with trained networks loaded once per sweep.
#[derive(Debug, Clone)]
pub struct LinkFactory {
    mode: LinkMode,
    consts: PhysicsConstants<f64>,
    nets: BTreeMap<PathBuf, Arc<Mlp>>,
}

/// Bank ratio closest to `ratio` on a log scale.
pub fn nearest_bank_ratio(ratio: f64) -> f64 {
    BANK_TC_RATIOS
        .iter()
        .copied()
        .min_by(|a, b| (ratio / a).ln().abs().total_cmp(&(ratio / b).ln().abs()))
        .expect("non-empty bank")
}

impl LinkFactory {
    pub fn new(mode: &LinkMode, cells: &[Cell], consts: &PhysicsConstants<f64>) -> Result<Self> {
        let mut factory = Self {
            mode: mode.clone(),
            consts: *consts,
            nets: BTreeMap::new(),
        };
        let mut paths = Vec::new();
        match mode {
            LinkMode::PolicyFile { path } => paths.push(path.clone()),
            LinkMode::PolicyBank { .. } => {
                for c in cells {
                    for &l in &c.lengths {
                        paths.push(factory.bank_path(l, c.tc_int).expect("bank mode"));
                    }
                }
            }
            _ => {}
        }
        for p in paths {
            if let std::collections::btree_map::Entry::Vacant(slot) = factory.nets.entry(p) {
                let net = Mlp::load(slot.key())
                    .map_err(|e| Error::Config(format!("loading policy {}: {e}", slot.key().display())))?;
                slot.insert(Arc::new(net));
            }
        }
        Ok(factory)
    }

    fn bank_path(&self, length_km: f64, tc_int: f64) -> Option<PathBuf> {
        match &self.mode {
            LinkMode::PolicyBank { dir } => {
                let ratio = nearest_bank_ratio(tc_int / self.consts.tick(length_km));
                Some(dir.join(policy_file_name(length_km, ratio)))
            }
            _ => None,
        }
    }

    pub fn sources(&self, cell: &Cell) -> Vec<LinkSource> {
        cell.lengths
            .iter()
            .map(|&l| {
                let tau = self.consts.tick(l);
                let agent = |policy| {
                    LinkSource::Agent(Box::new(Agent::new(LinkConfig::new(l, cell.tc_int, &self.consts), policy)))
                };
                match &self.mode {
                    LinkMode::Synthetic {
                        f_mean,
                        mean_interval_ticks,
                        jitter,
                    } => LinkSource::Synthetic {
                        tau,
                        params: SyntheticParams {
                            mean_interval: mean_interval_ticks * tau,
                            f_mean: *f_mean,
                            jitter: *jitter,
                        },
                    },
                    LinkMode::Scripted => agent(Policy::Scripted),
                    LinkMode::PolicyFile { path } => agent(Policy::Greedy(self.nets[path].clone())),
                    LinkMode::PolicyBank { .. } => {
                        let path = self.bank_path(l, cell.tc_int).expect("bank mode");
                        agent(Policy::Greedy(self.nets[&path].clone()))
                    }
                }
            })
            .collect()
    }
}

/// Link `ℓ` of a trial draws from stream `ℓ` of the trial seed.
pub fn link_rngs(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n as u64)
        .map(|l| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(l);
            r
        })
        .collect()
}

/// Runs one trial of `cell` under `protocol`.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    cell: &Cell,
    protocol: Protocol,
    factory: &LinkFactory,
    consts: &PhysicsConstants<f64>,
    capacity: usize,
    sim_time: f64,
    seed: u64,
    keep_events: bool,
) -> Result<TrialResult> {
    let topology = ChainTopology::new(&cell.lengths, cell.tc_ext, consts)?.with_capacity(capacity);
    let mut sources = factory.sources(cell);
    let mut controller = Controller::new(protocol, &topology);
    let mut rngs = link_rngs(seed, topology.n());
    let events = main_loop(&topology, &mut sources, &mut controller, sim_time, &mut rngs)?;
    Ok(TrialResult::from_events(seed, events, keep_events))
}

/// `(mean, 95% half-width)`; the half-width is `None` below two samples.
pub fn confidence_interval(samples: &[f64]) -> (f64, Option<f64>) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(1.96 * var.sqrt() / (n as f64).sqrt()))
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub experiment: String,
    pub protocol: String,
    pub lengths: String,
    pub tc_int_s: f64,
    pub tc_ext_s: f64,
    pub mean_uskr_bps: f64,
    pub ci95_bps: Option<f64>,
    #[serde(rename = "pooled_F")]
    pub pooled_f: Option<f64>,
    pub pooled_interval_s: Option<f64>,
    pub mean_dwell_s: Option<f64>,
    pub n_trials: usize,
    pub n_deliveries_total: usize,
}

pub fn lengths_label(lengths: &[f64]) -> String {
    lengths.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("-")
}

impl SweepRow {
    pub fn aggregate(experiment: Experiment, protocol: Protocol, cell: &Cell, trials: &[TrialResult]) -> Self {
        let u: Vec<f64> = trials.iter().map(|t| t.u_skr).collect();
        let (mean, ci) = confidence_interval(&u);
        let n: usize = trials.iter().map(|t| t.deliveries).sum();
        let pooled = |f: &dyn Fn(&TrialResult) -> f64| (n > 0).then(|| trials.iter().map(f).sum::<f64>() / n as f64);
        Self {
            experiment: experiment.to_string(),
            protocol: protocol.to_string(),
            lengths: lengths_label(&cell.lengths),
            tc_int_s: cell.tc_int,
            tc_ext_s: cell.tc_ext,
            mean_uskr_bps: mean,
            ci95_bps: ci,
            pooled_f: pooled(&|t| t.mean_fidelity.map_or(0.0, |f| f * t.deliveries as f64)),
            pooled_interval_s: pooled(&|t| t.t_last),
            mean_dwell_s: pooled(&|t| t.dwell_sum),
            n_trials: trials.len(),
            n_deliveries_total: n,
        }
    }
}

/// Per-(cell, protocol) trials in output order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub protocol: Protocol,
    pub trials: Vec<TrialResult>,
    pub row: SweepRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.cells.iter().map(|c| c.row.clone()).collect()
    }
}

/// Runs the sweep on a pool of `workers` threads.
///
/// Trial `k` of every cell and protocol uses seed `base_seed + k`, so protocols
/// see identical link realizations. Any failed trial aborts the sweep.
pub fn run_sweep(cfg: &SweepConfig, consts: &PhysicsConstants<f64>, workers: usize) -> Result<SweepResult> {
    cfg.validate()?;
    consts.validate()?;
    let cells = cfg.cells(consts);
    let factory = LinkFactory::new(&cfg.link_mode, &cells, consts)?;
    let jobs: Vec<(usize, Protocol, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, _)| {
            cfg.protocols
                .iter()
                .flat_map(move |&p| (0..cfg.trials as u64).map(move |k| (i, p, cfg.base_seed.wrapping_add(k))))
        })
        .collect();
    info!(
        "{} sweep: {} cells × {} protocols × {} trials on {workers} workers",
        cfg.experiment,
        cells.len(),
        cfg.protocols.len(),
        cfg.trials
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<TrialResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, p, seed)| {
                run_trial(&cells[i], p, &factory, consts, cfg.capacity, cfg.sim_time, seed, cfg.record_events).map_err(|e| {
                    error!("trial with seed {seed} failed: {e}");
                    Error::Trial {
                        seed,
                        source: Box::new(e),
                    }
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut it = results.into_iter();
    let mut out = Vec::with_capacity(cells.len() * cfg.protocols.len());
    for cell in &cells {
        for &p in &cfg.protocols {
            let trials: Vec<TrialResult> = it.by_ref().take(cfg.trials).collect();
            let row = SweepRow::aggregate(cfg.experiment, p, cell, &trials);
            out.push(CellResult {
                cell: cell.clone(),
                protocol: p,
                trials,
                row,
            });
        }
    }
    Ok(SweepResult {
        config: cfg.clone(),
        cells: out,
    })
}

pub fn write_results_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    config: &'a SweepConfig,
    constants: &'a PhysicsConstants<f64>,
    seeds: [u64; 2],
    cells: usize,
    rows: usize,
}

/// Run manifest: full configuration, seed range and program version. No timestamps.
pub fn write_manifest(path: impl AsRef<Path>, result: &SweepResult, consts: &PhysicsConstants<f64>) -> Result<()> {
    let cfg = &result.config;
    let m = Manifest {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        constants: consts,
        seeds: [cfg.base_seed, cfg.base_seed.wrapping_add(cfg.trials as u64 - 1)],
        cells: result.cells.len() / cfg.protocols.len(),
        rows: result.cells.len(),
    };
    fs::write(path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct FigurePoint<'a> {
    figure: String,
    protocol: &'a str,
    lengths: &'a str,
    tc_int_s: f64,
    tc_ext_s: f64,
    value: Option<f64>,
}

/// Long-format plotting data, one row per (figure, series point).
///
/// Figures are named `<experiment>_<metric>` with metrics `uskr_bps`,
/// `pooled_F`, `pooled_interval_s` and `mean_dwell_s`.
pub fn write_figures_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        let metrics: [(&str, Option<f64>); 4] = [
            ("uskr_bps", Some(r.mean_uskr_bps)),
            ("pooled_F", r.pooled_f),
            ("pooled_interval_s", r.pooled_interval_s),
            ("mean_dwell_s", r.mean_dwell_s),
        ];
        for (metric, value) in metrics {
            w.serialize(FigurePoint {
                figure: format!("{}_{metric}", r.experiment),
                protocol: &r.protocol,
                lengths: &r.lengths,
                tc_int_s: r.tc_int_s,
                tc_ext_s: r.tc_ext_s,
                value,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct EventRow<'a> {
    trial: usize,
    protocol: &'a str,
    t_emit_s: f64,
    #[serde(rename = "F_e2e")]
    f_e2e: f64,
    age_s: f64,
    dwell_s: f64,
}

/// Per-event log of every recorded trial.
pub fn write_event_log(path: impl AsRef<Path>, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in &result.cells {
        let protocol = c.protocol.name();
        for (trial, t) in c.trials.iter().enumerate() {
            for e in &t.events {
                w.serialize(EventRow {
                    trial,
                    protocol,
                    t_emit_s: e.t_emit,
                    f_e2e: e.fidelity,
                    age_s: e.age,
                    dwell_s: e.dwell,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.csv`, `figures.csv` and `manifest.json` under `dir`.
pub fn write_sweep_outputs(dir: impl AsRef<Path>, result: &SweepResult, consts: &PhysicsConstants<f64>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let rows = result.rows();
    write_results_csv(dir.join("results.csv"), &rows)?;
    write_figures_csv(dir.join("figures.csv"), &rows)?;
    write_manifest(dir.join("manifest.json"), result, consts)?;
    if result.config.record_events {
        write_event_log(dir.join("events.csv"), result)?;
    }
    Ok(())
}
