//! Sweep configuration, experiment presets, and the flat `key = value` file format.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::{REFERENCE_F_MEAN, REFERENCE_INTERVAL_TICKS};
use crate::network::Protocol;
use crate::physics::PhysicsConstants;

pub const DEFAULT_TRIALS: usize = 200;
pub const DEFAULT_SIM_TIME: f64 = 5.0;
/// Coherence-time grid shared by the matched, off-diagonal and bottleneck presets, in link ticks.
pub const TC_RATIOS: [f64; 5] = [5.0, 10.0, 25.0, 50.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Matched,
    Offdiag,
    Bottleneck,
    Relaxed,
    /// Coherence times between the collapsed and relaxed regimes.
    Intermediate,
    /// A single configuration from `simulate`.
    Single,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Matched => "matched",
            Experiment::Offdiag => "offdiag",
            Experiment::Bottleneck => "bottleneck",
            Experiment::Relaxed => "relaxed",
            Experiment::Intermediate => "intermediate",
            Experiment::Single => "single",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "matched" => Experiment::Matched,
            "offdiag" | "off-diagonal" => Experiment::Offdiag,
            "bottleneck" => Experiment::Bottleneck,
            "relaxed" => Experiment::Relaxed,
            "intermediate" => Experiment::Intermediate,
            "single" => Experiment::Single,
            other => return Err(Error::Config(format!("unknown experiment {other:?}"))),
        })
    }
}

/// Where link deliveries come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum LinkMode {
    /// Memoryless source; the interval is in units of each link's own tick.
    Synthetic {
        f_mean: f64,
        mean_interval_ticks: f64,
        jitter: f64,
    },
    /// Rule-based agent in the link environment.
    Scripted,
    /// One weight file for every link.
    PolicyFile { path: PathBuf },
    /// A trained bank; each link loads the file for its length and the nearest `Tc_int/τ`.
    PolicyBank { dir: PathBuf },
}

impl LinkMode {
    pub fn reference_synthetic() -> Self {
        LinkMode::Synthetic {
            f_mean: REFERENCE_F_MEAN,
            mean_interval_ticks: REFERENCE_INTERVAL_TICKS,
            jitter: 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LinkMode::Synthetic { .. } => "synthetic",
            LinkMode::Scripted => "scripted",
            LinkMode::PolicyFile { .. } | LinkMode::PolicyBank { .. } => "policy",
        }
    }
}

/// Everything a sweep needs.
///
/// Cells: for each topology, Tc_ext runs over `tc_ext` (or `tc_ext_ratios` times
/// the topology's slowest tick when non-empty). An empty `tc_int` list means
/// matched memories, `Tc_int = Tc_ext`; otherwise the full cross product is run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub experiment: Experiment,
    pub topologies: Vec<Vec<f64>>,
    pub tc_ext: Vec<f64>,
    pub tc_ext_ratios: Vec<f64>,
    pub tc_int: Vec<f64>,
    pub protocols: Vec<Protocol>,
    pub link_mode: LinkMode,
    pub trials: usize,
    pub sim_time: f64,
    pub base_seed: u64,
    pub capacity: usize,
    /// Keep per-event records in trial results.
    #[serde(default)]
    pub record_events: bool,
}

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub lengths: Vec<f64>,
    pub tc_int: f64,
    pub tc_ext: f64,
}

pub fn symmetric(n: usize, length_km: f64) -> Vec<f64> {
    vec![length_km; n]
}

/// Four-link 5 km chain with a 10 km link at 1-based `position`.
pub fn bottleneck(position: usize) -> Vec<f64> {
    let mut v = vec![5.0; 4];
    v[position - 1] = 10.0;
    v
}

fn bottlenecks() -> Vec<Vec<f64>> {
    (1..=4).map(bottleneck).collect()
}

impl SweepConfig {
    pub fn preset(experiment: Experiment) -> Self {
        let us = |v: &[f64]| v.iter().map(|x| x * 1e-6).collect::<Vec<_>>();
        let mut cfg = Self {
            experiment,
            topologies: vec![symmetric(4, 10.0)],
            tc_ext: Vec::new(),
            tc_ext_ratios: Vec::new(),
            tc_int: Vec::new(),
            protocols: Protocol::ALL.to_vec(),
            link_mode: LinkMode::reference_synthetic(),
            trials: DEFAULT_TRIALS,
            sim_time: DEFAULT_SIM_TIME,
            base_seed: 0,
            capacity: crate::buffer::DEFAULT_CAPACITY,
            record_events: false,
        };
        match experiment {
            Experiment::Matched => {
                cfg.topologies = vec![symmetric(4, 5.0), symmetric(4, 10.0)];
                cfg.topologies.extend(bottlenecks());
                cfg.tc_ext_ratios = TC_RATIOS.to_vec();
            }
            Experiment::Offdiag => {
                let grid = us(&[250.0, 500.0, 1250.0, 2500.0, 5000.0]);
                cfg.tc_ext = grid.clone();
                cfg.tc_int = grid;
            }
            Experiment::Bottleneck => {
                cfg.topologies = bottlenecks();
                cfg.tc_ext_ratios = TC_RATIOS.to_vec();
            }
            Experiment::Relaxed => {
                cfg.topologies = vec![symmetric(4, 5.0), symmetric(4, 10.0)];
                cfg.topologies.extend(bottlenecks());
                cfg.tc_ext = vec![0.5, 2.0];
            }
            Experiment::Intermediate => {
                cfg.tc_ext_ratios = vec![250.0, 1000.0, 2500.0];
            }
            Experiment::Single => {
                cfg.tc_ext = vec![us(&[1250.0])[0]];
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.topologies.is_empty() || self.topologies.iter().any(Vec::is_empty) {
            return Err(Error::Config("every topology needs at least one link".into()));
        }
        if self.topologies.iter().flatten().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::Config("link lengths must be positive".into()));
        }
        if self.tc_ext.is_empty() == self.tc_ext_ratios.is_empty() {
            return Err(Error::Config("give exactly one of tc_ext_s and tc_ext_ratios".into()));
        }
        if self.tc_ext.iter().chain(&self.tc_ext_ratios).chain(&self.tc_int).any(|x| !(*x > 0.0)) {
            return Err(Error::Config("coherence times must be positive".into()));
        }
        if self.protocols.is_empty() {
            return Err(Error::Config("no protocols selected".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.sim_time > 0.0) {
            return Err(Error::Config("sim_time must be positive".into()));
        }
        if self.capacity == 0 {
            return Err(Error::Config("capacity must be at least 1".into()));
        }
        if let LinkMode::Synthetic {
            f_mean,
            mean_interval_ticks,
            jitter,
        } = self.link_mode
        {
            if !(f_mean - jitter > 0.25 && f_mean + jitter <= 1.0) || jitter < 0.0 {
                return Err(Error::Config(format!("synthetic fidelity {f_mean} ± {jitter} leaves (0.25, 1]")));
            }
            if !(mean_interval_ticks > 0.0) {
                return Err(Error::Config("mean_interval_ticks must be positive".into()));
            }
        }
        Ok(())
    }

    /// Grid points in output order.
    pub fn cells(&self, consts: &PhysicsConstants<f64>) -> Vec<Cell> {
        let mut cells = Vec::new();
        for lengths in &self.topologies {
            let tau_max = lengths.iter().map(|&l| consts.tick(l)).fold(0.0, f64::max);
            let ext: Vec<f64> = if self.tc_ext_ratios.is_empty() {
                self.tc_ext.clone()
            } else {
                self.tc_ext_ratios.iter().map(|r| r * tau_max).collect()
            };
            if self.tc_int.is_empty() {
                for &tc in &ext {
                    cells.push(Cell {
                        lengths: lengths.clone(),
                        tc_int: tc,
                        tc_ext: tc,
                    });
                }
            } else {
                for &tc_int in &self.tc_int {
                    for &tc_ext in &ext {
                        cells.push(Cell {
                            lengths: lengths.clone(),
                            tc_int,
                            tc_ext,
                        });
                    }
                }
            }
        }
        cells
    }

    /// Applies a flat config file on top of `self`.
    ///
    /// One `key = value` per line; `#` starts a comment. Lists are comma
    /// separated, topologies separated by `;`, durations take `s`, `ms`, `us`
    /// or `µs` suffixes (bare numbers are seconds).
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut f_mean = None;
        let mut interval = None;
        let mut jitter = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let at = |e: Error| Error::Config(format!("line {}: {key}: {e}", no + 1));
            match key {
                "experiment" => self.experiment = value.parse().map_err(at)?,
                "topologies" | "lengths" => {
                    self.topologies = value
                        .split(';')
                        .filter(|s| !s.trim().is_empty())
                        .map(parse_lengths)
                        .collect::<Result<_>>()
                        .map_err(at)?
                }
                "tc_ext_s" | "tc_ext" => {
                    self.tc_ext = parse_list(value, parse_duration).map_err(at)?;
                    self.tc_ext_ratios.clear();
                }
                "tc_ext_ratios" => {
                    self.tc_ext_ratios = parse_list(value, parse_f64).map_err(at)?;
                    self.tc_ext.clear();
                }
                "tc_int_s" | "tc_int" => {
                    self.tc_int = if value.eq_ignore_ascii_case("matched") {
                        Vec::new()
                    } else {
                        parse_list(value, parse_duration).map_err(at)?
                    }
                }
                "protocols" => self.protocols = parse_list(value, |s| s.parse()).map_err(at)?,
                "link_mode" => {
                    self.link_mode = match value {
                        "synthetic" => LinkMode::reference_synthetic(),
                        "scripted" => LinkMode::Scripted,
                        "policy" => match &self.link_mode {
                            m @ (LinkMode::PolicyFile { .. } | LinkMode::PolicyBank { .. }) => m.clone(),
                            _ => LinkMode::PolicyBank { dir: PathBuf::from("policies") },
                        },
                        other => return Err(at(Error::Config(format!("unknown link mode {other:?}")))),
                    }
                }
                "policy" => self.link_mode = LinkMode::PolicyFile { path: value.into() },
                "policy_dir" => self.link_mode = LinkMode::PolicyBank { dir: value.into() },
                "f_mean" => f_mean = Some(parse_f64(value).map_err(at)?),
                "mean_interval_ticks" => interval = Some(parse_f64(value).map_err(at)?),
                "jitter" => jitter = Some(parse_f64(value).map_err(at)?),
                "trials" => self.trials = parse_usize(value).map_err(at)?,
                "sim_time_s" | "sim_time" => self.sim_time = parse_duration(value).map_err(at)?,
                "seed" | "base_seed" => {
                    self.base_seed = value.parse().map_err(|_| at(Error::Config(format!("bad integer {value:?}"))))?
                }
                "capacity" => self.capacity = parse_usize(value).map_err(at)?,
                "record_events" => self.record_events = parse_bool(value).map_err(at)?,
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", no + 1))),
            }
        }
        if f_mean.is_some() || interval.is_some() || jitter.is_some() {
            let (f0, i0, j0) = match self.link_mode {
                LinkMode::Synthetic {
                    f_mean,
                    mean_interval_ticks,
                    jitter,
                } => (f_mean, mean_interval_ticks, jitter),
                _ => return Err(Error::Config("f_mean, mean_interval_ticks and jitter need link_mode = synthetic".into())),
            };
            self.link_mode = LinkMode::Synthetic {
                f_mean: f_mean.unwrap_or(f0),
                mean_interval_ticks: interval.unwrap_or(i0),
                jitter: jitter.unwrap_or(j0),
            };
        }
        Ok(())
    }
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(f).collect()
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Config(format!("bad number {s:?}")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Config(format!("bad count {s:?}")))
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::Config(format!("bad flag {other:?}"))),
    }
}

/// Comma-separated link lengths in km.
pub fn parse_lengths(s: &str) -> Result<Vec<f64>> {
    let v = parse_list(s, parse_f64)?;
    if v.is_empty() {
        return Err(Error::Config("empty topology".into()));
    }
    Ok(v)
}

/// Seconds from `"250us"`, `"1.25ms"`, `"2s"`, or a bare number of seconds.
pub fn parse_duration(s: &str) -> Result<f64> {
    let s = s.trim();
    let (num, scale) = [("µs", 1e-6), ("us", 1e-6), ("ms", 1e-3), ("s", 1.0)]
        .iter()
        .find_map(|(suffix, scale)| s.strip_suffix(suffix).map(|n| (n, *scale)))
        .unwrap_or((s, 1.0));
    let v = parse_f64(num)?;
    Ok(v * scale)
}
