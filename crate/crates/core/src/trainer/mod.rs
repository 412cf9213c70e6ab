//! REINFORCE training of link policies with two return streams.
//!
//! Each episode yields a terminal-fidelity return `G_F` (0 when nothing is
//! delivered) and, per step, the time-to-go `G_T`. Their batch means `J_F`
//! and `J_T` feed `u = (1 − H(J_F)) / J_T`; the two score-function gradients
//! are combined through `∂u/∂J_F` and `∂u/∂J_T` and applied with Adam.

mod adam;

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::Adam;

use crate::error::{domain, Error, Result};
use crate::link::{
    action_mask, env_step, greedy_action, sample_action, Action, Activation, AgentState, LinkConfig, Mask, Mlp,
    DEFAULT_F0,
};
use crate::link::policy::DEFAULT_SIZES;
use crate::physics::{entropy_unchecked, PhysicsConstants};

/// Fidelity below which the six-state key fraction `1 − H(F)` is negative.
pub const F_BOOT: f64 = 0.811;

pub const BANK_LENGTHS_KM: [f64; 2] = [5.0, 10.0];
pub const BANK_TC_RATIOS: [f64; 5] = [5.0, 10.0, 25.0, 50.0, 100.0];

/// Episodes per gradient-accumulation chunk. Fixed so sums do not depend on thread count.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub obs: [f64; 4],
    pub mask: Mask,
    pub action: usize,
    /// Episode time before the action, seconds.
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub steps: Vec<StepRecord>,
    /// Delivered fidelity, or 0.
    pub g_f: f64,
    /// Episode length, seconds.
    pub duration: f64,
}

impl EpisodeRecord {
    pub fn delivered(&self) -> bool {
        self.g_f > 0.0
    }

    /// `G_T` at step `k`: time remaining in the episode.
    pub fn time_to_go(&self, k: usize) -> f64 {
        self.duration - self.steps[k].elapsed
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub j_f: f64,
    /// Mean episode duration, seconds.
    pub j_t: f64,
    pub batch_size: usize,
    pub deliveries: usize,
}

impl BatchStats {
    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let n = records.len().max(1) as f64;
        Self {
            j_f: records.iter().map(|r| r.g_f).sum::<f64>() / n,
            j_t: records.iter().map(|r| r.duration).sum::<f64>() / n,
            batch_size: records.len(),
            deliveries: records.iter().filter(|r| r.delivered()).count(),
        }
    }

    /// Clamped utility at the batch means, bits per second.
    pub fn utility(&self) -> f64 {
        if !(self.j_t > 0.0) || !(self.j_f > 0.25) {
            return 0.0;
        }
        (1.0 - entropy_unchecked(self.j_f.min(1.0))).max(0.0) / self.j_t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub f_boot: f64,
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            iterations: 200,
            batch_size: 10_000,
            seed: 0,
            f_boot: F_BOOT,
            sizes: DEFAULT_SIZES.to_vec(),
            activation: Activation::Relu,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam decay rates must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Independent stream for one episode of one iteration.
pub fn episode_rng(seed: u64, iteration: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((iteration << 32) | episode);
    rng
}

/// Runs one episode under the sampled policy from an empty state.
pub fn run_episode<R: rand::Rng + ?Sized>(net: &Mlp, cfg: &LinkConfig, rng: &mut R) -> Result<EpisodeRecord> {
    let mut state = AgentState::new(0.0);
    let mut steps = Vec::new();
    loop {
        let mask = action_mask(&state, cfg);
        let obs = state.observation(cfg);
        let probs = net.forward(&obs, &mask)?.probs;
        let action = sample_action(&probs, &mask, rng);
        steps.push(StepRecord {
            obs,
            mask,
            action,
            elapsed: state.t,
        });
        let tr = env_step(&state, Action::from_index(action).expect("four actions"), cfg, rng)?;
        if tr.done {
            return Ok(EpisodeRecord {
                steps,
                g_f: tr.delivery.map_or(0.0, |d| d.fidelity),
                duration: tr.next.t,
            });
        }
        state = tr.next;
    }
}

/// Runs `batch_size` sampled episodes, episode `e` on stream `(iteration, e)`.
pub fn collect_batch(
    net: &Mlp,
    cfg: &LinkConfig,
    batch_size: usize,
    seed: u64,
    iteration: u64,
) -> Result<(Vec<EpisodeRecord>, BatchStats)> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let records = (0..batch_size as u64)
        .into_par_iter()
        .map(|e| run_episode(net, cfg, &mut episode_rng(seed, iteration, e)))
        .collect::<Result<Vec<_>>>()?;
    let stats = BatchStats::from_records(&records);
    Ok((records, stats))
}

/// `(∂u/∂J_F, ∂u/∂J_T)` for `u = (1 − H(J_F)) / J_T`, unclamped.
///
/// Below `f_boot` the time derivative is dropped so the policy first climbs in fidelity.
pub fn utility_coefficients(j_f: f64, j_t: f64, f_boot: f64) -> Result<(f64, f64)> {
    if !(j_f > 0.25 && j_f < 1.0) {
        return domain(format!("J_F must lie in (0.25, 1), got {j_f}"));
    }
    if !(j_t > 0.0) {
        return domain(format!("J_T must be positive, got {j_t}"));
    }
    let d_f = (3.0 * j_f / (1.0 - j_f)).log2() / j_t;
    let d_t = if j_f < f_boot {
        0.0
    } else {
        -(1.0 - entropy_unchecked(j_f)) / (j_t * j_t)
    };
    Ok((d_f, d_t))
}

pub fn utility_gradient_combine(grad_jf: &[f64], grad_jt: &[f64], stats: &BatchStats, f_boot: f64) -> Result<Vec<f64>> {
    if grad_jf.len() != grad_jt.len() {
        return Err(Error::Shape("gradient streams differ in length".into()));
    }
    let (a, b) = utility_coefficients(stats.j_f, stats.j_t, f_boot)?;
    Ok(grad_jf.iter().zip(grad_jt).map(|(f, t)| a * f + b * t).collect())
}

/// Score-function estimates of `∇J_F` and `∇J_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradients {
    pub jf: Vec<f64>,
    pub jt: Vec<f64>,
}

/// Weighted REINFORCE estimates with a mean baseline for `G_F` and a
/// per-step-index mean baseline for `G_T`.
///
/// `weights` are per-episode probabilities summing to 1; a sampled batch uses `1/B` each.
pub fn score_gradients(net: &Mlp, records: &[EpisodeRecord], weights: &[f64]) -> Result<ScoreGradients> {
    if records.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if weights.len() != records.len() {
        return Err(Error::Shape("one weight per episode required".into()));
    }
    let b_f: f64 = records.iter().zip(weights).map(|(r, w)| w * r.g_f).sum::<f64>() / weights.iter().sum::<f64>();
    let longest = records.iter().map(|r| r.steps.len()).max().unwrap_or(0);
    let mut num = vec![0.0; longest];
    let mut den = vec![0.0; longest];
    for (r, w) in records.iter().zip(weights) {
        for k in 0..r.steps.len() {
            num[k] += w * r.time_to_go(k);
            den[k] += w;
        }
    }
    let b_t: Vec<f64> = num.iter().zip(&den).map(|(n, d)| n / d).collect();

    let len = net.params().len();
    let partials = records
        .par_chunks(CHUNK)
        .zip(weights.par_chunks(CHUNK))
        .map(|(recs, ws)| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut gf = vec![0.0; len];
            let mut gt = vec![0.0; len];
            for (r, &w) in recs.iter().zip(ws) {
                let adv_f = w * (r.g_f - b_f);
                for (k, s) in r.steps.iter().enumerate() {
                    let adv_t = w * (r.time_to_go(k) - b_t[k]);
                    if adv_f == 0.0 && adv_t == 0.0 {
                        continue;
                    }
                    let cache = net.forward(&s.obs, &s.mask)?;
                    if !(cache.probs[s.action] > 0.0) {
                        return Err(Error::Numerical(format!("taken action {} has zero probability", s.action)));
                    }
                    net.accumulate_log_prob_grad(&cache, &s.mask, s.action, adv_f, &mut gf);
                    net.accumulate_log_prob_grad(&cache, &s.mask, s.action, adv_t, &mut gt);
                }
            }
            Ok((gf, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut jf = vec![0.0; len];
    let mut jt = vec![0.0; len];
    for (gf, gt) in partials {
        jf.iter_mut().zip(&gf).for_each(|(a, b)| *a += b);
        jt.iter_mut().zip(&gt).for_each(|(a, b)| *a += b);
    }
    Ok(ScoreGradients { jf, jt })
}

/// The direction actually followed for one batch.
///
/// Outside the domain of `u` the fidelity stream alone is followed.
pub fn ascent_direction(grads: &ScoreGradients, stats: &BatchStats, f_boot: f64) -> Result<Vec<f64>> {
    match utility_gradient_combine(&grads.jf, &grads.jt, stats, f_boot) {
        Ok(g) => Ok(g),
        Err(Error::Domain(_)) => Ok(grads.jf.clone()),
        Err(e) => Err(e),
    }
}

/// One REINFORCE update of `net` from a sampled batch.
pub fn reinforce_step(net: &mut Mlp, records: &[EpisodeRecord], stats: &BatchStats, opt: &mut Adam, f_boot: f64) -> Result<()> {
    let w = 1.0 / records.len() as f64;
    let grads = score_gradients(net, records, &vec![w; records.len()])?;
    let dir = ascent_direction(&grads, stats, f_boot)?;
    if dir.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite policy gradient".into()));
    }
    opt.ascend(net.params_mut(), &dir);
    Ok(())
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    #[serde(rename = "J_F")]
    pub j_f: f64,
    /// Mean episode duration in ticks.
    #[serde(rename = "J_T")]
    pub j_t: f64,
    /// Utility at the batch means, bits per tick.
    pub utility: f64,
}

impl IterationTrace {
    fn new(iteration: usize, stats: &BatchStats, tau: f64) -> Self {
        Self {
            iteration,
            j_f: stats.j_f,
            j_t: stats.j_t / tau,
            utility: stats.utility() * tau,
        }
    }
}

/// Trains a fresh network on `cfg`; returns it with the per-iteration trace.
pub fn train(cfg: &LinkConfig, tc: &TrainerConfig) -> Result<(Mlp, Vec<IterationTrace>)> {
    cfg.validate()?;
    tc.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    init_rng.set_stream(u64::MAX);
    let mut net = Mlp::random(&tc.sizes, tc.activation, &mut init_rng)?;
    let mut opt = Adam::new(net.params().len(), tc.learning_rate, tc.beta1, tc.beta2);
    let mut trace = Vec::with_capacity(tc.iterations);
    for it in 0..tc.iterations {
        let (records, stats) = collect_batch(&net, cfg, tc.batch_size, tc.seed, it as u64)?;
        trace.push(IterationTrace::new(it, &stats, cfg.tau));
        reinforce_step(&mut net, &records, &stats, &mut opt, tc.f_boot)?;
        if it % 10 == 0 {
            info!(
                "iter {it}: J_F {:.4} J_T {:.2} ticks, utility {:.4} bits/tick",
                stats.j_f,
                stats.j_t / cfg.tau,
                stats.utility() * cfg.tau
            );
        }
    }
    Ok((net, trace))
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[IterationTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Greedy-policy delivery statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub deliveries: usize,
    pub mean_fidelity: Option<f64>,
    pub min_fidelity: Option<f64>,
    /// Total episode time per delivery, in ticks.
    pub mean_interval_ticks: Option<f64>,
}

impl EvalStats {
    pub fn delivery_rate(&self) -> f64 {
        self.deliveries as f64 / self.episodes.max(1) as f64
    }

    /// Clamped utility at the evaluation moments, bits per tick.
    pub fn utility_per_tick(&self) -> f64 {
        match (self.mean_fidelity, self.mean_interval_ticks) {
            (Some(f), Some(i)) => (1.0 - entropy_unchecked(f)).max(0.0) / i,
            _ => 0.0,
        }
    }
}

/// Runs `episodes` back-to-back greedy episodes.
pub fn evaluate_greedy(net: &Mlp, cfg: &LinkConfig, episodes: usize, seed: u64) -> Result<EvalStats> {
    let results = (0..episodes as u64)
        .into_par_iter()
        .map(|e| -> Result<(Option<f64>, f64)> {
            let mut rng = episode_rng(seed, u32::MAX as u64, e);
            let mut state = AgentState::new(0.0);
            loop {
                let mask = action_mask(&state, cfg);
                let probs = net.forward(&state.observation(cfg), &mask)?.probs;
                let action = Action::from_index(greedy_action(&probs, &mask)).expect("four actions");
                let tr = env_step(&state, action, cfg, &mut rng)?;
                if tr.done {
                    return Ok((tr.delivery.map(|d| d.fidelity), tr.next.t));
                }
                state = tr.next;
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let total_time: f64 = results.iter().map(|r| r.1).sum();
    let delivered: Vec<f64> = results.iter().filter_map(|r| r.0).collect();
    let n = delivered.len();
    Ok(EvalStats {
        episodes,
        deliveries: n,
        mean_fidelity: (n > 0).then(|| delivered.iter().sum::<f64>() / n as f64),
        min_fidelity: delivered.iter().copied().reduce(f64::min),
        mean_interval_ticks: (n > 0).then(|| total_time / cfg.tau / n as f64),
    })
}

/// The ten bank configurations `(L km, Tc_int / τ)`.
pub fn bank_configs() -> Vec<(f64, f64)> {
    BANK_LENGTHS_KM
        .iter()
        .flat_map(|&l| BANK_TC_RATIOS.iter().map(move |&r| (l, r)))
        .collect()
}

pub fn policy_file_name(length_km: f64, tc_int_ratio: f64) -> String {
    format!("policy_L{length_km}_tc{tc_int_ratio}.bin")
}

pub fn trace_file_name(length_km: f64, tc_int_ratio: f64) -> String {
    format!("trace_L{length_km}_tc{tc_int_ratio}.csv")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub length_km: f64,
    pub tc_int_ratio: f64,
    pub policy_path: PathBuf,
    pub trace_path: PathBuf,
    pub converged: bool,
}

/// Whether the last window of the trace beats the first, by median.
pub fn trace_improved(trace: &[IterationTrace], window: usize) -> bool {
    if trace.len() < 2 * window || window == 0 {
        return !trace.is_empty();
    }
    let med = |s: &[IterationTrace]| median(s.iter().map(|r| r.utility).collect());
    med(&trace[trace.len() - window..]) >= med(&trace[..window])
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Trains one policy per `(L, Tc_int/τ)` and writes weights plus traces to `out_dir`.
pub fn train_policy_bank(
    configs: &[(f64, f64)],
    f0: f64,
    consts: &PhysicsConstants<f64>,
    tc: &TrainerConfig,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<BankEntry>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(configs.len());
    for &(length_km, ratio) in configs {
        let cfg = LinkConfig::with_ratio(length_km, ratio, consts).with_f0(f0);
        let (net, trace) = train(&cfg, tc)?;
        let policy_path = out_dir.join(policy_file_name(length_km, ratio));
        let trace_path = out_dir.join(trace_file_name(length_km, ratio));
        net.save(&policy_path)?;
        write_trace(&trace_path, &trace)?;
        let converged = trace_improved(&trace, 20.min(tc.iterations / 2));
        if !converged {
            warn!(
                "policy L={length_km} km, Tc_int={ratio}τ did not improve; trace at {}",
                trace_path.display()
            );
        }
        entries.push(BankEntry {
            length_km,
            tc_int_ratio: ratio,
            policy_path,
            trace_path,
            converged,
        });
    }
    Ok(entries)
}

/// Default link configuration for training: 10 km, `Tc_int = 50 τ`, `F0 = 0.94`.
pub fn default_link_config(consts: &PhysicsConstants<f64>) -> LinkConfig {
    LinkConfig::with_ratio(10.0, 50.0, consts).with_f0(DEFAULT_F0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::entropy;

    fn cfg() -> LinkConfig {
        default_link_config(&PhysicsConstants::default())
    }

    fn small_net(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::random(&[4, 8, 4], Activation::Tanh, &mut rng).unwrap()
    }

    #[test]
    fn bootstrap_threshold_is_the_key_fraction_root() {
        let (mut lo, mut hi) = (0.75, 0.9);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if 1.0 - entropy(mid).unwrap() < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((F_BOOT - lo).abs() < 2e-3, "root {lo}");
    }

    #[test]
    fn coefficients_match_finite_differences() {
        let tau = 50e-6;
        let (jf, jt) = (0.9575, 7.36 * tau);
        let u = |f: f64, t: f64| (1.0 - entropy(f).unwrap()) / t;
        let (a, b) = utility_coefficients(jf, jt, F_BOOT).unwrap();
        let hf = 1e-6;
        let ht = 1e-6 * jt;
        let fd_f = (u(jf + hf, jt) - u(jf - hf, jt)) / (2.0 * hf);
        let fd_t = (u(jf, jt + ht) - u(jf, jt - ht)) / (2.0 * ht);
        assert!(((a - fd_f) / fd_f).abs() < 1e-6, "{a} vs {fd_f}");
        assert!(((b - fd_t) / fd_t).abs() < 1e-6, "{b} vs {fd_t}");
    }

    #[test]
    fn below_threshold_ignores_time_stream() {
        let stats = BatchStats {
            j_f: 0.7,
            j_t: 1e-3,
            batch_size: 1,
            deliveries: 1,
        };
        let g = utility_gradient_combine(&[0.0, 0.0], &[5.0, -3.0], &stats, F_BOOT).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let g = utility_gradient_combine(&[1.0, 0.0], &[5.0, -3.0], &stats, F_BOOT).unwrap();
        let (a, _) = utility_coefficients(0.7, 1e-3, F_BOOT).unwrap();
        assert_eq!(g, vec![a, 0.0]);
        assert!(a > 0.0);
    }

    #[test]
    fn zero_gradients_combine_to_zero() {
        let stats = BatchStats {
            j_f: 0.95,
            j_t: 1e-3,
            batch_size: 1,
            deliveries: 1,
        };
        assert_eq!(utility_gradient_combine(&[0.0; 3], &[0.0; 3], &stats, F_BOOT).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn out_of_domain_j_f_is_an_error() {
        for jf in [0.0, 0.25, 1.0, f64::NAN] {
            assert!(matches!(utility_coefficients(jf, 1.0, F_BOOT), Err(Error::Domain(_))));
        }
        let stats = BatchStats {
            j_f: 0.0,
            j_t: 1.0,
            batch_size: 1,
            deliveries: 0,
        };
        let g = ScoreGradients {
            jf: vec![1.0, 2.0],
            jt: vec![3.0, 4.0],
        };
        assert_eq!(ascent_direction(&g, &stats, F_BOOT).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn single_episode_batch_stats() {
        let net = small_net(1);
        let (recs, stats) = collect_batch(&net, &cfg(), 1, 5, 0).unwrap();
        assert_eq!(stats.batch_size, 1);
        assert_eq!(stats.j_f, recs[0].g_f);
        assert_eq!(stats.j_t, recs[0].duration);
    }

    #[test]
    fn batches_are_reproducible() {
        let net = small_net(2);
        let a = collect_batch(&net, &cfg(), 50, 9, 3).unwrap().0;
        let b = collect_batch(&net, &cfg(), 50, 9, 3).unwrap().0;
        assert_eq!(a, b);
        let c = collect_batch(&net, &cfg(), 50, 9, 4).unwrap().0;
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_policy_delivers_sometimes() {
        let net = Mlp::zeros(&[4, 8, 4], Activation::Relu).unwrap();
        let (recs, stats) = collect_batch(&net, &cfg(), 500, 1, 0).unwrap();
        assert!(stats.deliveries > 0);
        for r in &recs {
            assert!(r.g_f == 0.0 || r.g_f >= DEFAULT_F0);
            for k in 0..r.steps.len() {
                assert!(r.time_to_go(k) >= 0.0);
            }
        }
    }

    #[test]
    fn masked_actions_never_taken() {
        let net = small_net(3);
        let (recs, _) = collect_batch(&net, &cfg(), 200, 2, 0).unwrap();
        for s in recs.iter().flat_map(|r| &r.steps) {
            assert!(s.mask[s.action]);
            let p = net.forward(&s.obs, &s.mask).unwrap().probs;
            for j in 0..4 {
                if !s.mask[j] {
                    assert_eq!(p[j], 0.0);
                }
            }
        }
    }

    fn handmade(g_f: f64, actions: &[usize]) -> EpisodeRecord {
        let mask = [true, false, false, true];
        EpisodeRecord {
            steps: actions
                .iter()
                .enumerate()
                .map(|(k, &a)| StepRecord {
                    obs: [0.95, 0.0, 1.0, 0.1 * k as f64],
                    mask,
                    action: a,
                    elapsed: k as f64,
                })
                .collect(),
            g_f,
            duration: actions.len() as f64,
        }
    }

    #[test]
    fn identical_episodes_leave_weights_unchanged() {
        let mut net = small_net(4);
        let before = net.clone();
        let recs = vec![handmade(0.95, &[0, 3]); 2];
        let stats = BatchStats::from_records(&recs);
        let mut opt = Adam::new(net.params().len(), 1e-3, 0.9, 0.999);
        reinforce_step(&mut net, &recs, &stats, &mut opt, F_BOOT).unwrap();
        assert_eq!(net, before);
        let one = vec![handmade(0.95, &[0, 3])];
        let mut net1 = before.clone();
        let mut opt1 = Adam::new(net.params().len(), 1e-3, 0.9, 0.999);
        reinforce_step(&mut net1, &one, &BatchStats::from_records(&one), &mut opt1, F_BOOT).unwrap();
        assert_eq!(net1, net);
    }

    #[test]
    fn score_gradient_matches_surrogate_finite_difference() {
        // Surrogate S(θ) = Σ_e w_e Σ_k A_ek log π_θ(a_ek | s_ek) with advantages frozen.
        let net = Mlp::random(&[4, 2, 4], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let recs = vec![handmade(0.97, &[0, 3]), handmade(0.0, &[0, 0]), handmade(0.95, &[3])];
        let w = vec![0.5, 0.3, 0.2];
        let g = score_gradients(&net, &recs, &w).unwrap();
        let b_f: f64 = recs.iter().zip(&w).map(|(r, w)| w * r.g_f).sum();
        let surrogate = |p: &Mlp| -> f64 {
            let mut s = 0.0;
            for (r, wi) in recs.iter().zip(&w) {
                for st in &r.steps {
                    let pr = p.forward(&st.obs, &st.mask).unwrap().probs;
                    s += wi * (r.g_f - b_f) * pr[st.action].ln();
                }
            }
            s
        };
        let h = 1e-6;
        for i in 0..net.params().len() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (surrogate(&plus) - surrogate(&minus)) / (2.0 * h);
            assert!((fd - g.jf[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "param {i}: {fd} vs {}", g.jf[i]);
        }
    }

    #[test]
    fn greedy_scripted_like_policy_delivers_above_target() {
        // Large CONSUME bias: the greedy policy delivers as soon as allowed.
        let mut net = Mlp::zeros(&[4, 4], Activation::Relu).unwrap();
        let sizes = net.sizes().to_vec();
        let bias_offset = sizes[0] * sizes[1];
        net.params_mut()[bias_offset + Action::Consume.index()] = 5.0;
        net.params_mut()[bias_offset + Action::Purify.index()] = 1.0;
        let ev = evaluate_greedy(&net, &cfg(), 2000, 3).unwrap();
        assert!(ev.deliveries > 1900);
        assert!(ev.min_fidelity.unwrap() >= DEFAULT_F0);
        let p = cfg().p_gen;
        let want = 1.0 / p;
        assert!((ev.mean_interval_ticks.unwrap() - want).abs() < 0.1 * want);
    }

    #[test]
    fn bank_naming_and_count() {
        assert_eq!(bank_configs().len(), 10);
        assert_eq!(policy_file_name(10.0, 50.0), "policy_L10_tc50.bin");
    }

    #[test]
    fn bank_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let tc = TrainerConfig {
            iterations: 3,
            batch_size: 64,
            sizes: vec![4, 8, 4],
            ..TrainerConfig::default()
        };
        let consts = PhysicsConstants::default();
        let a = train_policy_bank(&[(10.0, 25.0)], DEFAULT_F0, &consts, &tc, dir.path().join("a")).unwrap();
        let b = train_policy_bank(&[(10.0, 25.0)], DEFAULT_F0, &consts, &tc, dir.path().join("b")).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(fs::read(&a[0].policy_path).unwrap(), fs::read(&b[0].policy_path).unwrap());
        assert_eq!(fs::read(&a[0].trace_path).unwrap(), fs::read(&b[0].trace_path).unwrap());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
