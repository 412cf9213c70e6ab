//! Memoryless stand-in for a trained link agent, matched to two delivery moments.

use rand::Rng;

use super::env::Delivery;

/// Mean delivery fidelity of the reference link-layer operating point.
pub const REFERENCE_F_MEAN: f64 = 0.9575;
/// Mean inter-delivery interval of the reference operating point, in ticks.
pub const REFERENCE_INTERVAL_TICKS: f64 = 7.36;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    /// Mean time between deliveries, seconds. `f64::INFINITY` never emits.
    pub mean_interval: f64,
    pub f_mean: f64,
    /// Half-width of a uniform fidelity jitter around `f_mean`; 0 disables it.
    pub jitter: f64,
}

impl SyntheticParams {
    pub fn reference(tau: f64) -> Self {
        Self {
            mean_interval: REFERENCE_INTERVAL_TICKS * tau,
            f_mean: REFERENCE_F_MEAN,
            jitter: 0.0,
        }
    }

    /// Per-tick emission probability.
    pub fn emit_probability(&self, tau: f64) -> f64 {
        (tau / self.mean_interval).clamp(0.0, 1.0)
    }
}

/// One heralding tick of the synthetic source: emits with probability `tau / mean_interval`.
pub fn synthetic_source_step<R: Rng + ?Sized>(now: f64, tau: f64, params: &SyntheticParams, rng: &mut R) -> Option<Delivery> {
    debug_assert!(params.mean_interval > 0.0);
    let hit = rng.gen::<f64>() < params.emit_probability(tau);
    if !hit {
        return None;
    }
    let fidelity = if params.jitter > 0.0 {
        params.f_mean + rng.gen_range(-params.jitter..=params.jitter)
    } else {
        params.f_mean
    };
    Some(Delivery { fidelity, time: now })
}
