//! Werner-state mathematics.
//!
//! Every function here is pure and generic over the scalar type, so the same
//! code runs in `f32` for quick scans and `f64` for the simulator. A Werner
//! state is fully described by its fidelity `F` to `|Φ+⟩`; the equivalent
//! Werner parameter `f = (4F − 1)/3` turns swapping into plain multiplication,
//! which the tests use as an independent oracle.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Scalar type accepted by the physics layer.
pub trait Real: Float + FromPrimitive + Debug + Send + Sync + 'static {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }
}

impl<T> Real for T where T: Float + FromPrimitive + Debug + Send + Sync + 'static {}

/// Fidelity of the maximally mixed two-qubit state.
pub fn mixed<T: Real>() -> T {
    T::lit(0.25)
}

/// Fixed physical constants of the fiber links and the application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConstants<T> {
    /// Fiber attenuation length, km.
    pub attenuation_length_km: T,
    /// Speed of light in fiber, km/s.
    pub fiber_speed_km_s: T,
    /// Coupling/loss factor applied to the generation probability.
    pub coupling: T,
    /// Six-state QKD fidelity floor.
    pub f_min: T,
}

impl<T: Real> Default for PhysicsConstants<T> {
    fn default() -> Self {
        Self {
            attenuation_length_km: T::lit(22.0),
            fiber_speed_km_s: T::lit(200_000.0),
            coupling: T::lit(0.9),
            f_min: T::lit(0.81),
        }
    }
}

impl<T: Real> PhysicsConstants<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.attenuation_length_km > T::zero()
            && self.fiber_speed_km_s > T::zero()
            && self.coupling > T::zero()
            && self.coupling <= T::one()
            && self.f_min > mixed()
            && self.f_min < T::one();
        if ok {
            Ok(())
        } else {
            domain(format!("physics constants out of range: {self:?}"))
        }
    }

    /// Heralding latency `L / c_fiber` of a link, seconds.
    pub fn tick(&self, length_km: T) -> T {
        length_km / self.fiber_speed_km_s
    }
}

/// Werner parameter `f = (4F − 1)/3`; swapping multiplies these.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct WernerParam<T>(pub T);

impl<T: Real> WernerParam<T> {
    pub fn from_fidelity(fidelity: T) -> Self {
        Self((T::lit(4.0) * fidelity - T::one()) / T::lit(3.0))
    }

    pub fn fidelity(self) -> T {
        mixed::<T>() + T::lit(0.75) * self.0
    }
}

/// Depolarizing decay of a stored Werner state over `dt` in memory of coherence time `tc`.
pub fn decohere<T: Real>(fidelity: T, dt: T, tc: T) -> Result<T> {
    if !(tc > T::zero()) {
        return domain(format!("coherence time must be positive, got {tc:?}"));
    }
    if !(dt >= T::zero()) {
        return domain(format!("storage time must be non-negative, got {dt:?}"));
    }
    Ok(decay_unchecked(fidelity, dt, tc))
}

#[inline]
pub(crate) fn decay_unchecked<T: Real>(fidelity: T, dt: T, tc: T) -> T {
    mixed::<T>() + (fidelity - mixed()) * (-T::lit(2.0) * dt / tc).exp()
}

/// Fidelity after a twirled Bell-state-measurement swap of two Werner pairs.
pub fn swap_fidelity<T: Real>(f1: T, f2: T) -> T {
    f1 * f2 + (T::one() - f1) * (T::one() - f2) / T::lit(3.0)
}

/// Shannon entropy (bits) of a Werner state's Bell-basis spectrum.
///
/// `F = 1` is taken as the continuous limit, 0.
pub fn entropy<T: Real>(fidelity: T) -> Result<T> {
    if !(fidelity >= mixed() && fidelity <= T::one()) {
        return domain(format!("entropy needs 0.25 <= F <= 1, got {fidelity:?}"));
    }
    Ok(entropy_unchecked(fidelity))
}

pub(crate) fn entropy_unchecked<T: Real>(fidelity: T) -> T {
    let rest = T::one() - fidelity;
    let mut h = T::zero();
    if fidelity > T::zero() {
        h = h - fidelity * fidelity.log2();
    }
    if rest > T::zero() {
        h = h - rest * (rest / T::lit(3.0)).log2();
    }
    h
}

/// Clamped six-state key bits per unit time: `max(0, 1 − H(F)) / interval`.
///
/// Zero deliveries yield 0.
pub fn skr_utility<T: Real>(mean_fidelity: T, mean_interval: T, deliveries: usize) -> T {
    if deliveries == 0 {
        return T::zero();
    }
    let bits = T::one() - entropy_unchecked(mean_fidelity.max(mixed()).min(T::one()));
    bits.max(T::zero()) / mean_interval
}

/// Heralded generation success probability on a link of `length_km`.
pub fn p_gen<T: Real>(length_km: T, consts: &PhysicsConstants<T>) -> T {
    consts.coupling * (-length_km / consts.attenuation_length_km).exp()
}

/// Fidelity a pair must hold so that `m` such pairs swapped together still meet `f_min`.
pub fn f_req<T: Real>(m: u32, f_min: T) -> Result<T> {
    if m < 1 {
        return domain("f_req needs m >= 1");
    }
    let base = WernerParam::from_fidelity(f_min).0;
    Ok(WernerParam(base.powf(T::one() / T::from_u32(m).unwrap())).fidelity())
}

/// Storage time before a pair at `fidelity` decays to `f_req(m)`.
///
/// A non-positive result means the pair is already at or below the floor.
pub fn cutoff<T: Real>(fidelity: T, m: u32, tc: T, f_min: T) -> Result<T> {
    let floor = f_req(m, f_min)?;
    Ok(-(tc / T::lit(2.0)) * ((floor - mixed()) / (fidelity - mixed())).ln())
}

/// Outcome of one twirled recurrence distillation round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distilled<T> {
    pub success_prob: T,
    pub fidelity: T,
}

/// Bilateral-CNOT recurrence distillation of two Werner pairs, output re-twirled.
pub fn distill<T: Real>(f1: T, f2: T) -> Distilled<T> {
    let one = T::one();
    let three = T::lit(3.0);
    let nine = T::lit(9.0);
    let success_prob = f1 * f2
        + f1 * (one - f2) / three
        + (one - f1) * f2 / three
        + T::lit(5.0) * (one - f1) * (one - f2) / nine;
    let fidelity = (f1 * f2 + (one - f1) * (one - f2) / nine) / success_prob;
    Distilled {
        success_prob,
        fidelity,
    }
}

/// Balanced binary swap tree over an ordered list of link fidelities.
pub fn swap_tree<T: Real>(fidelities: &[T]) -> Result<T> {
    match fidelities.len() {
        0 => domain("swap tree over an empty list"),
        1 => Ok(fidelities[0]),
        m => {
            let (left, right) = fidelities.split_at(m / 2);
            Ok(swap_fidelity(swap_tree(left)?, swap_tree(right)?))
        }
    }
}
