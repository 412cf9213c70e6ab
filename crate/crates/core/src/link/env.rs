//! Two-slot link environment: heralded generation, recurrence distillation,
//! discard and delivery, with internal-memory decoherence between ticks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::physics::{self, PhysicsConstants};

/// Default fidelity of a freshly heralded raw pair.
pub const DEFAULT_F_GEN: f64 = 0.9575;
/// Default delivery-fidelity target.
pub const DEFAULT_F0: f64 = 0.94;
/// Episode-time normalization, in ticks.
pub const DEFAULT_HORIZON_TICKS: f64 = 50.0;
/// Episodes end without delivery after this many ticks.
pub const DEFAULT_STEP_CAP: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Wait = 0,
    Discard = 1,
    Purify = 2,
    Consume = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Wait, Action::Discard, Action::Purify, Action::Consume];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// Whether the action consumes a heralding tick.
    pub fn advances_time(self) -> bool {
        matches!(self, Action::Wait | Action::Purify)
    }
}

/// Legality of each action, indexed by [`Action::index`].
pub type Mask = [bool; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub length_km: f64,
    /// Heralding tick `L / c_fiber`, seconds.
    pub tau: f64,
    /// Internal-memory coherence time, seconds.
    pub tc_int: f64,
    pub f_gen: f64,
    pub f0: f64,
    pub p_gen: f64,
    pub horizon_ticks: f64,
    pub step_cap: u32,
}

impl LinkConfig {
    pub fn new(length_km: f64, tc_int: f64, consts: &PhysicsConstants<f64>) -> Self {
        Self {
            length_km,
            tau: consts.tick(length_km),
            tc_int,
            f_gen: DEFAULT_F_GEN,
            f0: DEFAULT_F0,
            p_gen: physics::p_gen(length_km, consts),
            horizon_ticks: DEFAULT_HORIZON_TICKS,
            step_cap: DEFAULT_STEP_CAP,
        }
    }

    /// Configuration with `Tc_int` given as a multiple of the link's own tick.
    pub fn with_ratio(length_km: f64, tc_int_ratio: f64, consts: &PhysicsConstants<f64>) -> Self {
        let tau = consts.tick(length_km);
        Self::new(length_km, tc_int_ratio * tau, consts)
    }

    pub fn with_f_gen(mut self, f_gen: f64) -> Self {
        self.f_gen = f_gen;
        self
    }

    pub fn with_f0(mut self, f0: f64) -> Self {
        self.f0 = f0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_km >= 0.0 && self.tau > 0.0) {
            return Err(Error::Config(format!("link length must be positive, got {}", self.length_km)));
        }
        if !(self.tc_int > 0.0) {
            return Err(Error::Config("internal coherence time must be positive".into()));
        }
        if !(self.f_gen > 0.25 && self.f_gen < 1.0) {
            return Err(Error::Config(format!("F_gen must lie in (0.25, 1), got {}", self.f_gen)));
        }
        if !(self.f0 > 0.25 && self.f0 <= 1.0) {
            return Err(Error::Config(format!("F0 must lie in (0.25, 1], got {}", self.f0)));
        }
        if self.step_cap == 0 {
            return Err(Error::Config("step cap must be positive".into()));
        }
        Ok(())
    }
}

/// What a link agent sees, plus bookkeeping for its episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub slots: [Option<f64>; 2],
    /// Success probability of a pending distillation outcome; 1 when nothing is pending.
    pub p: f64,
    /// Elapsed episode time, seconds.
    pub t: f64,
    pub ticks: u32,
    /// Absolute time at which the episode started.
    pub origin: f64,
}

impl AgentState {
    pub fn new(origin: f64) -> Self {
        Self {
            slots: [None, None],
            p: 1.0,
            t: 0.0,
            ticks: 0,
            origin,
        }
    }

    pub fn occupied(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|f| (i, f)))
            .fold(None, |acc, (i, f)| match acc {
                Some((_, g)) if g >= f => acc,
                _ => Some((i, f)),
            })
    }

    /// Network input `(F1, F2, p, t / horizon)`; empty slots read as 0.
    pub fn observation(&self, cfg: &LinkConfig) -> [f64; 4] {
        [
            self.slots[0].unwrap_or(0.0),
            self.slots[1].unwrap_or(0.0),
            self.p,
            self.t / (cfg.horizon_ticks * cfg.tau),
        ]
    }
}

pub fn action_mask(state: &AgentState, cfg: &LinkConfig) -> Mask {
    let both = state.occupied() == 2;
    let consume = state.best().is_some_and(|(_, f)| f >= cfg.f0);
    [true, both, both && state.p >= 1.0, consume]
}

/// A pair handed from internal memory to the link buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub fidelity: f64,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: AgentState,
    pub done: bool,
    pub delivery: Option<Delivery>,
}

fn decay_slots(slots: &mut [Option<f64>; 2], cfg: &LinkConfig) {
    for f in slots.iter_mut().flatten() {
        *f = physics::decay_unchecked(*f, cfg.tau, cfg.tc_int);
    }
}

/// Applies one action. Only WAIT and PURIFY advance time, by exactly one tick.
pub fn env_step<R: Rng + ?Sized>(
    state: &AgentState,
    action: Action,
    cfg: &LinkConfig,
    rng: &mut R,
) -> Result<Transition> {
    if !action_mask(state, cfg)[action.index()] {
        return Err(Error::IllegalAction(action));
    }
    let mut next = *state;
    let mut delivery = None;
    let mut done = false;
    match action {
        Action::Wait => {
            decay_slots(&mut next.slots, cfg);
            if let Some(empty) = next.slots.iter().position(Option::is_none) {
                if rng.gen::<f64>() < cfg.p_gen {
                    next.slots[empty] = Some(cfg.f_gen);
                }
            }
        }
        Action::Discard => {
            let (a, b) = (next.slots[0].unwrap(), next.slots[1].unwrap());
            let worse = if a < b { 0 } else { 1 };
            next.slots[worse] = None;
        }
        Action::Purify => {
            decay_slots(&mut next.slots, cfg);
            let out = physics::distill(next.slots[0].unwrap(), next.slots[1].unwrap());
            next.slots = if rng.gen::<f64>() < out.success_prob {
                [Some(out.fidelity), None]
            } else {
                [None, None]
            };
        }
        Action::Consume => {
            let (_, fidelity) = next.best().expect("mask guarantees an occupied slot");
            next.slots = [None, None];
            delivery = Some(Delivery {
                fidelity,
                time: state.origin + state.t,
            });
            done = true;
        }
    }
    if action.advances_time() {
        next.t += cfg.tau;
        next.ticks += 1;
        if next.ticks >= cfg.step_cap {
            done = true;
        }
    }
    next.p = 1.0;
    Ok(Transition {
        next,
        done,
        delivery,
    })
}

/// Baseline policy: deliver when allowed, otherwise distill when allowed, otherwise wait.
pub fn scripted_policy(state: &AgentState, cfg: &LinkConfig) -> Action {
    let mask = action_mask(state, cfg);
    if mask[Action::Consume.index()] {
        Action::Consume
    } else if mask[Action::Purify.index()] {
        Action::Purify
    } else {
        Action::Wait
    }
}
