//! Link layer: per-link environment, policies, and the sources the network
//! main loop steps once per heralding tick.

mod env;
pub mod policy;
mod synthetic;

use std::sync::Arc;

use rand::Rng;

pub use env::{
    action_mask, env_step, scripted_policy, Action, AgentState, Delivery, LinkConfig, Mask, Transition,
    DEFAULT_F0, DEFAULT_F_GEN, DEFAULT_HORIZON_TICKS, DEFAULT_STEP_CAP,
};
pub use policy::{greedy_action, masked_softmax, policy_forward, sample_action, Activation, Mlp};
pub use synthetic::{synthetic_source_step, SyntheticParams, REFERENCE_F_MEAN, REFERENCE_INTERVAL_TICKS};

use crate::error::Result;

/// How a link agent picks its actions.
#[derive(Debug, Clone)]
pub enum Policy {
    Scripted,
    /// Argmax of a trained network.
    Greedy(Arc<Mlp>),
    /// Samples from a trained network's masked softmax.
    Sampled(Arc<Mlp>),
}

impl Policy {
    pub fn act<R: Rng + ?Sized>(&self, state: &AgentState, cfg: &LinkConfig, rng: &mut R) -> Result<Action> {
        let mask = action_mask(state, cfg);
        let idx = match self {
            Policy::Scripted => return Ok(scripted_policy(state, cfg)),
            Policy::Greedy(net) => greedy_action(&policy_forward(net, &state.observation(cfg), &mask)?, &mask),
            Policy::Sampled(net) => sample_action(&policy_forward(net, &state.observation(cfg), &mask)?, &mask, rng),
        };
        Ok(Action::from_index(idx).expect("four actions"))
    }
}

/// A link agent running episodes back to back.
#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: LinkConfig,
    pub policy: Policy,
    state: AgentState,
}

impl Agent {
    pub fn new(cfg: LinkConfig, policy: Policy) -> Self {
        Self {
            cfg,
            policy,
            state: AgentState::new(0.0),
        }
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    /// Runs instantaneous actions until one time-advancing action completes the tick.
    ///
    /// A CONSUME at `now` ends the episode and a new one starts in the same tick.
    pub fn step<R: Rng + ?Sized>(&mut self, now: f64, rng: &mut R) -> Result<Vec<Delivery>> {
        let mut out = Vec::new();
        loop {
            let action = self.policy.act(&self.state, &self.cfg, rng)?;
            let tr = env_step(&self.state, action, &self.cfg, rng)?;
            if let Some(d) = tr.delivery {
                out.push(Delivery { time: now, ..d });
            }
            if tr.done {
                let origin = if action.advances_time() { now + self.cfg.tau } else { now };
                self.state = AgentState::new(origin);
                if action.advances_time() {
                    return Ok(out);
                }
            } else {
                self.state = tr.next;
                if action.advances_time() {
                    return Ok(out);
                }
            }
        }
    }
}

/// Anything that can feed a link buffer once per heralding tick.
#[derive(Debug, Clone)]
pub enum LinkSource {
    Synthetic { tau: f64, params: SyntheticParams },
    Agent(Box<Agent>),
}

impl LinkSource {
    pub fn step<R: Rng + ?Sized>(&mut self, now: f64, rng: &mut R) -> Result<Vec<Delivery>> {
        match self {
            LinkSource::Synthetic { tau, params } => Ok(synthetic_source_step(now, *tau, params, rng).into_iter().collect()),
            LinkSource::Agent(agent) => agent.step(now, rng),
        }
    }
}
