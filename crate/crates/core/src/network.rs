//! Network layer: chain topology, the two swapping controllers, and the
//! two-layer main loop that interleaves link stepping with controller ticks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{ChainBuffer, ChainEntry, Entry, LinkBuffer, LinkPair, DEFAULT_CAPACITY};
use crate::error::{domain, Error, Result};
use crate::link::LinkSource;
use crate::physics::{decay_unchecked, swap_fidelity, swap_tree, PhysicsConstants};

/// Relative slack when comparing the clock against a link's next boundary.
const BOUNDARY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTopology {
    pub lengths: Vec<f64>,
    pub taus: Vec<f64>,
    pub tau_min: f64,
    pub tc_ext: f64,
    pub f_min: f64,
    pub capacity: usize,
}

impl ChainTopology {
    pub fn new(lengths: &[f64], tc_ext: f64, consts: &PhysicsConstants<f64>) -> Result<Self> {
        consts.validate()?;
        if lengths.is_empty() {
            return Err(Error::Config("topology needs at least one link".into()));
        }
        if let Some(l) = lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("link length must be positive, got {l}")));
        }
        if !(tc_ext > 0.0) {
            return domain(format!("external coherence time must be positive, got {tc_ext}"));
        }
        let taus: Vec<f64> = lengths.iter().map(|&l| consts.tick(l)).collect();
        let tau_min = taus.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            lengths: lengths.to_vec(),
            taus,
            tau_min,
            tc_ext,
            f_min: consts.f_min,
            capacity: DEFAULT_CAPACITY,
        })
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        assert!(capacity > 0);
        self.capacity = capacity;
        self
    }

    pub fn n(&self) -> usize {
        self.lengths.len()
    }

    /// Slowest link tick; the reference unit for coherence-time ratios.
    pub fn tau_max(&self) -> f64 {
        self.taus.iter().copied().fold(0.0, f64::max)
    }

    /// One link buffer per link, floored at the full chain's swap budget.
    pub fn link_buffers(&self) -> Vec<LinkBuffer> {
        let m = self.n() as u32;
        (0..self.n())
            .map(|_| LinkBuffer::new(self.capacity, m, self.tc_ext, self.f_min))
            .collect()
    }

    /// Chain stages `C_1..C_{n-1}`.
    pub fn chain_buffers(&self) -> Vec<ChainBuffer> {
        (1..self.n())
            .map(|_| ChainBuffer::new(self.capacity, 1, self.tc_ext, self.f_min))
            .collect()
    }
}

/// One end-to-end pair handed to the application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeliveryEvent {
    pub fidelity: f64,
    pub t_emit: f64,
    /// `t_emit` minus the delivery time of the oldest contributing link pair.
    pub age: f64,
    /// Total time the emitting chain spent in chain buffers; 0 for simultaneous.
    pub dwell: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Sequential,
    Simultaneous,
}

impl Protocol {
    pub const ALL: [Protocol; 2] = [Protocol::Sequential, Protocol::Simultaneous];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Sequential => "sequential",
            Protocol::Simultaneous => "simultaneous",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sequential" | "seq" => Ok(Protocol::Sequential),
            "simultaneous" | "sim" => Ok(Protocol::Simultaneous),
            other => Err(Error::Config(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Sequential swap-and-wait over chain buffers.
///
/// Chain entries in `chain[ℓ-1]` span links `1..=ℓ`. Extensions run for
/// `ℓ = 2..n` in ascending order, so a chain can cross several stages in one tick.
pub fn sequential_step(t: f64, tc_ext: f64, links: &mut [LinkBuffer], chain: &mut [ChainBuffer]) -> Vec<DeliveryEvent> {
    let n = links.len();
    debug_assert_eq!(chain.len() + 1, n);
    let mut events = Vec::new();
    if n == 1 {
        // Degenerate chain: each link pair is already end to end.
        while let Some(pair) = links[0].pop_freshest() {
            if !pair.expired(t) {
                events.push(DeliveryEvent {
                    fidelity: decay_unchecked(pair.fidelity, t - pair.delivered_at, tc_ext),
                    t_emit: t,
                    age: t - pair.delivered_at,
                    dwell: 0.0,
                });
            }
        }
        return events;
    }
    for c in chain.iter_mut() {
        c.discard_expired(t);
    }
    for l in 1..n {
        loop {
            if chain[l - 1].is_empty() || links[l].is_empty() {
                break;
            }
            let entry = chain[l - 1].pop_freshest().expect("non-empty");
            if entry.expired(t) {
                continue;
            }
            let pair = links[l].pop_freshest().expect("non-empty");
            if pair.expired(t) {
                chain[l - 1].restore(entry);
                continue;
            }
            let f_chain = decay_unchecked(entry.fidelity, t - entry.swapped_at, tc_ext);
            let f_pair = decay_unchecked(pair.fidelity, t - pair.delivered_at, tc_ext);
            let fidelity = swap_fidelity(f_chain, f_pair);
            let oldest = entry.oldest.min(pair.delivered_at);
            let dwell = entry.dwell_until(t);
            if l == n - 1 {
                events.push(DeliveryEvent {
                    fidelity,
                    t_emit: t,
                    age: t - oldest,
                    dwell,
                });
            } else {
                chain[l].push(ChainEntry::new(fidelity, t, oldest, dwell), t);
            }
        }
    }
    while let Some(pair) = links[0].pop_freshest() {
        if !pair.expired(t) {
            chain[0].push(ChainEntry::new(pair.fidelity, pair.delivered_at, pair.delivered_at, 0.0), t);
        }
    }
    events
}

/// Simultaneous SWAP-ASAP: one balanced-tree swap across all links when every
/// buffer can supply a live pair this tick.
pub fn simultaneous_step(t: f64, tc_ext: f64, links: &mut [LinkBuffer]) -> Option<DeliveryEvent> {
    if links.iter().any(|b| b.is_empty()) {
        return None;
    }
    let mut fidelities = Vec::with_capacity(links.len());
    let mut oldest = f64::INFINITY;
    for buf in links.iter_mut() {
        let pair = loop {
            match buf.pop_freshest() {
                Some(p) if !p.expired(t) => break p,
                Some(_) => continue,
                None => return None,
            }
        };
        fidelities.push(decay_unchecked(pair.fidelity, t - pair.delivered_at, tc_ext));
        oldest = oldest.min(pair.delivered_at);
    }
    let fidelity = swap_tree(&fidelities).expect("at least one link");
    Some(DeliveryEvent {
        fidelity,
        t_emit: t,
        age: t - oldest,
        dwell: 0.0,
    })
}

/// Network-layer controller with whatever state its protocol keeps between ticks.
#[derive(Debug, Clone)]
pub enum Controller {
    Sequential { chain: Vec<ChainBuffer> },
    Simultaneous,
}

impl Controller {
    pub fn new(protocol: Protocol, topology: &ChainTopology) -> Self {
        match protocol {
            Protocol::Sequential => Controller::Sequential {
                chain: topology.chain_buffers(),
            },
            Protocol::Simultaneous => Controller::Simultaneous,
        }
    }

    pub fn protocol(&self) -> Protocol {
        match self {
            Controller::Sequential { .. } => Protocol::Sequential,
            Controller::Simultaneous => Protocol::Simultaneous,
        }
    }

    pub fn step(&mut self, t: f64, tc_ext: f64, links: &mut [LinkBuffer]) -> Vec<DeliveryEvent> {
        match self {
            Controller::Sequential { chain } => sequential_step(t, tc_ext, links, chain),
            Controller::Simultaneous => simultaneous_step(t, tc_ext, links).into_iter().collect(),
        }
    }
}

/// Number of controller ticks in a horizon of `t_sim` seconds.
pub fn tick_count(t_sim: f64, tau_min: f64) -> u64 {
    ((t_sim / tau_min) * (1.0 + 1e-12)).floor() as u64
}

/// Runs `t_sim` seconds of the two-layer simulation.
///
/// The clock visits `t_k = k·τ_min` for `k = 1, 2, ...`. Link `ℓ` steps whenever
/// the clock reaches its next multiple of `τ_ℓ`, pushing deliveries into its
/// buffer; then link buffers are expired and the controller runs. `rngs[ℓ]`
/// drives link `ℓ`.
pub fn main_loop<R: Rng>(
    topology: &ChainTopology,
    sources: &mut [LinkSource],
    controller: &mut Controller,
    t_sim: f64,
    rngs: &mut [R],
) -> Result<Vec<DeliveryEvent>> {
    let n = topology.n();
    if sources.len() != n || rngs.len() != n {
        return Err(Error::Config(format!(
            "{n} links but {} sources and {} rng streams",
            sources.len(),
            rngs.len()
        )));
    }
    if !(t_sim > 0.0) {
        return domain(format!("simulation time must be positive, got {t_sim}"));
    }
    let mut links = topology.link_buffers();
    let mut next_step = vec![1u64; n];
    let mut events = Vec::new();
    for k in 1..=tick_count(t_sim, topology.tau_min) {
        let t = k as f64 * topology.tau_min;
        for l in 0..n {
            let tau = topology.taus[l];
            if t < next_step[l] as f64 * tau * (1.0 - BOUNDARY_SLACK) {
                continue;
            }
            next_step[l] += 1;
            for d in sources[l].step(t, &mut rngs[l])? {
                links[l].push(LinkPair::new(d.fidelity, d.time), t);
            }
        }
        for b in links.iter_mut() {
            b.discard_expired(t);
        }
        events.extend(controller.step(t, topology.tc_ext, &mut links));
    }
    Ok(events)
}

/// Mean chain-buffer dwell per emitted pair; `None` when nothing was emitted.
pub fn dwell_accounting(events: &[DeliveryEvent]) -> Option<f64> {
    if events.is_empty() {
        return None;
    }
    Some(events.iter().map(|e| e.dwell).sum::<f64>() / events.len() as f64)
}
