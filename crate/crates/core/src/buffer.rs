//! External-memory buffers: per-link deques and per-stage chain buffers.
//!
//! Each entry carries its own cutoff, computed once at push time from its
//! fidelity, the tier's swap budget `m`, and the external coherence time.
//! Entries whose age exceeds that cutoff are dropped by [`Buffer::discard_expired`].

use std::collections::VecDeque;

use crate::physics;

/// Default buffer capacity.
pub const DEFAULT_CAPACITY: usize = 20;

/// A link-level pair delivered by a link agent into its link buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPair {
    pub fidelity: f64,
    pub delivered_at: f64,
    pub cutoff: f64,
}

impl LinkPair {
    /// The cutoff is filled in when the pair is pushed.
    pub fn new(fidelity: f64, delivered_at: f64) -> Self {
        Self {
            fidelity,
            delivered_at,
            cutoff: f64::NAN,
        }
    }
}

/// A partial chain waiting in a chain buffer for its next extension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainEntry {
    /// Fidelity as of `swapped_at`.
    pub fidelity: f64,
    /// Time of the swap that produced this chain (decoherence reference).
    pub swapped_at: f64,
    /// Delivery time of the oldest contributing link pair (expiry reference).
    pub oldest: f64,
    pub cutoff: f64,
    /// Chain-buffer residence accumulated by earlier stages.
    pub dwell: f64,
    /// When the entry entered its current buffer.
    pub pushed_at: f64,
    order: u64,
}

impl ChainEntry {
    pub fn new(fidelity: f64, swapped_at: f64, oldest: f64, dwell: f64) -> Self {
        debug_assert!(oldest <= swapped_at);
        Self {
            fidelity,
            swapped_at,
            oldest,
            cutoff: f64::NAN,
            dwell,
            pushed_at: f64::NAN,
            order: 0,
        }
    }

    /// Total chain-buffer residence if the entry leaves its buffer at `now`.
    pub fn dwell_until(&self, now: f64) -> f64 {
        self.dwell + (now - self.pushed_at)
    }
}

/// Behaviour shared by the two buffer tiers.
pub trait Entry: Clone {
    /// Link buffers pop the most recent push; chain buffers scan for the freshest key.
    const LIFO: bool;

    fn fidelity(&self) -> f64;
    /// Timestamp from which the entry's age is measured.
    fn age_origin(&self) -> f64;
    fn cutoff(&self) -> f64;
    /// Called on push; stamps cutoff, push time, and insertion order.
    fn admit(&mut self, cutoff: f64, now: f64, order: u64);
    /// Larger is fresher.
    fn freshness(&self) -> (f64, f64, u64);

    fn age(&self, now: f64) -> f64 {
        now - self.age_origin()
    }

    fn expired(&self, now: f64) -> bool {
        self.age(now) > self.cutoff()
    }
}

impl Entry for LinkPair {
    const LIFO: bool = true;

    fn fidelity(&self) -> f64 {
        self.fidelity
    }
    fn age_origin(&self) -> f64 {
        self.delivered_at
    }
    fn cutoff(&self) -> f64 {
        self.cutoff
    }
    fn admit(&mut self, cutoff: f64, _now: f64, _order: u64) {
        self.cutoff = cutoff;
    }
    fn freshness(&self) -> (f64, f64, u64) {
        (self.delivered_at, 0.0, 0)
    }
}

impl Entry for ChainEntry {
    const LIFO: bool = false;

    fn fidelity(&self) -> f64 {
        self.fidelity
    }
    fn age_origin(&self) -> f64 {
        self.oldest
    }
    fn cutoff(&self) -> f64 {
        self.cutoff
    }
    fn admit(&mut self, cutoff: f64, now: f64, order: u64) {
        self.cutoff = cutoff;
        self.pushed_at = now;
        self.order = order;
    }
    fn freshness(&self) -> (f64, f64, u64) {
        (self.oldest, self.swapped_at, self.order)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    Accepted,
    RejectedFloor,
    EvictedOldest,
}

/// Bounded external-memory buffer of one tier.
#[derive(Debug, Clone)]
pub struct Buffer<E> {
    entries: VecDeque<E>,
    capacity: usize,
    /// Swap budget used for the push-time floor `f_req(m)`.
    m: u32,
    tc_ext: f64,
    f_min: f64,
    next_order: u64,
}

pub type LinkBuffer = Buffer<LinkPair>;
pub type ChainBuffer = Buffer<ChainEntry>;

impl<E: Entry> Buffer<E> {
    pub fn new(capacity: usize, m: u32, tc_ext: f64, f_min: f64) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        assert!(m >= 1);
        Self {
            entries: VecDeque::with_capacity(capacity + 1),
            capacity,
            m,
            tc_ext,
            f_min,
            next_order: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &E> {
        self.entries.iter()
    }

    /// Stores `entry` with a freshly computed cutoff, or rejects it at the floor.
    pub fn push(&mut self, mut entry: E, now: f64) -> PushOutcome {
        debug_assert!(entry.age_origin() <= now);
        let cutoff = physics::cutoff(entry.fidelity(), self.m, self.tc_ext, self.f_min)
            .expect("buffer tier m >= 1");
        if !(cutoff > 0.0) {
            return PushOutcome::RejectedFloor;
        }
        entry.admit(cutoff, now, self.next_order);
        self.next_order += 1;
        let evicted = self.entries.len() >= self.capacity;
        if evicted {
            self.evict_stalest();
        }
        if E::LIFO {
            debug_assert!(self
                .entries
                .back()
                .is_none_or(|last| last.age_origin() <= entry.age_origin()));
        }
        self.entries.push_back(entry);
        if evicted {
            PushOutcome::EvictedOldest
        } else {
            PushOutcome::Accepted
        }
    }

    /// Puts back an entry that was just popped, with all of its fields unchanged.
    pub fn restore(&mut self, entry: E) {
        if self.entries.len() >= self.capacity {
            self.evict_stalest();
        }
        self.entries.push_back(entry);
    }

    pub fn pop_freshest(&mut self) -> Option<E> {
        if E::LIFO {
            return self.entries.pop_back();
        }
        let idx = self.freshest_index()?;
        self.entries.remove(idx)
    }

    /// Removes every entry whose age exceeds its stored cutoff.
    pub fn discard_expired(&mut self, now: f64) -> usize {
        let before = self.entries.len();
        self.entries.retain(|e| !e.expired(now));
        before - self.entries.len()
    }

    fn freshest_index(&self) -> Option<usize> {
        let mut best: Option<(usize, (f64, f64, u64))> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let key = e.freshness();
            if best.is_none_or(|(_, b)| fresher(key, b)) {
                best = Some((i, key));
            }
        }
        best.map(|(i, _)| i)
    }

    fn evict_stalest(&mut self) {
        if E::LIFO {
            self.entries.pop_front();
            return;
        }
        let mut worst: Option<(usize, (f64, f64, u64))> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let key = e.freshness();
            if worst.is_none_or(|(_, w)| fresher(w, key)) {
                worst = Some((i, key));
            }
        }
        if let Some((i, _)) = worst {
            self.entries.remove(i);
        }
    }
}

fn fresher(a: (f64, f64, u64), b: (f64, f64, u64)) -> bool {
    a.0.total_cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.cmp(&b.2))
        .is_gt()
}
