//! Stochastic actuation/network delay: a fixed base plus lognormal jitter.

use crate::protocol::Timestamp;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayModel {
    pub base_ms: f64,
    /// Median of the lognormal jitter, `exp(μ)`. Zero disables jitter.
    pub jitter_median_ms: f64,
    /// `σ` of the underlying normal.
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel { base_ms: 20.0, jitter_median_ms: 10.0, jitter_sigma: 0.5, seed: 0 }
    }
}

impl DelayModel {
    pub fn none() -> Self {
        DelayModel { base_ms: 0.0, jitter_median_ms: 0.0, jitter_sigma: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> super::Result<()> {
        if !(self.base_ms >= 0.0) || !(self.jitter_median_ms >= 0.0) || !(self.jitter_sigma >= 0.0) {
            return Err(super::SimError::InvalidArgument(format!("delay parameters must be non-negative: {self:?}")));
        }
        Ok(())
    }

    pub fn sampler(&self) -> DelaySampler {
        let jitter = (self.jitter_median_ms > 0.0)
            .then(|| LogNormal::new(self.jitter_median_ms.ln(), self.jitter_sigma).expect("validated parameters"));
        DelaySampler { base_ms: self.base_ms, jitter, rng: ChaCha8Rng::seed_from_u64(self.seed) }
    }
}

/// Seed-sequenced latency draws.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    base_ms: f64,
    jitter: Option<LogNormal<f64>>,
    rng: ChaCha8Rng,
}

impl DelaySampler {
    pub fn sample_ms(&mut self) -> f64 {
        self.base_ms + self.jitter.map_or(0.0, |d| d.sample(&mut self.rng))
    }

    pub fn sample_nanos(&mut self) -> u64 {
        (self.sample_ms() * 1e6).round() as u64
    }
}

struct Pending<T> {
    at: Timestamp,
    order: u64,
    cmd: T,
}

impl<T> PartialEq for Pending<T> {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.order) == (o.at, o.order)
    }
}
impl<T> Eq for Pending<T> {}
impl<T> PartialOrd for Pending<T> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<T> Ord for Pending<T> {
    fn cmp(&self, o: &Self) -> Ordering {
        (self.at, self.order).cmp(&(o.at, o.order))
    }
}

/// Commands in flight, released in application-time order. Commands issued
/// later may overtake earlier ones when their sampled latency is shorter.
pub struct DelayLine<T> {
    sampler: DelaySampler,
    pending: BinaryHeap<Reverse<Pending<T>>>,
    issued: u64,
}

impl<T> DelayLine<T> {
    pub fn new(model: &DelayModel) -> Self {
        DelayLine { sampler: model.sampler(), pending: BinaryHeap::new(), issued: 0 }
    }

    /// Schedules `cmd` and returns its application time.
    pub fn delayed_apply(&mut self, cmd: T, now: Timestamp) -> Timestamp {
        let at = now + self.sampler.sample_nanos();
        self.pending.push(Reverse(Pending { at, order: self.issued, cmd }));
        self.issued += 1;
        at
    }

    /// Removes and returns every command due at or before `now`.
    pub fn pop_due(&mut self, now: Timestamp) -> Vec<(Timestamp, T)> {
        let mut out = Vec::new();
        while self.pending.peek().is_some_and(|Reverse(p)| p.at <= now) {
            let Reverse(p) = self.pending.pop().expect("peeked");
            out.push((p.at, p.cmd));
        }
        out
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }

    /// Drops every command still in flight.
    pub fn clear(&mut self) {
        self.pending.clear();
    }
}
