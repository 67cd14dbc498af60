//! Event queue, simulated clock and seeded random substreams.
//!
//! Simulated time is kept in integer microseconds so that event ordering
//! never depends on floating-point rounding. Events dequeue in
//! `(time, seq)` order where `seq` is the insertion counter, which makes
//! replay bit-identical for a fixed seed.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Default cap on processed events before a run is declared livelocked.
pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;

const MICROS_PER_SEC: f64 = 1_000_000.0;

/// A point in simulated time, in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    /// Rounds to the nearest microsecond. Negative and NaN inputs clamp to zero.
    pub fn from_secs(secs: f64) -> Self {
        if !(secs > 0.0) {
            return SimTime::ZERO;
        }
        let micros = (secs * MICROS_PER_SEC).round();
        if micros >= u64::MAX as f64 {
            SimTime::MAX
        } else {
            SimTime(micros as u64)
        }
    }

    pub fn from_micros(micros: u64) -> Self {
        SimTime(micros)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        self.saturating_sub(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs())
    }
}

/// Identifier returned by [`EventQueue::push`]; equal to the event's `seq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

/// A scheduled event.
#[derive(Debug, Clone)]
pub struct SimEvent<E> {
    pub time: SimTime,
    pub seq: u64,
    pub event: E,
}

impl<E> PartialEq for SimEvent<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<E> Eq for SimEvent<E> {}

impl<E> PartialOrd for SimEvent<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for SimEvent<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Min-queue of events keyed by `(time, seq)` plus the simulated clock.
#[derive(Debug, Clone)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<SimEvent<E>>>,
    clock: SimTime,
    next_seq: u64,
    processed: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            clock: SimTime::ZERO,
            next_seq: 0,
            processed: 0,
        }
    }

    /// Schedules `event` at `time`. Fails if `time` is before the clock.
    pub fn push(&mut self, time: SimTime, event: E) -> Result<EventId> {
        if time < self.clock {
            return Err(SimError::Causality {
                event: time,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(SimEvent { time, seq, event }));
        Ok(EventId(seq))
    }

    /// Removes the earliest event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<SimEvent<E>> {
        let Reverse(ev) = self.heap.pop()?;
        debug_assert!(ev.time >= self.clock);
        self.clock = ev.time;
        self.processed += 1;
        Some(ev)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(ev)| ev.time)
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Number of events popped so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named substream: `splitmix64(root ^ splitmix64(fnv1a64(id)))`.
///
/// Streams depend only on their own label, so adding a consumer never
/// shifts the draws seen by existing ones.
pub fn derive_seed(root_seed: u64, stream_id: &str) -> u64 {
    splitmix64(root_seed ^ splitmix64(fnv1a64(stream_id.as_bytes())))
}

/// A reproducible random stream identified by `(root_seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    root_seed: u64,
    stream_id: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(root_seed: u64, stream_id: impl Into<String>) -> Self {
        let stream_id = stream_id.into();
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(root_seed, &stream_id));
        Self {
            root_seed,
            stream_id,
            rng,
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.rng.gen_range(0..n)
    }

    /// Exponential draw with the given rate, by inverse CDF (one uniform per draw).
    pub fn exponential(&mut self, rate: f64) -> f64 {
        let u = self.uniform();
        -(1.0 - u).ln() / rate
    }

    /// Standard normal draw (Box-Muller, two uniforms per draw).
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Convenience constructor matching [`RngStream::new`].
pub fn rng_substream(root_seed: u64, stream_id: &str) -> RngStream {
    RngStream::new(root_seed, stream_id)
}
