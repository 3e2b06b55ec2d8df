//! Discrete-event core: the simulation clock, a totally ordered event queue,
//! and the random-variate streams every other module draws from.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fmt;

use rand::RngCore;
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Modeling time in integer units. One unit stands for 10 ms of real time.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    /// The full-scale horizon.
    pub const PAPER_HORIZON: SimTime = SimTime(8_640_000);

    pub fn units(self) -> u64 {
        self.0
    }

    pub fn after(self, delay: u64) -> SimTime {
        SimTime(self.0 + delay)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type ResourceId = u32;
pub type DownloadId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Change(ResourceId),
    Request(ResourceId),
    /// Carries the resource version the sensor saw when it fired.
    NotificationArrival(ResourceId, u64),
    DownloadComplete(DownloadId),
    MeasurementTick,
    RobotDispatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

// BinaryHeap is a max-heap, so the comparison is reversed to pop the
// smallest (time, seq) first.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Pending events ordered by `(time, seq)`.
///
/// `seq` is a global insertion counter, so simultaneous events pop in the
/// order they were scheduled. Popping advances the clock to the event time.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    now: SimTime,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Inserts an event and returns its sequence number. Scheduling before
    /// the current clock is rejected and leaves the queue untouched.
    pub fn schedule(&mut self, time: SimTime, kind: EventKind) -> Result<u64, SimError> {
        if time < self.now {
            return Err(SimError::BackInTime {
                now: self.now,
                requested: time,
                kind: format!("{kind:?}"),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, kind });
        Ok(seq)
    }

    pub fn next_event(&mut self) -> Option<Event> {
        let event = self.heap.pop()?;
        debug_assert!(event.time >= self.now);
        self.now = event.time;
        Some(event)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }
}

/// Identifies the purpose of a random substream. Each id maps to its own
/// independently seeded generator, so draws for one purpose never shift the
/// sequence seen by another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StreamId {
    Sizes,
    Change(ResourceId),
    Request(ResourceId),
    Downloads,
    Notifications,
}

impl StreamId {
    fn tag(self) -> (u64, u64) {
        match self {
            StreamId::Sizes => (1, 0),
            StreamId::Change(id) => (2, u64::from(id)),
            StreamId::Request(id) => (3, u64::from(id)),
            StreamId::Downloads => (4, 0),
            StreamId::Notifications => (5, 0),
        }
    }
}

/// SplitMix64 finalizer, used only to spread seed material.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one run, derived from the plan's base seed and the run index.
pub fn run_seed(base_seed: u64, run_index: u32) -> u64 {
    mix64(base_seed ^ mix64(u64::from(run_index).wrapping_add(0x5eed)))
}

#[derive(Debug, Clone)]
enum Source {
    Pcg(Pcg64Mcg),
    Scripted(VecDeque<f64>),
}

/// A seedable stream of uniform variates on `[0, 1)`.
///
/// The generator is PCG-64 MCG (128-bit state, XSL-RR output) seeded from
/// `(seed, stream id)`. A scripted variant replays a fixed list of `u`
/// values and is used to pin draws in hand-traced schedules.
#[derive(Debug, Clone)]
pub struct RngStream {
    id: StreamId,
    source: Source,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let (tag, index) = id.tag();
        let hi = mix64(seed ^ mix64(tag));
        let lo = mix64(hi ^ mix64(index.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ tag));
        let state = (u128::from(hi) << 64) | u128::from(lo);
        RngStream {
            id,
            source: Source::Pcg(Pcg64Mcg::new(state | 1)),
        }
    }

    pub fn scripted(id: StreamId, draws: impl IntoIterator<Item = f64>) -> Self {
        let draws: VecDeque<f64> = draws.into_iter().collect();
        assert!(
            draws.iter().all(|u| (0.0..1.0).contains(u)),
            "scripted draws for {id:?} must lie in [0, 1)"
        );
        RngStream {
            id,
            source: Source::Scripted(draws),
        }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Next variate, uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_unit(&mut self) -> f64 {
        match &mut self.source {
            Source::Pcg(rng) => (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64),
            Source::Scripted(draws) => draws
                .pop_front()
                .unwrap_or_else(|| panic!("scripted stream {:?} exhausted", self.id)),
        }
    }

    pub fn uniform_int(&mut self, lo: u64, hi: u64) -> u64 {
        uniform_int_at(self.next_unit(), lo, hi)
    }

    pub fn exp_delay(&mut self, mean: f64) -> u64 {
        exp_delay_at(self.next_unit(), mean)
    }
}

/// `lo + floor(u * (hi - lo + 1))`. Panics if `lo > hi`.
pub fn uniform_int_at(u: f64, lo: u64, hi: u64) -> u64 {
    assert!(lo <= hi, "uniform_int: lo {lo} > hi {hi}");
    debug_assert!((0.0..1.0).contains(&u));
    let span = hi - lo + 1;
    let offset = (u * span as f64).floor() as u64;
    lo + offset.min(span - 1)
}

/// Exponential delay by inverse CDF, rounded to whole units, never below 1.
/// Panics unless `mean > 0`.
pub fn exp_delay_at(u: f64, mean: f64) -> u64 {
    assert!(mean > 0.0, "exp_delay: mean must be positive, got {mean}");
    debug_assert!((0.0..1.0).contains(&u));
    let delay = (-mean * (1.0 - u).ln()).round();
    if delay < 1.0 {
        1
    } else {
        delay as u64
    }
}

/// Hands out the random substreams a run draws from.
pub trait StreamSource {
    fn stream(&self, id: StreamId) -> RngStream;
}

/// PRNG-backed streams for a single run.
#[derive(Debug, Clone, Copy)]
pub struct SeededStreams {
    pub seed: u64,
}

impl StreamSource for SeededStreams {
    fn stream(&self, id: StreamId) -> RngStream {
        RngStream::new(self.seed, id)
    }
}

/// Fixed draws per stream. Any stream without an entry is empty and panics
/// if the simulation draws from it.
#[derive(Debug, Clone, Default)]
pub struct ScriptedStreams {
    draws: HashMap<StreamId, Vec<f64>>,
}

impl ScriptedStreams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, id: StreamId, draws: impl IntoIterator<Item = f64>) -> Self {
        self.draws.entry(id).or_default().extend(draws);
        self
    }
}

impl StreamSource for ScriptedStreams {
    fn stream(&self, id: StreamId) -> RngStream {
        RngStream::scripted(id, self.draws.get(&id).cloned().unwrap_or_default())
    }
}

/// The `u` that makes [`uniform_int_at`] return `value`: the centre of its bucket.
pub fn unit_for_uniform(value: u64, lo: u64, hi: u64) -> f64 {
    assert!(lo <= value && value <= hi);
    (value - lo) as f64 / (hi - lo + 1) as f64 + 0.5 / (hi - lo + 1) as f64
}

/// The `u` that makes [`exp_delay_at`] return `delay` for the given mean.
pub fn unit_for_exp(delay: u64, mean: f64) -> f64 {
    assert!(delay >= 1);
    1.0 - (-(delay as f64) / mean).exp()
}
