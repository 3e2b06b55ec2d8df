//! The monitoring system's index and the two performance criteria:
//! index freshness and downloaded bytes.

use serde::{Deserialize, Serialize};

use crate::engine::{ResourceId, SimTime};
use crate::world::{Resource, Snapshot, Status, World};

/// What the index last learned about a resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry {
    pub status: Status,
    pub version: u64,
    pub size: u32,
    pub downloaded_at: SimTime,
}

impl From<&Snapshot> for IndexEntry {
    fn from(s: &Snapshot) -> Self {
        IndexEntry {
            status: s.status,
            version: s.version,
            size: s.size,
            downloaded_at: s.taken_at,
        }
    }
}

/// One optional entry per resource id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Index {
    entries: Vec<Option<IndexEntry>>,
}

impl Index {
    pub fn cold(n: usize) -> Self {
        Index {
            entries: vec![None; n],
        }
    }

    /// Every resource indexed as it stands at t=0.
    pub fn warm(world: &World) -> Self {
        Index {
            entries: world
                .resources()
                .iter()
                .map(|r| {
                    Some(IndexEntry {
                        status: r.status,
                        version: r.version,
                        size: r.size,
                        downloaded_at: SimTime::ZERO,
                    })
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ResourceId) -> Option<&IndexEntry> {
        self.entries[id as usize].as_ref()
    }

    /// Unconditional replacement.
    pub fn replace(&mut self, snap: &Snapshot) {
        self.entries[snap.resource_id as usize] = Some(IndexEntry::from(snap));
    }

    /// Replaces the entry only if `snap` is at least as new as what is
    /// indexed. Returns whether the entry was written.
    pub fn apply_guarded(&mut self, snap: &Snapshot) -> bool {
        let slot = &mut self.entries[snap.resource_id as usize];
        match slot {
            Some(entry) if entry.version > snap.version => false,
            _ => {
                *slot = Some(IndexEntry::from(snap));
                true
            }
        }
    }
}

pub fn is_fresh(entry: Option<&IndexEntry>, r: &Resource) -> bool {
    entry.is_some_and(|e| e.version == r.version && e.status == r.status)
}

/// Percentage of resources whose index entry matches their current
/// `(status, version)`, by full scan. Panics on an empty world.
pub fn freshness(index: &Index, world: &World) -> f64 {
    assert!(!world.is_empty(), "freshness of an empty world");
    let fresh = world
        .resources()
        .iter()
        .filter(|r| is_fresh(index.get(r.id), r))
        .count();
    100.0 * fresh as f64 / world.len() as f64
}

pub fn record_download(counter: u64, snap: &Snapshot) -> u64 {
    counter + u64::from(snap.bytes)
}

/// Count of fresh resources, kept up to date one resource at a time so a
/// measurement does not need a full scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreshnessTracker {
    fresh: u64,
    total: u64,
}

impl FreshnessTracker {
    pub fn scan(index: &Index, world: &World) -> Self {
        let fresh = world
            .resources()
            .iter()
            .filter(|r| is_fresh(index.get(r.id), r))
            .count() as u64;
        FreshnessTracker {
            fresh,
            total: world.len() as u64,
        }
    }

    /// Records that one resource went from `was` to `now` freshness.
    pub fn update(&mut self, was: bool, now: bool) {
        match (was, now) {
            (true, false) => self.fresh -= 1,
            (false, true) => self.fresh += 1,
            _ => {}
        }
    }

    pub fn fresh(&self) -> u64 {
        self.fresh
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.fresh as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSample {
    pub t: SimTime,
    pub freshness_pct: f64,
    pub bytes_cumulative: u64,
}

/// Collects a sample on every measurement tick.
#[derive(Debug, Clone)]
pub struct Sampler {
    interval: u64,
    horizon: SimTime,
    samples: Vec<MetricsSample>,
}

impl Sampler {
    pub fn new(interval: u64, horizon: SimTime) -> Self {
        assert!(interval > 0);
        Sampler {
            interval,
            horizon,
            samples: Vec::with_capacity((horizon.0 / interval) as usize),
        }
    }

    pub fn first_tick(&self) -> Option<SimTime> {
        self.tick_after(SimTime::ZERO)
    }

    /// Appends a sample for tick `t` and returns the next tick, if it falls
    /// within the horizon.
    pub fn on_measurement_tick(
        &mut self,
        t: SimTime,
        freshness_pct: f64,
        bytes_cumulative: u64,
    ) -> Option<SimTime> {
        assert_eq!(t.0 % self.interval, 0, "tick at {t} off the measurement grid");
        if let Some(last) = self.samples.last() {
            assert!(bytes_cumulative >= last.bytes_cumulative);
        }
        self.samples.push(MetricsSample {
            t,
            freshness_pct,
            bytes_cumulative,
        });
        self.tick_after(t)
    }

    fn tick_after(&self, t: SimTime) -> Option<SimTime> {
        let next = t.after(self.interval);
        (next <= self.horizon).then_some(next)
    }

    pub fn samples(&self) -> &[MetricsSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<MetricsSample> {
        self.samples
    }
}
