//! The monitored environment: a population of resources whose status and
//! size change over time, plus the arrival processes that drive them.

use serde::{Deserialize, Serialize};

use crate::engine::{ResourceId, RngStream, SimTime};
use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Ok,
    Forbidden,
    NotFound,
    ServerError,
}

impl Status {
    pub fn code(self) -> u16 {
        match self {
            Status::Ok => 200,
            Status::Forbidden => 403,
            Status::NotFound => 404,
            Status::ServerError => 500,
        }
    }

    pub fn is_error(self) -> bool {
        self != Status::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Resource {
    pub id: ResourceId,
    pub status: Status,
    pub size: u32,
    /// Bumped by one on every observable change.
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChangeKind {
    Err403,
    Err404,
    Err500,
    Shrink,
    Grow,
    Available,
}

impl ChangeKind {
    /// Selection order: the i-th weight in [`WorldConfig::change_kind_weights`]
    /// belongs to `ALL[i]`.
    pub const ALL: [ChangeKind; 6] = [
        ChangeKind::Err403,
        ChangeKind::Err404,
        ChangeKind::Err500,
        ChangeKind::Shrink,
        ChangeKind::Grow,
        ChangeKind::Available,
    ];
}

/// Per-horizon event counts for one resource. Zero disables the process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    pub changes: u32,
    pub requests: u32,
}

impl RateSpec {
    pub fn new(changes: u32, requests: u32) -> Self {
        RateSpec { changes, requests }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_resources: u32,
    pub horizon: SimTime,
    pub size_min: u32,
    pub size_max: u32,
    pub download_min: u64,
    pub download_max: u64,
    pub notify_min: u64,
    pub notify_max: u64,
    pub measurement_interval: u64,
    /// Relative weights of the six change kinds, in [`ChangeKind::ALL`] order.
    pub change_kind_weights: [u32; 6],
    /// Count error responses as empty bodies instead of the page size.
    pub zero_byte_error_bodies: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig::paper()
    }
}

impl WorldConfig {
    /// 200,000 resources over 8,640,000 time units.
    pub fn paper() -> Self {
        WorldConfig {
            n_resources: 200_000,
            horizon: SimTime::PAPER_HORIZON,
            size_min: 65,
            size_max: 122_880,
            download_min: 1,
            download_max: 40,
            notify_min: 1,
            notify_max: 3,
            measurement_interval: 10_000,
            change_kind_weights: [1; 6],
            zero_byte_error_bodies: false,
        }
    }

    /// 5,000 resources over a tenth of the full horizon.
    pub fn desk() -> Self {
        WorldConfig {
            n_resources: 5_000,
            horizon: SimTime(864_000),
            ..WorldConfig::paper()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |field: &str, reason: &str| Err(ConfigError::new(field, reason));
        if self.n_resources == 0 {
            return fail("world.n_resources", "must be at least 1");
        }
        if self.horizon.0 == 0 {
            return fail("world.horizon", "must be at least 1");
        }
        if self.size_min == 0 {
            return fail("world.size_min", "must be at least 1");
        }
        if self.size_min > self.size_max {
            return fail("world.size_max", "must not be below size_min");
        }
        if self.download_min == 0 {
            return fail("world.download_min", "must be at least 1");
        }
        if self.download_min > self.download_max {
            return fail("world.download_max", "must not be below download_min");
        }
        if self.notify_min == 0 {
            return fail("world.notify_min", "must be at least 1");
        }
        if self.notify_min > self.notify_max {
            return fail("world.notify_max", "must not be below notify_min");
        }
        if self.measurement_interval == 0 {
            return fail("world.measurement_interval", "must be at least 1");
        }
        if self.change_kind_weights.iter().all(|&w| w == 0) {
            return fail("world.change_kind_weights", "at least one weight must be positive");
        }
        Ok(())
    }

    pub fn size_bounds(&self) -> SizeBounds {
        SizeBounds {
            min: self.size_min,
            max: self.size_max,
        }
    }

    pub fn mean_size(&self) -> f64 {
        (f64::from(self.size_min) + f64::from(self.size_max)) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeBounds {
    pub min: u32,
    pub max: u32,
}

impl SizeBounds {
    pub const PAPER: SizeBounds = SizeBounds {
        min: 65,
        max: 122_880,
    };
}

/// Immutable copy of a resource as a download saw it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snapshot {
    pub resource_id: ResourceId,
    pub status: Status,
    pub size: u32,
    pub version: u64,
    pub taken_at: SimTime,
    /// Bytes the download transfers. Equal to `size` unless error bodies are
    /// configured as empty.
    pub bytes: u32,
}

pub fn snapshot(r: &Resource, now: SimTime) -> Snapshot {
    Snapshot {
        resource_id: r.id,
        status: r.status,
        size: r.size,
        version: r.version,
        taken_at: now,
        bytes: r.size,
    }
}

#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    resources: Vec<Resource>,
}

impl World {
    /// Builds the initial population: every resource OK, version 0, with a
    /// size drawn uniformly from the configured bounds.
    ///
    /// Panics if the configuration is invalid; validate plans first.
    pub fn init(config: WorldConfig, sizes: &mut RngStream) -> Self {
        if let Err(e) = config.validate() {
            panic!("init_world: {e}");
        }
        let resources = (0..config.n_resources)
            .map(|id| Resource {
                id,
                status: Status::Ok,
                size: sizes.uniform_int(config.size_min.into(), config.size_max.into()) as u32,
                version: 0,
            })
            .collect();
        World { config, resources }
    }

    pub fn from_resources(config: WorldConfig, resources: Vec<Resource>) -> Self {
        assert_eq!(resources.len(), config.n_resources as usize);
        World { config, resources }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }

    pub fn resource(&self, id: ResourceId) -> &Resource {
        &self.resources[id as usize]
    }

    pub fn resources(&self) -> &[Resource] {
        &self.resources
    }

    pub fn total_size(&self) -> u64 {
        self.resources.iter().map(|r| u64::from(r.size)).sum()
    }

    /// Draws a change kind and applies it. Returns the kind and whether the
    /// change was observable.
    pub fn change(&mut self, id: ResourceId, rng: &mut RngStream) -> (ChangeKind, bool) {
        let kind = draw_change_kind_weighted(rng, &self.config.change_kind_weights);
        let bounds = self.config.size_bounds();
        let observable = apply_change(&mut self.resources[id as usize], kind, rng, bounds);
        (kind, observable)
    }

    pub fn snapshot(&self, id: ResourceId, now: SimTime) -> Snapshot {
        let mut snap = snapshot(self.resource(id), now);
        if self.config.zero_byte_error_bodies && snap.status.is_error() {
            snap.bytes = 0;
        }
        snap
    }
}

/// Delay until the next event of a process that fires `rate` times per
/// `horizon` on average. `None` when the rate is zero.
pub fn next_arrival(rng: &mut RngStream, rate: u32, horizon: SimTime) -> Option<u64> {
    if rate == 0 {
        return None;
    }
    Some(rng.exp_delay(horizon.0 as f64 / f64::from(rate)))
}

pub fn draw_change_kind(rng: &mut RngStream) -> ChangeKind {
    draw_change_kind_weighted(rng, &[1; 6])
}

pub fn draw_change_kind_weighted(rng: &mut RngStream, weights: &[u32; 6]) -> ChangeKind {
    let total: u64 = weights.iter().map(|&w| u64::from(w)).sum();
    assert!(total > 0, "change kind weights are all zero");
    let mut pick = rng.uniform_int(0, total - 1);
    for (kind, &w) in ChangeKind::ALL.iter().zip(weights) {
        if pick < u64::from(w) {
            return *kind;
        }
        pick -= u64::from(w);
    }
    unreachable!("pick below total weight")
}

/// Applies `kind` to `r` in place and reports whether anything observable
/// changed. Only observable changes bump the version. Shrink and Grow draw
/// the new size from `rng`.
pub fn apply_change(
    r: &mut Resource,
    kind: ChangeKind,
    rng: &mut RngStream,
    bounds: SizeBounds,
) -> bool {
    let before = *r;
    let observable = match kind {
        ChangeKind::Err403 => set_status(r, Status::Forbidden),
        ChangeKind::Err404 => set_status(r, Status::NotFound),
        ChangeKind::Err500 => set_status(r, Status::ServerError),
        ChangeKind::Available => set_status(r, Status::Ok),
        ChangeKind::Shrink => {
            if r.size > bounds.min {
                r.size = rng.uniform_int(bounds.min.into(), u64::from(r.size) - 1) as u32;
                true
            } else {
                false
            }
        }
        ChangeKind::Grow => {
            if r.size < bounds.max {
                r.size = rng.uniform_int(u64::from(r.size) + 1, bounds.max.into()) as u32;
                true
            } else {
                false
            }
        }
    };
    if observable {
        r.version += 1;
    }
    assert!(
        (bounds.min..=bounds.max).contains(&r.size),
        "resource {} size {} left [{}, {}]",
        r.id,
        r.size,
        bounds.min,
        bounds.max
    );
    assert!(r.version >= before.version);
    observable
}

fn set_status(r: &mut Resource, status: Status) -> bool {
    let changed = r.status != status;
    r.status = status;
    changed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::StreamId;

    fn ok(size: u32, version: u64) -> Resource {
        Resource {
            id: 0,
            status: Status::Ok,
            size,
            version,
        }
    }

    fn no_draws() -> RngStream {
        RngStream::scripted(StreamId::Change(0), [])
    }

    #[test]
    fn init_world_full_scale_population() {
        let mut rng = RngStream::new(1, StreamId::Sizes);
        let world = World::init(WorldConfig::paper(), &mut rng);
        assert_eq!(world.len(), 200_000);
        assert!(world
            .resources()
            .iter()
            .all(|r| r.status == Status::Ok && r.version == 0));
        assert!(world
            .resources()
            .iter()
            .all(|r| (65..=122_880).contains(&r.size)));
        assert!(world.resources().iter().enumerate().all(|(i, r)| r.id as usize == i));
    }

    #[test]
    fn initial_size_mean_near_midpoint() {
        let mut rng = RngStream::new(17, StreamId::Sizes);
        let config = WorldConfig {
            n_resources: 10_000,
            ..WorldConfig::paper()
        };
        let world = World::init(config, &mut rng);
        let mean = world.total_size() as f64 / 10_000.0;
        assert!((mean - 61_472.5).abs() / 61_472.5 < 0.02, "{mean}");
    }

    #[test]
    #[should_panic(expected = "n_resources")]
    fn init_world_rejects_empty_population() {
        let mut rng = RngStream::new(1, StreamId::Sizes);
        World::init(
            WorldConfig {
                n_resources: 0,
                ..WorldConfig::desk()
            },
            &mut rng,
        );
    }

    #[test]
    fn next_arrival_mean_is_horizon_over_rate() {
        let u = 1.0 - (-1.0f64).exp();
        let mut rng = RngStream::scripted(StreamId::Change(0), [u, u, 0.0]);
        assert_eq!(next_arrival(&mut rng, 10, SimTime::PAPER_HORIZON), Some(864_000));
        assert_eq!(next_arrival(&mut rng, 1, SimTime::PAPER_HORIZON), Some(8_640_000));
        assert_eq!(next_arrival(&mut rng, 10, SimTime::PAPER_HORIZON), Some(1));
    }

    #[test]
    fn zero_rate_disables_process() {
        assert_eq!(next_arrival(&mut no_draws(), 0, SimTime(100)), None);
    }

    #[test]
    fn change_kind_by_sextile() {
        let mut rng = RngStream::scripted(StreamId::Change(0), [0.01, 0.99, 0.5]);
        assert_eq!(draw_change_kind(&mut rng), ChangeKind::Err403);
        assert_eq!(draw_change_kind(&mut rng), ChangeKind::Available);
        assert_eq!(draw_change_kind(&mut rng), ChangeKind::Shrink);
    }

    #[test]
    fn change_kind_frequencies_uniform() {
        let mut rng = RngStream::new(5, StreamId::Change(3));
        let mut counts = [0u32; 6];
        let n = 60_000;
        for _ in 0..n {
            let k = draw_change_kind(&mut rng);
            counts[ChangeKind::ALL.iter().position(|&x| x == k).unwrap()] += 1;
        }
        for c in counts {
            let freq = f64::from(c) / f64::from(n);
            assert!((freq - 1.0 / 6.0).abs() / (1.0 / 6.0) < 0.05, "{counts:?}");
        }
    }

    #[test]
    fn weights_exclude_zero_weight_kinds() {
        let mut rng = RngStream::new(5, StreamId::Change(3));
        let weights = [0, 0, 0, 1, 1, 0];
        for _ in 0..1000 {
            let k = draw_change_kind_weighted(&mut rng, &weights);
            assert!(matches!(k, ChangeKind::Shrink | ChangeKind::Grow));
        }
    }

    #[test]
    fn error_status_transition() {
        let mut r = ok(1000, 0);
        assert!(apply_change(&mut r, ChangeKind::Err404, &mut no_draws(), SizeBounds::PAPER));
        assert_eq!((r.status, r.size, r.version), (Status::NotFound, 1000, 1));
        // repeating the same error is not observable
        assert!(!apply_change(&mut r, ChangeKind::Err404, &mut no_draws(), SizeBounds::PAPER));
        assert_eq!(r.version, 1);
    }

    #[test]
    fn available_on_ok_is_no_change() {
        let mut r = ok(1000, 0);
        assert!(!apply_change(&mut r, ChangeKind::Available, &mut no_draws(), SizeBounds::PAPER));
        assert_eq!(r, ok(1000, 0));
    }

    #[test]
    fn available_recovers_from_error() {
        let mut r = Resource {
            status: Status::ServerError,
            ..ok(1000, 4)
        };
        assert!(apply_change(&mut r, ChangeKind::Available, &mut no_draws(), SizeBounds::PAPER));
        assert_eq!((r.status, r.version), (Status::Ok, 5));
    }

    #[test]
    fn shrink_at_minimum_is_noop() {
        let mut r = ok(65, 3);
        assert!(!apply_change(&mut r, ChangeKind::Shrink, &mut no_draws(), SizeBounds::PAPER));
        assert_eq!(r, ok(65, 3));
    }

    #[test]
    fn grow_at_maximum_is_noop() {
        let mut r = ok(122_880, 3);
        assert!(!apply_change(&mut r, ChangeKind::Grow, &mut no_draws(), SizeBounds::PAPER));
        assert_eq!(r, ok(122_880, 3));
    }

    #[test]
    fn grow_with_lowest_draw() {
        let mut r = ok(1000, 0);
        let mut rng = RngStream::scripted(StreamId::Change(0), [0.0]);
        assert!(apply_change(&mut r, ChangeKind::Grow, &mut rng, SizeBounds::PAPER));
        assert_eq!(r, ok(1001, 1));
    }

    #[test]
    fn shrink_with_highest_draw() {
        let mut r = ok(1000, 0);
        let mut rng = RngStream::scripted(StreamId::Change(0), [0.999_999_9]);
        assert!(apply_change(&mut r, ChangeKind::Shrink, &mut rng, SizeBounds::PAPER));
        assert_eq!(r, ok(999, 1));
    }

    #[test]
    fn snapshot_is_a_copy() {
        let mut r = ok(1000, 0);
        let snap = snapshot(&r, SimTime(10));
        assert_eq!(snap.size, r.size);
        apply_change(&mut r, ChangeKind::Err500, &mut no_draws(), SizeBounds::PAPER);
        assert_eq!(snap.version, 0);
        assert_eq!(snap.status, Status::Ok);
        let later = snapshot(&r, SimTime(20));
        assert_ne!(snap.version, later.version);
    }

    #[test]
    fn zero_byte_error_bodies() {
        let config = WorldConfig {
            n_resources: 1,
            zero_byte_error_bodies: true,
            ..WorldConfig::desk()
        };
        let mut world = World::from_resources(config, vec![ok(500, 0)]);
        assert_eq!(world.snapshot(0, SimTime(0)).bytes, 500);
        // 0.01 selects Err403
        let mut rng = RngStream::scripted(StreamId::Change(0), [0.01]);
        world.change(0, &mut rng);
        let snap = world.snapshot(0, SimTime(1));
        assert_eq!((snap.size, snap.bytes), (500, 0));
    }

    #[test]
    fn config_validation_names_field() {
        let bad = WorldConfig {
            download_min: 0,
            ..WorldConfig::desk()
        };
        assert_eq!(bad.validate().unwrap_err().field, "world.download_min");
        assert!(WorldConfig::paper().validate().is_ok());
        assert!(WorldConfig::desk().validate().is_ok());
    }
}
