//! Push-based monitoring: a sensor next to each resource reports changes,
//! and the robot downloads every reported resource right away, with no
//! limit on concurrent downloads.

use std::collections::HashMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::engine::{DownloadId, ResourceId, RngStream, SimTime};
use crate::metrics::Index;
use crate::world::{Resource, Snapshot, Status, World};

/// What a sensor has already reported for its resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorState {
    pub resource_id: ResourceId,
    pub last_observed_version: u64,
    pub last_observed_status: Status,
}

impl SensorState {
    pub fn observing(r: &Resource) -> Self {
        SensorState {
            resource_id: r.id,
            last_observed_version: r.version,
            last_observed_status: r.status,
        }
    }

    fn observe(&mut self, r: &Resource) {
        debug_assert!(r.version >= self.last_observed_version);
        self.last_observed_version = r.version;
        self.last_observed_status = r.status;
    }
}

/// When a sensor notices a change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// The sensor sees every observable change as it happens.
    #[default]
    ChangeTriggered,
    /// The sensor only sees a change when a user request is served.
    RequestTriggered,
}

/// Downloads launched in response to notifications, keyed by download id.
#[derive(Debug, Clone, Default)]
pub struct ActiveDownloads {
    next_id: DownloadId,
    in_flight: HashMap<DownloadId, (Snapshot, SimTime)>,
}

impl ActiveDownloads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.in_flight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_flight.is_empty()
    }

    fn start(&mut self, snap: Snapshot, completion: SimTime) -> DownloadId {
        let id = self.next_id;
        self.next_id += 1;
        self.in_flight.insert(id, (snap, completion));
        id
    }

    pub fn finish(&mut self, id: DownloadId) -> Option<(Snapshot, SimTime)> {
        self.in_flight.remove(&id)
    }
}

/// Called right after an observable change. In change-triggered mode the
/// sensor records the new state and returns the notification arrival time.
pub fn sensor_on_change(
    r: &Resource,
    s: &mut SensorState,
    now: SimTime,
    rng: &mut RngStream,
    mode: DetectionMode,
    delay: RangeInclusive<u64>,
) -> Option<SimTime> {
    match mode {
        DetectionMode::ChangeTriggered => {
            s.observe(r);
            Some(now.after(rng.uniform_int(*delay.start(), *delay.end())))
        }
        DetectionMode::RequestTriggered => None,
    }
}

/// Called when a user request for `r` is served. Only request-triggered
/// sensors notify, and only when the version moved since they last looked.
pub fn sensor_on_request(
    r: &Resource,
    s: &mut SensorState,
    now: SimTime,
    rng: &mut RngStream,
    mode: DetectionMode,
    delay: RangeInclusive<u64>,
) -> Option<SimTime> {
    let moved = r.version > s.last_observed_version;
    s.observe(r);
    match mode {
        DetectionMode::RequestTriggered if moved => {
            Some(now.after(rng.uniform_int(*delay.start(), *delay.end())))
        }
        _ => None,
    }
}

/// Starts a download of `id` as of `now`. In-flight downloads of the same
/// resource are left alone.
pub fn notify_robot(
    world: &World,
    id: ResourceId,
    downloads: &mut ActiveDownloads,
    now: SimTime,
    duration: RangeInclusive<u64>,
    rng: &mut RngStream,
) -> (DownloadId, Snapshot, SimTime) {
    let snap = world.snapshot(id, now);
    let completion = now.after(rng.uniform_int(*duration.start(), *duration.end()));
    (downloads.start(snap, completion), snap, completion)
}

/// Writes a completed download unless the index already holds a newer
/// version. Returns whether the entry was written.
pub fn index_apply(index: &mut Index, snap: &Snapshot) -> bool {
    index.apply_guarded(snap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{unit_for_uniform, StreamId};
    use crate::world::WorldConfig;

    fn resource(version: u64) -> Resource {
        Resource {
            id: 0,
            status: Status::Ok,
            size: 500,
            version,
        }
    }

    fn delays(values: &[u64]) -> RngStream {
        RngStream::scripted(
            StreamId::Notifications,
            values.iter().map(|&v| unit_for_uniform(v, 1, 3)),
        )
    }

    #[test]
    fn change_triggered_delay_bounds() {
        let r = resource(1);
        let mut s = SensorState::observing(&resource(0));
        let mut rng = delays(&[3, 1]);
        let mode = DetectionMode::ChangeTriggered;
        assert_eq!(
            sensor_on_change(&r, &mut s, SimTime(100), &mut rng, mode, 1..=3),
            Some(SimTime(103))
        );
        assert_eq!(
            sensor_on_change(&r, &mut s, SimTime(100), &mut rng, mode, 1..=3),
            Some(SimTime(101))
        );
        assert_eq!(s.last_observed_version, 1);
    }

    #[test]
    fn request_triggered_ignores_changes() {
        let r = resource(1);
        let mut s = SensorState::observing(&resource(0));
        let mut rng = delays(&[]);
        let got = sensor_on_change(
            &r,
            &mut s,
            SimTime(100),
            &mut rng,
            DetectionMode::RequestTriggered,
            1..=3,
        );
        assert_eq!(got, None);
        assert_eq!(s.last_observed_version, 0);
    }

    #[test]
    fn request_sees_newer_version() {
        let mut s = SensorState::observing(&resource(3));
        let mut rng = delays(&[2]);
        let got = sensor_on_request(
            &resource(5),
            &mut s,
            SimTime(10),
            &mut rng,
            DetectionMode::RequestTriggered,
            1..=3,
        );
        assert_eq!(got, Some(SimTime(12)));
        assert_eq!(s.last_observed_version, 5);
    }

    #[test]
    fn request_without_change_is_silent() {
        let mut s = SensorState::observing(&resource(5));
        let got = sensor_on_request(
            &resource(5),
            &mut s,
            SimTime(10),
            &mut delays(&[]),
            DetectionMode::RequestTriggered,
            1..=3,
        );
        assert_eq!(got, None);
    }

    #[test]
    fn two_requests_after_one_change_notify_once() {
        let mut s = SensorState::observing(&resource(0));
        let mut rng = delays(&[1]);
        let r = resource(1);
        let mode = DetectionMode::RequestTriggered;
        let first = sensor_on_request(&r, &mut s, SimTime(10), &mut rng, mode, 1..=3);
        let second = sensor_on_request(&r, &mut s, SimTime(20), &mut rng, mode, 1..=3);
        assert_eq!((first, second), (Some(SimTime(11)), None));
    }

    #[test]
    fn change_triggered_requests_update_but_never_notify() {
        let mut s = SensorState::observing(&resource(0));
        let got = sensor_on_request(
            &resource(2),
            &mut s,
            SimTime(10),
            &mut delays(&[]),
            DetectionMode::ChangeTriggered,
            1..=3,
        );
        assert_eq!(got, None);
        assert_eq!(s.last_observed_version, 2);
    }

    fn one_resource_world() -> World {
        let config = WorldConfig {
            n_resources: 1,
            ..WorldConfig::desk()
        };
        World::from_resources(config, vec![resource(0)])
    }

    #[test]
    fn unbounded_concurrency_without_coalescing() {
        let world = one_resource_world();
        let mut downloads = ActiveDownloads::new();
        let mut rng = RngStream::scripted(
            StreamId::Downloads,
            (1..=6).map(|v| unit_for_uniform(v * 5, 1, 40)),
        );
        for i in 0..5 {
            notify_robot(&world, 0, &mut downloads, SimTime(i), 1..=40, &mut rng);
        }
        assert_eq!(downloads.len(), 5);
        let (_, snap, completion) =
            notify_robot(&world, 0, &mut downloads, SimTime(7), 1..=40, &mut rng);
        assert_eq!(downloads.len(), 6);
        assert_eq!(completion, SimTime(7 + 30));
        assert_eq!(snap.taken_at, SimTime(7));
    }

    #[test]
    fn out_of_order_completions_keep_newest() {
        let mut index = Index::cold(1);
        let snap = |v| Snapshot {
            resource_id: 0,
            status: Status::Ok,
            size: 1,
            version: v,
            taken_at: SimTime(v),
            bytes: 1,
        };
        assert!(index_apply(&mut index, &snap(2)));
        assert!(!index_apply(&mut index, &snap(1)));
        assert_eq!(index.get(0).unwrap().version, 2);

        let mut index = Index::cold(1);
        index_apply(&mut index, &snap(1));
        index_apply(&mut index, &snap(2));
        assert_eq!(index.get(0).unwrap().version, 2);
        assert!(index_apply(&mut index, &snap(2)));
    }
}
