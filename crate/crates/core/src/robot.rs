//! Pull-based monitoring: one crawler visits every resource in id order,
//! one download at a time, and starts over when it reaches the end.

use std::ops::RangeInclusive;

use crate::engine::{DownloadId, ResourceId, RngStream, SimTime};
use crate::metrics::Index;
use crate::world::{Snapshot, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveDownload {
    pub id: DownloadId,
    pub snapshot: Snapshot,
    pub completion: SimTime,
}

#[derive(Debug, Clone)]
pub struct RobotState {
    n: u32,
    cursor: ResourceId,
    rounds_completed: u64,
    downloads_started: u64,
    active: Option<ActiveDownload>,
}

impl RobotState {
    pub fn new(n_resources: u32) -> Self {
        assert!(n_resources > 0);
        RobotState {
            n: n_resources,
            cursor: 0,
            rounds_completed: 0,
            downloads_started: 0,
            active: None,
        }
    }

    pub fn cursor(&self) -> ResourceId {
        self.cursor
    }

    pub fn rounds_completed(&self) -> u64 {
        self.rounds_completed
    }

    pub fn active(&self) -> Option<&ActiveDownload> {
        self.active.as_ref()
    }

    /// Snapshots the resource under the cursor and draws the download time.
    ///
    /// Panics if a download is already in flight.
    pub fn begin_download(
        &mut self,
        world: &World,
        now: SimTime,
        duration: RangeInclusive<u64>,
        rng: &mut RngStream,
    ) -> ActiveDownload {
        assert!(
            self.active.is_none(),
            "robot already has a download in flight"
        );
        let snapshot = world.snapshot(self.cursor, now);
        let completion = now.after(rng.uniform_int(*duration.start(), *duration.end()));
        let download = ActiveDownload {
            id: self.downloads_started,
            snapshot,
            completion,
        };
        self.downloads_started += 1;
        self.active = Some(download);
        download
    }

    /// Writes the finished download into the index and moves the cursor on,
    /// wrapping (and counting a round) after the last resource.
    pub fn on_complete(&mut self, index: &mut Index, now: SimTime) -> Snapshot {
        let done = self
            .active
            .take()
            .expect("robot completion without an active download");
        assert_eq!(done.completion, now, "robot completion at the wrong time");
        index.replace(&done.snapshot);
        self.cursor += 1;
        if self.cursor == self.n {
            self.cursor = 0;
            self.rounds_completed += 1;
        }
        done.snapshot
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{unit_for_uniform, StreamId};
    use crate::world::{ChangeKind, Resource, Status, WorldConfig};

    fn world(n: u32) -> World {
        let config = WorldConfig {
            n_resources: n,
            ..WorldConfig::desk()
        };
        World::from_resources(
            config,
            (0..n)
                .map(|id| Resource {
                    id,
                    status: Status::Ok,
                    size: 1000 + id,
                    version: 0,
                })
                .collect(),
        )
    }

    fn durations(values: &[u64]) -> RngStream {
        RngStream::scripted(
            StreamId::Downloads,
            values.iter().map(|&v| unit_for_uniform(v, 1, 40)),
        )
    }

    #[test]
    fn completion_bounds() {
        let w = world(2);
        let mut rng = durations(&[40, 1]);
        let mut robot = RobotState::new(2);
        let d = robot.begin_download(&w, SimTime(100), 1..=40, &mut rng);
        assert_eq!(d.completion, SimTime(140));
        let mut index = Index::cold(2);
        robot.on_complete(&mut index, SimTime(140));
        let d = robot.begin_download(&w, SimTime(100), 1..=40, &mut rng);
        assert_eq!(d.completion, SimTime(101));
    }

    #[test]
    fn snapshot_is_taken_at_start() {
        let mut w = world(1);
        let mut robot = RobotState::new(1);
        let d = robot.begin_download(&w, SimTime(100), 1..=40, &mut durations(&[40]));
        // change during the download window
        let mut kind = RngStream::scripted(StreamId::Change(0), [0.2]);
        let (k, observable) = w.change(0, &mut kind);
        assert_eq!((k, observable), (ChangeKind::Err404, true));
        let mut index = Index::cold(1);
        let snap = robot.on_complete(&mut index, d.completion);
        assert_eq!(snap.taken_at, SimTime(100));
        assert_eq!(index.get(0).unwrap().version, 0);
        assert_eq!(w.resource(0).version, 1);
    }

    #[test]
    fn cursor_wraps_and_counts_rounds() {
        let w = world(3);
        let mut rng = durations(&[5, 5, 5, 5]);
        let mut robot = RobotState::new(3);
        let mut index = Index::cold(3);
        let mut now = SimTime(0);
        for expected_cursor in [1, 2, 0] {
            let d = robot.begin_download(&w, now, 1..=40, &mut rng);
            now = d.completion;
            robot.on_complete(&mut index, now);
            assert_eq!(robot.cursor(), expected_cursor);
        }
        assert_eq!(robot.rounds_completed(), 1);
        // back-to-back: the next download may start on the completion tick
        let d = robot.begin_download(&w, now, 1..=40, &mut rng);
        assert_eq!(d.snapshot.taken_at, now);
        assert_eq!(d.snapshot.resource_id, 0);
    }

    #[test]
    #[should_panic(expected = "already has a download")]
    fn second_concurrent_download_panics() {
        let w = world(2);
        let mut rng = durations(&[5, 5]);
        let mut robot = RobotState::new(2);
        robot.begin_download(&w, SimTime(0), 1..=40, &mut rng);
        robot.begin_download(&w, SimTime(0), 1..=40, &mut rng);
    }
}
