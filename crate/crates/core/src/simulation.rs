//! The event loop for a single run.
//!
//! The world's change and request processes draw only from per-resource
//! streams and never see strategy events, so both strategies replay the same
//! world history for the same seed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::{
    DownloadId, EventKind, EventQueue, ResourceId, RngStream, SimTime, StreamId, StreamSource,
};
use crate::error::SimError;
use crate::metrics::{is_fresh, FreshnessTracker, Index, MetricsSample, Sampler};
use crate::robot::RobotState;
use crate::sensors::{
    index_apply, notify_robot, sensor_on_change, sensor_on_request, ActiveDownloads,
    DetectionMode, SensorState,
};
use crate::world::{next_arrival, ChangeKind, RateSpec, Resource, Snapshot, World, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Robot,
    Sensors,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Robot => "robot",
            Strategy::Sensors => "sensors",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "robot" => Ok(Strategy::Robot),
            "sensors" => Ok(Strategy::Sensors),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub rates: RateSpec,
    pub strategy: Strategy,
    pub mode: DetectionMode,
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub samples: Vec<MetricsSample>,
    pub rounds_completed: Option<u64>,
    pub notifications_sent: Option<u64>,
    pub downloads_completed: u64,
    pub bytes_cumulative: u64,
    pub change_events: u64,
    /// Zero when requests were not simulated; see [`Observer::wants_requests`].
    pub request_events: u64,
}

/// Hooks into a running simulation. Every method defaults to doing nothing.
#[allow(unused_variables)]
pub trait Observer {
    fn on_change(&mut self, t: SimTime, r: &Resource, kind: ChangeKind, observable: bool) {}
    fn on_request(&mut self, t: SimTime, id: ResourceId) {}
    fn on_notification_sent(&mut self, t: SimTime, id: ResourceId, arrival: SimTime) {}
    fn on_download_started(&mut self, t: SimTime, snap: &Snapshot, completion: SimTime) {}
    fn on_download_complete(&mut self, t: SimTime, snap: &Snapshot, index_written: bool) {}
    fn on_sample(&mut self, sample: &MetricsSample, world: &World, index: &Index) {}

    /// Request events are only simulated when the strategy reacts to them or
    /// an observer asks for them. They never affect the world.
    fn wants_requests(&self) -> bool {
        false
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoopObserver;

impl Observer for NoopObserver {}

/// Shared mutable state the strategies act on.
struct SimState<'o> {
    queue: EventQueue,
    world: World,
    index: Index,
    tracker: FreshnessTracker,
    bytes: u64,
    downloads_completed: u64,
    download_rng: RngStream,
    notify_rng: RngStream,
    horizon: SimTime,
    observer: &'o mut dyn Observer,
}

impl SimState<'_> {
    fn now(&self) -> SimTime {
        self.queue.now()
    }

    /// Events past the horizon are dropped. Returns whether it was queued.
    fn schedule(&mut self, time: SimTime, kind: EventKind) -> Result<bool, SimError> {
        if time > self.horizon {
            return Ok(false);
        }
        self.queue.schedule(time, kind)?;
        Ok(true)
    }

    fn is_fresh(&self, id: ResourceId) -> bool {
        is_fresh(self.index.get(id), self.world.resource(id))
    }

    fn account(&mut self, snap: &Snapshot, was_fresh: bool, written: bool) {
        let fresh = self.is_fresh(snap.resource_id);
        self.tracker.update(was_fresh, fresh);
        self.bytes += u64::from(snap.bytes);
        self.downloads_completed += 1;
        let now = self.now();
        self.observer.on_download_complete(now, snap, written);
    }

    fn download_range(&self) -> std::ops::RangeInclusive<u64> {
        let c = self.world.config();
        c.download_min..=c.download_max
    }

    fn notify_range(&self) -> std::ops::RangeInclusive<u64> {
        let c = self.world.config();
        c.notify_min..=c.notify_max
    }
}

trait Monitor {
    fn start(&mut self, st: &mut SimState) -> Result<(), SimError>;
    fn on_change(&mut self, st: &mut SimState, id: ResourceId, observable: bool)
        -> Result<(), SimError>;
    fn on_request(&mut self, st: &mut SimState, id: ResourceId) -> Result<(), SimError>;
    fn on_notification(&mut self, st: &mut SimState, id: ResourceId) -> Result<(), SimError>;
    fn on_download_complete(&mut self, st: &mut SimState, id: DownloadId)
        -> Result<(), SimError>;
    fn on_dispatch(&mut self, st: &mut SimState) -> Result<(), SimError>;
    fn rounds_completed(&self) -> Option<u64>;
    fn notifications_sent(&self) -> Option<u64>;
    fn needs_requests(&self) -> bool;
}

struct RobotMonitor {
    state: RobotState,
}

impl RobotMonitor {
    fn begin(&mut self, st: &mut SimState) -> Result<(), SimError> {
        let now = st.now();
        let range = st.download_range();
        let d = self
            .state
            .begin_download(&st.world, now, range, &mut st.download_rng);
        st.observer.on_download_started(now, &d.snapshot, d.completion);
        st.schedule(d.completion, EventKind::DownloadComplete(d.id))?;
        Ok(())
    }
}

impl Monitor for RobotMonitor {
    fn start(&mut self, st: &mut SimState) -> Result<(), SimError> {
        st.schedule(SimTime::ZERO, EventKind::RobotDispatch)?;
        Ok(())
    }

    fn on_change(&mut self, _: &mut SimState, _: ResourceId, _: bool) -> Result<(), SimError> {
        Ok(())
    }

    fn on_request(&mut self, _: &mut SimState, _: ResourceId) -> Result<(), SimError> {
        Ok(())
    }

    fn on_notification(&mut self, _: &mut SimState, id: ResourceId) -> Result<(), SimError> {
        unreachable!("robot strategy received a notification for resource {id}")
    }

    fn on_download_complete(&mut self, st: &mut SimState, id: DownloadId) -> Result<(), SimError> {
        let active = self.state.active().expect("robot completion without download");
        debug_assert_eq!(active.id, id);
        let was = st.is_fresh(active.snapshot.resource_id);
        let now = st.now();
        let snap = self.state.on_complete(&mut st.index, now);
        st.account(&snap, was, true);
        self.begin(st)
    }

    fn on_dispatch(&mut self, st: &mut SimState) -> Result<(), SimError> {
        self.begin(st)
    }

    fn rounds_completed(&self) -> Option<u64> {
        Some(self.state.rounds_completed())
    }

    fn notifications_sent(&self) -> Option<u64> {
        None
    }

    fn needs_requests(&self) -> bool {
        false
    }
}

struct SensorsMonitor {
    mode: DetectionMode,
    sensors: Vec<SensorState>,
    downloads: ActiveDownloads,
    notifications_sent: u64,
}

impl SensorsMonitor {
    fn send(&mut self, st: &mut SimState, id: ResourceId, arrival: SimTime) -> Result<(), SimError> {
        self.notifications_sent += 1;
        let now = st.now();
        st.observer.on_notification_sent(now, id, arrival);
        let version = st.world.resource(id).version;
        st.schedule(arrival, EventKind::NotificationArrival(id, version))?;
        Ok(())
    }
}

impl Monitor for SensorsMonitor {
    fn start(&mut self, _: &mut SimState) -> Result<(), SimError> {
        Ok(())
    }

    fn on_change(
        &mut self,
        st: &mut SimState,
        id: ResourceId,
        observable: bool,
    ) -> Result<(), SimError> {
        if !observable {
            return Ok(());
        }
        let now = st.now();
        let range = st.notify_range();
        let arrival = sensor_on_change(
            st.world.resource(id),
            &mut self.sensors[id as usize],
            now,
            &mut st.notify_rng,
            self.mode,
            range,
        );
        match arrival {
            Some(at) => self.send(st, id, at),
            None => Ok(()),
        }
    }

    fn on_request(&mut self, st: &mut SimState, id: ResourceId) -> Result<(), SimError> {
        let now = st.now();
        let range = st.notify_range();
        let arrival = sensor_on_request(
            st.world.resource(id),
            &mut self.sensors[id as usize],
            now,
            &mut st.notify_rng,
            self.mode,
            range,
        );
        match arrival {
            Some(at) => self.send(st, id, at),
            None => Ok(()),
        }
    }

    fn on_notification(&mut self, st: &mut SimState, id: ResourceId) -> Result<(), SimError> {
        let now = st.now();
        let range = st.download_range();
        let (download, snap, completion) = notify_robot(
            &st.world,
            id,
            &mut self.downloads,
            now,
            range,
            &mut st.download_rng,
        );
        st.observer.on_download_started(now, &snap, completion);
        if !st.schedule(completion, EventKind::DownloadComplete(download))? {
            // finishes after the horizon
            self.downloads.finish(download);
        }
        Ok(())
    }

    fn on_download_complete(&mut self, st: &mut SimState, id: DownloadId) -> Result<(), SimError> {
        let (snap, completion) = self
            .downloads
            .finish(id)
            .expect("completion for an unknown download");
        debug_assert_eq!(completion, st.now());
        let was = st.is_fresh(snap.resource_id);
        let written = index_apply(&mut st.index, &snap);
        st.account(&snap, was, written);
        Ok(())
    }

    fn on_dispatch(&mut self, _: &mut SimState) -> Result<(), SimError> {
        Ok(())
    }

    fn rounds_completed(&self) -> Option<u64> {
        None
    }

    fn notifications_sent(&self) -> Option<u64> {
        Some(self.notifications_sent)
    }

    fn needs_requests(&self) -> bool {
        self.mode == DetectionMode::RequestTriggered
    }
}

/// Runs one simulation from t=0 to the horizon. Events at exactly the
/// horizon are processed.
pub fn simulate(
    cfg: &RunConfig,
    streams: &dyn StreamSource,
    observer: &mut dyn Observer,
) -> Result<RunOutcome, SimError> {
    cfg.world.validate()?;
    let world = World::init(cfg.world.clone(), &mut streams.stream(StreamId::Sizes));
    let index = if cfg.warm_start {
        Index::warm(&world)
    } else {
        Index::cold(world.len())
    };
    let horizon = cfg.world.horizon;
    let n = cfg.world.n_resources;
    let mut change_rngs: Vec<RngStream> = (0..n).map(|i| streams.stream(StreamId::Change(i))).collect();
    let mut request_rngs: Vec<RngStream> = Vec::new();
    let mut sampler = Sampler::new(cfg.world.measurement_interval, horizon);

    let mut monitor: Box<dyn Monitor> = match cfg.strategy {
        Strategy::Robot => Box::new(RobotMonitor {
            state: RobotState::new(n),
        }),
        Strategy::Sensors => Box::new(SensorsMonitor {
            mode: cfg.mode,
            sensors: world.resources().iter().map(SensorState::observing).collect(),
            downloads: ActiveDownloads::new(),
            notifications_sent: 0,
        }),
    };

    let track_requests = monitor.needs_requests() || observer.wants_requests();
    if track_requests {
        request_rngs = (0..n).map(|i| streams.stream(StreamId::Request(i))).collect();
    }
    let mut st = SimState {
        queue: EventQueue::new(),
        tracker: FreshnessTracker::scan(&index, &world),
        world,
        index,
        bytes: 0,
        downloads_completed: 0,
        download_rng: streams.stream(StreamId::Downloads),
        notify_rng: streams.stream(StreamId::Notifications),
        horizon,
        observer,
    };

    for id in 0..n {
        let i = id as usize;
        if let Some(d) = next_arrival(&mut change_rngs[i], cfg.rates.changes, horizon) {
            st.schedule(SimTime(d), EventKind::Change(id))?;
        }
        if !track_requests {
            continue;
        }
        if let Some(d) = next_arrival(&mut request_rngs[i], cfg.rates.requests, horizon) {
            st.schedule(SimTime(d), EventKind::Request(id))?;
        }
    }
    if let Some(t) = sampler.first_tick() {
        st.schedule(t, EventKind::MeasurementTick)?;
    }
    monitor.start(&mut st)?;

    let mut change_events = 0u64;
    let mut request_events = 0u64;
    while let Some(event) = st.queue.next_event() {
        let now = event.time;
        match event.kind {
            EventKind::Change(id) => {
                change_events += 1;
                let i = id as usize;
                let was = st.is_fresh(id);
                let (kind, observable) = st.world.change(id, &mut change_rngs[i]);
                let fresh = st.is_fresh(id);
                st.tracker.update(was, fresh);
                st.observer
                    .on_change(now, st.world.resource(id), kind, observable);
                monitor.on_change(&mut st, id, observable)?;
                if let Some(d) = next_arrival(&mut change_rngs[i], cfg.rates.changes, horizon) {
                    st.schedule(now.after(d), EventKind::Change(id))?;
                }
            }
            EventKind::Request(id) => {
                request_events += 1;
                st.observer.on_request(now, id);
                monitor.on_request(&mut st, id)?;
                let rng = &mut request_rngs[id as usize];
                if let Some(d) = next_arrival(rng, cfg.rates.requests, horizon) {
                    st.schedule(now.after(d), EventKind::Request(id))?;
                }
            }
            EventKind::NotificationArrival(id, _) => monitor.on_notification(&mut st, id)?,
            EventKind::DownloadComplete(id) => monitor.on_download_complete(&mut st, id)?,
            EventKind::RobotDispatch => monitor.on_dispatch(&mut st)?,
            EventKind::MeasurementTick => {
                let next = sampler.on_measurement_tick(now, st.tracker.percent(), st.bytes);
                let sample = *sampler.samples().last().expect("sample just pushed");
                st.observer.on_sample(&sample, &st.world, &st.index);
                if let Some(t) = next {
                    st.schedule(t, EventKind::MeasurementTick)?;
                }
            }
        }
    }

    Ok(RunOutcome {
        samples: sampler.into_samples(),
        rounds_completed: monitor.rounds_completed(),
        notifications_sent: monitor.notifications_sent(),
        downloads_completed: st.downloads_completed,
        bytes_cumulative: st.bytes,
        change_events,
        request_events,
    })
}
