//! Discrete-event simulation comparing two ways of keeping a search index in
//! sync with a population of web resources:
//!
//! * **robot**: a single crawler sequentially re-downloads every resource;
//! * **sensors**: a module on each server notices changed responses and
//!   notifies the crawler, which downloads the changed resource right away.
//!
//! Each run reports index freshness and cumulative downloaded bytes on a
//! fixed measurement grid.

pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod robot;
pub mod sensors;
pub mod simulation;
pub mod world;

pub use engine::{RngStream, SimTime, StreamId};
pub use error::{ConfigError, PlanError, ResultsError, SimError};
pub use experiment::{table1_plan, ExperimentPlan, Preset, RunResult, Series, SummaryRow};
pub use metrics::{Index, MetricsSample};
pub use sensors::DetectionMode;
pub use simulation::{simulate, NoopObserver, Observer, RunConfig, RunOutcome, Strategy};
pub use world::{RateSpec, World, WorldConfig};
