//! A change sensor for web servers and the crawler endpoint it talks to.
//!
//! The sensor sits in front of a site (as middleware or as a reverse proxy),
//! remembers an MD5 fingerprint of the response to every GET/HEAD request,
//! and sends the crawler a `GET /sensor-notify?...` request whenever a
//! response changes. The crawler side queues a refetch of the changed URL.

pub mod exclusion;
pub mod fingerprint;
pub mod notifier;
pub mod receiver;
pub mod sensor;
pub mod wire;

pub use exclusion::ExclusionRules;
pub use fingerprint::{fingerprint, Digest, FingerprintEntry, FingerprintKey, FingerprintStore, Verdict};
pub use notifier::{spawn_delivery, Notifier};
pub use receiver::{receiver_router, spawn_refetcher, RefetchQueue, Robot};
pub use sensor::{proxy_router, sensor_proxy, with_sensor, Sensor, SensorConfig, SensorStats};
pub use wire::{decode_notification, encode_notification, Notification, WireError, NOTIFY_PATH};
