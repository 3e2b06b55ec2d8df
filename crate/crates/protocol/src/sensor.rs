//! The sensor: middleware that fingerprints every response it serves and
//! queues a notification when a response differs from the previous one for
//! the same request.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderName, Method, StatusCode, Uri};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::Router;

use crate::exclusion::ExclusionRules;
use crate::fingerprint::{fingerprint, FingerprintKey, FingerprintStore, Verdict};
use crate::notifier::Notifier;
use crate::wire::Notification;

/// Statuses whose responses describe a resource and are fingerprinted.
pub const TRACKED_STATUSES: [u16; 4] = [200, 403, 404, 500];

#[derive(Debug, Clone)]
pub struct SensorConfig {
    /// Prefix for notification URLs, e.g. `http://www.example.org`.
    pub public_base: String,
    /// Also notify the first time a request is seen.
    pub notify_on_new: bool,
    /// Largest body the sensor buffers; bigger responses pass unobserved.
    pub max_body: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            public_base: String::new(),
            notify_on_new: false,
            max_body: 64 << 20,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    fingerprints: AtomicU64,
    notifications: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SensorStats {
    pub requests: u64,
    pub fingerprints: u64,
    pub notifications: u64,
    pub overflows: u64,
    pub delivered: u64,
    pub delivery_failures: u64,
}

impl fmt::Display for SensorStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "requests={} fingerprints={} notifications={} overflows={} delivered={} delivery_failures={}",
            self.requests,
            self.fingerprints,
            self.notifications,
            self.overflows,
            self.delivered,
            self.delivery_failures
        )
    }
}

#[derive(Debug)]
pub struct Sensor {
    config: SensorConfig,
    rules: ExclusionRules,
    store: FingerprintStore,
    notifier: Arc<Notifier>,
    next_seq: AtomicU64,
    counters: Counters,
}

impl Sensor {
    pub fn new(config: SensorConfig, rules: ExclusionRules, notifier: Arc<Notifier>) -> Self {
        Sensor {
            config,
            rules,
            store: FingerprintStore::new(),
            notifier,
            next_seq: AtomicU64::new(1),
            counters: Counters::default(),
        }
    }

    pub fn store(&self) -> &FingerprintStore {
        &self.store
    }

    pub fn notifier(&self) -> &Arc<Notifier> {
        &self.notifier
    }

    pub fn stats(&self) -> SensorStats {
        SensorStats {
            requests: self.counters.requests.load(Ordering::Relaxed),
            fingerprints: self.counters.fingerprints.load(Ordering::Relaxed),
            notifications: self.counters.notifications.load(Ordering::Relaxed),
            overflows: self.notifier.overflows(),
            delivered: self.notifier.delivered(),
            delivery_failures: self.notifier.failures(),
        }
    }

    /// Whether a request is fingerprinted at all, before seeing the response.
    pub fn tracks_request(&self, method: &Method, path: &str) -> bool {
        (method == Method::GET || method == Method::HEAD) && !self.rules.is_excluded(path)
    }

    /// Fingerprints one served response and queues a notification if it
    /// changed. Returns the queued notification, if any.
    pub fn observe_response(
        &self,
        method: &Method,
        uri: &Uri,
        status: u16,
        content_type: &str,
        body: &[u8],
    ) -> Option<Notification> {
        let path = uri.path();
        if !self.tracks_request(method, path) || !TRACKED_STATUSES.contains(&status) {
            return None;
        }
        let entry = fingerprint(body, status, content_type);
        let (digest, size) = (entry.digest, entry.size);
        let query = uri.query().unwrap_or("");
        self.counters.fingerprints.fetch_add(1, Ordering::Relaxed);
        let verdict = self
            .store
            .observe(FingerprintKey::new(method.as_str(), path, query), entry);
        let notify = match verdict {
            Verdict::Changed => true,
            Verdict::New => self.config.notify_on_new,
            Verdict::Unchanged => false,
        };
        if !notify {
            return None;
        }
        let url = match uri.query() {
            Some(q) => format!("{}{path}?{q}", self.config.public_base),
            None => format!("{}{path}", self.config.public_base),
        };
        let n = Notification {
            url,
            digest,
            status,
            size,
            seq: self.next_seq.fetch_add(1, Ordering::Relaxed),
        };
        self.counters.notifications.fetch_add(1, Ordering::Relaxed);
        self.notifier.push(n.clone());
        Some(n)
    }
}

async fn sensor_middleware(State(sensor): State<Arc<Sensor>>, req: Request, next: Next) -> Response {
    sensor.counters.requests.fetch_add(1, Ordering::Relaxed);
    let method = req.method().clone();
    let uri = req.uri().clone();
    if !sensor.tracks_request(&method, uri.path()) {
        return next.run(req).await;
    }
    let response = next.run(req).await;
    if !TRACKED_STATUSES.contains(&response.status().as_u16()) {
        return response;
    }
    let (parts, body) = response.into_parts();
    let bytes = match to_bytes(body, sensor.config.max_body).await {
        Ok(bytes) => bytes,
        Err(e) => {
            tracing::warn!(path = uri.path(), error = %e, "response body not observable");
            return Response::from_parts(parts, Body::empty());
        }
    };
    let content_type = parts
        .headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("");
    sensor.observe_response(&method, &uri, parts.status.as_u16(), content_type, &bytes);
    Response::from_parts(parts, Body::from(bytes))
}

/// Wraps `origin` so every response it produces passes through `sensor`.
/// Responses reach the client unchanged.
pub fn with_sensor(origin: Router, sensor: Arc<Sensor>) -> Router {
    origin.layer(middleware::from_fn_with_state(sensor, sensor_middleware))
}

const HOP_BY_HOP: [HeaderName; 6] = [
    header::CONNECTION,
    header::TRANSFER_ENCODING,
    header::TE,
    header::TRAILER,
    header::UPGRADE,
    header::PROXY_AUTHORIZATION,
];

fn copy_end_to_end(from: &HeaderMap, to: &mut HeaderMap) {
    for (name, value) in from {
        if name != header::HOST && !HOP_BY_HOP.contains(name) && name.as_str() != "keep-alive" {
            to.append(name.clone(), value.clone());
        }
    }
}

#[derive(Debug, Clone)]
struct Upstream {
    base: String,
    client: reqwest::Client,
}

async fn forward(State(upstream): State<Upstream>, req: Request) -> Response {
    let (parts, body) = req.into_parts();
    let target = parts
        .uri
        .path_and_query()
        .map_or_else(|| parts.uri.path().to_owned(), |pq| pq.as_str().to_owned());
    let body = match to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(_) => return StatusCode::BAD_REQUEST.into_response(),
    };
    let mut headers = HeaderMap::new();
    copy_end_to_end(&parts.headers, &mut headers);
    let sent = upstream
        .client
        .request(parts.method, format!("{}{target}", upstream.base))
        .headers(headers)
        .body(body)
        .send()
        .await;
    let resp = match sent {
        Ok(resp) => resp,
        Err(e) => {
            tracing::warn!(error = %e, "origin unreachable");
            return StatusCode::BAD_GATEWAY.into_response();
        }
    };
    let status = resp.status();
    let mut headers = HeaderMap::new();
    copy_end_to_end(resp.headers(), &mut headers);
    match resp.bytes().await {
        Ok(bytes) => {
            let mut out = Response::new(Body::from(bytes));
            *out.status_mut() = status;
            *out.headers_mut() = headers;
            out
        }
        Err(e) => {
            tracing::warn!(error = %e, "origin body failed");
            StatusCode::BAD_GATEWAY.into_response()
        }
    }
}

/// A router that forwards every request to `origin_base`
/// (e.g. `http://127.0.0.1:8080`).
pub fn proxy_router(origin_base: &str, client: reqwest::Client) -> Router {
    Router::new().fallback(forward).with_state(Upstream {
        base: origin_base.trim_end_matches('/').to_owned(),
        client,
    })
}

/// Reverse proxy to `origin_base` with the sensor in front.
pub fn sensor_proxy(origin_base: &str, client: reqwest::Client, sensor: Arc<Sensor>) -> Router {
    with_sensor(proxy_router(origin_base, client), sensor)
}
