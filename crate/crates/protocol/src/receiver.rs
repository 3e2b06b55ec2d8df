//! Robot side: accepts notifications, queues refetches, and keeps a small
//! index of what it fetched.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{RawQuery, State};
use axum::http::StatusCode;
use axum::routing::get;
use axum::Router;
use tokio::sync::Notify;
use tokio::task::JoinHandle;

use crate::fingerprint::{fingerprint, Digest, FingerprintEntry};
use crate::wire::{decode_notification, Notification, NOTIFY_PATH};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefetchTask {
    pub url: String,
    pub digest: Digest,
    pub status: u16,
    pub size: u64,
    pub seq: u64,
}

impl From<&Notification> for RefetchTask {
    fn from(n: &Notification) -> Self {
        RefetchTask {
            url: n.url.clone(),
            digest: n.digest,
            status: n.status,
            size: n.size,
            seq: n.seq,
        }
    }
}

#[derive(Debug, Default)]
struct Pending {
    tasks: VecDeque<RefetchTask>,
    recent: HashMap<(String, Digest), Instant>,
}

/// Refetch queue that drops a notification when the same `(url, digest)`
/// was accepted less than `window` ago.
#[derive(Debug)]
pub struct RefetchQueue {
    window: Duration,
    pending: Mutex<Pending>,
    ready: Notify,
}

impl RefetchQueue {
    pub fn new(window: Duration) -> Self {
        RefetchQueue {
            window,
            pending: Mutex::new(Pending::default()),
            ready: Notify::new(),
        }
    }

    /// Returns false if the notification was a duplicate.
    pub fn offer(&self, n: &Notification) -> bool {
        self.offer_at(n, Instant::now())
    }

    pub fn offer_at(&self, n: &Notification, now: Instant) -> bool {
        let mut pending = self.pending.lock().unwrap();
        let key = (n.url.clone(), n.digest);
        if let Some(&seen) = pending.recent.get(&key) {
            if now.saturating_duration_since(seen) < self.window {
                return false;
            }
        }
        if pending.recent.len() >= 4096 {
            let window = self.window;
            pending
                .recent
                .retain(|_, t| now.saturating_duration_since(*t) < window);
        }
        pending.recent.insert(key, now);
        pending.tasks.push_back(RefetchTask::from(n));
        drop(pending);
        self.ready.notify_one();
        true
    }

    pub fn len(&self) -> usize {
        self.pending.lock().unwrap().tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn try_pop(&self) -> Option<RefetchTask> {
        self.pending.lock().unwrap().tasks.pop_front()
    }

    pub async fn pop(&self) -> RefetchTask {
        loop {
            if let Some(t) = self.try_pop() {
                return t;
            }
            self.ready.notified().await;
        }
    }
}

#[derive(Debug, Default)]
pub struct ReceiverStats {
    pub accepted: AtomicU64,
    pub duplicates: AtomicU64,
    pub malformed: AtomicU64,
    pub refetched: AtomicU64,
    pub refetch_failures: AtomicU64,
}

#[derive(Debug)]
pub struct Robot {
    pub queue: RefetchQueue,
    pub stats: ReceiverStats,
    index: Mutex<HashMap<String, FingerprintEntry>>,
}

impl Robot {
    pub fn new(dedup_window: Duration) -> Self {
        Robot {
            queue: RefetchQueue::new(dedup_window),
            stats: ReceiverStats::default(),
            index: Mutex::new(HashMap::new()),
        }
    }

    /// Handles one notification query string; the result is the HTTP
    /// status and body to answer with.
    pub fn receive(&self, query: &str) -> (StatusCode, String) {
        match decode_notification(query) {
            Ok(n) => {
                if self.queue.offer(&n) {
                    self.stats.accepted.fetch_add(1, Ordering::Relaxed);
                    tracing::info!(seq = n.seq, url = %n.url, digest = %n.digest, "refetch queued");
                    (StatusCode::OK, "queued\n".into())
                } else {
                    self.stats.duplicates.fetch_add(1, Ordering::Relaxed);
                    (StatusCode::OK, "duplicate\n".into())
                }
            }
            Err(e) => {
                self.stats.malformed.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(error = %e, "malformed notification");
                (StatusCode::BAD_REQUEST, format!("{e}\n"))
            }
        }
    }

    pub fn indexed(&self, url: &str) -> Option<FingerprintEntry> {
        self.index.lock().unwrap().get(url).cloned()
    }

    pub fn index_len(&self) -> usize {
        self.index.lock().unwrap().len()
    }

    fn record(&self, url: String, entry: FingerprintEntry) {
        tracing::info!(
            url = %url,
            digest = %entry.digest,
            status = entry.status,
            size = entry.size,
            "index updated"
        );
        self.index.lock().unwrap().insert(url, entry);
    }
}

async fn notify_handler(State(robot): State<Arc<Robot>>, RawQuery(query): RawQuery) -> (StatusCode, String) {
    robot.receive(query.as_deref().unwrap_or(""))
}

/// Serves `GET /sensor-notify`: 200 on success, 400 on a malformed query.
pub fn receiver_router(robot: Arc<Robot>) -> Router {
    Router::new()
        .route(NOTIFY_PATH, get(notify_handler))
        .with_state(robot)
}

/// Re-downloads every queued URL with a plain GET and indexes the result.
pub fn spawn_refetcher(robot: Arc<Robot>, client: reqwest::Client) -> JoinHandle<()> {
    tokio::spawn(async move {
        loop {
            let task = robot.queue.pop().await;
            let fetched = async {
                let resp = client.get(&task.url).send().await?;
                let status = resp.status().as_u16();
                let content_type = resp
                    .headers()
                    .get(reqwest::header::CONTENT_TYPE)
                    .and_then(|v| v.to_str().ok())
                    .unwrap_or("")
                    .to_owned();
                let body = resp.bytes().await?;
                Ok::<_, reqwest::Error>(fingerprint(&body, status, &content_type))
            }
            .await;
            match fetched {
                Ok(entry) => {
                    robot.stats.refetched.fetch_add(1, Ordering::Relaxed);
                    robot.record(task.url, entry);
                }
                Err(e) => {
                    robot.stats.refetch_failures.fetch_add(1, Ordering::Relaxed);
                    tracing::warn!(url = %task.url, error = %e, "refetch failed");
                }
            }
        }
    })
}
