//! Bounded outbox between request handling and notification delivery.
//!
//! Pushing never blocks. When the outbox is full the oldest notification is
//! dropped and counted.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use tokio::sync::Notify;
use tokio::task::JoinHandle;

use crate::wire::{encode_notification, Notification, NOTIFY_PATH};

#[derive(Debug)]
pub struct Notifier {
    capacity: usize,
    queue: Mutex<VecDeque<Notification>>,
    ready: Notify,
    overflows: AtomicU64,
    delivered: AtomicU64,
    failures: AtomicU64,
}

impl Notifier {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "notifier capacity must be positive");
        Notifier {
            capacity,
            queue: Mutex::new(VecDeque::with_capacity(capacity.min(1024))),
            ready: Notify::new(),
            overflows: AtomicU64::new(0),
            delivered: AtomicU64::new(0),
            failures: AtomicU64::new(0),
        }
    }

    pub fn push(&self, n: Notification) {
        {
            let mut queue = self.queue.lock().unwrap();
            if queue.len() == self.capacity {
                queue.pop_front();
                self.overflows.fetch_add(1, Ordering::Relaxed);
            }
            queue.push_back(n);
        }
        self.ready.notify_one();
    }

    pub fn try_pop(&self) -> Option<Notification> {
        self.queue.lock().unwrap().pop_front()
    }

    pub async fn pop(&self) -> Notification {
        loop {
            if let Some(n) = self.try_pop() {
                return n;
            }
            self.ready.notified().await;
        }
    }

    pub fn drain(&self) -> Vec<Notification> {
        self.queue.lock().unwrap().drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn overflows(&self) -> u64 {
        self.overflows.load(Ordering::Relaxed)
    }

    pub fn delivered(&self) -> u64 {
        self.delivered.load(Ordering::Relaxed)
    }

    pub fn failures(&self) -> u64 {
        self.failures.load(Ordering::Relaxed)
    }
}

/// Sends queued notifications to `robot_base` (e.g. `http://127.0.0.1:8090`)
/// one at a time, forever. Failures are logged and counted, never retried.
pub fn spawn_delivery(
    notifier: Arc<Notifier>,
    robot_base: String,
    client: reqwest::Client,
) -> JoinHandle<()> {
    let base = robot_base.trim_end_matches('/').to_owned();
    tokio::spawn(async move {
        loop {
            let n = notifier.pop().await;
            let url = format!("{base}{}", encode_notification(&n, NOTIFY_PATH));
            match client.get(&url).send().await {
                Ok(resp) if resp.status().is_success() => {
                    notifier.delivered.fetch_add(1, Ordering::Relaxed);
                    tracing::debug!(seq = n.seq, url = %n.url, "notification delivered");
                }
                Ok(resp) => {
                    notifier.failures.fetch_add(1, Ordering::Relaxed);
                    tracing::warn!(seq = n.seq, status = %resp.status(), "robot rejected notification");
                }
                Err(e) => {
                    notifier.failures.fetch_add(1, Ordering::Relaxed);
                    tracing::warn!(seq = n.seq, error = %e, "notification delivery failed");
                }
            }
        }
    })
}
