use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use futures::Stream;
use lm2m_core::wire::{Path, ResourceValue};
use serde::Serialize;
use tokio::sync::{broadcast, watch};

/// Per-subscriber buffer; the oldest notification is dropped on overflow.
pub const SUBSCRIBER_BUFFER: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Notification {
    pub timestamp_ms: u64,
    pub value: ResourceValue,
}

pub type ObserveKey = (String, Path);

struct Upstream {
    token: Vec<u8>,
    tx: broadcast::Sender<Notification>,
    subscribers: HashMap<String, watch::Sender<bool>>,
}

/// One upstream observation per (endpoint, path), fanned out to
/// subscribers.
#[derive(Default)]
pub struct ObservationHub {
    upstreams: HashMap<ObserveKey, Upstream>,
    tokens: HashMap<Vec<u8>, ObserveKey>,
    dropped: Arc<AtomicU64>,
}

impl ObservationHub {
    pub fn has_upstream(&self, key: &ObserveKey) -> bool {
        self.upstreams.contains_key(key)
    }

    pub fn is_subscribed(&self, key: &ObserveKey, subscriber: &str) -> bool {
        self.upstreams
            .get(key)
            .is_some_and(|u| u.subscribers.contains_key(subscriber))
    }

    pub fn token(&self, key: &ObserveKey) -> Option<Vec<u8>> {
        self.upstreams.get(key).map(|u| u.token.clone())
    }

    /// Registers a new upstream observation identified by `token`.
    pub fn open_upstream(&mut self, key: ObserveKey, token: Vec<u8>) {
        let (tx, _) = broadcast::channel(SUBSCRIBER_BUFFER);
        self.tokens.insert(token.clone(), key.clone());
        self.upstreams.insert(
            key,
            Upstream {
                token,
                tx,
                subscribers: HashMap::new(),
            },
        );
    }

    /// Adds a subscriber. Returns false if it was already subscribed.
    pub fn subscribe(&mut self, key: &ObserveKey, subscriber: &str) -> bool {
        let Some(u) = self.upstreams.get_mut(key) else {
            return false;
        };
        if u.subscribers.contains_key(subscriber) {
            return false;
        }
        u.subscribers.insert(subscriber.to_owned(), watch::channel(false).0);
        true
    }

    /// Removes a subscriber. When it was the last one the upstream is
    /// closed and its token returned so the device can be told.
    pub fn unsubscribe(&mut self, key: &ObserveKey, subscriber: &str) -> Option<Option<Vec<u8>>> {
        let u = self.upstreams.get_mut(key)?;
        let cancel = u.subscribers.remove(subscriber)?;
        let _ = cancel.send(true);
        if !u.subscribers.is_empty() {
            return Some(None);
        }
        let u = self.upstreams.remove(key).expect("present");
        self.tokens.remove(&u.token);
        Some(Some(u.token))
    }

    /// Drops every observation of `endpoint`; open streams end.
    pub fn drop_endpoint(&mut self, endpoint: &str) -> usize {
        let keys: Vec<ObserveKey> = self
            .upstreams
            .keys()
            .filter(|(ep, _)| ep == endpoint)
            .cloned()
            .collect();
        for k in &keys {
            if let Some(u) = self.upstreams.remove(k) {
                self.tokens.remove(&u.token);
                for (_, cancel) in u.subscribers {
                    let _ = cancel.send(true);
                }
            }
        }
        keys.len()
    }

    /// Delivers a device notification. Returns false for unknown tokens.
    pub fn publish(&self, token: &[u8], n: Notification) -> bool {
        let Some(key) = self.tokens.get(token) else {
            return false;
        };
        if let Some(u) = self.upstreams.get(key) {
            let _ = u.tx.send(n);
        }
        true
    }

    /// Notification stream for one subscriber; ends on cancel or when the
    /// observation is dropped.
    pub fn stream(&self, key: &ObserveKey, subscriber: &str) -> Option<impl Stream<Item = Notification> + Send + 'static> {
        let u = self.upstreams.get(key)?;
        let cancel = u.subscribers.get(subscriber)?.subscribe();
        let rx = u.tx.subscribe();
        let dropped = self.dropped.clone();
        Some(futures::stream::unfold(
            (rx, cancel, dropped),
            |(mut rx, mut cancel, dropped)| async move {
                loop {
                    if *cancel.borrow() {
                        return None;
                    }
                    tokio::select! {
                        changed = cancel.changed() => {
                            if changed.is_err() {
                                return None;
                            }
                        }
                        item = rx.recv() => match item {
                            Ok(n) => return Some((n, (rx, cancel, dropped))),
                            Err(broadcast::error::RecvError::Lagged(k)) => {
                                dropped.fetch_add(k, Ordering::Relaxed);
                            }
                            Err(broadcast::error::RecvError::Closed) => return None,
                        },
                    }
                }
            },
        ))
    }

    /// Notifications discarded because a subscriber fell behind.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn upstream_count(&self) -> usize {
        self.upstreams.len()
    }
}
