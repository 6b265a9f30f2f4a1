use std::collections::VecDeque;
use std::sync::Mutex;

use tokio::sync::Notify;

use crate::protocol::{Envelope, ServerMessage};

/// Bounded per-client queue of outbound messages. The simulation side never
/// blocks on it: when full, the oldest message is discarded and the next
/// message handed to the client reports how many were lost.
#[derive(Debug)]
pub struct Outbox {
    capacity: usize,
    inner: Mutex<Inner>,
    notify: Notify,
}

#[derive(Debug, Default)]
struct Inner {
    queue: VecDeque<ServerMessage>,
    dropped: u64,
    closed: bool,
}

impl Outbox {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            inner: Mutex::new(Inner::default()),
            notify: Notify::new(),
        }
    }

    pub fn push(&self, message: ServerMessage) {
        {
            let mut inner = self.inner.lock().expect("outbox lock");
            if inner.closed {
                return;
            }
            if inner.queue.len() == self.capacity {
                inner.queue.pop_front();
                inner.dropped += 1;
            }
            inner.queue.push_back(message);
        }
        self.notify.notify_one();
    }

    /// Next message, tagged with the number of messages dropped before it.
    pub fn pop(&self) -> Option<Envelope> {
        let mut inner = self.inner.lock().expect("outbox lock");
        let message = inner.queue.pop_front()?;
        Some(Envelope {
            message,
            dropped: std::mem::take(&mut inner.dropped),
        })
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("outbox lock").queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn close(&self) {
        self.inner.lock().expect("outbox lock").closed = true;
        self.notify.notify_one();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().expect("outbox lock").closed
    }

    /// Waits until a message is pushed or the outbox is closed.
    pub async fn ready(&self) {
        self.notify.notified().await
    }
}
