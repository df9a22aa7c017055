//! In-process topic bus with bounded per-subscriber queues.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::SimTime;

/// Largest payload a message may carry (16 MiB).
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("invalid topic name {0:?}")]
    InvalidTopic(String),
    #[error("topic {topic} already advertised as {existing:?}, not {requested:?}")]
    KindMismatch {
        topic: TopicName,
        existing: MessageKind,
        requested: MessageKind,
    },
    #[error("payload of {0} bytes exceeds the 16 MiB limit")]
    PayloadTooLarge(usize),
    #[error("publish time {time} precedes previous publish at {previous}")]
    NonMonotonicTime { time: SimTime, previous: SimTime },
    #[error("queue capacity must be at least 1")]
    ZeroCapacity,
}

/// A path-like topic name such as `/robot1/odom`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TopicName(String);

impl TopicName {
    pub fn new(name: impl Into<String>) -> Result<Self, BusError> {
        let name = name.into();
        if name.is_empty() || !name.starts_with('/') || name.chars().any(char::is_whitespace) {
            return Err(BusError::InvalidTopic(name));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TopicName {
    type Error = BusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<TopicName> for String {
    fn from(t: TopicName) -> String {
        t.0
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Pose,
    Twist,
    #[serde(rename = "scan2d")]
    Scan2D,
    PointCloud,
    Command,
    Blob,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::Pose,
        MessageKind::Twist,
        MessageKind::Scan2D,
        MessageKind::PointCloud,
        MessageKind::Command,
        MessageKind::Blob,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: TopicName,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
    pub publish_time: SimTime,
}

#[derive(Debug)]
struct SubQueue {
    capacity: usize,
    queue: VecDeque<Message>,
    delivered: u64,
    dropped: u64,
}

#[derive(Debug, Default)]
struct TopicEntry {
    kind: Option<MessageKind>,
    published: u64,
    subscribers: Vec<Arc<Mutex<SubQueue>>>,
}

#[derive(Debug, Default)]
struct BusInner {
    topics: BTreeMap<TopicName, TopicEntry>,
}

/// Cheaply clonable handle to a shared bus.
#[derive(Debug, Clone, Default)]
pub struct Bus {
    inner: Arc<Mutex<BusInner>>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares `topic` with `kind`. Re-advertising with the same kind is a no-op.
    pub fn advertise(&self, topic: &str, kind: MessageKind) -> Result<PublisherHandle, BusError> {
        let topic = TopicName::new(topic)?;
        let mut inner = self.inner.lock();
        let entry = inner.topics.entry(topic.clone()).or_default();
        match entry.kind {
            Some(existing) if existing != kind => {
                return Err(BusError::KindMismatch {
                    topic,
                    existing,
                    requested: kind,
                })
            }
            _ => entry.kind = Some(kind),
        }
        Ok(PublisherHandle {
            bus: self.clone(),
            topic,
            kind,
            last_time: None,
        })
    }

    /// Attaches a new subscriber. The topic need not be advertised yet.
    pub fn subscribe(&self, topic: &str, capacity: usize) -> Result<SubscriberHandle, BusError> {
        if capacity == 0 {
            return Err(BusError::ZeroCapacity);
        }
        let topic = TopicName::new(topic)?;
        let queue = Arc::new(Mutex::new(SubQueue {
            capacity,
            queue: VecDeque::new(),
            delivered: 0,
            dropped: 0,
        }));
        self.inner
            .lock()
            .topics
            .entry(topic.clone())
            .or_default()
            .subscribers
            .push(queue.clone());
        Ok(SubscriberHandle { topic, queue })
    }

    /// Snapshot of advertised topics.
    pub fn list_topics(&self) -> BTreeSet<(TopicName, MessageKind)> {
        self.inner
            .lock()
            .topics
            .iter()
            .filter_map(|(name, e)| e.kind.map(|k| (name.clone(), k)))
            .collect()
    }

    pub fn stats(&self) -> BusStats {
        let inner = self.inner.lock();
        let topics = inner
            .topics
            .iter()
            .map(|(name, e)| {
                let depths = e.subscribers.iter().map(|s| s.lock().queue.len()).collect();
                (
                    name.clone(),
                    TopicStats {
                        published: e.published,
                        subscribers: e.subscribers.len(),
                        queue_depths: depths,
                    },
                )
            })
            .collect();
        BusStats { topics }
    }

    fn deliver(&self, msg: Message) {
        let mut inner = self.inner.lock();
        let entry = inner
            .topics
            .get_mut(&msg.topic)
            .expect("publisher implies advertised topic");
        entry.published += 1;
        let n = entry.subscribers.len();
        for (i, sub) in entry.subscribers.iter().enumerate() {
            let mut q = sub.lock();
            if q.queue.len() == q.capacity {
                q.queue.pop_front();
                q.dropped += 1;
            }
            // avoid one clone for the last subscriber
            if i + 1 == n {
                q.queue.push_back(msg);
                break;
            }
            q.queue.push_back(msg.clone());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicStats {
    pub published: u64,
    pub subscribers: usize,
    pub queue_depths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BusStats {
    pub topics: BTreeMap<TopicName, TopicStats>,
}

#[derive(Debug, Clone)]
pub struct PublisherHandle {
    bus: Bus,
    topic: TopicName,
    kind: MessageKind,
    last_time: Option<SimTime>,
}

impl PublisherHandle {
    pub fn topic(&self) -> &TopicName {
        &self.topic
    }

    pub fn kind(&self) -> MessageKind {
        self.kind
    }

    pub fn publish(&mut self, payload: Vec<u8>, time: SimTime) -> Result<(), BusError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(BusError::PayloadTooLarge(payload.len()));
        }
        if let Some(previous) = self.last_time {
            if time < previous {
                return Err(BusError::NonMonotonicTime { time, previous });
            }
        }
        self.last_time = Some(time);
        self.bus.deliver(Message {
            topic: self.topic.clone(),
            kind: self.kind,
            payload,
            publish_time: time,
        });
        Ok(())
    }
}

/// Single-consumer receive side of a subscription.
#[derive(Debug)]
pub struct SubscriberHandle {
    topic: TopicName,
    queue: Arc<Mutex<SubQueue>>,
}

impl SubscriberHandle {
    pub fn topic(&self) -> &TopicName {
        &self.topic
    }

    pub fn try_recv(&mut self) -> Option<Message> {
        let mut q = self.queue.lock();
        let m = q.queue.pop_front();
        if m.is_some() {
            q.delivered += 1;
        }
        m
    }

    pub fn drain(&mut self) -> Vec<Message> {
        let mut q = self.queue.lock();
        let out: Vec<_> = q.queue.drain(..).collect();
        q.delivered += out.len() as u64;
        out
    }

    pub fn len(&self) -> usize {
        self.queue.lock().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Messages evicted because the queue was full.
    pub fn drops(&self) -> u64 {
        self.queue.lock().dropped
    }

    /// Messages handed to the consumer so far.
    pub fn delivered(&self) -> u64 {
        self.queue.lock().delivered
    }
}
