use std::collections::{BTreeMap, VecDeque};

use crate::msgbus::TopicName;

use super::envelope::Envelope;
use super::Tier;

#[derive(Debug)]
struct Ring {
    tier: Tier,
    // (insertion id, envelope), seq-ascending
    entries: VecDeque<(u64, Envelope)>,
}

/// Sent-envelope store used to answer replay requests.
///
/// Each topic keeps at most `per_topic` envelopes. When the store as a whole
/// exceeds `total`, the oldest bulk envelope is evicted first, then standard,
/// and critical envelopes only once nothing else is left.
#[derive(Debug)]
pub struct ReplayBuffer {
    per_topic: usize,
    total: usize,
    rings: BTreeMap<TopicName, Ring>,
    len: usize,
    next_id: u64,
    evicted: u64,
}

impl ReplayBuffer {
    pub fn new(per_topic: usize, total: usize) -> Self {
        Self {
            per_topic: per_topic.max(1),
            total: total.max(1),
            rings: BTreeMap::new(),
            len: 0,
            next_id: 0,
            evicted: 0,
        }
    }

    pub fn per_topic_capacity(&self) -> usize {
        self.per_topic
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Envelopes dropped to respect a capacity.
    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    /// Stores `env`. Envelopes must arrive in increasing seq order per topic.
    pub fn insert(&mut self, env: Envelope) {
        let id = self.next_id;
        self.next_id += 1;
        let ring = self.rings.entry(env.topic.clone()).or_insert_with(|| Ring {
            tier: env.tier,
            entries: VecDeque::new(),
        });
        debug_assert!(ring.entries.back().map_or(true, |(_, e)| e.seq < env.seq));
        ring.entries.push_back((id, env));
        self.len += 1;
        if ring.entries.len() > self.per_topic {
            ring.entries.pop_front();
            self.len -= 1;
            self.evicted += 1;
        }
        while self.len > self.total {
            self.evict_one();
        }
    }

    fn evict_one(&mut self) {
        for tier in [Tier::Bulk, Tier::Standard, Tier::Critical] {
            let oldest = self
                .rings
                .iter()
                .filter(|(_, r)| r.tier == tier)
                .filter_map(|(t, r)| r.entries.front().map(|(id, _)| (*id, t.clone())))
                .min();
            if let Some((_, topic)) = oldest {
                let ring = self.rings.get_mut(&topic).expect("found above");
                ring.entries.pop_front();
                self.len -= 1;
                self.evicted += 1;
                return;
            }
        }
    }

    /// Buffered envelopes of `topic` with `from <= seq <= to`, seq-ascending.
    pub fn range(&self, topic: &TopicName, from: u64, to: u64) -> impl Iterator<Item = &Envelope> {
        self.rings
            .get(topic)
            .into_iter()
            .flat_map(|r| r.entries.iter())
            .map(|(_, e)| e)
            .filter(move |e| e.seq >= from && e.seq <= to)
    }

    pub fn topic_len(&self, topic: &TopicName) -> usize {
        self.rings.get(topic).map_or(0, |r| r.entries.len())
    }

    pub fn oldest_seq(&self, topic: &TopicName) -> Option<u64> {
        self.rings.get(topic)?.entries.front().map(|(_, e)| e.seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::envelope::FrameKind;
    use crate::msgbus::MessageKind;
    use crate::netsim::SimTime;

    fn env(topic: &str, tier: Tier, seq: u64) -> Envelope {
        Envelope {
            tier,
            flags: 0,
            seq,
            sim_time: SimTime(seq),
            topic: TopicName::new(topic).unwrap(),
            kind: FrameKind::Data(MessageKind::Blob),
            payload: vec![],
        }
    }

    #[test]
    fn per_topic_ring_drops_oldest() {
        let mut b = ReplayBuffer::new(3, 100);
        for s in 0..5 {
            b.insert(env("/a", Tier::Critical, s));
        }
        let t = TopicName::new("/a").unwrap();
        let seqs: Vec<u64> = b.range(&t, 0, 10).map(|e| e.seq).collect();
        assert_eq!(seqs, vec![2, 3, 4]);
        assert_eq!(b.evicted(), 2);
        assert_eq!(b.oldest_seq(&t), Some(2));
    }

    #[test]
    fn global_capacity_evicts_bulk_then_standard_then_critical() {
        let mut b = ReplayBuffer::new(100, 4);
        b.insert(env("/c", Tier::Critical, 0));
        b.insert(env("/c", Tier::Critical, 1));
        b.insert(env("/s", Tier::Standard, 0));
        b.insert(env("/b", Tier::Bulk, 0));
        b.insert(env("/c", Tier::Critical, 2));
        assert_eq!(b.topic_len(&TopicName::new("/b").unwrap()), 0);
        b.insert(env("/c", Tier::Critical, 3));
        assert_eq!(b.topic_len(&TopicName::new("/s").unwrap()), 0);
        assert_eq!(b.topic_len(&TopicName::new("/c").unwrap()), 4);
        b.insert(env("/c", Tier::Critical, 4));
        let c = TopicName::new("/c").unwrap();
        assert_eq!(b.oldest_seq(&c), Some(1));
        assert_eq!(b.len(), 4);
    }

    #[test]
    fn unknown_topic_range_is_empty() {
        let b = ReplayBuffer::new(4, 4);
        assert_eq!(b.range(&TopicName::new("/x").unwrap(), 0, 9).count(), 0);
    }
}
