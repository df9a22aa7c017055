use std::collections::{BTreeMap, BTreeSet};

use glob::Pattern;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::msgbus::{Bus, BusError, Message, PublisherHandle, SubscriberHandle, TopicName};
use crate::netsim::{NetLink, SimClock, SimTime};

use super::envelope::{decode_batch, Control, Envelope, FrameKind, FLAG_REPLAY};
use super::policy::{compile, PolicyError, PriorityPolicy, MATCH};
use super::replay::ReplayBuffer;
use super::scheduler::{schedule_with_shares, TierQueues};
use super::Tier;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("invalid bridge configuration: {0}")]
    Config(String),
}

/// Tunables of one bridge endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    /// Per-tier queues with strict priority; `false` gives one FIFO queue.
    pub prioritized: bool,
    /// Buffer sent envelopes and repair critical-tier gaps.
    pub replay: bool,
    /// Guaranteed minimum fraction of each tick's budget per tier.
    pub shares: [f64; 3],
    /// Extra copies sent of every critical-tier packet.
    pub redundancy: u8,
    /// Maximum envelopes packed into one link packet.
    pub batch: usize,
    /// Egress tick period, seconds.
    pub tick: f64,
    /// Egress rate limit in bytes/s; `None` sends everything each tick.
    pub budget: Option<f64>,
    /// Per-tier send queue limit in frames (the FIFO queue gets three times this).
    pub queue_limit: usize,
    /// Replay buffer capacity per topic; also the dedup window.
    pub replay_depth: usize,
    /// Replay buffer capacity across all topics.
    pub replay_total: usize,
    /// Period of high-water announcements on critical topics, seconds.
    pub heartbeat: f64,
    /// Minimum spacing of repeated replay requests for one seq, seconds.
    pub nak_retry: f64,
    /// Give up on a missing critical seq after this long, seconds.
    pub hold_timeout: f64,
    /// Capacity of the egress subscriptions on the local bus.
    pub subscriber_queue: usize,
    /// Topics bridged from startup regardless of discovery.
    pub static_topics: Vec<String>,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            prioritized: true,
            replay: true,
            shares: [0.0, 0.0, 0.05],
            redundancy: 0,
            batch: 1,
            tick: 0.01,
            budget: None,
            queue_limit: 512,
            replay_depth: 256,
            replay_total: 4096,
            heartbeat: 0.5,
            nak_retry: 0.3,
            hold_timeout: 10.0,
            subscriber_queue: 1024,
            static_topics: Vec::new(),
        }
    }
}

impl BridgeConfig {
    /// The same endpoint with prioritization and replay turned off.
    pub fn fifo_baseline(&self) -> Self {
        Self {
            prioritized: false,
            replay: false,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<(), BridgeError> {
        let bad = |m: &str| Err(BridgeError::Config(m.to_string()));
        if !(self.tick > 0.0) {
            return bad("tick must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.shares.iter().any(|s| !(0.0..=1.0).contains(s)) || self.shares.iter().sum::<f64>() > 1.0 + 1e-9 {
            return bad("tier shares must be fractions summing to at most 1");
        }
        if let Some(b) = self.budget {
            if !(b > 0.0) {
                return bad("budget must be positive");
            }
        }
        if !(self.heartbeat > 0.0 && self.nak_retry > 0.0 && self.hold_timeout > 0.0) {
            return bad("heartbeat, nak_retry and hold_timeout must be positive");
        }
        if self.subscriber_queue == 0 {
            return bad("subscriber_queue must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub enabled: bool,
    /// Polling period, seconds.
    pub period: f64,
    /// Globs a topic must match (empty allows everything).
    pub allow: Vec<String>,
    pub deny: Vec<String>,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            period: 0.5,
            allow: Vec::new(),
            deny: Vec::new(),
        }
    }
}

impl DiscoveryConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BridgeStatus {
    Running,
    Shutdown,
    LinkClosed,
}

/// Deterministic work done by an endpoint, used as the compute metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WorkCounters {
    pub frames_encoded: u64,
    pub bytes_encoded: u64,
    pub frames_decoded: u64,
    pub bytes_decoded: u64,
    pub packets_sent: u64,
    pub discovery_polls: u64,
    pub topics_scanned: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngressTopicStats {
    pub tier: Option<Tier>,
    pub delivered: u64,
    pub duplicates: u64,
    pub gaps: u64,
    pub replays_delivered: u64,
    pub skipped: u64,
    /// Publish-to-republish latency of each delivered message, seconds.
    pub latencies: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EndpointStats {
    pub ingress: BTreeMap<TopicName, IngressTopicStats>,
    pub queue_overflow: u64,
    pub encode_errors: u64,
    pub decode_errors: u64,
    pub republish_errors: u64,
    pub naks_sent: u64,
    pub naks_received: u64,
    pub replayed: u64,
    pub unavailable_sent: u64,
    pub work: WorkCounters,
}

#[derive(Debug, Clone)]
struct Frame {
    topic: TopicName,
    seq: u64,
    data: bool,
    bytes: Vec<u8>,
}

#[derive(Debug)]
struct EgressTopic {
    sub: SubscriberHandle,
    tier: Tier,
    next_seq: u64,
}

#[derive(Debug, Clone, Copy)]
struct Missing {
    first: SimTime,
    last_nak: Option<SimTime>,
}

#[derive(Debug)]
struct IngressTopic {
    reliable: bool,
    next_expected: u64,
    highest_seen: Option<u64>,
    last_delivered: Option<u64>,
    hold: BTreeMap<u64, Envelope>,
    missing: BTreeMap<u64, Missing>,
    skipped: BTreeSet<u64>,
    delivered: Vec<bool>,
}

impl IngressTopic {
    fn new(reliable: bool) -> Self {
        Self {
            reliable,
            next_expected: 0,
            highest_seen: None,
            last_delivered: None,
            hold: BTreeMap::new(),
            missing: BTreeMap::new(),
            skipped: BTreeSet::new(),
            delivered: Vec::new(),
        }
    }

    fn mark_delivered(&mut self, seq: u64) {
        let i = seq as usize;
        if self.delivered.len() <= i {
            self.delivered.resize(i + 1, false);
        }
        self.delivered[i] = true;
    }

    fn is_delivered(&self, seq: u64) -> bool {
        self.delivered.get(seq as usize).copied().unwrap_or(false)
    }

    /// Whether `seq` can still be delivered in the future.
    fn still_deliverable(&self, seq: u64) -> bool {
        if self.is_delivered(seq) {
            return false;
        }
        if self.reliable {
            seq >= self.next_expected && !self.skipped.contains(&seq)
        } else {
            self.last_delivered.map_or(true, |l| seq > l)
        }
    }

    /// Records every seq up to and including `last` not yet seen as missing.
    /// Returns how many were added.
    fn note_upto(&mut self, last: u64, now: SimTime) -> u64 {
        let start = self
            .highest_seen
            .map_or(self.next_expected, |h| h + 1)
            .max(self.next_expected);
        let mut added = 0;
        for g in start..=last {
            if !self.hold.contains_key(&g) && !self.skipped.contains(&g) {
                self.missing.insert(g, Missing { first: now, last_nak: None });
                added += 1;
            }
        }
        if start <= last {
            self.highest_seen = Some(self.highest_seen.map_or(last, |h| h.max(last)));
        }
        added
    }
}

/// One side of the bridge: egress from the local bus, ingress onto it, and
/// topic discovery. Each duty is a separate entry point so a single event
/// loop can drive them deterministically.
#[derive(Debug)]
pub struct BridgeEndpoint {
    name: String,
    bus: Bus,
    config: BridgeConfig,
    policy: PriorityPolicy,
    discovery: DiscoveryConfig,
    allow: Vec<Pattern>,
    deny: Vec<Pattern>,
    egress: BTreeMap<TopicName, EgressTopic>,
    imported: BTreeSet<TopicName>,
    publishers: BTreeMap<TopicName, PublisherHandle>,
    queues: TierQueues<Frame>,
    replay: Option<ReplayBuffer>,
    ingress: BTreeMap<TopicName, IngressTopic>,
    credit: f64,
    max_cost: usize,
    control_seq: u64,
    last_heartbeat: Option<SimTime>,
    status: BridgeStatus,
    stats: EndpointStats,
}

impl BridgeEndpoint {
    pub fn new(
        name: impl Into<String>,
        bus: Bus,
        config: BridgeConfig,
        policy: PriorityPolicy,
        discovery: DiscoveryConfig,
    ) -> Result<Self, BridgeError> {
        config.validate()?;
        if discovery.enabled && !(discovery.period > 0.0) {
            return Err(BridgeError::Config("discovery period must be positive".into()));
        }
        let allow = discovery.allow.iter().map(|p| compile(p)).collect::<Result<_, _>>()?;
        let deny = discovery.deny.iter().map(|p| compile(p)).collect::<Result<_, _>>()?;
        let queue_limit = if config.prioritized {
            config.queue_limit
        } else {
            config.queue_limit * 3
        };
        let replay = config
            .replay
            .then(|| ReplayBuffer::new(config.replay_depth, config.replay_total));
        let mut ep = Self {
            name: name.into(),
            bus,
            queues: TierQueues::new(queue_limit),
            replay,
            config,
            policy,
            discovery,
            allow,
            deny,
            egress: BTreeMap::new(),
            imported: BTreeSet::new(),
            publishers: BTreeMap::new(),
            ingress: BTreeMap::new(),
            credit: 0.0,
            max_cost: 0,
            control_seq: 0,
            last_heartbeat: None,
            status: BridgeStatus::Running,
            stats: EndpointStats::default(),
        };
        for topic in ep.config.static_topics.clone() {
            ep.export(&topic)?;
        }
        Ok(ep)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn config(&self) -> &BridgeConfig {
        &self.config
    }

    pub fn status(&self) -> BridgeStatus {
        self.status
    }

    pub fn shutdown(&mut self) {
        self.status = BridgeStatus::Shutdown;
    }

    pub fn stats(&self) -> &EndpointStats {
        &self.stats
    }

    pub fn exported_topics(&self) -> impl Iterator<Item = (&TopicName, Tier)> {
        self.egress.iter().map(|(t, e)| (t, e.tier))
    }

    /// Number of messages taken from the local bus for `topic`.
    pub fn exported_count(&self, topic: &TopicName) -> u64 {
        self.egress.get(topic).map_or(0, |e| e.next_seq)
    }

    pub fn replay_buffer(&self) -> Option<&ReplayBuffer> {
        self.replay.as_ref()
    }

    /// Starts bridging `topic` outward. No-op if already exported or imported.
    pub fn export(&mut self, topic: &str) -> Result<bool, BridgeError> {
        let name = TopicName::new(topic)?;
        if self.egress.contains_key(&name) || self.imported.contains(&name) {
            return Ok(false);
        }
        let sub = self.bus.subscribe(topic, self.config.subscriber_queue)?;
        let tier = if self.config.prioritized {
            self.policy.classify(topic)
        } else {
            Tier::Standard
        };
        self.egress.insert(name, EgressTopic { sub, tier, next_seq: 0 });
        Ok(true)
    }

    /// One discovery poll: exports every advertised topic that passes the
    /// allow/deny lists and did not arrive over the bridge.
    pub fn on_discovery(&mut self, _now: SimTime) -> Vec<TopicName> {
        if !self.discovery.enabled || self.status != BridgeStatus::Running {
            return Vec::new();
        }
        self.stats.work.discovery_polls += 1;
        let mut added = Vec::new();
        for (topic, _) in self.bus.list_topics() {
            self.stats.work.topics_scanned += 1;
            let t = topic.as_str();
            if self.deny.iter().any(|p| p.matches_with(t, MATCH)) {
                continue;
            }
            if !self.allow.is_empty() && !self.allow.iter().any(|p| p.matches_with(t, MATCH)) {
                continue;
            }
            if matches!(self.export(t), Ok(true)) {
                added.push(topic);
            }
        }
        added
    }

    fn enqueue(&mut self, tier: Tier, frame: Frame) {
        let copies = if tier == Tier::Critical {
            1 + self.config.redundancy as usize
        } else {
            1
        };
        let cost = copies * frame.bytes.len();
        self.max_cost = self.max_cost.max(cost);
        let tier = if self.config.prioritized { tier } else { Tier::Standard };
        if self.queues.push(tier, cost, frame).is_some() {
            self.stats.queue_overflow += 1;
        }
    }

    fn encode_into_queue(&mut self, env: Envelope, tier: Tier) {
        match env.encode() {
            Ok(bytes) => {
                self.stats.work.frames_encoded += 1;
                self.stats.work.bytes_encoded += bytes.len() as u64;
                let frame = Frame {
                    topic: env.topic.clone(),
                    seq: env.seq,
                    data: env.kind != FrameKind::Control,
                    bytes,
                };
                self.enqueue(tier, frame);
            }
            Err(_) => self.stats.encode_errors += 1,
        }
    }

    fn send_control(&mut self, topic: &TopicName, control: Control, now: SimTime) {
        let env = control.envelope(topic.clone(), self.control_seq, now);
        self.control_seq += 1;
        self.encode_into_queue(env, Tier::Critical);
    }

    /// Re-sends buffered envelopes of `topic` with `from <= seq <= to`.
    /// Returns how many were still buffered.
    pub fn request_replay(&mut self, topic: &TopicName, from: u64, to: u64) -> usize {
        if from > to {
            return 0;
        }
        let Some(buffer) = &self.replay else {
            return 0;
        };
        let envs: Vec<Envelope> = buffer.range(topic, from, to).cloned().collect();
        let n = envs.len();
        for mut env in envs {
            env.flags |= FLAG_REPLAY;
            let tier = env.tier;
            self.encode_into_queue(env, tier);
        }
        self.stats.replayed += n as u64;
        n
    }

    fn drain_egress(&mut self) {
        let mut batch: Vec<(Tier, u64, Message)> = Vec::new();
        for e in self.egress.values_mut() {
            for msg in e.sub.drain() {
                batch.push((e.tier, e.next_seq, msg));
                e.next_seq += 1;
            }
        }
        batch.sort_by(|a, b| (a.2.publish_time, &a.2.topic).cmp(&(b.2.publish_time, &b.2.topic)));
        for (tier, seq, msg) in batch {
            let env = Envelope::from_message(&msg, tier, seq);
            if let Some(buf) = &mut self.replay {
                buf.insert(env.clone());
            }
            self.encode_into_queue(env, tier);
        }
    }

    fn heartbeat(&mut self, now: SimTime) {
        if self.replay.is_none() {
            return;
        }
        let due = self
            .last_heartbeat
            .map_or(true, |t| now.as_secs() - t.as_secs() >= self.config.heartbeat - 1e-9);
        if !due {
            return;
        }
        self.last_heartbeat = Some(now);
        let marks: Vec<(TopicName, u64)> = self
            .egress
            .iter()
            .filter(|(_, e)| e.tier == Tier::Critical && e.next_seq > 0)
            .map(|(t, e)| (t.clone(), e.next_seq - 1))
            .collect();
        for (topic, last) in marks {
            self.send_control(&topic, Control::HighWater { last }, now);
        }
    }

    fn repair_gaps(&mut self, now: SimTime) {
        if self.replay.is_none() {
            return;
        }
        let retry = self.config.nak_retry;
        let timeout = self.config.hold_timeout;
        let mut naks: Vec<(TopicName, u64, u64)> = Vec::new();
        let topics: Vec<TopicName> = self.ingress.keys().cloned().collect();
        for topic in topics {
            let st = self.ingress.get_mut(&topic).expect("key from map");
            if !st.reliable {
                continue;
            }
            let mut skipped = 0;
            while let Some(m) = st.missing.get(&st.next_expected).copied() {
                if now.as_secs() - m.first.as_secs() <= timeout {
                    break;
                }
                st.missing.remove(&st.next_expected);
                st.skipped.insert(st.next_expected);
                skipped += 1;
                self.flush(&topic, now);
                self.ingress.get_mut(&topic).expect("exists");
                break;
            }
            let st = self.ingress.get_mut(&topic).expect("exists");
            let mut range: Option<(u64, u64)> = None;
            for (&seq, m) in st.missing.iter_mut() {
                let due = m.last_nak.map_or(true, |t| now.as_secs() - t.as_secs() >= retry - 1e-9);
                if !due {
                    continue;
                }
                m.last_nak = Some(now);
                range = match range {
                    Some((a, b)) if b + 1 == seq => Some((a, seq)),
                    Some((a, b)) => {
                        naks.push((topic.clone(), a, b));
                        Some((seq, seq))
                    }
                    None => Some((seq, seq)),
                };
            }
            if let Some((a, b)) = range {
                naks.push((topic.clone(), a, b));
            }
            if skipped > 0 {
                self.stats.ingress.entry(topic.clone()).or_default().skipped += skipped;
            }
        }
        for (topic, from, to) in naks {
            self.stats.naks_sent += 1;
            self.send_control(&topic, Control::Nak { from, to }, now);
        }
    }

    /// One egress tick: pull from the bus, emit control traffic, and send
    /// what the tick's byte budget allows. Returns the arrival times of the
    /// packets put on `out`.
    pub fn on_tick(&mut self, now: SimTime, out: &mut NetLink) -> Vec<SimTime> {
        if self.status != BridgeStatus::Running {
            return Vec::new();
        }
        if out.is_closed() {
            self.status = BridgeStatus::LinkClosed;
            return Vec::new();
        }
        self.drain_egress();
        self.heartbeat(now);
        self.repair_gaps(now);

        let budget = match self.config.budget {
            Some(rate) => {
                let cap = (rate * self.config.tick * 4.0).max(self.max_cost as f64);
                self.credit = (self.credit + rate * self.config.tick).min(cap);
                self.credit.max(0.0).floor() as usize
            }
            None => usize::MAX / 2,
        };
        let shares = if self.config.prioritized {
            self.config.shares
        } else {
            [0.0; 3]
        };
        let picked = schedule_with_shares(&mut self.queues, budget, shares);
        let overhead = out.conditions().packet_overhead();
        let mut arrivals = Vec::new();
        let mut spent = 0usize;
        let mut packet: Vec<u8> = Vec::new();
        let mut packet_tier = Tier::Critical;
        let mut in_packet = 0usize;
        let mut flush = |packet: &mut Vec<u8>, tier: Tier, this: &mut Self, spent: &mut usize| {
            if packet.is_empty() {
                return;
            }
            let copies = if tier == Tier::Critical {
                1 + this.config.redundancy as usize
            } else {
                1
            };
            for _ in 0..copies {
                this.stats.work.packets_sent += 1;
                *spent += packet.len() + overhead;
                if let Some(at) = out.send(packet.clone(), now).arrival() {
                    arrivals.push(at);
                }
            }
            packet.clear();
        };
        for (tier, frame) in picked {
            if in_packet > 0 && (tier != packet_tier || in_packet == self.config.batch) {
                flush(&mut packet, packet_tier, self, &mut spent);
                in_packet = 0;
            }
            packet_tier = tier;
            packet.extend_from_slice(&frame.bytes);
            in_packet += 1;
        }
        flush(&mut packet, packet_tier, self, &mut spent);
        if self.config.budget.is_some() {
            self.credit -= spent as f64;
        }
        arrivals
    }

    /// Ingress: handles one packet that arrived from the peer.
    pub fn on_packet(&mut self, now: SimTime, bytes: &[u8]) {
        if self.status != BridgeStatus::Running {
            return;
        }
        self.stats.work.bytes_decoded += bytes.len() as u64;
        let (envs, err) = decode_batch(bytes);
        if err.is_some() {
            self.stats.decode_errors += 1;
        }
        for env in envs {
            self.stats.work.frames_decoded += 1;
            match env.kind {
                FrameKind::Control => self.on_control(now, env),
                FrameKind::Data(_) => self.on_data(now, env),
            }
        }
    }

    fn on_control(&mut self, now: SimTime, env: Envelope) {
        let Ok(control) = Control::from_payload(&env.payload) else {
            self.stats.decode_errors += 1;
            return;
        };
        match control {
            Control::Nak { from, to } => {
                self.stats.naks_received += 1;
                self.request_replay(&env.topic, from, to);
                let sent = self.exported_count(&env.topic);
                let oldest = self
                    .replay
                    .as_ref()
                    .and_then(|b| b.oldest_seq(&env.topic))
                    .unwrap_or(sent);
                // evictions only ever remove the oldest entries
                let gone_to = to.min(oldest.saturating_sub(1));
                if from < oldest && from <= gone_to {
                    self.stats.unavailable_sent += 1;
                    self.send_control(&env.topic, Control::Unavailable { from, to: gone_to }, now);
                }
            }
            Control::HighWater { last } => {
                let reliable = self.replay.is_some();
                let st = self
                    .ingress
                    .entry(env.topic.clone())
                    .or_insert_with(|| IngressTopic::new(reliable));
                if st.reliable {
                    let added = st.note_upto(last, now);
                    self.stats.ingress.entry(env.topic).or_default().gaps += added;
                }
            }
            Control::Unavailable { from, to } => {
                if let Some(st) = self.ingress.get_mut(&env.topic) {
                    let mut n = 0;
                    for g in from.max(st.next_expected)..=to {
                        if !st.hold.contains_key(&g) && !st.is_delivered(g) && st.skipped.insert(g) {
                            st.missing.remove(&g);
                            n += 1;
                        }
                    }
                    self.stats.ingress.entry(env.topic.clone()).or_default().skipped += n;
                    self.flush(&env.topic, now);
                }
            }
        }
    }

    fn on_data(&mut self, now: SimTime, env: Envelope) {
        let reliable = self.replay.is_some() && env.tier == Tier::Critical;
        let topic = env.topic.clone();
        let st = self
            .ingress
            .entry(topic.clone())
            .or_insert_with(|| IngressTopic::new(reliable));
        let stats = self.stats.ingress.entry(topic.clone()).or_default();
        stats.tier = Some(env.tier);
        if st.reliable {
            if env.seq < st.next_expected || st.hold.contains_key(&env.seq) || st.is_delivered(env.seq) {
                stats.duplicates += 1;
                return;
            }
            if st.skipped.remove(&env.seq) {
                stats.skipped = stats.skipped.saturating_sub(1);
            }
            if env.seq > 0 {
                stats.gaps += st.note_upto(env.seq - 1, now);
            }
            st.missing.remove(&env.seq);
            if st.highest_seen.map_or(true, |h| env.seq > h) {
                st.highest_seen = Some(env.seq);
            }
            st.hold.insert(env.seq, env);
            self.flush(&topic, now);
        } else {
            if st.last_delivered.is_some_and(|l| env.seq <= l) {
                stats.duplicates += 1;
                return;
            }
            let expected = st.last_delivered.map_or(0, |l| l + 1);
            stats.gaps += env.seq - expected;
            st.last_delivered = Some(env.seq);
            self.deliver(now, env);
        }
    }

    /// Delivers held envelopes of a reliable topic in seq order.
    fn flush(&mut self, topic: &TopicName, now: SimTime) {
        loop {
            let st = self.ingress.get_mut(topic).expect("flushed topic exists");
            let next = st.next_expected;
            if let Some(env) = st.hold.remove(&next) {
                st.next_expected += 1;
                st.last_delivered = Some(next);
                self.deliver(now, env);
            } else if st.skipped.contains(&next) {
                st.next_expected += 1;
            } else {
                break;
            }
        }
    }

    fn deliver(&mut self, now: SimTime, env: Envelope) {
        let Some(msg) = env.to_message() else { return };
        let topic = msg.topic.clone();
        if let Some(st) = self.ingress.get_mut(&topic) {
            st.mark_delivered(env.seq);
        }
        let stats = self.stats.ingress.entry(topic.clone()).or_default();
        stats.delivered += 1;
        if env.is_replay() {
            stats.replays_delivered += 1;
        }
        stats
            .latencies
            .push(now.as_secs() - env.sim_time.as_secs());
        if !self.publishers.contains_key(&topic) {
            self.imported.insert(topic.clone());
            // a topic flows one way only; a static export of it would echo
            self.egress.remove(&topic);
            match self.bus.advertise(topic.as_str(), msg.kind) {
                Ok(p) => {
                    self.publishers.insert(topic.clone(), p);
                }
                Err(_) => {
                    self.stats.republish_errors += 1;
                    return;
                }
            }
        }
        let publisher = self.publishers.get_mut(&topic).expect("inserted above");
        if publisher.publish(msg.payload, msg.publish_time).is_err() {
            self.stats.republish_errors += 1;
        }
    }

    /// Data seqs of `topic` still queued for egress here.
    pub fn queued_seqs(&self, topic: &TopicName) -> BTreeSet<u64> {
        self.queues
            .iter()
            .filter(|f| f.data && &f.topic == topic)
            .map(|f| f.seq)
            .collect()
    }

    /// Whether the ingress side has republished `seq` of `topic`.
    pub fn has_delivered(&self, topic: &TopicName, seq: u64) -> bool {
        self.ingress.get(topic).is_some_and(|s| s.is_delivered(seq))
    }

    /// Whether `seq` of `topic` could still be republished here later.
    pub fn may_deliver(&self, topic: &TopicName, seq: u64) -> bool {
        self.ingress.get(topic).map_or(true, |s| s.still_deliverable(seq))
    }

    /// Seqs held back waiting for an earlier gap to fill.
    pub fn held_seqs(&self, topic: &TopicName) -> BTreeSet<u64> {
        self.ingress
            .get(topic)
            .map(|s| s.hold.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn missing_count(&self, topic: &TopicName) -> usize {
        self.ingress.get(topic).map_or(0, |s| s.missing.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PairEvent {
    Tick(Side),
    Discover(Side),
    Arrive(Side),
}

/// Two endpoints joined by a link in each direction, driven by one clock.
#[derive(Debug)]
pub struct BridgePair {
    pub a: BridgeEndpoint,
    pub b: BridgeEndpoint,
    /// Carries traffic from `a` to `b`.
    pub ab: NetLink,
    /// Carries traffic from `b` to `a`.
    pub ba: NetLink,
    clock: SimClock<PairEvent>,
}

impl BridgePair {
    pub fn new(a: BridgeEndpoint, b: BridgeEndpoint, ab: NetLink, ba: NetLink) -> Self {
        let mut clock = SimClock::new();
        for side in [Side::A, Side::B] {
            clock.schedule(SimTime::ZERO, PairEvent::Discover(side));
            clock.schedule(SimTime::ZERO, PairEvent::Tick(side));
        }
        Self { a, b, ab, ba, clock }
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn endpoint(&self, side: Side) -> &BridgeEndpoint {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    pub fn endpoint_mut(&mut self, side: Side) -> &mut BridgeEndpoint {
        match side {
            Side::A => &mut self.a,
            Side::B => &mut self.b,
        }
    }

    /// Processes every event up to and including `t`.
    pub fn run_until(&mut self, t: SimTime) {
        while let Some((now, ev)) = self.clock.pop_until(t) {
            match ev {
                PairEvent::Tick(side) => {
                    let (ep, link, dest) = match side {
                        Side::A => (&mut self.a, &mut self.ab, Side::B),
                        Side::B => (&mut self.b, &mut self.ba, Side::A),
                    };
                    let arrivals = ep.on_tick(now, link);
                    let running = ep.status() == BridgeStatus::Running;
                    let tick = SimTime::from_secs(ep.config().tick);
                    let mut last = None;
                    for at in arrivals {
                        if last != Some(at) {
                            self.clock.schedule(at, PairEvent::Arrive(dest));
                            last = Some(at);
                        }
                    }
                    if running {
                        self.clock.schedule(now + tick, PairEvent::Tick(side));
                    }
                }
                PairEvent::Discover(side) => {
                    let ep = self.endpoint_mut(side);
                    if ep.discovery.enabled && ep.status() == BridgeStatus::Running {
                        ep.on_discovery(now);
                        let period = SimTime::from_secs(ep.discovery.period);
                        self.clock.schedule(now + period, PairEvent::Discover(side));
                    }
                }
                PairEvent::Arrive(dest) => {
                    let (ep, link) = match dest {
                        Side::B => (&mut self.b, &mut self.ab),
                        Side::A => (&mut self.a, &mut self.ba),
                    };
                    for packet in link.poll(now) {
                        ep.on_packet(now, &packet);
                    }
                }
            }
        }
        let now = self.clock.now();
        if t > now {
            self.clock.advance(SimTime(t.0 - now.0));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msgbus::MessageKind;
    use crate::netsim::{NetworkConditions, Window};

    fn pair_with(cfg: BridgeConfig, disc: DiscoveryConfig, cond: NetworkConditions, policy: PriorityPolicy) -> BridgePair {
        let a = BridgeEndpoint::new("a", Bus::new(), cfg.clone(), policy.clone(), disc.clone()).unwrap();
        let b = BridgeEndpoint::new("b", Bus::new(), cfg, policy, disc).unwrap();
        BridgePair::new(a, b, NetLink::new(cond.clone(), 1), NetLink::new(cond, 2))
    }

    fn critical_policy() -> PriorityPolicy {
        PriorityPolicy::uniform(Tier::Critical)
    }

    #[test]
    fn discovered_topic_is_bridged_within_two_periods() {
        let disc = DiscoveryConfig {
            period: 0.5,
            ..DiscoveryConfig::default()
        };
        let mut pair = pair_with(
            BridgeConfig::default(),
            disc,
            NetworkConditions::ideal(),
            critical_policy(),
        );
        let mut remote = pair.b.bus().subscribe("/new", 100).unwrap();
        pair.run_until(SimTime::from_secs(1.3));
        let advertised_at = SimTime::from_secs(1.3);
        let mut p = pair.a.bus().advertise("/new", MessageKind::Pose).unwrap();
        let mut first = None;
        for k in 0..40u64 {
            let t = advertised_at + SimTime(k * 50_000);
            pair.run_until(t);
            p.publish(vec![k as u8], t).unwrap();
            if first.is_none() && !remote.is_empty() {
                first = Some(pair.now());
            }
        }
        pair.run_until(SimTime::from_secs(4.0));
        let first = first.expect("bridged");
        assert!(first.as_secs() <= advertised_at.as_secs() + 1.0, "first delivery at {first}");
        assert!(remote.drain().len() > 10);
    }

    #[test]
    fn deny_list_and_echo_prevention() {
        let disc = DiscoveryConfig {
            deny: vec!["/private/**".into()],
            ..DiscoveryConfig::default()
        };
        let mut pair = pair_with(BridgeConfig::default(), disc, NetworkConditions::ideal(), critical_policy());
        let mut p = pair.a.bus().advertise("/shared", MessageKind::Blob).unwrap();
        let _q = pair.a.bus().advertise("/private/x", MessageKind::Blob).unwrap();
        pair.run_until(SimTime::from_secs(0.1));
        p.publish(vec![1], SimTime::from_secs(0.1)).unwrap();
        pair.run_until(SimTime::from_secs(2.0));
        let a_exports: Vec<_> = pair.a.exported_topics().map(|(t, _)| t.to_string()).collect();
        assert_eq!(a_exports, vec!["/shared".to_string()]);
        // b republished /shared locally but must not export it back
        assert!(pair.b.bus().list_topics().iter().any(|(t, _)| t.as_str() == "/shared"));
        assert_eq!(pair.b.exported_topics().count(), 0);
    }

    #[test]
    fn disconnect_is_repaired_by_replay_in_order() {
        let cond = NetworkConditions::constant(0.05, 0.0, None)
            .unwrap()
            .with_disconnects(vec![Window { start: 2.0, end: 7.0 }])
            .unwrap();
        let cfg = BridgeConfig {
            replay_depth: 64,
            ..BridgeConfig::default()
        };
        let mut pair = pair_with(cfg, DiscoveryConfig::default(), cond, critical_policy());
        let mut p = pair.a.bus().advertise("/cmd", MessageKind::Command).unwrap();
        let mut remote = pair.b.bus().subscribe("/cmd", 10_000).unwrap();
        let n = 100u64;
        for k in 0..n {
            let t = SimTime::from_secs(0.5 + k as f64 * 0.1);
            pair.run_until(t);
            p.publish(k.to_le_bytes().to_vec(), t).unwrap();
        }
        pair.run_until(SimTime::from_secs(15.0));
        let got: Vec<u64> = remote
            .drain()
            .into_iter()
            .map(|m| u64::from_le_bytes(m.payload.try_into().unwrap()))
            .collect();
        assert_eq!(got, (0..n).collect::<Vec<_>>());
        let stats = &pair.b.stats().ingress[&TopicName::new("/cmd").unwrap()];
        assert_eq!(stats.replays_delivered, 50);
    }

    #[test]
    fn request_replay_counts() {
        let cfg = BridgeConfig {
            replay_depth: 10,
            ..BridgeConfig::default()
        };
        let mut pair = pair_with(cfg, DiscoveryConfig::default(), NetworkConditions::ideal(), critical_policy());
        let mut p = pair.a.bus().advertise("/t", MessageKind::Blob).unwrap();
        pair.run_until(SimTime::from_secs(0.01));
        for k in 0..20u64 {
            let t = SimTime::from_secs(0.02 + k as f64 * 0.01);
            pair.run_until(t);
            p.publish(vec![], t).unwrap();
        }
        pair.run_until(SimTime::from_secs(1.0));
        let topic = TopicName::new("/t").unwrap();
        // buffer holds 10..=19
        assert_eq!(pair.a.request_replay(&topic, 12, 15), 4);
        assert_eq!(pair.a.request_replay(&topic, 0, 5), 0);
        assert_eq!(pair.a.request_replay(&topic, 5, 14), 5);
        assert_eq!(pair.a.request_replay(&TopicName::new("/nope").unwrap(), 0, 5), 0);
        assert_eq!(pair.a.request_replay(&topic, 5, 4), 0);
    }

    #[test]
    fn closed_link_stops_endpoint() {
        let mut pair = pair_with(
            BridgeConfig::default(),
            DiscoveryConfig::default(),
            NetworkConditions::ideal(),
            critical_policy(),
        );
        pair.run_until(SimTime::from_secs(0.1));
        pair.ab.close();
        pair.run_until(SimTime::from_secs(0.2));
        assert_eq!(pair.a.status(), BridgeStatus::LinkClosed);
        assert_eq!(pair.b.status(), BridgeStatus::Running);
        pair.b.shutdown();
        assert_eq!(pair.b.status(), BridgeStatus::Shutdown);
    }

    #[test]
    fn config_validation() {
        let bad = BridgeConfig {
            shares: [0.6, 0.6, 0.0],
            ..BridgeConfig::default()
        };
        assert!(BridgeEndpoint::new("x", Bus::new(), bad, PriorityPolicy::default(), DiscoveryConfig::default()).is_err());
        let bad_disc = DiscoveryConfig {
            period: 0.0,
            ..DiscoveryConfig::default()
        };
        assert!(BridgeEndpoint::new(
            "x",
            Bus::new(),
            BridgeConfig::default(),
            PriorityPolicy::default(),
            bad_disc
        )
        .is_err());
    }
}
