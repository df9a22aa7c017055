//! Deterministic discrete-event link simulation.
//!
//! Time is kept as integer microseconds so that identical inputs always
//! produce identical traces regardless of float rounding order.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in microseconds since scenario start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs(s: f64) -> Self {
        debug_assert!(s >= 0.0, "negative time {s}");
        SimTime((s.max(0.0) * 1e6).round() as u64)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("profile breakpoints must be sorted by time")]
    UnsortedProfile,
    #[error("profile must contain at least one breakpoint")]
    EmptyProfile,
    #[error("latency must be finite and non-negative, got {0}")]
    Latency(f64),
    #[error("loss probability must lie in [0, 1], got {0}")]
    Loss(f64),
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("disconnect windows must be non-empty, sorted and non-overlapping")]
    Windows,
}

/// A piecewise-constant function of time. The first breakpoint's value also
/// covers any time before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    points: Vec<(f64, f64)>,
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Self {
            points: vec![(0.0, value)],
        }
    }

    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, NetError> {
        if points.is_empty() {
            return Err(NetError::EmptyProfile);
        }
        if points.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(NetError::UnsortedProfile);
        }
        Ok(Self { points })
    }

    pub fn at(&self, t: f64) -> f64 {
        let idx = self.points.partition_point(|(pt, _)| *pt <= t);
        if idx == 0 {
            self.points[0].1
        } else {
            self.points[idx - 1].1
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn max_value(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }

    fn min_value(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }
}

/// Half-open interval `[start, end)` in seconds during which the link is down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConditions {
    latency: Profile,
    loss: Profile,
    bandwidth: Option<f64>,
    packet_overhead: usize,
    disconnects: Vec<Window>,
}

impl NetworkConditions {
    /// `bandwidth` in bytes/s; `None` means unlimited.
    pub fn new(
        latency: Profile,
        loss: Profile,
        bandwidth: Option<f64>,
        packet_overhead: usize,
        disconnects: Vec<Window>,
    ) -> Result<Self, NetError> {
        let (lo, hi) = (latency.min_value(), latency.max_value());
        if !(lo >= 0.0 && hi.is_finite()) {
            return Err(NetError::Latency(if lo < 0.0 { lo } else { hi }));
        }
        let (lo, hi) = (loss.min_value(), loss.max_value());
        if !(lo >= 0.0 && hi <= 1.0) {
            return Err(NetError::Loss(if lo < 0.0 { lo } else { hi }));
        }
        if let Some(bw) = bandwidth {
            if !(bw > 0.0) {
                return Err(NetError::Bandwidth(bw));
            }
        }
        let windows_ok = disconnects.iter().all(|w| w.start < w.end)
            && disconnects.windows(2).all(|w| w[0].end <= w[1].start);
        if !windows_ok {
            return Err(NetError::Windows);
        }
        Ok(Self {
            latency,
            loss,
            bandwidth,
            packet_overhead,
            disconnects,
        })
    }

    /// No latency, no loss, unlimited bandwidth.
    pub fn ideal() -> Self {
        Self {
            latency: Profile::constant(0.0),
            loss: Profile::constant(0.0),
            bandwidth: None,
            packet_overhead: 0,
            disconnects: Vec::new(),
        }
    }

    pub fn constant(latency: f64, loss: f64, bandwidth: Option<f64>) -> Result<Self, NetError> {
        Self::new(Profile::constant(latency), Profile::constant(loss), bandwidth, 0, Vec::new())
    }

    pub fn with_disconnects(mut self, windows: Vec<Window>) -> Result<Self, NetError> {
        self.disconnects = windows;
        Self::new(
            self.latency,
            self.loss,
            self.bandwidth,
            self.packet_overhead,
            self.disconnects,
        )
    }

    pub fn with_packet_overhead(mut self, bytes: usize) -> Self {
        self.packet_overhead = bytes;
        self
    }

    pub fn latency_at(&self, t: f64) -> f64 {
        self.latency.at(t)
    }

    pub fn loss_at(&self, t: f64) -> f64 {
        self.loss.at(t)
    }

    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }

    pub fn packet_overhead(&self) -> usize {
        self.packet_overhead
    }

    pub fn disconnects(&self) -> &[Window] {
        &self.disconnects
    }

    pub fn is_disconnected(&self, t: f64) -> bool {
        self.disconnects.iter().any(|w| w.contains(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SendOutcome {
    /// Transmitted immediately; arrives at the given time.
    Delivered(SimTime),
    /// Lost to the loss process, a disconnect window or a closed link.
    Dropped,
    /// Queued behind earlier packets on the transmitter; arrives at the given time.
    Deferred(SimTime),
}

impl SendOutcome {
    pub fn arrival(&self) -> Option<SimTime> {
        match self {
            SendOutcome::Delivered(t) | SendOutcome::Deferred(t) => Some(*t),
            SendOutcome::Dropped => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DropReason {
    Loss,
    Disconnected,
    Closed,
}

/// One entry per call to [`NetLink::send`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub index: u64,
    pub sent_at: SimTime,
    pub bytes: usize,
    pub outcome: SendOutcome,
    pub drop_reason: Option<DropReason>,
}

/// A one-directional point-to-point link.
#[derive(Debug)]
pub struct NetLink {
    conditions: NetworkConditions,
    seed: u64,
    rng: ChaCha8Rng,
    in_flight: VecDeque<(SimTime, Vec<u8>)>,
    tx_free_at: SimTime,
    last_arrival: SimTime,
    trace: Vec<TraceEntry>,
    closed: bool,
    wire_bytes: u64,
}

impl NetLink {
    pub fn new(conditions: NetworkConditions, seed: u64) -> Self {
        Self {
            conditions,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            in_flight: VecDeque::new(),
            tx_free_at: SimTime::ZERO,
            last_arrival: SimTime::ZERO,
            trace: Vec::new(),
            closed: false,
            wire_bytes: 0,
        }
    }

    pub fn conditions(&self) -> &NetworkConditions {
        &self.conditions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Permanently closes the link; later sends are dropped.
    pub fn close(&mut self) {
        self.closed = true;
        self.in_flight.clear();
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Bytes put on the wire (including per-packet overhead), excluding drops.
    pub fn wire_bytes(&self) -> u64 {
        self.wire_bytes
    }

    pub fn send(&mut self, bytes: Vec<u8>, now: SimTime) -> SendOutcome {
        let t = now.as_secs();
        let len = bytes.len();
        // The loss draw happens for every send so that the random stream does
        // not depend on disconnect windows.
        let draw: f64 = self.rng.gen();
        let drop_reason = if self.closed {
            Some(DropReason::Closed)
        } else if self.conditions.is_disconnected(t) {
            Some(DropReason::Disconnected)
        } else if draw < self.conditions.loss_at(t) {
            Some(DropReason::Loss)
        } else {
            None
        };

        let outcome = match drop_reason {
            Some(_) => SendOutcome::Dropped,
            None => {
                let wire = len + self.conditions.packet_overhead;
                let start = self.tx_free_at.max(now);
                let serialization = match self.conditions.bandwidth {
                    Some(bw) => SimTime::from_secs(wire as f64 / bw),
                    None => SimTime::ZERO,
                };
                let tx_done = start + serialization;
                self.tx_free_at = tx_done;
                let arrival = (tx_done + SimTime::from_secs(self.conditions.latency_at(t)))
                    .max(self.last_arrival);
                self.last_arrival = arrival;
                self.wire_bytes += wire as u64;
                self.in_flight.push_back((arrival, bytes));
                if start > now {
                    SendOutcome::Deferred(arrival)
                } else {
                    SendOutcome::Delivered(arrival)
                }
            }
        };
        self.trace.push(TraceEntry {
            index: self.trace.len() as u64,
            sent_at: now,
            bytes: len,
            outcome,
            drop_reason,
        });
        outcome
    }

    /// Removes and returns every packet that has arrived by `now`, in order.
    pub fn poll(&mut self, now: SimTime) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        while self.in_flight.front().is_some_and(|(at, _)| *at <= now) {
            out.push(self.in_flight.pop_front().expect("front checked").1);
        }
        out
    }

    pub fn next_arrival(&self) -> Option<SimTime> {
        self.in_flight.front().map(|(t, _)| *t)
    }

    pub fn in_flight(&self) -> impl Iterator<Item = &[u8]> {
        self.in_flight.iter().map(|(_, b)| b.as_slice())
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// The full ordered send log rendered as text, one line per send.
    pub fn replay_trace(&self) -> String {
        let mut s = String::new();
        for e in &self.trace {
            let outcome = match e.outcome {
                SendOutcome::Delivered(t) => format!("delivered@{}", t.0),
                SendOutcome::Deferred(t) => format!("deferred@{}", t.0),
                SendOutcome::Dropped => format!("dropped:{:?}", e.drop_reason.expect("drop has reason")),
            };
            s.push_str(&format!("{} {} {} {}\n", e.index, e.sent_at.0, e.bytes, outcome));
        }
        s
    }
}

/// Event queue ordered by (time, insertion order).
#[derive(Debug)]
pub struct SimClock<E> {
    now: SimTime,
    next_id: u64,
    queue: BinaryHeap<Reverse<Scheduled<E>>>,
}

#[derive(Debug)]
struct Scheduled<E> {
    at: SimTime,
    id: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.id) == (other.at, other.id)
    }
}
impl<E> Eq for Scheduled<E> {}
impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.id).cmp(&(other.at, other.id))
    }
}

impl<E> Default for SimClock<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> SimClock<E> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_id: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Schedules `event` at `at`; times in the past are clamped to now.
    pub fn schedule(&mut self, at: SimTime, event: E) {
        let at = at.max(self.now);
        self.queue.push(Reverse(Scheduled {
            at,
            id: self.next_id,
            event,
        }));
        self.next_id += 1;
    }

    /// Fires every event due within `[now, now + dt]` and moves the clock to `now + dt`.
    pub fn advance(&mut self, dt: SimTime) -> Vec<(SimTime, E)> {
        let horizon = self.now + dt;
        let mut fired = Vec::new();
        while let Some(ev) = self.pop_until(horizon) {
            fired.push(ev);
        }
        self.now = horizon;
        fired
    }

    /// Pops the next event if it is due at or before `horizon`, moving the clock to it.
    pub fn pop_until(&mut self, horizon: SimTime) -> Option<(SimTime, E)> {
        if self.queue.peek().is_some_and(|Reverse(s)| s.at <= horizon) {
            let Reverse(s) = self.queue.pop().expect("peeked");
            self.now = s.at;
            Some((s.at, s.event))
        } else {
            None
        }
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(s)| s.at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(t: SimTime) -> f64 {
        t.as_secs()
    }

    #[test]
    fn pure_latency_delivery() {
        let mut link = NetLink::new(NetworkConditions::constant(0.1, 0.0, None).unwrap(), 1);
        let out = link.send(vec![0; 1024], SimTime::ZERO);
        assert_eq!(out, SendOutcome::Delivered(SimTime::from_secs(0.1)));
        assert!(link.poll(SimTime::from_secs(0.099)).is_empty());
        assert_eq!(link.poll(SimTime::from_secs(0.1)).len(), 1);
    }

    #[test]
    fn full_loss_drops_everything() {
        let mut link = NetLink::new(NetworkConditions::constant(0.0, 1.0, None).unwrap(), 9);
        for i in 0..100 {
            assert_eq!(link.send(vec![1], SimTime(i)), SendOutcome::Dropped);
        }
    }

    #[test]
    fn serialization_delay_queues_back_to_back_packets() {
        let mut link = NetLink::new(NetworkConditions::constant(0.0, 0.0, Some(10_000.0)).unwrap(), 0);
        let a = link.send(vec![0; 10_000], SimTime::ZERO);
        let b = link.send(vec![0; 10_000], SimTime::ZERO);
        assert_eq!(secs(a.arrival().unwrap()), 1.0);
        assert_eq!(secs(b.arrival().unwrap()), 2.0);
        assert!(matches!(b, SendOutcome::Deferred(_)));
    }

    #[test]
    fn disconnect_window_drops() {
        let cond = NetworkConditions::ideal()
            .with_disconnects(vec![Window { start: 1.0, end: 2.0 }])
            .unwrap();
        let mut link = NetLink::new(cond, 3);
        assert_eq!(link.send(vec![1], SimTime::from_secs(1.5)), SendOutcome::Dropped);
        assert!(link.send(vec![1], SimTime::from_secs(2.0)).arrival().is_some());
        assert_eq!(link.trace()[0].drop_reason, Some(DropReason::Disconnected));
    }

    #[test]
    fn closed_link_drops() {
        let mut link = NetLink::new(NetworkConditions::ideal(), 3);
        link.close();
        assert_eq!(link.send(vec![1], SimTime::ZERO), SendOutcome::Dropped);
        assert!(link.is_closed());
    }

    #[test]
    fn latency_drop_never_reorders() {
        let lat = Profile::new(vec![(0.0, 0.5), (1.0, 0.0)]).unwrap();
        let cond = NetworkConditions::new(lat, Profile::constant(0.0), None, 0, vec![]).unwrap();
        let mut link = NetLink::new(cond, 0);
        let a = link.send(vec![1], SimTime::from_secs(0.9)).arrival().unwrap();
        let b = link.send(vec![2], SimTime::from_secs(1.0)).arrival().unwrap();
        assert!(b >= a);
        let got = link.poll(SimTime::from_secs(10.0));
        assert_eq!(got, vec![vec![1], vec![2]]);
    }

    #[test]
    fn validation_errors() {
        assert!(Profile::new(vec![]).is_err());
        assert!(Profile::new(vec![(1.0, 0.0), (0.5, 0.0)]).is_err());
        assert!(NetworkConditions::constant(-0.1, 0.0, None).is_err());
        assert!(NetworkConditions::constant(0.0, 1.5, None).is_err());
        assert!(NetworkConditions::constant(0.0, 0.0, Some(0.0)).is_err());
        let overlap = vec![Window { start: 0.0, end: 2.0 }, Window { start: 1.0, end: 3.0 }];
        assert!(NetworkConditions::ideal().with_disconnects(overlap).is_err());
    }

    #[test]
    fn profile_lookup() {
        let p = Profile::new(vec![(1.0, 0.2), (5.0, 0.4)]).unwrap();
        assert_eq!(p.at(0.0), 0.2);
        assert_eq!(p.at(1.0), 0.2);
        assert_eq!(p.at(4.999), 0.2);
        assert_eq!(p.at(5.0), 0.4);
        assert_eq!(p.at(100.0), 0.4);
    }

    #[test]
    fn clock_fires_in_time_then_insertion_order() {
        let mut clock = SimClock::new();
        clock.schedule(SimTime(10), "b");
        clock.schedule(SimTime(5), "a");
        clock.schedule(SimTime(10), "c");
        clock.schedule(SimTime(50), "late");
        let fired: Vec<_> = clock.advance(SimTime(10)).into_iter().map(|e| e.1).collect();
        assert_eq!(fired, vec!["a", "b", "c"]);
        assert_eq!(clock.now(), SimTime(10));
        assert!(clock.advance(SimTime::ZERO).is_empty());
        assert_eq!(clock.pending(), 1);
    }

    #[test]
    fn zero_advance_fires_only_due_events() {
        let mut clock = SimClock::new();
        clock.schedule(SimTime::ZERO, 1);
        clock.schedule(SimTime(1), 2);
        assert_eq!(clock.advance(SimTime::ZERO), vec![(SimTime::ZERO, 1)]);
        let mut empty: SimClock<u8> = SimClock::new();
        assert!(empty.advance(SimTime(100)).is_empty());
    }

    #[test]
    fn trace_is_deterministic_and_one_entry_per_send() {
        let run = |seed| {
            let cond = NetworkConditions::constant(0.01, 0.3, Some(50_000.0)).unwrap();
            let mut link = NetLink::new(cond, seed);
            for i in 0..200u64 {
                link.send(vec![0; (i % 37) as usize + 1], SimTime(i * 1000));
            }
            (link.trace().len(), link.replay_trace())
        };
        let (n, a) = run(7);
        let (_, b) = run(7);
        let (_, c) = run(8);
        assert_eq!(n, 200);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(NetLink::new(NetworkConditions::ideal(), 0).replay_trace().is_empty());
    }
}
