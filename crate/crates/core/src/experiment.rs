//! Scenario execution: agents publish on one bus, the bridge carries their
//! topics over the simulated link to a second bus, and the run is summarized
//! as CSV reports. Also hosts agent sweeps, report comparison and the MMCF
//! search driver.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bridge::envelope::{decode_batch, FrameKind};
use crate::bridge::{BridgeConfig, BridgeEndpoint, BridgePair, DiscoveryConfig, Tier, WorkCounters};
use crate::geo::{gps_to_scene, GeoPoint};
use crate::mmcf::{
    measure_config, normalize, optimize, weighted_cost, Candidate, MeasuredMetrics, MetricBounds, MmcfRow, Normalized,
    OptimizeResult,
};
use crate::msgbus::{Bus, TopicName};
use crate::netsim::{NetLink, SimTime};
use crate::scenario::{Scenario, ScenarioError};
use crate::twinsync::{run_sync_loop, SyncReport};

// Work model behind the compute metric.
pub const FRAME_COST_S: f64 = 2e-6;
pub const BYTE_COST_S: f64 = 5e-9;
pub const POLL_COST_S: f64 = 20e-6;
pub const TOPIC_SCAN_COST_S: f64 = 1e-6;

pub fn compute_seconds(w: &WorkCounters) -> f64 {
    (w.frames_encoded + w.frames_decoded) as f64 * FRAME_COST_S
        + (w.bytes_encoded + w.bytes_decoded) as f64 * BYTE_COST_S
        + w.discovery_polls as f64 * POLL_COST_S
        + w.topics_scanned as f64 * TOPIC_SCAN_COST_S
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    /// Tiered queues, replay and discovery as configured.
    Prioritized,
    /// Single FIFO queue, no replay, static topic list.
    Baseline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Prioritized => "prioritized",
            Mode::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "prioritized" => Some(Mode::Prioritized),
            "baseline" => Some(Mode::Baseline),
            _ => None,
        }
    }
}

/// Latency summary in seconds. Percentiles use the nearest-rank method.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn latency_stats(samples: &[f64]) -> LatencyStats {
    if samples.is_empty() {
        return LatencyStats::default();
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    LatencyStats {
        count: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        p50: nearest_rank(&v, 0.5),
        p95: nearest_rank(&v, 0.95),
        max: v[v.len() - 1],
    }
}

/// Per-topic or per-tier accounting. `sent = delivered + dropped + pending`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Flow {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Still buffered somewhere (bus queue, send queue, link, receiver hold
    /// or replay buffer) and not yet ruled out.
    pub pending: u64,
    pub offered_bytes: u64,
    pub latencies: Vec<f64>,
}

impl Flow {
    pub fn delivery_rate(&self) -> f64 {
        if self.sent == 0 {
            1.0
        } else {
            self.delivered as f64 / self.sent as f64
        }
    }

    pub fn latency(&self) -> LatencyStats {
        latency_stats(&self.latencies)
    }

    fn absorb(&mut self, other: &Flow) {
        self.sent += other.sent;
        self.delivered += other.delivered;
        self.dropped += other.dropped;
        self.pending += other.pending;
        self.offered_bytes += other.offered_bytes;
        self.latencies.extend_from_slice(&other.latencies);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicReport {
    pub topic: String,
    pub tier: Tier,
    pub flow: Flow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub mode: Mode,
    pub agents: usize,
    /// Simulated seconds including the drain.
    pub simulated: f64,
    pub topics: Vec<TopicReport>,
    pub wire_bytes: u64,
    pub packets: u64,
    pub link_drops: u64,
    pub queue_overflow: u64,
    pub naks: u64,
    pub replayed: u64,
    pub decode_errors: u64,
    pub compute_s: f64,
    pub sync: Option<SyncReport>,
    /// Waypoints in scene coordinates.
    pub waypoints: Vec<(f64, f64, f64)>,
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.gen()
}

enum Action {
    Advertise,
    Publish(u64),
}

struct Event {
    at: SimTime,
    order: u8,
    agent: usize,
    topic: usize,
    action: Action,
}

/// The scenario's twin synchronization loop over its own link, if it has one.
pub fn run_sync(sc: &Scenario) -> Result<Option<SyncReport>, ScenarioError> {
    let Some(s) = &sc.sync else { return Ok(None) };
    let mut cfg = s.clone();
    cfg.duration = sc.duration;
    cfg.seed = sc.seed;
    let link = NetLink::new(sc.conditions()?, sub_seed(sc.seed, 3));
    run_sync_loop(&cfg, link).map(Some).map_err(|e| ScenarioError::Run(e.to_string()))
}

pub fn run_scenario(sc: &Scenario, mode: Mode) -> Result<RunReport, ScenarioError> {
    sc.validate()?;
    let cond = sc.conditions()?;
    let policy = sc.policy().map_err(|e| ScenarioError::Invalid {
        line: None,
        msg: e.to_string(),
    })?;
    let mut cfg = sc.bridge.clone();
    if cfg.budget.is_none() {
        cfg.budget = cond.bandwidth();
    }
    let names = sc.topic_names();
    let (cfg, disc) = match mode {
        Mode::Prioritized => (cfg, sc.discovery.clone()),
        Mode::Baseline => {
            let mut c = cfg.fifo_baseline();
            c.static_topics = names.clone();
            (c, DiscoveryConfig::disabled())
        }
    };
    let run_err = |e: crate::bridge::BridgeError| ScenarioError::Run(e.to_string());
    let bus_a = Bus::new();
    let bus_b = Bus::new();
    let a = BridgeEndpoint::new("agents", bus_a.clone(), cfg.clone(), policy.clone(), disc.clone()).map_err(run_err)?;
    let remote_cfg = BridgeConfig {
        static_topics: Vec::new(),
        ..cfg.clone()
    };
    let b = BridgeEndpoint::new("remote", bus_b, remote_cfg, policy.clone(), disc).map_err(run_err)?;
    let ab = NetLink::new(cond.clone(), sub_seed(sc.seed, 1));
    let ba = NetLink::new(cond.clone(), sub_seed(sc.seed, 2));
    let mut pair = BridgePair::new(a, b, ab, ba);

    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(sc.seed, 0));
    let mut events = Vec::new();
    for agent in 0..sc.agents.count {
        let up = agent as f64 * sc.agents.stagger;
        for (ti, t) in sc.topics.iter().enumerate() {
            events.push(Event {
                at: SimTime::from_secs(up.min(sc.duration)),
                order: 0,
                agent,
                topic: ti,
                action: Action::Advertise,
            });
            let period = 1.0 / t.rate;
            let phase = rng.gen::<f64>() * period;
            let start = up + t.start + phase;
            let stop = t.stop.map_or(sc.duration, |s| (up + s).min(sc.duration));
            let mut k = 0u64;
            loop {
                let at = start + k as f64 * period;
                if at >= stop {
                    break;
                }
                events.push(Event {
                    at: SimTime::from_secs(at),
                    order: 1,
                    agent,
                    topic: ti,
                    action: Action::Publish(k),
                });
                k += 1;
            }
        }
    }
    events.sort_by_key(|e| (e.at, e.order, e.agent, e.topic));

    let mut publishers = BTreeMap::new();
    let mut flows: BTreeMap<(usize, usize), Flow> = BTreeMap::new();
    for ev in events {
        pair.run_until(ev.at);
        let spec = &sc.topics[ev.topic];
        match ev.action {
            Action::Advertise => {
                let p = bus_a
                    .advertise(&spec.topic_for(ev.agent), spec.kind)
                    .map_err(|e| ScenarioError::Run(e.to_string()))?;
                publishers.insert((ev.agent, ev.topic), p);
            }
            Action::Publish(k) => {
                let mut payload = vec![ev.agent as u8; spec.size];
                let head = k.to_le_bytes();
                let n = head.len().min(spec.size);
                payload[..n].copy_from_slice(&head[..n]);
                let p = publishers.get_mut(&(ev.agent, ev.topic)).expect("advertised first");
                p.publish(payload, ev.at).map_err(|e| ScenarioError::Run(e.to_string()))?;
                let f = flows.entry((ev.agent, ev.topic)).or_default();
                f.sent += 1;
                f.offered_bytes += spec.size as u64;
            }
        }
    }
    let end = sc.duration + sc.drain;
    pair.run_until(SimTime::from_secs(end));

    // data seqs still on the wire, per topic
    let mut in_flight: BTreeMap<TopicName, BTreeSet<u64>> = BTreeMap::new();
    for packet in pair.ab.in_flight() {
        for env in decode_batch(packet).0 {
            if matches!(env.kind, FrameKind::Data(_)) {
                in_flight.entry(env.topic).or_default().insert(env.seq);
            }
        }
    }
    let bus_stats = bus_a.stats();
    let mut topics = Vec::new();
    for agent in 0..sc.agents.count {
        for (ti, spec) in sc.topics.iter().enumerate() {
            let name = spec.topic_for(agent);
            let topic = TopicName::new(name.clone()).expect("validated");
            let mut flow = flows.remove(&(agent, ti)).unwrap_or_default();
            if let Some(st) = pair.b.stats().ingress.get(&topic) {
                flow.delivered = st.delivered;
                flow.latencies = st.latencies.clone();
            }
            let mut seqs = pair.a.queued_seqs(&topic);
            seqs.extend(in_flight.get(&topic).into_iter().flatten().copied());
            seqs.extend(pair.b.held_seqs(&topic));
            if let Some(rb) = pair.a.replay_buffer() {
                let exported = pair.a.exported_count(&topic);
                if exported > 0 {
                    seqs.extend(rb.range(&topic, 0, exported - 1).map(|e| e.seq));
                }
            }
            let buffered = seqs
                .into_iter()
                .filter(|&s| !pair.b.has_delivered(&topic, s) && pair.b.may_deliver(&topic, s))
                .count() as u64;
            let on_bus = bus_stats
                .topics
                .get(&topic)
                .map_or(0, |t| t.queue_depths.iter().sum::<usize>() as u64);
            flow.pending = (buffered + on_bus).min(flow.sent - flow.delivered.min(flow.sent));
            flow.dropped = flow.sent - flow.delivered - flow.pending;
            topics.push(TopicReport {
                tier: policy.classify(&name),
                topic: name,
                flow,
            });
        }
    }

    let (sa, sb) = (pair.a.stats(), pair.b.stats());
    let drops = |l: &NetLink| l.trace().iter().filter(|e| e.drop_reason.is_some()).count() as u64;

    let sync = run_sync(sc)?;
    let mut waypoints = Vec::new();
    if let Some(g) = &sc.geo {
        let geo_err = |e: crate::geo::GeoError| ScenarioError::Invalid {
            line: None,
            msg: e.to_string(),
        };
        let r = GeoPoint::from_degrees(g.reference.0, g.reference.1, g.reference.2).map_err(geo_err)?;
        for w in &g.waypoints {
            let p = GeoPoint::from_degrees(w.0, w.1, w.2).map_err(geo_err)?;
            let s = gps_to_scene(&r, &p, g.scale, &sc.earth(), g.extent).map_err(geo_err)?;
            waypoints.push((s.x, s.y, s.z));
        }
    }

    Ok(RunReport {
        scenario: sc.name.clone(),
        seed: sc.seed,
        mode,
        agents: sc.agents.count,
        simulated: end,
        topics,
        wire_bytes: pair.ab.wire_bytes() + pair.ba.wire_bytes(),
        packets: (pair.ab.trace().len() + pair.ba.trace().len()) as u64,
        link_drops: drops(&pair.ab) + drops(&pair.ba),
        queue_overflow: sa.queue_overflow + sb.queue_overflow,
        naks: sb.naks_sent,
        replayed: sa.replayed,
        decode_errors: sa.decode_errors + sb.decode_errors,
        compute_s: compute_seconds(&sa.work) + compute_seconds(&sb.work),
        sync,
        waypoints,
    })
}

pub const REPORT_CSV_HEADER: &str = "scenario,seed,mode,scope,metric,value";
pub const TOPICS_CSV_HEADER: &str =
    "topic,tier,sent,delivered,dropped,pending,delivery_rate,latency_p50_ms,latency_p95_ms,latency_max_ms";
pub const TIERS_CSV_HEADER: &str =
    "tier,sent,delivered,dropped,pending,delivery_rate,latency_p50_ms,latency_p95_ms,latency_max_ms";

// latencies are whole microseconds; round away the binary noise
fn ms(s: f64) -> f64 {
    (s * 1e6).round() / 1e3
}

impl RunReport {
    pub fn tier(&self, tier: Tier) -> Flow {
        let mut f = Flow::default();
        for t in self.topics.iter().filter(|t| t.tier == tier) {
            f.absorb(&t.flow);
        }
        f
    }

    pub fn total(&self) -> Flow {
        let mut f = Flow::default();
        for t in &self.topics {
            f.absorb(&t.flow);
        }
        f
    }

    /// The four MMCF inputs for this run.
    pub fn metrics(&self) -> MeasuredMetrics {
        let total = self.total();
        MeasuredMetrics {
            latency: total.latency().mean,
            loss: 1.0 - total.delivery_rate(),
            compute: self.compute_s,
            bandwidth: self.wire_bytes as f64 / self.simulated,
        }
    }

    /// Long-format (scope, metric, value) rows.
    pub fn rows(&self) -> Vec<(String, &'static str, f64)> {
        let mut rows = Vec::new();
        let flow_rows = |rows: &mut Vec<(String, &'static str, f64)>, scope: String, f: &Flow| {
            let l = f.latency();
            rows.push((scope.clone(), "sent", f.sent as f64));
            rows.push((scope.clone(), "delivered", f.delivered as f64));
            rows.push((scope.clone(), "dropped", f.dropped as f64));
            rows.push((scope.clone(), "pending", f.pending as f64));
            rows.push((scope.clone(), "delivery_rate", f.delivery_rate()));
            rows.push((scope.clone(), "latency_mean_ms", ms(l.mean)));
            rows.push((scope.clone(), "latency_p50_ms", ms(l.p50)));
            rows.push((scope.clone(), "latency_p95_ms", ms(l.p95)));
            rows.push((scope, "latency_max_ms", ms(l.max)));
        };
        let total = self.total();
        rows.push(("total".to_string(), "agents", self.agents as f64));
        flow_rows(&mut rows, "total".into(), &total);
        let t = "total".to_string();
        rows.push((t.clone(), "offered_bytes", total.offered_bytes as f64));
        rows.push((t.clone(), "wire_bytes", self.wire_bytes as f64));
        rows.push((t.clone(), "wire_rate_Bps", self.wire_bytes as f64 / self.simulated));
        rows.push((t.clone(), "packets", self.packets as f64));
        rows.push((t.clone(), "link_drops", self.link_drops as f64));
        rows.push((t.clone(), "queue_overflow", self.queue_overflow as f64));
        rows.push((t.clone(), "naks", self.naks as f64));
        rows.push((t.clone(), "replayed", self.replayed as f64));
        rows.push((t.clone(), "decode_errors", self.decode_errors as f64));
        rows.push((t, "compute_s", self.compute_s));
        for tier in Tier::ALL {
            flow_rows(&mut rows, format!("tier:{}", tier.name()), &self.tier(tier));
        }
        for tr in &self.topics {
            flow_rows(&mut rows, format!("topic:{}", tr.topic), &tr.flow);
        }
        if let Some(s) = &self.sync {
            let sc = "sync".to_string();
            let steady = 10.0;
            rows.push((sc.clone(), "e_pos_max_steady_m", s.max_pos_after(steady)));
            rows.push((sc.clone(), "e_rot_max_steady_deg", s.max_rot_after(steady).to_degrees()));
            rows.push((sc.clone(), "integrated_error_ms", s.integrated_error()));
            rows.push((sc.clone(), "bound_violations", s.bound_violations as f64));
            rows.push((sc.clone(), "assumption_violations", s.assumption_violations as f64));
            rows.push((sc.clone(), "updates_sent", s.updates_sent as f64));
            rows.push((sc.clone(), "updates_received", s.updates_received as f64));
            rows.push((sc, "gain_changes", s.gain_changes as f64));
        }
        rows
    }

    pub fn report_csv(&self) -> String {
        let mut out = format!("{REPORT_CSV_HEADER}\n");
        for (scope, metric, value) in self.rows() {
            let _ = writeln!(out, "{},{},{},{scope},{metric},{value}", self.scenario, self.seed, self.mode.name());
        }
        out
    }

    fn flow_line(out: &mut String, label: &str, f: &Flow) {
        let l = f.latency();
        let _ = writeln!(
            out,
            "{label},{},{},{},{},{},{},{},{}",
            f.sent,
            f.delivered,
            f.dropped,
            f.pending,
            f.delivery_rate(),
            ms(l.p50),
            ms(l.p95),
            ms(l.max)
        );
    }

    pub fn topics_csv(&self) -> String {
        let mut out = format!("{TOPICS_CSV_HEADER}\n");
        for t in &self.topics {
            Self::flow_line(&mut out, &format!("{},{}", t.topic, t.tier.name()), &t.flow);
        }
        out
    }

    pub fn tiers_csv(&self) -> String {
        let mut out = format!("{TIERS_CSV_HEADER}\n");
        for tier in Tier::ALL {
            Self::flow_line(&mut out, tier.name(), &self.tier(tier));
        }
        out
    }

    pub fn waypoints_csv(&self) -> String {
        let mut out = String::from("index,x,y,z\n");
        for (i, (x, y, z)) in self.waypoints.iter().enumerate() {
            let _ = writeln!(out, "{i},{x},{y},{z}");
        }
        out
    }

    /// (file name, contents) of every artifact this run produces.
    pub fn artifacts(&self) -> Vec<(String, String)> {
        let stem = format!("{}.{}", self.scenario, self.mode.name());
        let mut out = vec![
            (format!("{stem}.report.csv"), self.report_csv()),
            (format!("{stem}.topics.csv"), self.topics_csv()),
            (format!("{stem}.tiers.csv"), self.tiers_csv()),
        ];
        if let Some(s) = &self.sync {
            out.push((format!("{stem}.sync.csv"), s.to_csv()));
        }
        if !self.waypoints.is_empty() {
            out.push((format!("{stem}.waypoints.csv"), self.waypoints_csv()));
        }
        out
    }
}

/// A report read back from its long-format CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub scenario: String,
    pub seed: u64,
    pub mode: String,
    pub rows: Vec<(String, String, f64)>,
}

pub fn parse_report_csv(text: &str) -> Result<ReportTable, ScenarioError> {
    let bad = |line: usize, msg: &str| ScenarioError::Invalid {
        line: Some(line),
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == REPORT_CSV_HEADER => {}
        _ => return Err(bad(1, "expected report header")),
    }
    let mut table: Option<ReportTable> = None;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(i + 1, "expected 6 fields"));
        }
        let seed: u64 = f[1].parse().map_err(|_| bad(i + 1, "bad seed"))?;
        let value: f64 = f[5].parse().map_err(|_| bad(i + 1, "bad value"))?;
        let t = table.get_or_insert_with(|| ReportTable {
            scenario: f[0].to_string(),
            seed,
            mode: f[2].to_string(),
            rows: Vec::new(),
        });
        if t.scenario != f[0] || t.seed != seed || t.mode != f[2] {
            return Err(bad(i + 1, "mixed scenarios in one report"));
        }
        t.rows.push((f[3].to_string(), f[4].to_string(), value));
    }
    table.ok_or_else(|| bad(1, "empty report"))
}

/// +1 when larger is better, −1 when smaller is better, 0 when neutral.
pub fn metric_orientation(metric: &str) -> f64 {
    if metric == "delivered" || metric == "delivery_rate" {
        return 1.0;
    }
    const LOWER: [&str; 12] = [
        "latency", "dropped", "pending", "wire", "packets", "link_drops", "overflow", "naks", "replayed", "decode_errors",
        "compute", "violations",
    ];
    if LOWER.iter().any(|k| metric.contains(k)) || metric.starts_with("e_") || metric.starts_with("integrated") {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub scope: String,
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// (a − b) / |b|; 0 when equal.
    pub rel: f64,
    /// `rel` signed so that positive means `a` is better.
    pub improvement: f64,
}

pub const DELTA_CSV_HEADER: &str = "scope,metric,a,b,delta,rel_delta,improvement";

pub fn compare(a: &ReportTable, b: &ReportTable) -> Result<Vec<DeltaRow>, ScenarioError> {
    if a.scenario != b.scenario || a.seed != b.seed {
        return Err(ScenarioError::Invalid {
            line: None,
            msg: format!(
                "reports differ in scenario/seed: {}/{} vs {}/{}",
                a.scenario, a.seed, b.scenario, b.seed
            ),
        });
    }
    let bmap: BTreeMap<(&str, &str), f64> = b.rows.iter().map(|(s, m, v)| ((s.as_str(), m.as_str()), *v)).collect();
    let mut out = Vec::new();
    for (scope, metric, av) in &a.rows {
        let Some(&bv) = bmap.get(&(scope.as_str(), metric.as_str())) else {
            continue;
        };
        let rel = if av == &bv {
            0.0
        } else if bv == 0.0 {
            (av - bv).signum() * f64::INFINITY
        } else {
            (av - bv) / bv.abs()
        };
        let o = metric_orientation(metric);
        out.push(DeltaRow {
            scope: scope.clone(),
            metric: metric.clone(),
            a: *av,
            b: bv,
            rel,
            improvement: if o == 0.0 { 0.0 } else { o * rel },
        });
    }
    Ok(out)
}

pub fn delta_csv(rows: &[DeltaRow]) -> String {
    let mut out = format!("{DELTA_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.scope, r.metric, r.a, r.b, r.a - r.b, r.rel, r.improvement);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub agents: usize,
    pub seed: u64,
    pub offered_bytes: u64,
    pub p95_critical_prioritized: f64,
    pub p95_critical_baseline: f64,
    pub delivery_critical_prioritized: f64,
    pub delivery_critical_baseline: f64,
    pub wire_bytes_prioritized: u64,
    pub wire_bytes_baseline: u64,
}

impl SweepRow {
    /// Relative p95 reduction of the prioritized bridge, percent.
    pub fn improvement_pct(&self) -> f64 {
        if self.p95_critical_baseline > 0.0 {
            100.0 * (self.p95_critical_baseline - self.p95_critical_prioritized) / self.p95_critical_baseline
        } else {
            0.0
        }
    }

    pub fn from_reports(prio: &RunReport, base: &RunReport) -> Self {
        let (cp, cb) = (prio.tier(Tier::Critical), base.tier(Tier::Critical));
        Self {
            agents: prio.agents,
            seed: prio.seed,
            offered_bytes: prio.total().offered_bytes,
            p95_critical_prioritized: cp.latency().p95,
            p95_critical_baseline: cb.latency().p95,
            delivery_critical_prioritized: cp.delivery_rate(),
            delivery_critical_baseline: cb.delivery_rate(),
            wire_bytes_prioritized: prio.wire_bytes,
            wire_bytes_baseline: base.wire_bytes,
        }
    }
}

pub const SWEEP_CSV_HEADER: &str = "agents,seed,offered_bytes,p95_critical_ms_prioritized,p95_critical_ms_baseline,p95_improvement_pct,delivery_critical_prioritized,delivery_critical_baseline,wire_bytes_prioritized,wire_bytes_baseline";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.agents,
            r.seed,
            r.offered_bytes,
            ms(r.p95_critical_prioritized),
            ms(r.p95_critical_baseline),
            r.improvement_pct(),
            r.delivery_critical_prioritized,
            r.delivery_critical_baseline,
            r.wire_bytes_prioritized,
            r.wire_bytes_baseline
        );
    }
    out
}

/// The scenario with a different agent count and seed.
pub fn with_agents(sc: &Scenario, agents: usize, seed: u64) -> Scenario {
    let mut s = sc.clone();
    s.agents.count = agents;
    s.seed = seed;
    s.name = format!("{}-n{agents}", sc.name);
    s.sync = None;
    s
}

/// Runs both modes for every (count, seed). Returns the table rows and the
/// underlying (prioritized, baseline) reports in the same order.
pub fn sweep_agents(
    sc: &Scenario,
    counts: &[usize],
    seeds: &[u64],
) -> Result<(Vec<SweepRow>, Vec<(RunReport, RunReport)>), ScenarioError> {
    if counts.is_empty() || !counts.windows(2).all(|w| w[0] < w[1]) {
        return Err(ScenarioError::Invalid {
            line: None,
            msg: "agent counts must be non-empty and strictly ascending".into(),
        });
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &n in counts {
        for &seed in seeds {
            let s = with_agents(sc, n, seed);
            let prio = run_scenario(&s, Mode::Prioritized)?;
            let base = run_scenario(&s, Mode::Baseline)?;
            rows.push(SweepRow::from_reports(&prio, &base));
            reports.push((prio, base));
        }
    }
    Ok((rows, reports))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmcfOutcome {
    pub rows: Vec<MmcfRow>,
    pub result: OptimizeResult,
    pub bounds: Vec<(String, MetricBounds)>,
    /// Mix cost of every evaluated configuration.
    pub costs: BTreeMap<Candidate, f64>,
    pub clamp_events: u64,
}

impl MmcfOutcome {
    pub fn median_cost(&self) -> f64 {
        let mut v: Vec<f64> = self.costs.values().copied().collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// Percent cost reduction of the optimum relative to the median config.
    pub fn improvement_vs_median_pct(&self) -> f64 {
        let m = self.median_cost();
        if m > 0.0 {
            100.0 * (m - self.result.cost) / m
        } else {
            0.0
        }
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let r = &self.result;
        let _ = writeln!(out, "best_config,{}", r.best);
        let _ = writeln!(out, "best_cost,{}", r.cost);
        let _ = writeln!(out, "median_fixed_cost,{}", self.median_cost());
        let _ = writeln!(out, "improvement_vs_median_pct,{}", self.improvement_vs_median_pct());
        let _ = writeln!(out, "evaluated,{}", r.evaluated);
        let _ = writeln!(out, "space_size,{}", r.space_size);
        let _ = writeln!(out, "exhaustive,{}", u8::from(r.exhaustive));
        let _ = writeln!(out, "clamp_events,{}", self.clamp_events);
        for (name, b) in &self.bounds {
            let _ = writeln!(out, "bounds:{name}:l_min,{}", b.l_min);
            let _ = writeln!(out, "bounds:{name}:l_max,{}", b.l_max);
            let _ = writeln!(out, "bounds:{name}:p_min,{}", b.p_min);
            let _ = writeln!(out, "bounds:{name}:p_max,{}", b.p_max);
            let _ = writeln!(out, "bounds:{name}:tau_max,{}", b.tau_max);
            let _ = writeln!(out, "bounds:{name}:b_max,{}", b.b_max);
        }
        out
    }
}

/// Calibrates bounds per scenario of the mix on the probe subset, then
/// searches the space for the lowest mean MMCF across the mix.
pub fn run_mmcf(sc: &Scenario) -> Result<MmcfOutcome, ScenarioError> {
    let spec = sc.mmcf.clone().ok_or_else(|| ScenarioError::Invalid {
        line: None,
        msg: "scenario has no [mmcf] section".into(),
    })?;
    let mmcf_err = |e: crate::mmcf::MmcfError| ScenarioError::Invalid {
        line: None,
        msg: e.to_string(),
    };
    let mix = sc.mmcf_mix()?;
    let space = spec.space.enumerate().map_err(mmcf_err)?;
    let probes = spec.space.probe_subset(spec.probe_stride).map_err(mmcf_err)?;
    let mut measured: Vec<BTreeMap<Candidate, MeasuredMetrics>> = vec![BTreeMap::new(); mix.len()];
    let mut bounds = Vec::new();
    for (i, s) in mix.iter().enumerate() {
        let mut probe_metrics = Vec::new();
        for c in &probes {
            let m = measure_config(c, s)?;
            measured[i].insert(*c, m);
            probe_metrics.push(m);
        }
        bounds.push((s.name.clone(), MetricBounds::calibrate(&probe_metrics).map_err(mmcf_err)?));
    }

    let mut per_scenario: BTreeMap<Candidate, Vec<(MeasuredMetrics, Normalized, f64)>> = BTreeMap::new();
    let mut costs = BTreeMap::new();
    let mut clamp_events = 0u64;
    let result = optimize(&space, sc.seed, |c| -> Result<f64, ScenarioError> {
        let mut parts = Vec::new();
        for (i, s) in mix.iter().enumerate() {
            let m = match measured[i].get(c) {
                Some(m) => *m,
                None => {
                    let m = measure_config(c, s)?;
                    measured[i].insert(*c, m);
                    m
                }
            };
            let n = normalize(&m, &bounds[i].1);
            let cost = weighted_cost(&n, &spec.weights).map_err(mmcf_err)?;
            parts.push((m, n, cost));
        }
        let mean = parts.iter().map(|p| p.2).sum::<f64>() / parts.len() as f64;
        if !per_scenario.contains_key(c) {
            clamp_events += parts.iter().map(|p| u64::from(p.1.clamped)).sum::<u64>();
        }
        per_scenario.insert(*c, parts);
        costs.insert(*c, mean);
        Ok(mean)
    })
    .map_err(mmcf_err)??;

    let mut rows = Vec::new();
    for (c, parts) in &per_scenario {
        let k = parts.len() as f64;
        let mut avg_m = MeasuredMetrics::default();
        let mut avg_n = Normalized::default();
        for ((m, n, cost), s) in parts.iter().zip(&mix) {
            rows.push(MmcfRow {
                scenario: s.name.clone(),
                config: *c,
                metrics: *m,
                normalized: *n,
                cost: *cost,
            });
            avg_m.latency += m.latency / k;
            avg_m.loss += m.loss / k;
            avg_m.compute += m.compute / k;
            avg_m.bandwidth += m.bandwidth / k;
            avg_n.l += n.l / k;
            avg_n.p += n.p / k;
            avg_n.c += n.c / k;
            avg_n.b += n.b / k;
            avg_n.clamped += n.clamped;
        }
        rows.push(MmcfRow {
            scenario: "mix".into(),
            config: *c,
            metrics: avg_m,
            normalized: avg_n,
            cost: costs[c],
        });
    }
    Ok(MmcfOutcome {
        rows,
        result,
        bounds,
        costs,
        clamp_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    const BASE: &str = r#"
name = "unit"
seed = 5
duration = 6.0
drain = 4.0

[network]
latency = 0.02
loss = 0.1
bandwidth = 40000

[agents]
count = 2

[[topic]]
name = "/{agent}/cmd_vel"
kind = "command"
rate = 20
size = 48

[[topic]]
name = "/{agent}/scan"
kind = "scan2d"
rate = 10
size = 1440

[policy]
default_tier = "bulk"
[[policy.rule]]
pattern = "/*/cmd_vel"
tier = "critical"
"#;

    fn scenario(text: &str) -> Scenario {
        Scenario::from_toml_str(text, Path::new(".")).unwrap()
    }

    #[test]
    fn percentiles_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        let s = latency_stats(&v);
        assert_eq!((s.p50, s.p95, s.max, s.count), (10.0, 19.0, 20.0, 20));
        assert_eq!(latency_stats(&[]).p95, 0.0);
        assert_eq!(nearest_rank(&[3.0], 0.95), 3.0);
    }

    #[test]
    fn conservation_holds_per_topic() {
        let sc = scenario(BASE);
        for mode in [Mode::Prioritized, Mode::Baseline] {
            let r = run_scenario(&sc, mode).unwrap();
            assert_eq!(r.topics.len(), 4);
            for t in &r.topics {
                let f = &t.flow;
                assert!(f.sent > 0);
                assert_eq!(f.sent, f.delivered + f.dropped + f.pending, "{} {mode:?}", t.topic);
                assert!(f.delivered <= f.sent);
            }
        }
    }

    #[test]
    fn empty_agents_zero_traffic() {
        let sc = scenario(&BASE.replace("count = 2", "count = 0"));
        let r = run_scenario(&sc, Mode::Prioritized).unwrap();
        assert!(r.topics.is_empty());
        assert_eq!(r.total().sent, 0);
        assert!(r.report_csv().contains("unit,5,prioritized,total,sent,0"));
    }

    #[test]
    fn deterministic_artifacts() {
        let sc = scenario(BASE);
        let a = run_scenario(&sc, Mode::Prioritized).unwrap().artifacts();
        let b = run_scenario(&sc, Mode::Prioritized).unwrap().artifacts();
        assert_eq!(a, b);
    }

    #[test]
    fn report_roundtrip_and_compare() {
        let sc = scenario(BASE);
        let r = run_scenario(&sc, Mode::Prioritized).unwrap();
        let t = parse_report_csv(&r.report_csv()).unwrap();
        assert_eq!(t.rows.len(), r.rows().len());
        let d = compare(&t, &t).unwrap();
        assert!(d.iter().all(|r| r.rel == 0.0 && r.improvement == 0.0));
        let other = ReportTable {
            seed: 6,
            ..t.clone()
        };
        assert!(compare(&t, &other).is_err());
    }

    #[test]
    fn compare_signs() {
        let a = ReportTable {
            scenario: "x".into(),
            seed: 0,
            mode: "prioritized".into(),
            rows: vec![
                ("total".into(), "latency_p95_ms".into(), 8.0),
                ("total".into(), "delivery_rate".into(), 1.0),
                ("total".into(), "sent".into(), 10.0),
            ],
        };
        let b = ReportTable {
            rows: vec![
                ("total".into(), "latency_p95_ms".into(), 10.0),
                ("total".into(), "delivery_rate".into(), 0.8),
                ("total".into(), "sent".into(), 10.0),
            ],
            ..a.clone()
        };
        let d = compare(&a, &b).unwrap();
        assert!((d[0].rel + 0.2).abs() < 1e-12 && (d[0].improvement - 0.2).abs() < 1e-12);
        assert!((d[1].rel - 0.25).abs() < 1e-12 && d[1].improvement > 0.0);
        assert_eq!(d[2].improvement, 0.0);
    }

    #[test]
    fn sweep_requires_ascending_counts() {
        let sc = scenario(BASE);
        assert!(sweep_agents(&sc, &[3, 2], &[0]).is_err());
        assert!(sweep_agents(&sc, &[], &[0]).is_err());
        let (rows, _) = sweep_agents(&sc, &[1], &[0]).unwrap();
        assert_eq!(rows.len(), 1);
    }
}
