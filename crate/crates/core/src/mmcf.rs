//! Multi-metric cost of a bridge configuration and exhaustive/local search
//! over a discrete configuration space.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{BridgeConfig, DiscoveryConfig};
use crate::experiment::{run_scenario, Mode};
use crate::scenario::{Scenario, ScenarioError};

/// Spaces up to this size are searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MmcfError {
    #[error("weights must be non-negative and sum to 1, got {0:?}")]
    InvalidWeights([f64; 4]),
    #[error("invalid metric bounds: {0}")]
    InvalidBounds(String),
    #[error("configuration space is empty")]
    EmptySpace,
    #[error("invalid configuration space: {0}")]
    InvalidSpace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBounds {
    pub l_min: f64,
    pub l_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub tau_max: f64,
    pub b_max: f64,
}

impl MetricBounds {
    pub fn new(l_min: f64, l_max: f64, p_min: f64, p_max: f64, tau_max: f64, b_max: f64) -> Result<Self, MmcfError> {
        let b = Self {
            l_min,
            l_max,
            p_min,
            p_max,
            tau_max,
            b_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), MmcfError> {
        let all = [self.l_min, self.l_max, self.p_min, self.p_max, self.tau_max, self.b_max];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(MmcfError::InvalidBounds("bounds must be finite".into()));
        }
        if !(self.l_max > self.l_min && self.p_max > self.p_min) {
            return Err(MmcfError::InvalidBounds("need l_max > l_min and p_max > p_min".into()));
        }
        if !(self.tau_max > 0.0 && self.b_max > 0.0) {
            return Err(MmcfError::InvalidBounds("tau_max and b_max must be positive".into()));
        }
        Ok(())
    }

    /// Empirical bounds from a set of probe measurements. Degenerate ranges
    /// are widened just enough to stay valid.
    pub fn calibrate(probes: &[MeasuredMetrics]) -> Result<Self, MmcfError> {
        if probes.is_empty() {
            return Err(MmcfError::EmptySpace);
        }
        let min = |f: fn(&MeasuredMetrics) -> f64| probes.iter().map(f).fold(f64::INFINITY, f64::min);
        let max = |f: fn(&MeasuredMetrics) -> f64| probes.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let (l_min, mut l_max) = (min(|m| m.latency), max(|m| m.latency));
        let (p_min, mut p_max) = (min(|m| m.loss), max(|m| m.loss));
        if l_max <= l_min {
            l_max = l_min + 1e-6;
        }
        if p_max <= p_min {
            p_max = p_min + 1e-6;
        }
        Self::new(
            l_min,
            l_max,
            p_min,
            p_max,
            max(|m| m.compute).max(1e-9),
            max(|m| m.bandwidth).max(1e-9),
        )
    }
}

/// (α, β, γ, δ) for latency, loss, compute and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct MmcfWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl MmcfWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self, MmcfError> {
        let w = Self { alpha, beta, gamma, delta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), MmcfError> {
        let a = self.as_array();
        let sum: f64 = a.iter().sum();
        if a.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(MmcfError::InvalidWeights(a));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma, self.delta]
    }
}

impl Default for MmcfWeights {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.3,
            gamma: 0.2,
            delta: 0.1,
        }
    }
}

impl TryFrom<[f64; 4]> for MmcfWeights {
    type Error = MmcfError;
    fn try_from(a: [f64; 4]) -> Result<Self, MmcfError> {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<MmcfWeights> for [f64; 4] {
    fn from(w: MmcfWeights) -> Self {
        w.as_array()
    }
}

/// ℓ mean latency (s), p loss probability, τ modeled compute (s), b wire rate (bytes/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasuredMetrics {
    pub latency: f64,
    pub loss: f64,
    pub compute: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Normalized {
    pub l: f64,
    pub p: f64,
    pub c: f64,
    pub b: f64,
    /// How many of the four values fell outside [0, 1] before clamping.
    pub clamped: u32,
}

impl Normalized {
    pub fn as_array(&self) -> [f64; 4] {
        [self.l, self.p, self.c, self.b]
    }
}

pub fn normalize(m: &MeasuredMetrics, bounds: &MetricBounds) -> Normalized {
    let mut clamped = 0;
    let mut clamp = |x: f64| {
        if !(0.0..=1.0).contains(&x) {
            clamped += 1;
        }
        if x.is_nan() {
            1.0
        } else {
            x.clamp(0.0, 1.0)
        }
    };
    let l = clamp((m.latency - bounds.l_min) / (bounds.l_max - bounds.l_min));
    let p = clamp((m.loss - bounds.p_min) / (bounds.p_max - bounds.p_min));
    let c = clamp(m.compute / bounds.tau_max);
    let b = clamp(m.bandwidth / bounds.b_max);
    Normalized { l, p, c, b, clamped }
}

/// Weighted sum of already normalized metrics.
pub fn weighted_cost(n: &Normalized, w: &MmcfWeights) -> Result<f64, MmcfError> {
    w.validate()?;
    Ok(w.alpha * n.l + w.beta * n.p + w.gamma * n.c + w.delta * n.b)
}

pub fn mmcf(m: &MeasuredMetrics, bounds: &MetricBounds, w: &MmcfWeights) -> Result<f64, MmcfError> {
    weighted_cost(&normalize(m, bounds), w)
}

/// One point of the configuration space. Integer fields keep the space
/// exactly enumerable; the derived ordering is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub redundancy: u8,
    /// Tier shares in percent.
    pub shares_pct: [u8; 3],
    pub replay_depth: u32,
    pub discovery_period_ms: u32,
    pub batch: u16,
}

impl Candidate {
    /// Applies this candidate on top of a base endpoint and discovery setup.
    pub fn apply(&self, bridge: &BridgeConfig, discovery: &DiscoveryConfig) -> (BridgeConfig, DiscoveryConfig) {
        let mut b = bridge.clone();
        b.redundancy = self.redundancy;
        b.shares = self.shares_pct.map(|s| f64::from(s) / 100.0);
        b.replay_depth = self.replay_depth as usize;
        b.batch = usize::from(self.batch);
        let mut d = discovery.clone();
        d.period = f64::from(self.discovery_period_ms) / 1000.0;
        (b, d)
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [c, s, b] = self.shares_pct;
        write!(
            f,
            "r{}-s{c}/{s}/{b}-d{}-p{}-b{}",
            self.redundancy, self.replay_depth, self.discovery_period_ms, self.batch
        )
    }
}

/// Declared discrete domain of each field. Discovery periods in seconds,
/// shares as fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigSpace {
    pub redundancy: Vec<u8>,
    pub shares: Vec<[f64; 3]>,
    pub replay_depth: Vec<u32>,
    pub discovery_period: Vec<f64>,
    pub batch: Vec<u16>,
}

impl Default for ConfigSpace {
    fn default() -> Self {
        Self {
            redundancy: vec![0],
            shares: vec![[0.0, 0.0, 0.05]],
            replay_depth: vec![256],
            discovery_period: vec![0.5],
            batch: vec![1],
        }
    }
}

impl ConfigSpace {
    pub fn len(&self) -> usize {
        self.redundancy.len() * self.shares.len() * self.replay_depth.len() * self.discovery_period.len() * self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every configuration in ascending order.
    pub fn enumerate(&self) -> Result<Vec<Candidate>, MmcfError> {
        if self.redundancy.iter().any(|&r| r > 3) {
            return Err(MmcfError::InvalidSpace("redundancy must be in 0..=3".into()));
        }
        let mut shares = Vec::new();
        for s in &self.shares {
            if s.iter().any(|x| !(0.0..=1.0).contains(x)) || s.iter().sum::<f64>() > 1.0 + 1e-9 {
                return Err(MmcfError::InvalidSpace(format!("shares {s:?} must be fractions summing to at most 1")));
            }
            shares.push(s.map(|x| (x * 100.0).round() as u8));
        }
        let mut periods = Vec::new();
        for &p in &self.discovery_period {
            if !(p > 0.0 && p <= 3600.0) {
                return Err(MmcfError::InvalidSpace(format!("discovery period {p} out of range")));
            }
            periods.push((p * 1000.0).round() as u32);
        }
        if self.batch.contains(&0) {
            return Err(MmcfError::InvalidSpace("batch must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(self.len());
        for &redundancy in &self.redundancy {
            for &shares_pct in &shares {
                for &replay_depth in &self.replay_depth {
                    for &discovery_period_ms in &periods {
                        for &batch in &self.batch {
                            out.push(Candidate {
                                redundancy,
                                shares_pct,
                                replay_depth,
                                discovery_period_ms,
                                batch,
                            });
                        }
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Every `stride`-th configuration plus the last one.
    pub fn probe_subset(&self, stride: usize) -> Result<Vec<Candidate>, MmcfError> {
        let all = self.enumerate()?;
        let stride = stride.max(1);
        let mut probes: Vec<Candidate> = all.iter().step_by(stride).copied().collect();
        if let Some(last) = all.last() {
            if probes.last() != Some(last) {
                probes.push(*last);
            }
        }
        Ok(probes)
    }
}

/// Runs `scenario` with the prioritized bridge under `c` and extracts
/// (ℓ, p, τ, b). The twin-sync part of the scenario is skipped.
pub fn measure_config(c: &Candidate, scenario: &Scenario) -> Result<MeasuredMetrics, ScenarioError> {
    let mut sc = scenario.clone();
    sc.sync = None;
    let (bridge, discovery) = c.apply(&sc.bridge, &sc.discovery);
    sc.bridge = bridge;
    sc.discovery = discovery;
    Ok(run_scenario(&sc, Mode::Prioritized)?.metrics())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub best: Candidate,
    pub cost: f64,
    pub evaluated: usize,
    pub space_size: usize,
    pub exhaustive: bool,
}

impl OptimizeResult {
    pub fn fraction_evaluated(&self) -> f64 {
        self.evaluated as f64 / self.space_size as f64
    }
}

fn better(a: (f64, &Candidate), b: (f64, &Candidate)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Argmin of `cost` over the candidates; ties go to the smallest candidate.
/// Larger spaces fall back to a seeded coordinate search with restarts.
pub fn optimize<E, F>(candidates: &[Candidate], seed: u64, mut cost: F) -> Result<Result<OptimizeResult, E>, MmcfError>
where
    F: FnMut(&Candidate) -> Result<f64, E>,
{
    if candidates.is_empty() {
        return Err(MmcfError::EmptySpace);
    }
    let mut sorted = candidates.to_vec();
    sorted.sort();
    sorted.dedup();
    let n = sorted.len();
    if n <= EXHAUSTIVE_LIMIT {
        let mut best: Option<(f64, Candidate)> = None;
        for c in &sorted {
            let v = match cost(c) {
                Ok(v) => v,
                Err(e) => return Ok(Err(e)),
            };
            if best.as_ref().map_or(true, |(bv, bc)| better((v, c), (*bv, bc))) {
                best = Some((v, *c));
            }
        }
        let (cost, best) = best.expect("non-empty");
        return Ok(Ok(OptimizeResult {
            best,
            cost,
            evaluated: n,
            space_size: n,
            exhaustive: true,
        }));
    }
    Ok(local_search(&sorted, seed, &mut cost))
}

fn local_search<E, F>(sorted: &[Candidate], seed: u64, cost: &mut F) -> Result<OptimizeResult, E>
where
    F: FnMut(&Candidate) -> Result<f64, E>,
{
    let n = sorted.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache: BTreeMap<Candidate, f64> = BTreeMap::new();
    let mut eval = |c: &Candidate, cache: &mut BTreeMap<Candidate, f64>| -> Result<f64, E> {
        if let Some(&v) = cache.get(c) {
            return Ok(v);
        }
        let v = cost(c)?;
        cache.insert(*c, v);
        Ok(v)
    };
    // neighbors differ in exactly one field
    let axes = |c: &Candidate, d: &Candidate| -> u32 {
        u32::from(c.redundancy != d.redundancy)
            + u32::from(c.shares_pct != d.shares_pct)
            + u32::from(c.replay_depth != d.replay_depth)
            + u32::from(c.discovery_period_ms != d.discovery_period_ms)
            + u32::from(c.batch != d.batch)
    };
    let budget = EXHAUSTIVE_LIMIT.min(n);
    let mut best: Option<(f64, Candidate)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut restarts = order.into_iter();
    while cache.len() < budget {
        let Some(start) = restarts.next() else { break };
        let mut cur = sorted[start];
        let mut cur_v = eval(&cur, &mut cache)?;
        loop {
            let mut moved = false;
            let here = cur;
            for d in sorted.iter().filter(|d| axes(&here, d) == 1) {
                if cache.len() >= budget && !cache.contains_key(d) {
                    continue;
                }
                let v = eval(d, &mut cache)?;
                if better((v, d), (cur_v, &cur)) {
                    cur = *d;
                    cur_v = v;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        if best.as_ref().map_or(true, |(bv, bc)| better((cur_v, &cur), (*bv, bc))) {
            best = Some((cur_v, cur));
        }
    }
    let (cost, best) = best.expect("at least one restart");
    Ok(OptimizeResult {
        best,
        cost,
        evaluated: cache.len(),
        space_size: n,
        exhaustive: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmcfRow {
    pub scenario: String,
    pub config: Candidate,
    pub metrics: MeasuredMetrics,
    pub normalized: Normalized,
    pub cost: f64,
}

pub const MMCF_CSV_HEADER: &str = "scenario,config,latency_s,loss,compute_s,bandwidth_Bps,L,P,C,B,cost";

pub fn rows_to_csv(rows: &[MmcfRow]) -> String {
    let mut out = format!("{MMCF_CSV_HEADER}\n");
    for r in rows {
        let m = &r.metrics;
        let n = &r.normalized;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario, r.config, m.latency, m.loss, m.compute, m.bandwidth, n.l, n.p, n.c, n.b, r.cost
        );
    }
    out
}
