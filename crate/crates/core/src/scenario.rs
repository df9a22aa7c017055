//! Scenario files: one TOML document describing network, agents, traffic,
//! policy, bridge tunables, an optional twin-sync run and an optional MMCF
//! search.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::bridge::policy::{compile, PolicySpec};
use crate::bridge::{BridgeConfig, DiscoveryConfig, PriorityPolicy, Tier};
use crate::geo::{EarthModel, GeoPoint};
use crate::mmcf::{ConfigSpace, MmcfWeights};
use crate::msgbus::{MessageKind, TopicName};
use crate::netsim::{NetworkConditions, Profile, Window};
use crate::twinsync::SyncConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("{}{msg}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid { line: Option<usize>, msg: String },
    #[error("scenario did not complete: {0}")]
    Run(String),
}

impl ScenarioError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ScenarioError::Parse { line, .. } => Some(*line),
            ScenarioError::Invalid { line, .. } => *line,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Constant(f64),
    Points(Vec<(f64, f64)>),
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec::Constant(0.0)
    }
}

impl ProfileSpec {
    fn to_profile(&self) -> Result<Profile, String> {
        match self {
            ProfileSpec::Constant(v) => Ok(Profile::constant(*v)),
            ProfileSpec::Points(p) => Profile::new(p.clone()).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    /// Seconds; a constant or `[[t, value], ...]` breakpoints.
    pub latency: ProfileSpec,
    /// Drop probability per packet, same forms as latency.
    pub loss: ProfileSpec,
    /// Bytes/s; absent means unlimited.
    pub bandwidth: Option<f64>,
    /// Bytes added to every packet on the wire.
    pub packet_overhead: usize,
    /// `[[start, end], ...]` in seconds.
    pub disconnects: Vec<(f64, f64)>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            latency: ProfileSpec::default(),
            loss: ProfileSpec::default(),
            bandwidth: None,
            packet_overhead: 28,
            disconnects: Vec::new(),
        }
    }
}

impl NetworkSpec {
    pub fn conditions(&self) -> Result<NetworkConditions, String> {
        let windows = self.disconnects.iter().map(|&(start, end)| Window { start, end }).collect();
        NetworkConditions::new(
            self.latency.to_profile()?,
            self.loss.to_profile()?,
            self.bandwidth,
            self.packet_overhead,
            windows,
        )
        .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsSpec {
    pub count: usize,
    /// Agent i starts publishing `i * stagger` seconds after its topics' start.
    pub stagger: f64,
}

impl Default for AgentsSpec {
    fn default() -> Self {
        Self { count: 1, stagger: 0.0 }
    }
}

/// A topic published by every agent; `{agent}` in the name expands to
/// `robot<i>`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicSpec {
    pub name: String,
    pub kind: MessageKind,
    /// Messages per second per agent.
    pub rate: f64,
    /// Payload bytes.
    pub size: usize,
    #[serde(default)]
    pub start: f64,
    pub stop: Option<f64>,
}

impl TopicSpec {
    pub fn topic_for(&self, agent: usize) -> String {
        self.name.replace("{agent}", &format!("robot{agent}"))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmcfSpec {
    #[serde(default)]
    pub weights: MmcfWeights,
    #[serde(default)]
    pub space: ConfigSpace,
    /// Calibrate bounds on every `probe_stride`-th configuration.
    #[serde(default = "one")]
    pub probe_stride: usize,
    /// Other scenario files (relative to this one) averaged into the cost.
    #[serde(default)]
    pub mix: Vec<PathBuf>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoSpec {
    /// Degrees and meters.
    pub reference: (f64, f64, f64),
    #[serde(default = "unit")]
    pub scale: f64,
    /// Bounding-box area of the operating region, m².
    #[serde(default)]
    pub extent: f64,
    #[serde(default)]
    pub waypoints: Vec<(f64, f64, f64)>,
}

fn unit() -> f64 {
    1.0
}

fn default_drain() -> f64 {
    10.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Seconds of traffic.
    pub duration: f64,
    /// Extra seconds simulated after traffic stops so queues can empty.
    #[serde(default = "default_drain")]
    pub drain: f64,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub agents: AgentsSpec,
    #[serde(default, rename = "topic")]
    pub topics: Vec<TopicSpec>,
    pub policy: Option<PolicySpec>,
    #[serde(default)]
    pub bridge: BridgeConfig,
    #[serde(default)]
    pub discovery: DiscoveryConfig,
    pub sync: Option<SyncConfig>,
    pub mmcf: Option<MmcfSpec>,
    pub geo: Option<GeoSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// First line (1-based) that assigns `key` or opens table `[key]`.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        let assigns = l.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='));
        let header = l.trim_start_matches('[').trim_end().trim_end_matches(']') == key && l.starts_with('[');
        assigns || header
    })
    .map(|i| i + 1)
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let mut sc: Scenario = toml::from_str(text).map_err(|e| {
            let (line, col) = e
                .span()
                .map(|s| {
                    let before = &text[..s.start.min(text.len())];
                    let line = before.matches('\n').count() + 1;
                    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                    (line, col)
                })
                .unwrap_or((0, 0));
            ScenarioError::Parse {
                line,
                col,
                msg: e.message().to_string(),
            }
        })?;
        sc.base_dir = base_dir.to_path_buf();
        sc.validate_with(text)?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.validate_with("")
    }

    fn validate_with(&self, text: &str) -> Result<(), ScenarioError> {
        let err = |key: &str, msg: String| ScenarioError::Invalid {
            line: line_of(text, key),
            msg,
        };
        if self.name.is_empty() || self.name.contains(|c: char| c == ',' || c.is_whitespace() || c == '/') {
            return Err(err("name", format!("name {:?} must be a non-empty token without commas, slashes or spaces", self.name)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(err("duration", format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.drain >= 0.0 && self.drain.is_finite()) {
            return Err(err("drain", format!("drain must be non-negative, got {}", self.drain)));
        }
        self.network.conditions().map_err(|m| err("network", m))?;
        if !(self.agents.stagger >= 0.0) {
            return Err(err("stagger", "stagger must be non-negative".into()));
        }
        for t in &self.topics {
            if !(t.rate > 0.0 && t.rate.is_finite()) {
                return Err(err("rate", format!("topic {} needs a positive rate", t.name)));
            }
            if t.start < 0.0 || t.stop.is_some_and(|s| s <= t.start) {
                return Err(err("start", format!("topic {} has an empty publishing window", t.name)));
            }
            for i in 0..self.agents.count.max(1) {
                TopicName::new(t.topic_for(i)).map_err(|e| err("name", e.to_string()))?;
            }
        }
        self.policy().map_err(|e| err("policy", e.to_string()))?;
        if let Some(spec) = &self.policy {
            for r in &spec.rules {
                let literal = !r.pattern.contains(['*', '?', '[']);
                if literal && !self.topic_names().iter().any(|t| t == &r.pattern) {
                    return Err(err("pattern", format!("policy rule names undeclared topic {}", r.pattern)));
                }
            }
        }
        let names = self.topic_names();
        for s in &self.bridge.static_topics {
            if !names.contains(s) {
                return Err(err("static_topics", format!("static topic {s} is not declared")));
            }
        }
        for p in self.discovery.allow.iter().chain(&self.discovery.deny) {
            compile(p).map_err(|e| err("discovery", e.to_string()))?;
        }
        if let Some(sync) = &self.sync {
            let mut s = sync.clone();
            s.duration = self.duration;
            s.validate().map_err(|e| err("sync", e.to_string()))?;
        }
        if let Some(m) = &self.mmcf {
            m.weights.validate().map_err(|e| err("weights", e.to_string()))?;
            m.space.enumerate().map_err(|e| err("space", e.to_string()))?;
        }
        if let Some(g) = &self.geo {
            GeoPoint::from_degrees(g.reference.0, g.reference.1, g.reference.2).map_err(|e| err("reference", e.to_string()))?;
            for w in &g.waypoints {
                GeoPoint::from_degrees(w.0, w.1, w.2).map_err(|e| err("waypoints", e.to_string()))?;
            }
            if !(g.scale > 0.0) || !(g.extent >= 0.0) {
                return Err(err("geo", "scale must be positive and extent non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn policy(&self) -> Result<PriorityPolicy, crate::bridge::PolicyError> {
        match &self.policy {
            Some(spec) => PriorityPolicy::from_spec(spec),
            None => Ok(PriorityPolicy::uniform(Tier::Standard)),
        }
    }

    /// Every concrete topic, in agent-major order.
    pub fn topic_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.agents.count {
            for t in &self.topics {
                out.push(t.topic_for(i));
            }
        }
        out
    }

    pub fn conditions(&self) -> Result<NetworkConditions, ScenarioError> {
        self.network.conditions().map_err(|msg| ScenarioError::Invalid { line: None, msg })
    }

    pub fn earth(&self) -> EarthModel {
        EarthModel::default()
    }

    /// Scenarios averaged by the MMCF search: this one first, then the mix.
    pub fn mmcf_mix(&self) -> Result<Vec<Scenario>, ScenarioError> {
        let mut out = vec![self.clone()];
        if let Some(m) = &self.mmcf {
            for p in &m.mix {
                let mut s = Scenario::load(&self.base_dir.join(p))?;
                s.seed = self.seed;
                out.push(s);
            }
        }
        Ok(out)
    }
}
