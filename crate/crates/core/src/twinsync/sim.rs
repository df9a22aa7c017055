use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bridge::{decode_envelope, encode_envelope, Tier};
use crate::msgbus::{Message, MessageKind, TopicName};
use crate::netsim::{NetLink, SimTime};

use super::bound::GronwallMonitor;
use super::gains::{schedule_gains, GainModel, GainSample, GainWindow};
use super::{
    adaptive_thresholds, pd_correct, predict_step, sync_errors, wrap_angle, PhysicalParams, SyncController, SyncError,
    Thresholds, TwinState, Vec3,
};

pub const STATE_TOPIC: &str = "/agent/state";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// rad/s
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
}

impl Sinusoid {
    pub fn at(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t + self.phase).sin()
    }
}

fn sum_at(terms: &[Sinusoid], t: f64) -> f64 {
    terms.iter().map(|s| s.at(t)).sum()
}

/// Force driving the physical agent, one sum of sinusoids per axis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceScript {
    pub x: Vec<Sinusoid>,
    pub y: Vec<Sinusoid>,
    pub z: Vec<Sinusoid>,
}

impl ForceScript {
    pub fn at(&self, t: f64) -> Vec3 {
        Vec3::new(sum_at(&self.x, t), sum_at(&self.y, t), sum_at(&self.z, t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncConfig {
    pub duration: f64,
    pub dt: f64,
    pub update_period: f64,
    pub params: PhysicalParams,
    pub terrain: String,
    pub force: ForceScript,
    /// Yaw rate of the physical agent, rad/s.
    pub yaw: Vec<Sinusoid>,
    pub noise_pos: f64,
    pub noise_vel: f64,
    pub noise_heading: f64,
    pub controller: SyncController,
    /// Reschedule gains on every update; otherwise keep the controller's.
    pub adaptive: bool,
    pub gain_model: GainModel,
    pub window: usize,
    /// Declared Lipschitz constant and input-mismatch bound for the monitor.
    pub lipschitz: Option<f64>,
    pub delta: Option<f64>,
    pub steady_after: f64,
    pub seed: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            dt: 0.01,
            update_period: 0.1,
            params: PhysicalParams::default(),
            terrain: "flat".into(),
            force: ForceScript {
                x: vec![Sinusoid { amplitude: 10.0, omega: 0.5, phase: 0.0 }],
                y: vec![Sinusoid { amplitude: 6.0, omega: 0.3, phase: 1.0 }],
                z: Vec::new(),
            },
            yaw: vec![Sinusoid { amplitude: 0.3, omega: 0.4, phase: 0.0 }],
            noise_pos: 0.005,
            noise_vel: 0.005,
            noise_heading: 0.2f64.to_radians(),
            controller: SyncController::default(),
            adaptive: true,
            gain_model: GainModel::default(),
            window: 20,
            lipschitz: None,
            delta: None,
            steady_after: 10.0,
            seed: 0,
        }
    }
}

impl SyncConfig {
    pub fn validate(&self) -> Result<(), SyncError> {
        self.params.validate()?;
        self.params.mu(&self.terrain)?;
        self.controller.validate()?;
        if !(self.dt > 0.0) {
            return Err(SyncError::InvalidStep(self.dt));
        }
        if !(self.duration > 0.0 && self.update_period >= self.dt) {
            return Err(SyncError::InvalidParams("duration must be positive and update_period ≥ dt".into()));
        }
        if !(self.noise_pos >= 0.0 && self.noise_vel >= 0.0 && self.noise_heading >= 0.0) {
            return Err(SyncError::InvalidParams("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    /// Smallest Lipschitz constant for which the discrete monitor is sound
    /// in the (‖Δp‖ + ‖Δv‖) norm.
    pub fn min_lipschitz(&self) -> f64 {
        (1.0 + self.dt) * 1f64.max(1.0 / self.params.mass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncSample {
    pub t: f64,
    pub e_pos: f64,
    /// radians
    pub e_rot: f64,
    pub bound: Option<f64>,
    pub kp: f64,
    pub kd: f64,
    pub corrected: bool,
    pub eps_pos: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyncReport {
    pub samples: Vec<SyncSample>,
    pub dt: f64,
    pub updates_sent: u64,
    pub updates_received: u64,
    pub gain_changes: u64,
    pub bound_violations: u64,
    /// Steps where the declared δ or K did not hold, so the bound is void.
    pub assumption_violations: u64,
    /// Largest ‖Δu‖ between the physical input and the twin's.
    pub max_input_mismatch: f64,
}

impl SyncReport {
    /// ∫‖e_pos‖ dt.
    pub fn integrated_error(&self) -> f64 {
        self.samples.iter().map(|s| s.e_pos).sum::<f64>() * self.dt
    }

    pub fn max_pos_after(&self, t: f64) -> f64 {
        self.samples.iter().filter(|s| s.t > t).map(|s| s.e_pos).fold(0.0, f64::max)
    }

    pub fn max_rot_after(&self, t: f64) -> f64 {
        self.samples.iter().filter(|s| s.t > t).map(|s| s.e_rot.abs()).fold(0.0, f64::max)
    }

    /// Delay after `t` until the error first stays below the adaptive
    /// position threshold for `hold` seconds.
    pub fn reconverge_after(&self, t: f64, hold: f64) -> Option<f64> {
        let mut since: Option<f64> = None;
        for s in self.samples.iter().filter(|s| s.t >= t) {
            if s.e_pos < s.eps_pos {
                let start = *since.get_or_insert(s.t);
                if s.t - start >= hold - 1e-9 {
                    return Some(start - t);
                }
            } else {
                since = None;
            }
        }
        None
    }

    /// ∫‖e_pos‖ dt over samples with `from <= t < to`.
    pub fn integrated_error_between(&self, from: f64, to: f64) -> f64 {
        self.samples
            .iter()
            .filter(|s| s.t >= from && s.t < to)
            .map(|s| s.e_pos)
            .sum::<f64>()
            * self.dt
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,e_pos_norm,e_rot,bound,gains,corrected_flag\n");
        for s in &self.samples {
            let bound = s.bound.map(|b| b.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}/{},{}",
                s.t,
                s.e_pos,
                s.e_rot,
                bound,
                s.kp,
                s.kd,
                u8::from(s.corrected)
            );
        }
        out
    }
}

struct Observation {
    state: TwinState,
    force: Vec3,
    yaw_rate: f64,
}

fn encode_observation(obs: &Observation) -> Vec<u8> {
    let s = &obs.state;
    let fields = [
        s.p.x, s.p.y, s.p.z, s.v.x, s.v.y, s.v.z, s.heading, obs.yaw_rate, obs.force.x, obs.force.y, obs.force.z, s.t,
    ];
    fields.iter().flat_map(|f| f.to_le_bytes()).collect()
}

fn decode_observation(payload: &[u8]) -> Option<Observation> {
    if payload.len() != 96 {
        return None;
    }
    let f: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Some(Observation {
        state: TwinState {
            p: Vec3::new(f[0], f[1], f[2]),
            v: Vec3::new(f[3], f[4], f[5]),
            a: Vec3::zeros(),
            heading: f[6],
            t: f[11],
        },
        yaw_rate: f[7],
        force: Vec3::new(f[8], f[9], f[10]),
    })
}

fn state_error(a: &TwinState, b: &TwinState) -> f64 {
    (a.p - b.p).norm() + (a.v - b.v).norm()
}

/// Runs a physical agent and its twin side by side, with state updates
/// travelling over `link`.
pub fn run_sync_loop(cfg: &SyncConfig, mut link: NetLink) -> Result<SyncReport, SyncError> {
    cfg.validate()?;
    let dt = cfg.dt;
    let steps = (cfg.duration / dt).round() as usize;
    let every = ((cfg.update_period / dt).round() as usize).max(1);
    let params = &cfg.params;
    let terrain = cfg.terrain.as_str();
    let topic = TopicName::new(STATE_TOPIC).expect("valid topic");
    let mut model = cfg.gain_model.clone();
    model.mass = params.mass;
    model.drag = params.drag;
    model.dt = dt;
    model.update_interval = cfg.update_period;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0b5e);
    let normal = |sd: f64| Normal::new(0.0, sd).map_err(|e| SyncError::InvalidParams(e.to_string()));
    let (np, nv, nh) = (normal(cfg.noise_pos)?, normal(cfg.noise_vel)?, normal(cfg.noise_heading)?);

    let mut ctrl = cfg.controller.clone();
    let mut phys = TwinState::at_rest(0.0);
    let mut twin = phys;
    let mut est: Option<TwinState> = None;
    let mut f_last = Vec3::zeros();
    let mut yaw_last = 0.0;
    let mut last_arrival: Option<f64> = None;
    let mut last_seq: Option<u64> = None;
    let mut seqs: VecDeque<u64> = VecDeque::new();
    let mut window = GainWindow::new(cfg.window);
    let mut gate_open = false;

    let monitored = cfg.lipschitz.is_some() && cfg.delta.is_some();
    let k = cfg.lipschitz.unwrap_or(1.0);
    let mut monitor = GronwallMonitor::new(k, cfg.delta.unwrap_or(f64::INFINITY));
    let mut report = SyncReport {
        dt,
        ..SyncReport::default()
    };
    if monitored && (k < cfg.min_lipschitz() || params.drag * dt > params.mass || params.mu(terrain)? > 0.0) {
        report.assumption_violations += 1;
    }

    for step in 0..=steps {
        let t = step as f64 * dt;
        let now = SimTime::from_secs(t);
        if step % every == 0 {
            let noisy = |d: &Normal<f64>, rng: &mut ChaCha8Rng| Vec3::new(d.sample(rng), d.sample(rng), d.sample(rng));
            let obs = Observation {
                state: TwinState {
                    p: phys.p + noisy(&np, &mut rng),
                    v: phys.v + noisy(&nv, &mut rng),
                    heading: phys.heading + nh.sample(&mut rng),
                    ..phys
                },
                force: cfg.force.at(t),
                yaw_rate: sum_at(&cfg.yaw, t),
            };
            let msg = Message {
                topic: topic.clone(),
                kind: MessageKind::Pose,
                payload: encode_observation(&obs),
                publish_time: now,
            };
            let frame = encode_envelope(&msg, Tier::Critical, report.updates_sent).expect("small frame");
            link.send(frame, now);
            report.updates_sent += 1;
        }

        for packet in link.poll(now) {
            let Ok(env) = decode_envelope(&packet) else { continue };
            if last_seq.is_some_and(|s| env.seq <= s) {
                continue;
            }
            let Some(obs) = decode_observation(&env.payload) else { continue };
            last_seq = Some(env.seq);
            report.updates_received += 1;
            seqs.push_back(env.seq);
            if seqs.len() > cfg.window.max(2) {
                seqs.pop_front();
            }
            // bring the stale observation up to now
            let mut e = obs.state;
            let lag = ((t - e.t) / dt).round().max(0.0) as usize;
            for _ in 0..lag {
                e = predict_step(&e, &obs.force, params, terrain, dt)?;
                e.heading += obs.yaw_rate * dt;
            }
            e.t = t;
            f_last = obs.force;
            yaw_last = obs.yaw_rate;
            last_arrival = Some(t);
            let innov = sync_errors(&e, &twin);
            window.push(GainSample {
                t,
                e_pos: innov.e_pos,
                e_vel: innov.e_vel,
            });
            est = Some(e);
            if cfg.adaptive {
                let gains = schedule_gains(&ctrl, &window, &model);
                if gains != (ctrl.kp, ctrl.kd) {
                    report.gain_changes += 1;
                }
                (ctrl.kp, ctrl.kd) = gains;
            }
            monitor.restart(t, state_error(&phys, &twin));
        }

        let loss = match (seqs.front(), seqs.back()) {
            (Some(a), Some(b)) if b > a => 1.0 - seqs.len() as f64 / (b - a + 1) as f64,
            _ => 0.0,
        };
        let gap = last_arrival.map_or(t, |a| t - a);
        let th = adaptive_thresholds(&ctrl, loss, gap);
        let (f_corr, yaw_corr) = match &est {
            Some(e) => {
                let err = sync_errors(e, &twin);
                let release = Thresholds {
                    pos: th.pos * ctrl.release,
                    vel: th.vel * ctrl.release,
                    rot: th.rot,
                };
                let f = pd_correct(&err.e_pos, &err.e_vel, &ctrl, if gate_open { &release } else { &th });
                gate_open = f.is_some();
                let yaw = if err.e_rot.abs() > th.rot { ctrl.k_rot * err.e_rot } else { 0.0 };
                (f, yaw)
            }
            None => (None, 0.0),
        };

        let truth = sync_errors(&phys, &twin);
        let bound = monitored.then(|| monitor.check(t, state_error(&phys, &twin)).0);
        report.samples.push(SyncSample {
            t,
            e_pos: truth.e_pos.norm(),
            e_rot: truth.e_rot,
            bound,
            kp: ctrl.kp,
            kd: ctrl.kd,
            corrected: f_corr.is_some(),
            eps_pos: th.pos,
        });
        if step == steps {
            break;
        }

        let f_phys = cfg.force.at(t);
        let u_twin = f_last + f_corr.unwrap_or_else(Vec3::zeros);
        monitor.note_input((f_phys - u_twin).norm());
        let heading = phys.heading + sum_at(&cfg.yaw, t) * dt;
        phys = predict_step(&phys, &f_phys, params, terrain, dt)?;
        phys.heading = heading;
        let heading = twin.heading + (yaw_last + yaw_corr) * dt;
        twin = predict_step(&twin, &u_twin, params, terrain, dt)?;
        twin.heading = wrap_angle(heading);
        if let Some(e) = &mut est {
            let heading = e.heading + yaw_last * dt;
            *e = predict_step(e, &f_last, params, terrain, dt)?;
            e.heading = heading;
        }
        phys.heading = wrap_angle(phys.heading);
    }
    report.bound_violations = monitor.violations();
    if monitored {
        report.assumption_violations += monitor.assumption_violations();
    }
    report.max_input_mismatch = monitor.max_input();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::NetworkConditions;

    #[test]
    fn perfect_channel_keeps_twin_exact() {
        let cfg = SyncConfig {
            duration: 20.0,
            update_period: 0.01,
            noise_pos: 0.0,
            noise_vel: 0.0,
            noise_heading: 0.0,
            ..SyncConfig::default()
        };
        let r = run_sync_loop(&cfg, NetLink::new(NetworkConditions::ideal(), 0)).unwrap();
        assert!(r.max_pos_after(0.0) < 1e-9, "{}", r.max_pos_after(0.0));
        assert_eq!(r.updates_received, r.updates_sent);
    }

    #[test]
    fn observation_roundtrip() {
        let obs = Observation {
            state: TwinState {
                p: Vec3::new(1.0, 2.0, 3.0),
                v: Vec3::new(-1.0, 0.5, 0.0),
                heading: 0.3,
                t: 4.5,
                ..TwinState::default()
            },
            force: Vec3::new(7.0, 8.0, 9.0),
            yaw_rate: -0.2,
        };
        let back = decode_observation(&encode_observation(&obs)).unwrap();
        assert_eq!(back.state.p, obs.state.p);
        assert_eq!(back.state.v, obs.state.v);
        assert_eq!((back.state.heading, back.state.t, back.yaw_rate), (0.3, 4.5, -0.2));
        assert_eq!(back.force, obs.force);
        assert!(decode_observation(&[0; 95]).is_none());
    }

    #[test]
    fn csv_header_and_rows() {
        let cfg = SyncConfig {
            duration: 0.05,
            ..SyncConfig::default()
        };
        let r = run_sync_loop(&cfg, NetLink::new(NetworkConditions::ideal(), 0)).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,e_pos_norm,e_rot,bound,gains,corrected_flag"));
        assert_eq!(lines.count(), 6);
    }
}
