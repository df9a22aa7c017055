//! Physical → virtual state synchronization.
//!
//! The twin dead-reckons through communication gaps with the last known
//! force, and when an update arrives it is pulled back toward the physical
//! agent by a gated PD correction force.

pub mod bound;
mod gains;
mod sim;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bound::{gronwall_bound, gronwall_bound_profiled, GronwallMonitor, SyncBoundModel};
pub use gains::{candidate_metrics, schedule_gains, GainModel, GainSample, GainWindow};
pub use sim::{run_sync_loop, ForceScript, Sinusoid, SyncConfig, SyncReport, SyncSample, STATE_TOPIC};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("no friction coefficient for terrain {0:?}")]
    UnknownTerrain(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TwinState {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    pub heading: f64,
    pub t: f64,
}

impl TwinState {
    pub fn at_rest(t: f64) -> Self {
        Self {
            t,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    pub mass: f64,
    pub diameter: f64,
    /// Rolling-resistance coefficient per terrain class.
    pub friction: BTreeMap<String, f64>,
    /// Linear drag, N·s/m.
    pub drag: f64,
    pub g: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        let friction = [("flat", 0.0), ("concrete", 0.015), ("gravel", 0.05), ("grass", 0.08)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self {
            mass: 20.0,
            diameter: 0.5,
            friction,
            drag: 20.0,
            g: 9.81,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), SyncError> {
        let bad = |m: &str| Err(SyncError::InvalidParams(m.into()));
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return bad("mass must be positive");
        }
        if !(self.diameter > 0.0) {
            return bad("diameter must be positive");
        }
        if !(self.drag >= 0.0 && self.g >= 0.0) {
            return bad("drag and g must be non-negative");
        }
        if self.friction.values().any(|mu| !(*mu >= 0.0)) {
            return bad("friction coefficients must be non-negative");
        }
        Ok(())
    }

    pub fn mu(&self, terrain: &str) -> Result<f64, SyncError> {
        self.friction
            .get(terrain)
            .copied()
            .ok_or_else(|| SyncError::UnknownTerrain(terrain.to_string()))
    }
}

/// Coulomb friction along the direction of motion plus linear drag.
pub fn resistance(v: &Vec3, mu: f64, params: &PhysicalParams) -> Vec3 {
    let speed = v.norm();
    if speed == 0.0 {
        return Vec3::zeros();
    }
    v * (mu * params.mass * params.g / speed) + v * params.drag
}

/// Semi-implicit Euler step under a given resistive force.
pub fn integrate(state: &TwinState, f_phys: &Vec3, f_res: &Vec3, mass: f64, dt: f64) -> Result<TwinState, SyncError> {
    if !(dt > 0.0) {
        return Err(SyncError::InvalidStep(dt));
    }
    let a = (f_phys - f_res) / mass;
    let v = state.v + a * dt;
    let p = state.p + v * dt;
    Ok(TwinState {
        p,
        v,
        a,
        heading: state.heading,
        t: state.t + dt,
    })
}

pub fn predict_step(
    state: &TwinState,
    f_phys: &Vec3,
    params: &PhysicalParams,
    terrain: &str,
    dt: f64,
) -> Result<TwinState, SyncError> {
    if !(dt > 0.0) {
        return Err(SyncError::InvalidStep(dt));
    }
    let f_res = resistance(&state.v, params.mu(terrain)?, params);
    integrate(state, f_phys, &f_res, params.mass, dt)
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncErrors {
    pub e_pos: Vec3,
    pub e_vel: Vec3,
    pub e_rot: f64,
}

pub fn sync_errors(phys: &TwinState, pred: &TwinState) -> SyncErrors {
    SyncErrors {
        e_pos: phys.p - pred.p,
        e_vel: phys.v - pred.v,
        e_rot: wrap_angle(phys.heading - pred.heading),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncController {
    pub kp: f64,
    pub kd: f64,
    pub eps_pos: f64,
    pub eps_vel: f64,
    /// Heading threshold, radians.
    pub eps_rot: f64,
    /// Heading correction gain, 1/s.
    pub k_rot: f64,
    pub gain_grid: Vec<(f64, f64)>,
    /// Disconnect duration that doubles the thresholds, seconds.
    pub t_ref: f64,
    /// Once open, the gate stays open until both errors fall below this
    /// fraction of their thresholds.
    pub release: f64,
}

impl Default for SyncController {
    fn default() -> Self {
        let mut grid = Vec::new();
        for kp in [5.0, 40.0, 200.0] {
            for kd in [10.0, 40.0, 100.0] {
                grid.push((kp, kd));
            }
        }
        Self {
            kp: 40.0,
            kd: 40.0,
            eps_pos: 0.03,
            eps_vel: 0.05,
            eps_rot: 0.5f64.to_radians(),
            k_rot: 2.0,
            gain_grid: grid,
            t_ref: 10.0,
            release: 0.5,
        }
    }
}

impl SyncController {
    pub fn validate(&self) -> Result<(), SyncError> {
        let gains_ok = |kp: f64, kd: f64| kp >= 0.0 && kd >= 0.0 && kp.is_finite() && kd.is_finite();
        if !gains_ok(self.kp, self.kd) || !self.gain_grid.iter().all(|&(p, d)| gains_ok(p, d)) {
            return Err(SyncError::InvalidParams("gains must be finite and non-negative".into()));
        }
        if !(self.eps_pos > 0.0 && self.eps_vel > 0.0 && self.eps_rot > 0.0 && self.t_ref > 0.0) {
            return Err(SyncError::InvalidParams("thresholds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.release) {
            return Err(SyncError::InvalidParams("release must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub pos: f64,
    pub vel: f64,
    pub rot: f64,
}

pub const THRESHOLD_CAP: f64 = 4.0;

/// Thresholds widened by the current gap and the observed loss rate.
pub fn adaptive_thresholds(ctrl: &SyncController, loss_rate: f64, disconnect_duration: f64) -> Thresholds {
    let factor = ((1.0 + disconnect_duration.max(0.0) / ctrl.t_ref) * (1.0 + loss_rate.clamp(0.0, 1.0)))
        .min(THRESHOLD_CAP);
    Thresholds {
        pos: ctrl.eps_pos * factor,
        vel: ctrl.eps_vel * factor,
        rot: ctrl.eps_rot * factor,
    }
}

/// Ungated PD force.
pub fn pd_force(e_pos: &Vec3, e_vel: &Vec3, kp: f64, kd: f64) -> Vec3 {
    e_pos * kp + e_vel * kd
}

/// PD force with the current gains, or zero while both errors are within
/// their thresholds.
pub fn pd_correct(e_pos: &Vec3, e_vel: &Vec3, ctrl: &SyncController, thresholds: &Thresholds) -> Option<Vec3> {
    (e_pos.norm() > thresholds.pos || e_vel.norm() > thresholds.vel).then(|| pd_force(e_pos, e_vel, ctrl.kp, ctrl.kd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(mass: f64, mu: f64, drag: f64) -> PhysicalParams {
        PhysicalParams {
            mass,
            drag,
            friction: [("t".to_string(), mu)].into_iter().collect(),
            ..PhysicalParams::default()
        }
    }

    #[test]
    fn equilibrium_only_advances_time() {
        let s = TwinState::at_rest(1.0);
        let n = predict_step(&s, &Vec3::zeros(), &PhysicalParams::default(), "grass", 0.1).unwrap();
        assert_eq!(n.p, Vec3::zeros());
        assert_eq!(n.v, Vec3::zeros());
        assert_abs_diff_eq!(n.t, 1.1, epsilon = 1e-12);
    }

    #[test]
    fn direct_substitution() {
        let s = TwinState::default();
        let n = integrate(&s, &Vec3::new(20.0, 0.0, 0.0), &Vec3::new(10.0, 0.0, 0.0), 10.0, 0.1).unwrap();
        assert_abs_diff_eq!(n.a.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n.v.x, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(n.p.x, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn coulomb_friction_deceleration() {
        let s = TwinState {
            v: Vec3::new(1.0, 0.0, 0.0),
            ..TwinState::default()
        };
        let n = predict_step(&s, &Vec3::zeros(), &params(10.0, 0.3, 0.0), "t", 0.01).unwrap();
        assert_abs_diff_eq!(n.a.x, -2.943, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_step_and_terrain() {
        let s = TwinState::default();
        let p = PhysicalParams::default();
        assert_eq!(predict_step(&s, &Vec3::zeros(), &p, "flat", 0.0), Err(SyncError::InvalidStep(0.0)));
        assert!(matches!(
            predict_step(&s, &Vec3::zeros(), &p, "lava", 0.1),
            Err(SyncError::UnknownTerrain(_))
        ));
    }

    #[test]
    fn errors_and_heading_wrap() {
        let phys = TwinState {
            p: Vec3::new(1.0, 0.0, 0.0),
            heading: 350f64.to_radians(),
            ..TwinState::default()
        };
        let pred = TwinState {
            p: Vec3::new(0.96, 0.0, 0.0),
            heading: 10f64.to_radians(),
            ..TwinState::default()
        };
        let e = sync_errors(&phys, &pred);
        assert_abs_diff_eq!(e.e_pos.norm(), 0.04, epsilon = 1e-12);
        assert!(e.e_pos.norm() < 0.05);
        assert_abs_diff_eq!(e.e_rot.to_degrees(), -20.0, epsilon = 1e-9);
        let same = sync_errors(&phys, &phys);
        assert_eq!((same.e_pos, same.e_vel, same.e_rot), (Vec3::zeros(), Vec3::zeros(), 0.0));
        assert_eq!(wrap_angle(-PI), PI);
    }

    #[test]
    fn thresholds_scale_and_cap() {
        let c = SyncController::default();
        let base = adaptive_thresholds(&c, 0.0, 0.0);
        assert_eq!(base.pos, c.eps_pos);
        assert_eq!(base.vel, c.eps_vel);
        let ten = adaptive_thresholds(&c, 0.0, 10.0);
        assert_abs_diff_eq!(ten.pos, 2.0 * c.eps_pos, epsilon = 1e-15);
        let capped = adaptive_thresholds(&c, 0.0, 100.0);
        assert_abs_diff_eq!(capped.pos, 4.0 * c.eps_pos, epsilon = 1e-15);
        assert_abs_diff_eq!(capped.vel, 4.0 * c.eps_vel, epsilon = 1e-15);
    }

    #[test]
    fn pd_substitution_and_gate() {
        let c = SyncController {
            kp: 2.0,
            kd: 1.0,
            ..SyncController::default()
        };
        let th = Thresholds { pos: 0.01, vel: 0.01, rot: 0.01 };
        let f = pd_correct(&Vec3::new(0.1, 0.0, 0.0), &Vec3::new(0.05, 0.0, 0.0), &c, &th).unwrap();
        assert_abs_diff_eq!(f.x, 0.25, epsilon = 1e-15);
        let closed = Thresholds { pos: 1.0, vel: 1.0, rot: 1.0 };
        assert_eq!(pd_correct(&Vec3::new(0.1, 0.0, 0.0), &Vec3::zeros(), &c, &closed), None);
        assert_eq!(pd_force(&Vec3::new(1.0, 2.0, 3.0), &Vec3::new(1.0, 1.0, 1.0), 0.0, 0.0), Vec3::zeros());
    }
}
