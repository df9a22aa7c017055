//! Gain scheduling: score every (K_p, K_d) candidate by a short look-ahead of
//! the expected closed-loop error and pick the cheapest.

use std::collections::VecDeque;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::{SyncController, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSample {
    pub t: f64,
    pub e_pos: Vec3,
    pub e_vel: Vec3,
}

/// Most recent observed errors, one per received update.
#[derive(Debug, Clone)]
pub struct GainWindow {
    cap: usize,
    samples: VecDeque<GainSample>,
}

impl GainWindow {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            samples: VecDeque::new(),
        }
    }

    pub fn push(&mut self, s: GainSample) {
        self.samples.push_back(s);
        if self.samples.len() > self.cap {
            self.samples.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn latest(&self) -> Option<&GainSample> {
        self.samples.back()
    }

    /// Mean spacing between samples, which stretches under loss.
    pub fn mean_interval(&self) -> Option<f64> {
        let (first, last) = (self.samples.front()?, self.samples.back()?);
        (self.samples.len() >= 2).then(|| (last.t - first.t) / (self.samples.len() - 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainModel {
    pub mass: f64,
    pub drag: f64,
    pub dt: f64,
    /// Look-ahead length, seconds.
    pub horizon: f64,
    /// Nominal spacing of updates when the window cannot tell.
    pub update_interval: f64,
    /// Observation noise standard deviation per axis.
    pub noise_pos: f64,
    pub noise_vel: f64,
    pub w_accuracy: f64,
    pub w_energy: f64,
}

impl Default for GainModel {
    fn default() -> Self {
        Self {
            mass: 20.0,
            drag: 20.0,
            dt: 0.01,
            horizon: 2.0,
            update_interval: 0.1,
            noise_pos: 0.005,
            noise_vel: 0.005,
            w_accuracy: 0.98,
            w_energy: 0.02,
        }
    }
}

/// Expected accuracy (mean RMS positional error) and correction energy
/// (mean squared force) over the horizon when starting from the given error.
///
/// Per axis the state is (e, ė, n_p, n_v): the tracking error and the error
/// of the noisy estimate the PD acts on. The estimate error is redrawn at each
/// update and otherwise evolves under the drag. Means and covariances are
/// propagated exactly for the linear model; gating is ignored.
pub fn candidate_metrics(kp: f64, kd: f64, e0: &Vec3, ve0: &Vec3, update_interval: f64, model: &GainModel) -> (f64, f64) {
    let dt = model.dt;
    let a = dt / model.mass;
    let damp = 1.0 - model.drag * a;
    let row_v = [-a * kp, 1.0 - a * (model.drag + kd), -a * kp, -a * kd];
    #[rustfmt::skip]
    let step = Matrix4::new(
        1.0 + dt * row_v[0], dt * row_v[1], dt * row_v[2], dt * row_v[3],
        row_v[0],            row_v[1],      row_v[2],      row_v[3],
        0.0,                 0.0,           1.0,           dt * damp,
        0.0,                 0.0,           0.0,           damp,
    );
    let g = Vector4::new(kp, kd, kp, kd);
    let noise = Matrix4::from_diagonal(&Vector4::new(0.0, 0.0, model.noise_pos.powi(2), model.noise_vel.powi(2)));

    let mut means: Vec<Vector4<f64>> = (0..3).map(|i| Vector4::new(e0[i], ve0[i], 0.0, 0.0)).collect();
    let mut cov = noise;
    let n = ((model.horizon / dt).round() as usize).max(1);
    let every = ((update_interval / dt).round() as usize).max(1);
    let (mut acc, mut energy) = (0.0, 0.0);
    for k in 1..=n {
        // force applied over this step, from the state at its start
        let f2 = means.iter().map(|m| g.dot(m).powi(2)).sum::<f64>() + 3.0 * (g.transpose() * cov * g)[0];
        energy += f2;
        for m in &mut means {
            *m = step * *m;
        }
        cov = step * cov * step.transpose();
        let e2 = means.iter().map(|m| m[0] * m[0]).sum::<f64>() + 3.0 * cov[(0, 0)];
        acc += e2.max(0.0).sqrt();
        if k % every == 0 {
            for i in 0..4 {
                for j in 0..4 {
                    if i >= 2 || j >= 2 {
                        cov[(i, j)] = 0.0;
                    }
                }
            }
            cov += noise;
        }
    }
    (acc / n as f64, energy / n as f64)
}

/// Picks the grid candidate with the lowest weighted, max-normalized cost;
/// ties go to the earliest candidate. With no observations the current gains
/// are kept.
pub fn schedule_gains(ctrl: &SyncController, window: &GainWindow, model: &GainModel) -> (f64, f64) {
    let Some(latest) = window.latest() else {
        return (ctrl.kp, ctrl.kd);
    };
    if ctrl.gain_grid.is_empty() {
        return (ctrl.kp, ctrl.kd);
    }
    let interval = window.mean_interval().unwrap_or(model.update_interval);
    let metrics: Vec<(f64, f64)> = ctrl
        .gain_grid
        .iter()
        .map(|&(kp, kd)| candidate_metrics(kp, kd, &latest.e_pos, &latest.e_vel, interval, model))
        .collect();
    let max_acc = metrics.iter().map(|m| m.0).fold(0.0, f64::max);
    let max_energy = metrics.iter().map(|m| m.1).fold(0.0, f64::max);
    let norm = |x: f64, max: f64| if max > 0.0 { x / max } else { 0.0 };
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for (i, &(acc, energy)) in metrics.iter().enumerate() {
        let cost = model.w_accuracy * norm(acc, max_acc) + model.w_energy * norm(energy, max_energy);
        if cost < best_cost {
            best = i;
            best_cost = cost;
        }
    }
    ctrl.gain_grid[best]
}
