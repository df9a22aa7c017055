//! Grönwall envelope for the positional error between agent and twin.

use crate::netsim::Profile;

use super::SyncError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncBoundModel {
    /// Lipschitz constant, 1/s.
    pub k: f64,
    /// sup ‖Δu‖ in force units.
    pub delta: f64,
    pub epsilon: f64,
    pub e0: f64,
}

impl SyncBoundModel {
    pub fn new(k: f64, delta: f64, epsilon: f64, e0: f64) -> Result<Self, SyncError> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(SyncError::InvalidParams(format!("Lipschitz constant must be positive, got {k}")));
        }
        if !(delta >= 0.0 && e0 >= 0.0 && epsilon >= 0.0) {
            return Err(SyncError::InvalidParams("delta, epsilon and e0 must be non-negative".into()));
        }
        Ok(Self { k, delta, epsilon, e0 })
    }

    /// Whether the envelope stays within ε up to time `t`.
    pub fn within_epsilon(&self, t: f64) -> bool {
        gronwall_bound(self, t) <= self.epsilon
    }
}

/// e0·e^{Kt} + δ·(e^{Kt} − 1) for constant δ.
pub fn gronwall_bound(model: &SyncBoundModel, t: f64) -> f64 {
    let t = t.max(0.0);
    let kt = model.k * t;
    model.e0 * kt.exp() + model.delta * kt.exp_m1()
}

/// Envelope for a piecewise-constant δ(τ). Each constant piece integrates in
/// closed form, so no quadrature error is introduced.
pub fn gronwall_bound_profiled(k: f64, e0: f64, delta: &Profile, t: f64) -> f64 {
    let t = t.max(0.0);
    let pts = delta.points();
    let mut total = e0 * (k * t).exp();
    for (i, &(start, value)) in pts.iter().enumerate() {
        let a = if i == 0 { 0.0 } else { start.max(0.0) };
        let b = pts.get(i + 1).map_or(t, |&(next, _)| next.min(t));
        if b <= a {
            continue;
        }
        // ∫_a^b K·δ·e^{K(t−τ)} dτ
        total += value * ((k * (t - a)).exp() - (k * (t - b)).exp());
    }
    total
}

/// Runtime check of the envelope, restarted from the measured error whenever
/// a fresh update resynchronizes the twin.
#[derive(Debug, Clone)]
pub struct GronwallMonitor {
    k: f64,
    delta: f64,
    t0: f64,
    e0: f64,
    violations: u64,
    assumption_violations: u64,
    checks: u64,
    max_input: f64,
}

impl GronwallMonitor {
    pub fn new(k: f64, delta: f64) -> Self {
        Self {
            k,
            delta,
            t0: 0.0,
            e0: 0.0,
            violations: 0,
            assumption_violations: 0,
            checks: 0,
            max_input: 0.0,
        }
    }

    pub fn restart(&mut self, t: f64, e: f64) {
        self.t0 = t;
        self.e0 = e;
    }

    pub fn bound(&self, t: f64) -> f64 {
        let model = SyncBoundModel {
            k: self.k,
            delta: self.delta,
            epsilon: f64::INFINITY,
            e0: self.e0,
        };
        gronwall_bound(&model, t - self.t0)
    }

    /// Compares a measured error with the envelope; returns (bound, exceeded).
    pub fn check(&mut self, t: f64, e: f64) -> (f64, bool) {
        self.checks += 1;
        let b = self.bound(t);
        let exceeded = e > b * (1.0 + 1e-9) + 1e-12;
        if exceeded {
            self.violations += 1;
        }
        (b, exceeded)
    }

    /// Records the control mismatch applied over one step.
    pub fn note_input(&mut self, du: f64) {
        self.max_input = self.max_input.max(du);
        if du > self.delta {
            self.assumption_violations += 1;
        }
    }

    pub fn violations(&self) -> u64 {
        self.violations
    }

    pub fn assumption_violations(&self) -> u64 {
        self.assumption_violations
    }

    pub fn checks(&self) -> u64 {
        self.checks
    }

    /// Largest ‖Δu‖ seen so far.
    pub fn max_input(&self) -> f64 {
        self.max_input
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_cases() {
        let zero = SyncBoundModel::new(1.0, 0.0, 0.1, 0.0).unwrap();
        assert_eq!(gronwall_bound(&zero, 50.0), 0.0);
        let m = SyncBoundModel::new(2.0, 0.3, 1.0, 0.25).unwrap();
        assert_eq!(gronwall_bound(&m, 0.0), 0.25);
        let m = SyncBoundModel::new(1.0, 0.01, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(gronwall_bound(&m, 1.0), 0.017_182_818_284_590_45, epsilon = 1e-15);
        assert!(m.within_epsilon(1.0));
        assert!(SyncBoundModel::new(0.0, 0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn constant_profile_matches_closed_form() {
        let m = SyncBoundModel::new(0.7, 0.2, 1.0, 0.05).unwrap();
        let p = Profile::constant(0.2);
        for t in [0.0, 0.3, 1.0, 4.5] {
            assert_abs_diff_eq!(gronwall_bound_profiled(0.7, 0.05, &p, t), gronwall_bound(&m, t), epsilon = 1e-12);
        }
    }

    #[test]
    fn monitor_flags_only_excess() {
        let mut mon = GronwallMonitor::new(1.0, 0.1);
        mon.restart(1.0, 0.01);
        let (b, bad) = mon.check(1.0, 0.01);
        assert_eq!(b, 0.01);
        assert!(!bad);
        assert!(mon.check(1.5, 1.0).1);
        mon.note_input(0.05);
        mon.note_input(0.5);
        assert_eq!((mon.violations(), mon.assumption_violations()), (1, 1));
    }
}
