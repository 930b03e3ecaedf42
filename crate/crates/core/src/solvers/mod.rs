//! Outer solvers: trust-region VMFB, plain VMFB and FB on the SPOQ penalty,
//! half-quadratic VMFB for Cauchy and Welsch, and primal-dual splitting for
//! the nonsmooth baselines.

mod primal_dual;
mod vmfb;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoqError};
use crate::penalties::lq_pow;

pub use primal_dual::{
    hard_threshold, primal_dual_solve, prox_separable, soft_threshold, warm_start_l1, PD_FEAS_TOL,
};
pub use vmfb::{fb_solve, tr_vmfb_solve, vmfb_halfquadratic_solve, vmfb_solve};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Radius shrink factor in (0, 1).
    pub theta: f64,
    /// Number of radius trials per outer iteration (`B`).
    pub trials: usize,
    /// Constant step size, in (0, 2).
    pub gamma: f64,
    pub eps_stop: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Inexactness constant; derived from the metric bounds when unset.
    pub kappa: Option<f64>,
    pub init_pd_iters: usize,
    /// Iteration cap for primal-dual baseline runs.
    pub pd_max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            trials: 10,
            gamma: 1.9,
            eps_stop: 1e-4,
            max_outer: 1000,
            max_inner: 5000,
            kappa: None,
            init_pd_iters: 10,
            pd_max_iters: 20_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SpoqError::InvalidParameter(msg));
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if self.trials == 0 {
            return bad("the number of radius trials must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 2.0) {
            return bad(format!("gamma must lie in (0, 2), got {}", self.gamma));
        }
        if !(self.eps_stop >= 0.0 && self.eps_stop.is_finite()) {
            return bad(format!("eps_stop must be non-negative, got {}", self.eps_stop));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration caps must be at least 1".into());
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return bad(format!("kappa must be positive, got {k}"));
            }
        }
        Ok(())
    }

    /// Smallest step ever used: a failed inner solve is retried once at
    /// half the step.
    pub fn gamma_lo(&self) -> f64 {
        0.5 * self.gamma
    }

    /// `gamma_bar` with `gamma <= 2 - gamma_bar`.
    pub fn gamma_bar(&self) -> f64 {
        2.0 - self.gamma
    }

    /// Descent constant `mu = nu gamma_bar / (2 (2 - gamma_bar))` for a
    /// metric with smallest eigenvalue `nu`.
    pub fn descent_constant(&self, nu: f64) -> f64 {
        let gb = self.gamma_bar();
        nu * gb / (2.0 * (2.0 - gb))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// No admissible step could be produced.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    /// Objective at the new iterate.
    pub objective: f64,
    pub step_norm: f64,
    /// 1-based radius trial that produced the step.
    pub trial: usize,
    pub radius: f64,
    /// Objective decrease over the step.
    pub margin: f64,
    /// Smallest eigenvalue of the metric used for the step.
    pub metric_floor: f64,
    pub step_size: f64,
    pub inner_iters: usize,
    /// The step did not come from a certified inner solve.
    pub fallback: bool,
    pub elapsed: f64,
    pub snr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterateTrace {
    pub solver: String,
    pub initial_objective: f64,
    pub initial_snr: Option<f64>,
    pub records: Vec<IterRecord>,
}

impl IterateTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// CSV with a header row, one line per outer iteration.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "iter,objective,step_norm,trial,radius,margin,metric_floor,step_size,inner_iters,fallback,elapsed_s,snr_db\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.iter,
                r.objective,
                r.step_norm,
                r.trial,
                r.radius,
                r.margin,
                r.metric_floor,
                r.step_size,
                r.inner_iters,
                r.fallback,
                r.elapsed,
                r.snr.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub x: Array1<f64>,
    pub trace: IterateTrace,
    pub stop: StopReason,
    pub iterations: usize,
}

impl SolveOutput {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }
}

/// Trust-region radii for one outer iteration: `rho_1 = ||x_k||_q`,
/// `rho_i = theta rho_(i-1)` and a final `rho_B = 0`.
pub fn radius_schedule(x: ArrayView1<f64>, q: f64, theta: f64, trials: usize) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(SpoqError::InvalidParameter(
            "the number of radius trials must be at least 1".into(),
        ));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(SpoqError::InvalidParameter(format!(
            "theta must lie in (0, 1), got {theta}"
        )));
    }
    let mut radii = Vec::with_capacity(trials);
    if trials > 1 {
        let mut rho = lq_pow(x, q).powf(1.0 / q);
        radii.push(rho);
        for _ in 2..trials {
            rho *= theta;
            radii.push(rho);
        }
    }
    radii.push(0.0);
    Ok(radii)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalties::in_lq_ball_complement;
    use ndarray::array;

    #[test]
    fn defaults_are_valid() {
        let c = SolverConfig::default();
        c.validate().unwrap();
        assert_eq!(c.trials, 10);
        assert_eq!(c.gamma, 1.9);
        assert!((c.gamma_bar() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let base = SolverConfig::default();
        for c in [
            SolverConfig { theta: 1.0, ..base },
            SolverConfig { trials: 0, ..base },
            SolverConfig { gamma: 2.0, ..base },
            SolverConfig { max_inner: 0, ..base },
            SolverConfig { kappa: Some(-1.0), ..base },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn single_trial_is_zero_radius() {
        assert_eq!(radius_schedule(array![1.0, 2.0].view(), 2.0, 0.5, 1).unwrap(), vec![0.0]);
    }

    #[test]
    fn zero_iterate_gives_zero_radii() {
        let r = radius_schedule(Array1::zeros(4).view(), 3.0, 0.5, 5).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn schedule_is_nested_and_contains_iterate() {
        let x = array![3.0, -4.0, 0.0];
        let r = radius_schedule(x.view(), 2.0, 0.5, 4).unwrap();
        assert_eq!(r.len(), 4);
        assert!((r[0] - 5.0).abs() < 1e-12);
        assert!((r[1] - 2.5).abs() < 1e-12);
        assert_eq!(r[3], 0.0);
        assert!(r.windows(2).all(|w| w[0] >= w[1]));
        assert!(in_lq_ball_complement(x.view(), 2.0, r[0] * (1.0 - 1e-12)));
    }
}
