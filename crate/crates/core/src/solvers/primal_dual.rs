//! Primal-dual splitting for `min psi(x) s.t. 0 <= x <= x_max, ||D x - y|| <= xi`
//! with a separable, possibly nonconvex `psi` handled through its prox.

use std::time::Instant;

use ndarray::{Array1, ArrayView1, Zip};

use super::vmfb::{check_start, check_truth};
use super::{IterRecord, IterateTrace, SolveOutput, SolverConfig, StopReason};
use crate::error::{Result, SpoqError};
use crate::linalg;
use crate::metrics;
use crate::operators::Problem;
use crate::penalties::{baseline_value, cel0_scalar, scad_scalar, sign, PenaltySpec};

/// Power iterations and safety factor for the `||D||` estimate.
const NORM_ITERS: usize = 50;
const NORM_SEED: u64 = 0x5eed;
const NORM_SAFETY: f64 = 1.01;
/// Relative slack on the data-fidelity ball required before a small step
/// counts as convergence.
pub const PD_FEAS_TOL: f64 = 1e-3;

pub fn soft_threshold(v: f64, level: f64) -> f64 {
    sign(v) * (v.abs() - level).max(0.0)
}

/// Prox of `tau lambda ||.||_0`: keeps `v` when `|v| > sqrt(2 tau lambda)`.
pub fn hard_threshold(v: f64, tau: f64, lambda: f64) -> f64 {
    if v.abs() > (2.0 * tau * lambda).sqrt() {
        v
    } else {
        0.0
    }
}

/// `argmin_{t in [0, x_max]} tau psi(t) + (t - v)^2 / 2` for one coordinate.
/// `col_norm` is only read by CEL0.
pub fn prox_separable(v: f64, tau: f64, spec: &PenaltySpec, col_norm: f64, x_max: f64) -> Result<f64> {
    let clamp = |t: f64| t.clamp(0.0, x_max);
    Ok(match *spec {
        PenaltySpec::L1 => clamp(v - tau),
        PenaltySpec::L0 => {
            let t = clamp(v);
            let keep = tau + 0.5 * (t - v) * (t - v);
            if t > 0.0 && keep < 0.5 * v * v {
                t
            } else {
                0.0
            }
        }
        PenaltySpec::Scad { delta, a } => {
            let mut cands = vec![0.0, delta, a * delta, v, v - tau * delta];
            if a - 1.0 > tau {
                cands.push((v * (a - 1.0) - tau * a * delta) / (a - 1.0 - tau));
            }
            best_candidate(&cands, v, x_max, |t| tau * scad_scalar(t, delta, a))
        }
        PenaltySpec::Cel0 { delta } => {
            let c2 = col_norm * col_norm;
            let thr = (2.0 * delta).sqrt() / col_norm;
            let mut cands = vec![0.0, thr, v];
            if 1.0 - tau * c2 > 0.0 {
                cands.push((v - tau * c2 * thr) / (1.0 - tau * c2));
            }
            best_candidate(&cands, v, x_max, |t| tau * cel0_scalar(t, delta, col_norm))
        }
        other => {
            return Err(SpoqError::Config(format!(
                "primal-dual supports l1, l0, scad and cel0, got {}",
                other.family()
            )))
        }
    })
}

/// Minimizes `f(t) + (t - v)^2 / 2` over clamped candidates; the first of
/// equal values wins so ties resolve towards zero.
fn best_candidate(cands: &[f64], v: f64, x_max: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let mut push = |t: f64| {
        let val = f(t) + 0.5 * (t - v) * (t - v);
        if val < best.0 {
            best = (val, t);
        }
    };
    push(0.0);
    if x_max.is_finite() {
        push(x_max);
    }
    for &c in cands {
        if c.is_finite() {
            push(c.clamp(0.0, x_max));
        }
    }
    best.1
}

fn supported(spec: &PenaltySpec) -> Result<()> {
    match spec {
        PenaltySpec::L1 | PenaltySpec::L0 | PenaltySpec::Scad { .. } | PenaltySpec::Cel0 { .. } => {
            Ok(())
        }
        other => Err(SpoqError::Config(format!(
            "primal-dual supports l1, l0, scad and cel0, got {}",
            other.family()
        ))),
    }
}

/// Primal-dual (Chambolle-Pock) iterations from `x0` with zero dual start.
pub fn primal_dual_solve(
    problem: &Problem,
    spec: &PenaltySpec,
    config: &SolverConfig,
    x0: ArrayView1<f64>,
    truth: Option<ArrayView1<f64>>,
) -> Result<SolveOutput> {
    spec.validate()?;
    supported(spec)?;
    config.validate()?;
    check_start(problem, x0)?;
    check_truth(problem, truth)?;
    Ok(run(problem, spec, x0, config.pd_max_iters, config.eps_stop, truth, true))
}

/// `iters` primal-dual steps with the l1 penalty from zero.
pub fn warm_start_l1(problem: &Problem, iters: usize) -> Array1<f64> {
    let x0 = Array1::zeros(problem.n());
    if iters == 0 {
        return x0;
    }
    run(problem, &PenaltySpec::L1, x0.view(), iters, 0.0, None, false).x
}

fn run(
    problem: &Problem,
    spec: &PenaltySpec,
    x0: ArrayView1<f64>,
    max_iters: usize,
    eps_stop: f64,
    truth: Option<ArrayView1<f64>>,
    record: bool,
) -> SolveOutput {
    let start = Instant::now();
    let d = problem.operator();
    let y = problem.y();
    let xi = problem.xi();
    let x_max = problem.x_max();
    let col_norms = problem.column_norms();
    let norm = NORM_SAFETY * linalg::spectral_norm(d, NORM_ITERS, NORM_SEED);
    let step = if norm > 0.0 { 0.99 / norm } else { 1.0 };
    let (tau, sigma) = (step, step);

    let objective = |x: ArrayView1<f64>| {
        baseline_value(x, spec, Some(col_norms)).unwrap_or(f64::NAN) + problem.phi(x)
    };
    let snr_of = |x: ArrayView1<f64>| truth.and_then(|t| metrics::snr(t, x).ok());

    let n = problem.n();
    let m = problem.m();
    let mut x = x0.to_owned();
    let mut x_new = Array1::zeros(n);
    let mut u = Array1::<f64>::zeros(m);
    let mut dtu = Array1::zeros(n);
    let mut bar = Array1::zeros(n);
    let mut dbar = Array1::zeros(m);
    let mut obj = if record { objective(x.view()) } else { f64::NAN };
    let mut trace = IterateTrace {
        solver: "pd".into(),
        initial_objective: obj,
        initial_snr: if record { snr_of(x.view()) } else { None },
        records: Vec::new(),
    };
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    for k in 1..=max_iters {
        d.tmul_into(u.view(), &mut dtu);
        for j in 0..n {
            let v = x[j] - tau * dtu[j];
            // spec was checked by the caller
            x_new[j] = prox_separable(v, tau, spec, col_norms[j], x_max).unwrap_or(0.0);
        }
        Zip::from(&mut bar)
            .and(&x_new)
            .and(&x)
            .for_each(|b, &xn, &xo| *b = 2.0 * xn - xo);
        d.mul_into(bar.view(), &mut dbar);
        // u <- w - sigma P_ball(w / sigma), w = u + sigma D bar
        let mut off = 0.0;
        Zip::from(&mut u).and(&dbar).and(&y).for_each(|uu, &db, &yv| {
            *uu += sigma * db;
            let e = *uu / sigma - yv;
            off += e * e;
        });
        let off = off.sqrt();
        let shrink = if off > xi { xi / off } else { 1.0 };
        Zip::from(&mut u).and(&y).for_each(|uu, &yv| {
            let e = *uu / sigma - yv;
            *uu -= sigma * (yv + shrink * e);
        });

        let step_norm = linalg::dist(x_new.view(), x.view());
        let x_norm = linalg::norm(x.view());
        std::mem::swap(&mut x, &mut x_new);
        iterations = k;
        if record {
            let new_obj = objective(x.view());
            trace.records.push(IterRecord {
                iter: k,
                objective: new_obj,
                step_norm,
                trial: 1,
                radius: 0.0,
                margin: obj - new_obj,
                metric_floor: 1.0 / tau,
                step_size: tau,
                inner_iters: 0,
                fallback: false,
                elapsed: start.elapsed().as_secs_f64(),
                snr: snr_of(x.view()),
            });
            obj = new_obj;
        }
        if eps_stop > 0.0 && step_norm <= eps_stop * x_norm && problem.residual_norm(x.view()) <= xi * (1.0 + PD_FEAS_TOL) {
            stop = StopReason::Converged;
            break;
        }
    }
    SolveOutput {
        x,
        trace,
        stop,
        iterations,
    }
}
