//! Variable metric forward-backward iterations on `Psi + Phi`.

use std::time::Instant;

use ndarray::{Array1, ArrayView1, Zip};

use super::{radius_schedule, IterRecord, IterateTrace, SolveOutput, SolverConfig, StopReason};
use crate::error::{Result, SpoqError};
use crate::linalg;
use crate::metrics;
use crate::operators::{evaluate_conditions, kappa_bound, MetricProxSolver, Problem, FEAS_TOL};
use crate::penalties::{
    baseline_curvature, baseline_gradient, baseline_value, gradient_unchecked,
    in_lq_ball_complement, majorant_metric_unchecked, spoq_lipschitz, value_unchecked,
    PenaltySpec, SpoqParams,
};

/// Relative floor on the half-quadratic metric, which vanishes for large
/// entries of the Welsch penalty.
const HQ_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
enum Model {
    /// Trust-region metrics `A_{q,rho}` over a radius schedule.
    Trust(SpoqParams),
    /// Always `A_{q,0}`.
    Fixed(SpoqParams),
    /// `L I` with the global Lipschitz constant.
    Lipschitz(SpoqParams, f64),
    /// `diag(psi'(x) / x)` for Cauchy or Welsch.
    HalfQuadratic(PenaltySpec, f64),
}

impl Model {
    fn name(&self) -> &'static str {
        match self {
            Model::Trust(_) => "trvmfb",
            Model::Fixed(_) => "vmfb",
            Model::Lipschitz(..) => "fb",
            Model::HalfQuadratic(..) => "hq",
        }
    }

    fn value(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            Model::Trust(p) | Model::Fixed(p) | Model::Lipschitz(p, _) => value_unchecked(x, p),
            Model::HalfQuadratic(spec, _) => {
                baseline_value(x, spec, None).unwrap_or(f64::NAN)
            }
        }
    }

    fn gradient(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        match self {
            Model::Trust(p) | Model::Fixed(p) | Model::Lipschitz(p, _) => {
                Ok(gradient_unchecked(x, p))
            }
            Model::HalfQuadratic(spec, _) => baseline_gradient(x, spec),
        }
    }

    fn radii(&self, x: ArrayView1<f64>, config: &SolverConfig) -> Result<Vec<f64>> {
        match self {
            Model::Trust(p) => radius_schedule(x, p.q, config.theta, config.trials),
            _ => Ok(vec![0.0]),
        }
    }

    fn metric(&self, x: ArrayView1<f64>, rho: f64) -> Result<Array1<f64>> {
        match self {
            Model::Trust(p) | Model::Fixed(p) => Ok(majorant_metric_unchecked(x, rho, p).diag),
            Model::Lipschitz(_, lip) => Ok(Array1::from_elem(x.len(), *lip)),
            Model::HalfQuadratic(spec, floor) => {
                Ok(baseline_curvature(x, spec)?.mapv(|w| w.max(*floor)))
            }
        }
    }

    /// Upper bound on every metric eigenvalue.
    fn nu_hi(&self) -> f64 {
        match self {
            Model::Trust(p) | Model::Fixed(p) => p.chi(0.0) + p.curvature_excess(),
            Model::Lipschitz(_, lip) => *lip,
            Model::HalfQuadratic(_, floor) => *floor / HQ_FLOOR,
        }
    }

    fn q(&self) -> f64 {
        match self {
            Model::Trust(p) => p.q,
            _ => 2.0,
        }
    }
}

/// Trust-region VMFB for SPOQ under the box and data-fidelity constraints.
pub fn tr_vmfb_solve(
    problem: &Problem,
    params: &SpoqParams,
    config: &SolverConfig,
    x0: ArrayView1<f64>,
    truth: Option<ArrayView1<f64>>,
) -> Result<SolveOutput> {
    params.validate()?;
    run(problem, Model::Trust(*params), config, x0, truth)
}

/// VMFB with the metric `A_{q,0}` at every iterate.
pub fn vmfb_solve(
    problem: &Problem,
    params: &SpoqParams,
    config: &SolverConfig,
    x0: ArrayView1<f64>,
    truth: Option<ArrayView1<f64>>,
) -> Result<SolveOutput> {
    params.validate()?;
    run(problem, Model::Fixed(*params), config, x0, truth)
}

/// Forward-backward with the constant metric `L I`.
pub fn fb_solve(
    problem: &Problem,
    params: &SpoqParams,
    config: &SolverConfig,
    x0: ArrayView1<f64>,
    truth: Option<ArrayView1<f64>>,
) -> Result<SolveOutput> {
    params.validate()?;
    let lip = spoq_lipschitz(params, problem.n());
    run(problem, Model::Lipschitz(*params, lip), config, x0, truth)
}

/// VMFB with half-quadratic metrics for the Cauchy and Welsch penalties.
pub fn vmfb_halfquadratic_solve(
    problem: &Problem,
    spec: &PenaltySpec,
    config: &SolverConfig,
    x0: ArrayView1<f64>,
    truth: Option<ArrayView1<f64>>,
) -> Result<SolveOutput> {
    spec.validate()?;
    let delta = match *spec {
        PenaltySpec::Cauchy { delta } | PenaltySpec::Welsch { delta } => delta,
        other => {
            return Err(SpoqError::Config(format!(
                "half-quadratic VMFB supports cauchy and welsch, got {}",
                other.family()
            )))
        }
    };
    let floor = HQ_FLOOR * 2.0 / (delta * delta);
    run(problem, Model::HalfQuadratic(*spec, floor), config, x0, truth)
}

pub(super) fn check_start(problem: &Problem, x0: ArrayView1<f64>) -> Result<()> {
    if x0.len() != problem.n() {
        return Err(SpoqError::Dimension {
            expected: problem.n(),
            got: x0.len(),
        });
    }
    if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
        return Err(SpoqError::Initialization(format!(
            "starting point has a non-finite entry at index {i}"
        )));
    }
    if !problem.in_box(x0) {
        return Err(SpoqError::Initialization(format!(
            "starting point leaves the box [0, {}]",
            problem.x_max()
        )));
    }
    if !problem.is_feasible(x0) {
        log::info!("starting point is outside the data-fidelity ball; the first step restores feasibility");
    }
    Ok(())
}

pub(super) fn check_truth(problem: &Problem, truth: Option<ArrayView1<f64>>) -> Result<()> {
    if let Some(t) = truth {
        if t.len() != problem.n() {
            return Err(SpoqError::Dimension {
                expected: problem.n(),
                got: t.len(),
            });
        }
    }
    Ok(())
}

struct Candidate {
    z: Array1<f64>,
    gamma: f64,
    inner_iters: usize,
    fallback: bool,
}

fn run(
    problem: &Problem,
    model: Model,
    config: &SolverConfig,
    x0: ArrayView1<f64>,
    truth: Option<ArrayView1<f64>>,
) -> Result<SolveOutput> {
    config.validate()?;
    check_start(problem, x0)?;
    check_truth(problem, truth)?;
    let start = Instant::now();
    let kappa = match config.kappa {
        Some(k) => k,
        None => kappa_bound(config.gamma_lo(), model.nu_hi())?,
    };
    let objective = |x: ArrayView1<f64>| model.value(x) + problem.phi(x);
    let snr_of = |x: ArrayView1<f64>| truth.and_then(|t| metrics::snr(t, x).ok());

    let mut x = x0.to_owned();
    let mut obj = objective(x.view());
    let mut trace = IterateTrace {
        solver: model.name().into(),
        initial_objective: obj,
        initial_snr: snr_of(x.view()),
        records: Vec::new(),
    };
    let mut inner = MetricProxSolver::new(problem);
    let mut stop = StopReason::MaxIterations;

    for k in 1..=config.max_outer {
        let grad = model.gradient(x.view())?;
        let radii = model.radii(x.view(), config)?;
        let mut accepted = None;
        for (i, &rho) in radii.iter().enumerate() {
            let diag = model.metric(x.view(), rho)?;
            let last_trial = i + 1 == radii.len();
            let Some(c) = prox_step(
                problem,
                &mut inner,
                x.view(),
                grad.view(),
                &diag,
                config,
                kappa,
                last_trial,
            ) else {
                continue;
            };
            if last_trial || in_lq_ball_complement(c.z.view(), model.q(), rho) {
                accepted = Some((i + 1, rho, diag, c));
                break;
            }
        }
        let Some((trial, radius, diag, c)) = accepted else {
            log::warn!("outer iteration {k}: no admissible step, stopping");
            stop = StopReason::Stalled;
            break;
        };

        let step_norm = linalg::dist(c.z.view(), x.view());
        let x_norm = linalg::norm(x.view());
        let new_obj = objective(c.z.view());
        trace.records.push(IterRecord {
            iter: k,
            objective: new_obj,
            step_norm,
            trial,
            radius,
            margin: obj - new_obj,
            metric_floor: diag.iter().cloned().fold(f64::INFINITY, f64::min),
            step_size: c.gamma,
            inner_iters: c.inner_iters,
            fallback: c.fallback,
            elapsed: start.elapsed().as_secs_f64(),
            snr: snr_of(c.z.view()),
        });
        x = c.z;
        obj = new_obj;
        if step_norm <= config.eps_stop * x_norm {
            stop = StopReason::Converged;
            break;
        }
    }

    let iterations = trace.records.len();
    log::debug!(
        "{} stopped after {iterations} iterations ({stop:?}), objective {obj}",
        model.name()
    );
    Ok(SolveOutput {
        x,
        trace,
        stop,
        iterations,
    })
}

/// Certified inexact proximity step at `gamma`, then at `gamma / 2`; if
/// neither certifies, a shortened step along the last candidate that still
/// satisfies the descent condition (a); on the last trial, the null step.
#[allow(clippy::too_many_arguments)]
fn prox_step(
    problem: &Problem,
    inner: &mut MetricProxSolver,
    x: ArrayView1<f64>,
    grad: ArrayView1<f64>,
    diag: &Array1<f64>,
    config: &SolverConfig,
    kappa: f64,
    allow_null: bool,
) -> Option<Candidate> {
    let mut iters = 0;
    let mut last = None;
    for gamma in [config.gamma, config.gamma_lo()] {
        let xbar = Zip::from(x)
            .and(grad)
            .and(diag)
            .map_collect(|&x, &g, &a| x - gamma * g / a);
        let res = inner.solve(
            problem,
            xbar.view(),
            diag.view(),
            gamma,
            config.max_inner,
            kappa,
            grad,
            x,
        );
        iters += res.iterations_used;
        if res.accepted() {
            return Some(Candidate {
                z: res.z,
                gamma,
                inner_iters: iters,
                fallback: false,
            });
        }
        log::debug!("inner solve at step {gamma} not certified after {} iterations", res.iterations_used);
        last = Some((res.z, gamma));
    }
    let (z, gamma) = last?;
    if let Some(z) = shorten(problem, x, grad, diag, gamma, z, kappa) {
        log::warn!("inner solve not certified; accepting a shortened descent step");
        return Some(Candidate {
            z,
            gamma,
            inner_iters: iters,
            fallback: true,
        });
    }
    // z = x satisfies (a) and (b) with equality whenever x is feasible
    if allow_null && problem.is_feasible(x) {
        log::warn!("inner solve found no descent step; keeping the current iterate");
        return Some(Candidate {
            z: x.to_owned(),
            gamma,
            inner_iters: iters,
            fallback: true,
        });
    }
    None
}

/// Largest `t <= 1` such that `x + t (z - x)` is feasible and satisfies (a).
fn shorten(
    problem: &Problem,
    x: ArrayView1<f64>,
    grad: ArrayView1<f64>,
    diag: &Array1<f64>,
    gamma: f64,
    z: Array1<f64>,
    kappa: f64,
) -> Option<Array1<f64>> {
    if !problem.is_feasible(x) || !problem.in_box(z.view()) {
        return None;
    }
    let d = &z - &x;
    let lin = d.dot(&grad);
    let quad = Zip::from(&d).and(diag).fold(0.0, |acc, &v, &a| acc + a * v * v) / gamma;
    if !(lin < 0.0 && quad > 0.0) {
        return None;
    }
    let t_descent = (-lin / quad).min(1.0);

    // ||r0 + t e||^2 <= R^2 with r0 = D x - y and e = D d
    let r0 = problem.forward(x) - problem.y();
    let e = problem.forward(d.view());
    let radius = problem.xi() * (1.0 + 0.5 * FEAS_TOL);
    let (a, b, c) = (e.dot(&e), 2.0 * r0.dot(&e), r0.dot(&r0) - radius * radius);
    let t_feas = if a == 0.0 {
        1.0
    } else {
        let disc = (b * b - 4.0 * a * c).max(0.0);
        ((-b + disc.sqrt()) / (2.0 * a)).min(1.0)
    };
    let t = t_descent.min(t_feas);
    if !(t > 0.0) {
        return None;
    }
    let zt = &x + &(t * &d);
    let zt = zt.mapv(|v| v.clamp(0.0, problem.x_max()));
    let r = crate::operators::certificate(zt.view(), x, grad, diag.view(), gamma);
    let report = evaluate_conditions(problem, zt.view(), r.view(), x, grad, diag.view(), gamma, kappa);
    report.a().then_some(zt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn toy_problem() -> (Problem, Array1<f64>) {
        // banded nonnegative dictionary, sparse nonnegative truth
        let n = 12;
        let mut d = Array2::zeros((n, n));
        for j in 0..n {
            for (off, w) in [(0usize, 1.0), (1, 0.6), (2, 0.2)] {
                if j + off < n {
                    d[[j + off, j]] = w;
                }
            }
        }
        let mut x = Array1::zeros(n);
        x[2] = 5.0;
        x[7] = 3.0;
        let y = d.dot(&x) + &Array1::from_iter((0..n).map(|i| 0.01 * ((i as f64) * 1.7).sin()));
        (Problem::new(d, y, 0.05, 100.0).unwrap(), x)
    }

    fn params() -> SpoqParams {
        SpoqParams::new(0.75, 2.0, 1e-3, 1e-2, 0.5).unwrap()
    }

    #[test]
    fn rejects_box_violating_start() {
        let (problem, _) = toy_problem();
        let mut x0 = Array1::zeros(problem.n());
        x0[0] = -1.0;
        let err = tr_vmfb_solve(&problem, &params(), &SolverConfig::default(), x0.view(), None)
            .unwrap_err();
        assert!(matches!(err, SpoqError::Initialization(_)));
        x0[0] = f64::NAN;
        assert!(tr_vmfb_solve(&problem, &params(), &SolverConfig::default(), x0.view(), None).is_err());
    }

    #[test]
    fn infeasible_start_reaches_feasibility() {
        let (problem, truth) = toy_problem();
        let x0 = Array1::zeros(problem.n());
        let out = tr_vmfb_solve(&problem, &params(), &SolverConfig::default(), x0.view(), Some(truth.view()))
            .unwrap();
        assert!(problem.is_feasible(out.x.view()));
        let objs = out.trace.objectives();
        assert!(objs.iter().all(|v| v.is_finite()));
        assert!(objs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn recovers_toy_support() {
        let (problem, truth) = toy_problem();
        let x0 = Array1::zeros(problem.n());
        let out = tr_vmfb_solve(&problem, &params(), &SolverConfig::default(), x0.view(), Some(truth.view()))
            .unwrap();
        assert!(out.converged(), "{:?}", out.stop);
        let support: Vec<usize> = (0..problem.n()).filter(|&i| out.x[i] > 1e-4).collect();
        assert_eq!(support, vec![2, 7], "{:?}", out.x);
    }

    #[test]
    fn fixed_point_terminates_immediately() {
        let (problem, truth) = toy_problem();
        let config = SolverConfig::default();
        let first = tr_vmfb_solve(&problem, &params(), &config, Array1::zeros(problem.n()).view(), Some(truth.view()))
            .unwrap();
        let tight = SolverConfig { eps_stop: 1e-9, max_outer: 5000, ..config };
        let conv = tr_vmfb_solve(&problem, &params(), &tight, first.x.view(), None).unwrap();
        let again = tr_vmfb_solve(&problem, &params(), &config, conv.x.view(), None).unwrap();
        assert_eq!(again.iterations, 1);
        assert!(again.trace.records[0].step_norm <= config.eps_stop * linalg::norm(conv.x.view()));
    }

    #[test]
    fn single_trial_matches_vmfb() {
        let (problem, _) = toy_problem();
        let config = SolverConfig { trials: 1, max_outer: 30, ..SolverConfig::default() };
        let x0 = array![0.0, 0.0, 4.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.5, 0.0, 0.0, 0.0];
        let a = tr_vmfb_solve(&problem, &params(), &config, x0.view(), None).unwrap();
        let b = vmfb_solve(&problem, &params(), &config, x0.view(), None).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.trace.objectives(), b.trace.objectives());
    }

    #[test]
    fn half_quadratic_rejects_other_penalties() {
        let (problem, _) = toy_problem();
        let x0 = Array1::zeros(problem.n());
        let err = vmfb_halfquadratic_solve(&problem, &PenaltySpec::L1, &SolverConfig::default(), x0.view(), None)
            .unwrap_err();
        assert!(matches!(err, SpoqError::Config(_)));
    }

    #[test]
    fn all_variants_descend() {
        let (problem, truth) = toy_problem();
        let config = SolverConfig { max_outer: 200, ..SolverConfig::default() };
        let x0 = Array1::zeros(problem.n());
        let p = params();
        let outs = [
            tr_vmfb_solve(&problem, &p, &config, x0.view(), Some(truth.view())).unwrap(),
            vmfb_solve(&problem, &p, &config, x0.view(), Some(truth.view())).unwrap(),
            fb_solve(&problem, &p, &config, x0.view(), Some(truth.view())).unwrap(),
            vmfb_halfquadratic_solve(&problem, &PenaltySpec::Cauchy { delta: 1.0 }, &config, x0.view(), None)
                .unwrap(),
        ];
        for out in &outs {
            let mut prev = out.trace.initial_objective;
            for r in &out.trace.records {
                let mu = config.descent_constant(r.metric_floor);
                if prev.is_finite() {
                    assert!(
                        r.objective <= prev - 0.5 * mu * r.step_norm * r.step_norm + 1e-8 * (1.0 + prev.abs()),
                        "{} iter {}",
                        out.trace.solver,
                        r.iter
                    );
                }
                prev = r.objective;
            }
        }
    }
}
