//! Constraint set, projections and the inexact metric proximity step of
//! `Phi = iota_[0, x_max]^N + iota_B(y, xi)(D .)`.

use ndarray::{Array1, Array2, ArrayView1, Zip};

use crate::error::{Result, SpoqError};
use crate::linalg::{self, BandedGram, CscMatrix, ProfileCholesky};
use crate::penalties::MajorantMetric;

/// Relative slack on the data-fidelity ball below which a point counts as
/// feasible: `||D x - y|| <= xi (1 + FEAS_TOL)`.
pub const FEAS_TOL: f64 = 1e-6;

/// The constrained recovery problem: `0 <= x <= x_max` and `||D x - y|| <= xi`.
#[derive(Debug, Clone)]
pub struct Problem {
    y: Array1<f64>,
    d: Array2<f64>,
    sparse: CscMatrix,
    gram: BandedGram,
    dty: Array1<f64>,
    col_norms: Array1<f64>,
    xi: f64,
    x_max: f64,
    sigma: f64,
}

impl Problem {
    pub fn new(d: Array2<f64>, y: Array1<f64>, xi: f64, x_max: f64) -> Result<Self> {
        Self::build(d, y, xi, x_max, f64::NAN)
    }

    /// Sets `xi = sqrt(N) sigma`. With a square dictionary this is the
    /// expected norm of white noise of standard deviation `sigma`.
    pub fn from_noise_level(d: Array2<f64>, y: Array1<f64>, sigma: f64, x_max: f64) -> Result<Self> {
        let xi = (d.ncols() as f64).sqrt() * sigma;
        Self::build(d, y, xi, x_max, sigma)
    }

    fn build(d: Array2<f64>, y: Array1<f64>, xi: f64, x_max: f64, sigma: f64) -> Result<Self> {
        if d.nrows() != y.len() {
            return Err(SpoqError::Dimension {
                expected: d.nrows(),
                got: y.len(),
            });
        }
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(SpoqError::InvalidParameter(format!(
                "noise radius xi must be positive and finite, got {xi}"
            )));
        }
        if !(x_max > 0.0) {
            return Err(SpoqError::InvalidParameter(format!(
                "box bound must be positive, got {x_max}"
            )));
        }
        if let Some(i) = d.iter().position(|v| !v.is_finite()) {
            return Err(SpoqError::NonFinite(i));
        }
        crate::penalties::check_finite(y.view())?;
        let sparse = CscMatrix::from_dense(&d);
        let col_norms = sparse.column_norms();
        let gram = BandedGram::from_csc(&sparse);
        let dty = sparse.tmul(y.view());
        Ok(Self {
            y,
            d,
            sparse,
            gram,
            dty,
            col_norms,
            xi,
            x_max,
            sigma,
        })
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn dictionary(&self) -> &Array2<f64> {
        &self.d
    }

    pub fn operator(&self) -> &CscMatrix {
        &self.sparse
    }

    /// `D^T D` in banded storage.
    pub fn gram(&self) -> &BandedGram {
        &self.gram
    }

    /// `D^T y`.
    pub fn dty(&self) -> ArrayView1<'_, f64> {
        self.dty.view()
    }

    pub fn column_norms(&self) -> ArrayView1<'_, f64> {
        self.col_norms.view()
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Noise level the radius was derived from, if any.
    pub fn sigma(&self) -> Option<f64> {
        (!self.sigma.is_nan()).then_some(self.sigma)
    }

    /// Number of unknowns.
    pub fn n(&self) -> usize {
        self.d.ncols()
    }

    /// Number of observations.
    pub fn m(&self) -> usize {
        self.d.nrows()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.sparse.mul(x)
    }

    pub fn adjoint(&self, u: ArrayView1<f64>) -> Array1<f64> {
        self.sparse.tmul(u)
    }

    pub fn residual_norm(&self, x: ArrayView1<f64>) -> f64 {
        linalg::dist(self.forward(x).view(), self.y.view())
    }

    pub fn in_box(&self, x: ArrayView1<f64>) -> bool {
        x.iter().all(|&v| (0.0..=self.x_max).contains(&v))
    }

    /// Box membership (exact) and ball membership up to [`FEAS_TOL`].
    pub fn is_feasible(&self, x: ArrayView1<f64>) -> bool {
        self.in_box(x) && self.residual_norm(x) <= self.xi * (1.0 + FEAS_TOL)
    }

    /// `Phi(x)`: zero on the (tolerance-relaxed) feasible set, `+inf` elsewhere.
    pub fn phi(&self, x: ArrayView1<f64>) -> f64 {
        if self.is_feasible(x) {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

pub fn project_box(u: ArrayView1<f64>, lo: f64, hi: f64) -> Result<Array1<f64>> {
    if !(lo <= hi) {
        return Err(SpoqError::InvalidParameter(format!(
            "empty box [{lo}, {hi}]"
        )));
    }
    Ok(u.mapv(|v| v.clamp(lo, hi)))
}

pub fn project_ball(v: ArrayView1<f64>, center: ArrayView1<f64>, radius: f64) -> Result<Array1<f64>> {
    if !(radius > 0.0) {
        return Err(SpoqError::InvalidParameter(format!(
            "ball radius must be positive, got {radius}"
        )));
    }
    if v.len() != center.len() {
        return Err(SpoqError::Dimension {
            expected: center.len(),
            got: v.len(),
        });
    }
    let dist = linalg::dist(v, center);
    if dist <= radius {
        return Ok(v.to_owned());
    }
    let scale = radius / dist;
    Ok(Zip::from(v)
        .and(center)
        .map_collect(|&a, &c| c + scale * (a - c)))
}

/// Smallest `kappa` for which an exact metric proximity step satisfies the
/// inexactness condition (b): `kappa = sqrt(nu_hi) / gamma_lo`.
pub fn kappa_bound(gamma_lo: f64, nu_hi: f64) -> Result<f64> {
    if !(gamma_lo > 0.0 && nu_hi > 0.0) {
        return Err(SpoqError::InvalidParameter(format!(
            "kappa bound needs positive step and metric bounds, got {gamma_lo}, {nu_hi}"
        )));
    }
    Ok(nu_hi.sqrt() / gamma_lo)
}

#[derive(Debug, Clone)]
pub struct InnerSolveResult {
    pub z: Array1<f64>,
    /// `r = -grad + gamma^-1 A (anchor - z)`, the subgradient of `Phi` at `z`
    /// certified by exact optimality of the proximity step.
    pub r: Array1<f64>,
    pub cond_a_satisfied: bool,
    pub cond_b_satisfied: bool,
    pub iterations_used: usize,
}

impl InnerSolveResult {
    pub fn accepted(&self) -> bool {
        self.cond_a_satisfied && self.cond_b_satisfied
    }
}

/// Left and right sides of the two inexactness conditions.
#[derive(Debug, Clone, Copy)]
pub struct ConditionReport {
    pub a_lhs: f64,
    pub a_rhs: f64,
    /// `|(z - x)^T grad| + gamma^-1 ||z - x||_A^2`, the size of the terms
    /// that cancel in (a) at an exact interior step.
    pub a_scale: f64,
    pub b_lhs: f64,
    pub b_rhs: f64,
}

/// Rounding allowance in (a), relative to [`ConditionReport::a_scale`].
pub const COND_A_ROUNDING: f64 = 1e-12;

impl ConditionReport {
    pub fn a(&self) -> bool {
        if self.a_rhs.is_infinite() {
            // anchor infeasible: only feasibility of z is required
            self.a_lhs.is_finite()
        } else {
            self.a_lhs <= self.a_rhs + COND_A_ROUNDING * self.a_scale
        }
    }

    pub fn b(&self) -> bool {
        self.b_lhs <= self.b_rhs
    }
}

/// Evaluates conditions (a) and (b) for a candidate `z` with certificate `r`:
///
/// ```text
/// (a) Phi(z) + (z - x)^T grad + gamma^-1 ||z - x||_A^2 <= Phi(x)
/// (b) ||grad + r|| <= kappa ||z - x||_A
/// ```
#[allow(clippy::too_many_arguments)]
pub fn evaluate_conditions(
    problem: &Problem,
    z: ArrayView1<f64>,
    r: ArrayView1<f64>,
    anchor: ArrayView1<f64>,
    grad: ArrayView1<f64>,
    diag: ArrayView1<f64>,
    gamma: f64,
    kappa: f64,
) -> ConditionReport {
    let mut lin = 0.0;
    let mut quad = 0.0;
    let mut b_sq = 0.0;
    for n in 0..z.len() {
        let dz = z[n] - anchor[n];
        lin += dz * grad[n];
        quad += diag[n] * dz * dz;
        let s = grad[n] + r[n];
        b_sq += s * s;
    }
    ConditionReport {
        a_lhs: problem.phi(z) + lin + quad / gamma,
        a_rhs: problem.phi(anchor),
        a_scale: lin.abs() + quad / gamma,
        b_lhs: b_sq.sqrt(),
        b_rhs: kappa * quad.sqrt(),
    }
}

/// `r = -grad + gamma^-1 A (anchor - z)`.
pub fn certificate(
    z: ArrayView1<f64>,
    anchor: ArrayView1<f64>,
    grad: ArrayView1<f64>,
    diag: ArrayView1<f64>,
    gamma: f64,
) -> Array1<f64> {
    Zip::from(z)
        .and(anchor)
        .and(grad)
        .and(diag)
        .map_collect(|&z, &x, &g, &a| -g + a / gamma * (x - z))
}

/// Workspace for repeated metric proximity steps on one problem. The ball
/// multiplier and the last solution are kept between calls and warm start
/// the next solve.
///
/// The step is computed through the Lagrangian of the ball constraint: for a
/// multiplier `lambda`, `z(lambda)` minimizes
/// `1/2 ||z - xbar||^2_W + lambda/2 ||D z - y||^2` over the box (projected
/// Newton with a profile Cholesky of `W + lambda D^T D`), and `lambda` is
/// found by a safeguarded secant search on `log ||D z(lambda) - y|| = log xi`.
#[derive(Debug, Clone)]
pub struct MetricProxSolver {
    lambda: f64,
    z: Array1<f64>,
    warm: bool,
}

/// Relative gap below the ball radius at which the multiplier search stops.
const RADIUS_GAP: f64 = 1e-12;

struct Bracket {
    t: f64,
    h: f64,
    z: Array1<f64>,
}

impl MetricProxSolver {
    pub fn new(problem: &Problem) -> Self {
        Self {
            lambda: 0.0,
            z: Array1::zeros(problem.n()),
            warm: false,
        }
    }

    pub fn reset(&mut self) {
        self.lambda = 0.0;
        self.z.fill(0.0);
        self.warm = false;
    }

    /// Approximates `argmin_z 1/2 ||z - xbar||^2_{A/gamma} + Phi(z)` and
    /// certifies conditions (a) and (b) at the result. `max_inner` bounds the
    /// number of Newton factorizations.
    #[allow(clippy::too_many_arguments)]
    pub fn solve(
        &mut self,
        problem: &Problem,
        xbar: ArrayView1<f64>,
        diag: ArrayView1<f64>,
        gamma: f64,
        max_inner: usize,
        kappa: f64,
        grad: ArrayView1<f64>,
        anchor: ArrayView1<f64>,
    ) -> InnerSolveResult {
        let n = problem.n();
        if self.z.len() != n {
            self.z = Array1::zeros(n);
            self.warm = false;
        }
        let w = diag.mapv(|a| a / gamma);
        let x_max = problem.x_max();
        // an anchor inside the feasibility tolerance but outside the ball
        // widens the ball to pass through it, so the exact step stays a
        // descent step
        let xi = if problem.is_feasible(anchor) {
            problem.xi().max(problem.residual_norm(anchor))
        } else {
            problem.xi()
        };
        let z0 = xbar.mapv(|v| v.clamp(0.0, x_max));
        let mut used = 0;
        let (z, feasible) = if problem.residual_norm(z0.view()) <= xi {
            (z0, true)
        } else {
            self.multiplier_search(problem, xbar, w.view(), xi, max_inner.max(1), &mut used)
        };
        let r = certificate(z.view(), anchor, grad, diag, gamma);
        let report = evaluate_conditions(problem, z.view(), r.view(), anchor, grad, diag, gamma, kappa);
        if !(feasible && report.a() && report.b()) {
            log::debug!(
                "inner solve uncertified after {used} factorizations: residual/xi = {}, {report:?}",
                problem.residual_norm(z.view()) / xi
            );
        }
        InnerSolveResult {
            cond_a_satisfied: report.a(),
            cond_b_satisfied: report.b(),
            z,
            r,
            iterations_used: used.max(1),
        }
    }

    /// Returns `z(lambda)` at the smallest multiplier found with a feasible
    /// residual, or the last infeasible point if none was reached.
    fn multiplier_search(
        &mut self,
        problem: &Problem,
        xbar: ArrayView1<f64>,
        w: ArrayView1<f64>,
        xi: f64,
        budget: usize,
        used: &mut usize,
    ) -> (Array1<f64>, bool) {
        let gram = problem.gram();
        let dty = problem.dty();
        let wx = &w * &xbar;
        let ln_xi = xi.ln();
        let mut z = if self.warm {
            self.z.clone()
        } else {
            xbar.mapv(|v| v.clamp(0.0, problem.x_max()))
        };
        let eval = |t: f64, z: &mut Array1<f64>, used: &mut usize| -> f64 {
            let lambda = t.exp();
            let c = &wx + &(lambda * &dty);
            let left = budget.saturating_sub(*used).max(1);
            let steps = box_qp(gram, w, lambda, c.view(), problem.x_max(), z, left);
            *used += steps;
            let h = problem.residual_norm(z.view()).ln() - ln_xi;
            log::trace!("lambda = {lambda:.6e}: {steps} newton steps, log(r/xi) = {h:.3e}");
            h
        };

        let t0 = if self.lambda > 0.0 {
            self.lambda.ln()
        } else {
            let gmax = gram.diag().iter().cloned().fold(0.0, f64::max);
            let wmean = w.mean().unwrap_or(1.0);
            (wmean / gmax.max(f64::MIN_POSITIVE)).ln()
        };
        let h0 = eval(t0, &mut z, used);
        let (mut lo, mut hi) = if h0 > 0.0 {
            (Some(Bracket { t: t0, h: h0, z: z.clone() }), None)
        } else {
            (None, Some(Bracket { t: t0, h: h0, z: z.clone() }))
        };

        let mut step = if self.lambda > 0.0 { 0.01 } else { std::f64::consts::LN_10 };
        while lo.is_none() || hi.is_none() {
            if *used >= budget {
                break;
            }
            let t = match (&lo, &hi) {
                (None, Some(b)) => b.t - step,
                (Some(b), _) => b.t + step,
                _ => unreachable!(),
            };
            if t.abs() > 700.0 {
                break;
            }
            step *= 2.0;
            let h = eval(t, &mut z, used);
            let b = Bracket { t, h, z: z.clone() };
            if h > 0.0 {
                lo = Some(b);
            } else {
                hi = Some(b);
            }
        }

        let (mut lo, mut hi) = match (lo, hi) {
            (Some(l), Some(h)) => (l, h),
            (_, Some(b)) => return (b.z, true),
            (Some(b), None) => return (b.z, false),
            _ => return (z, false),
        };
        // Illinois variant of regula falsi on t = log lambda
        let mut side = 0i8;
        while hi.h < -RADIUS_GAP && hi.t - lo.t > 1e-13 * (1.0 + hi.t.abs()) && *used < budget {
            let mut t = lo.t - lo.h * (hi.t - lo.t) / (hi.h - lo.h);
            if !(t > lo.t && t < hi.t) {
                t = 0.5 * (lo.t + hi.t);
            }
            z.assign(&hi.z);
            let h = eval(t, &mut z, used);
            if h > 0.0 {
                lo = Bracket { t, h, z: z.clone() };
                if side == -1 {
                    hi.h *= 0.5;
                }
                side = -1;
            } else {
                hi = Bracket { t, h, z: z.clone() };
                if side == 1 {
                    lo.h *= 0.5;
                }
                side = 1;
            }
        }
        self.lambda = hi.t.exp();
        self.z.assign(&hi.z);
        self.warm = true;
        (hi.z, true)
    }
}

/// Minimizes `1/2 z^T (W + lambda G) z - c^T z` over `[0, x_max]^N` by
/// projected Newton steps with an epsilon-active set, starting from `z`.
/// Returns the number of factorizations used.
fn box_qp(
    gram: &BandedGram,
    w: ArrayView1<f64>,
    lambda: f64,
    c: ArrayView1<f64>,
    x_max: f64,
    z: &mut Array1<f64>,
    max_steps: usize,
) -> usize {
    let n = z.len();
    z.mapv_inplace(|v| v.clamp(0.0, x_max));
    let hdiag = &w + &(lambda * &gram.diag());
    let objective = |z: &Array1<f64>, gz: &mut Array1<f64>, grad: &mut Array1<f64>| -> f64 {
        gram.mul_into(z.view(), gz);
        Zip::from(&mut *grad)
            .and(&w)
            .and(z)
            .and(&*gz)
            .and(&c)
            .for_each(|g, &wj, &zj, &gzj, &cj| *g = wj * zj + lambda * gzj - cj);
        // H z = grad + c
        Zip::from(z)
            .and(&*grad)
            .and(&c)
            .fold(0.0, |acc, &zj, &gj, &cj| acc + 0.5 * zj * (gj - cj))
    };
    let mut gz = Array1::zeros(n);
    let mut grad = Array1::zeros(n);
    let mut f = objective(z, &mut gz, &mut grad);
    let mut trial = z.clone();
    let (mut gz_t, mut grad_t) = (gz.clone(), grad.clone());
    let mut steps = 0;
    let mut free = Vec::with_capacity(n);
    let mut prev_free = Vec::with_capacity(n);
    let mut active = vec![false; n];
    let mut face_solved = false;
    while steps < max_steps {
        let mut kkt = 0.0f64;
        for j in 0..n {
            let p = (z[j] - grad[j] / hdiag[j]).clamp(0.0, x_max) - z[j];
            kkt = kkt.max(p.abs());
        }
        let scale = z.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if kkt == 0.0 {
            break;
        }
        let eps = kkt.min(1e-6 * scale);
        std::mem::swap(&mut free, &mut prev_free);
        free.clear();
        for j in 0..n {
            active[j] = (z[j] <= eps && grad[j] > 0.0) || (z[j] >= x_max - eps && grad[j] < 0.0);
            if !active[j] {
                free.push(j);
            }
        }
        // the last step solved this face exactly and the bounds are optimal
        if face_solved && free == prev_free && free.iter().all(|&j| z[j] > 0.0 && z[j] < x_max) {
            break;
        }
        let mut dir = vec![0.0; free.len()];
        if !free.is_empty() {
            let Some(chol) = ProfileCholesky::factor(gram, w, lambda, &free) else {
                log::debug!("box QP: factorization failed at lambda = {lambda}");
                break;
            };
            for (d, &j) in dir.iter_mut().zip(&free) {
                *d = -grad[j];
            }
            chol.solve(&mut dir);
        }
        steps += 1;
        let at_bounds = (0..n).all(|j| !active[j] || z[j] == 0.0 || z[j] == x_max);
        if at_bounds && dir.iter().all(|d| d.abs() <= 1e-15 * scale) {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for j in 0..n {
                if active[j] {
                    trial[j] = (z[j] - t * grad[j] / hdiag[j]).clamp(0.0, x_max);
                }
            }
            let mut clipped = false;
            for (&j, d) in free.iter().zip(&dir) {
                let v = z[j] + t * d;
                trial[j] = v.clamp(0.0, x_max);
                clipped |= trial[j] != v;
            }
            let ft = objective(&trial, &mut gz_t, &mut grad_t);
            let model: f64 = Zip::from(&trial)
                .and(&*z)
                .and(&grad)
                .fold(0.0, |acc, &a, &b, &g| acc + g * (a - b));
            if ft <= f + 1e-4 * model.min(0.0) {
                face_solved = t == 1.0 && !clipped && active.iter().zip(z.iter()).all(|(&a, &zj)| !a || zj == 0.0 || zj == x_max);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        let progress = f - objective(&trial, &mut gz_t, &mut grad_t);
        std::mem::swap(z, &mut trial);
        std::mem::swap(&mut gz, &mut gz_t);
        std::mem::swap(&mut grad, &mut grad_t);
        let prev = f;
        f -= progress;
        if progress <= 1e-15 * prev.abs().max(f.abs()) {
            break;
        }
    }
    steps
}

/// One inexact metric proximity step from a cold start.
///
/// `anchor` is the current iterate `x_k`, `grad_at_anchor` the penalty gradient
/// there, and `xbar = x_k - gamma A^-1 grad` the forward point.
#[allow(clippy::too_many_arguments)]
pub fn prox_metric_phi(
    xbar: ArrayView1<f64>,
    metric: &MajorantMetric,
    gamma: f64,
    problem: &Problem,
    max_inner: usize,
    kappa: f64,
    grad_at_anchor: ArrayView1<f64>,
    anchor: ArrayView1<f64>,
) -> Result<InnerSolveResult> {
    let n = problem.n();
    for (name, len) in [
        ("xbar", xbar.len()),
        ("metric", metric.diag.len()),
        ("gradient", grad_at_anchor.len()),
        ("anchor", anchor.len()),
    ] {
        if len != n {
            log::debug!("{name} has length {len}, expected {n}");
            return Err(SpoqError::Dimension { expected: n, got: len });
        }
    }
    if !(gamma > 0.0) {
        return Err(SpoqError::InvalidParameter(format!(
            "step size must be positive, got {gamma}"
        )));
    }
    if max_inner == 0 {
        return Err(SpoqError::InvalidParameter("max_inner must be at least 1".into()));
    }
    if metric.diag.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(SpoqError::InvalidParameter("metric must be positive definite".into()));
    }
    let mut solver = MetricProxSolver::new(problem);
    Ok(solver.solve(
        problem,
        xbar,
        metric.diag.view(),
        gamma,
        max_inner,
        kappa,
        grad_at_anchor,
        anchor,
    ))
}
