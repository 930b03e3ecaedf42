//! The smoothed lp-over-lq penalty and its differential quantities.
//!
//! With `lp(x) = sum_n ((x_n^2 + alpha^2)^(p/2) - alpha^p)` and
//! `lq(x) = eta^q + sum_n |x_n|^q`, the penalty is
//!
//! ```text
//! Psi(x) = (1/p) log(lp(x) + beta^p) - (1/q) log(lq(x))
//! ```

use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoqError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpoqParams {
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
}

impl SpoqParams {
    /// Smoothing constants used for the mass-spectrometry experiments.
    pub const MS_ALPHA: f64 = 7e-7;
    pub const MS_BETA: f64 = 3e-3;
    pub const MS_ETA: f64 = 1e-1;

    pub fn new(p: f64, q: f64, alpha: f64, beta: f64, eta: f64) -> Result<Self> {
        let params = Self {
            p,
            q,
            alpha,
            beta,
            eta,
        };
        params.validate()?;
        Ok(params)
    }

    /// `(p, q)` with the `(alpha, beta, eta)` preset used for the
    /// mass-spectrometry benchmarks.
    pub fn ms_preset(p: f64, q: f64) -> Result<Self> {
        Self::new(p, q, Self::MS_ALPHA, Self::MS_BETA, Self::MS_ETA)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.p, self.q, self.alpha, self.beta, self.eta]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(SpoqError::InvalidParameter(format!(
                "non-finite SPOQ parameter in {self:?}"
            )));
        }
        if !(self.p > 0.0 && self.p < 2.0) {
            return Err(SpoqError::InvalidParameter(format!(
                "p must lie in (0, 2), got {}",
                self.p
            )));
        }
        if self.q < 2.0 {
            return Err(SpoqError::InvalidParameter(format!(
                "q must be at least 2, got {}",
                self.q
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("eta", self.eta)] {
            if v <= 0.0 {
                return Err(SpoqError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_global_min_at_zero(&self) -> bool {
        check_zero_minimizer(self) == ZeroMinimizer::Global
    }

    /// Upper bound of the local majorant curvature, `beta^-p alpha^(p-2)`.
    pub fn curvature_excess(&self) -> f64 {
        (self.alpha * self.alpha).powf(self.p / 2.0 - 1.0) / self.beta.powf(self.p)
    }

    /// `chi_{q,rho} = (q - 1) / (eta^q + rho^q)^(2/q)`.
    pub fn chi(&self, rho: f64) -> f64 {
        (self.q - 1.0) / (self.eta.powf(self.q) + rho.powf(self.q)).powf(2.0 / self.q)
    }
}

/// Sign with `sign(0) = 0`.
#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn check_finite(x: ArrayView1<f64>) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(SpoqError::NonFinite(i)),
        None => Ok(()),
    }
}

/// `(x^2 + alpha^2)^(p/2) - alpha^p`, evaluated without cancellation when
/// `x^2 << alpha^2`.
#[inline]
fn smoothed_power_term(x: f64, alpha: f64, p: f64) -> f64 {
    let r = (x / alpha) * (x / alpha);
    alpha.powf(p) * ((p / 2.0) * r.ln_1p()).exp_m1()
}

/// `lp(x) = sum_n ((x_n^2 + alpha^2)^(p/2) - alpha^p)`.
pub fn smoothed_lp_pow(x: ArrayView1<f64>, alpha: f64, p: f64) -> f64 {
    x.iter().map(|&v| smoothed_power_term(v, alpha, p)).sum()
}

/// `lq(x) = eta^q + sum_n |x_n|^q`.
pub fn smoothed_lq_pow(x: ArrayView1<f64>, eta: f64, q: f64) -> f64 {
    eta.powf(q) + lq_pow(x, q)
}

/// `sum_n |x_n|^q`.
pub fn lq_pow(x: ArrayView1<f64>, q: f64) -> f64 {
    x.iter().map(|v| v.abs().powf(q)).sum()
}

/// Membership in the lq-ball complement `{x : sum |x_n|^q >= rho^q}`.
pub fn in_lq_ball_complement(x: ArrayView1<f64>, q: f64, rho: f64) -> bool {
    rho <= 0.0 || lq_pow(x, q) >= rho.powf(q)
}

pub fn spoq_value(x: ArrayView1<f64>, params: &SpoqParams) -> Result<f64> {
    params.validate()?;
    check_finite(x)?;
    Ok(value_unchecked(x, params))
}

pub(crate) fn value_unchecked(x: ArrayView1<f64>, params: &SpoqParams) -> f64 {
    let SpoqParams {
        p,
        q,
        alpha,
        beta,
        eta,
    } = *params;
    let lp = smoothed_lp_pow(x, alpha, p);
    let lq = smoothed_lq_pow(x, eta, q);
    (lp + beta.powf(p)).ln() / p - lq.ln() / q
}

pub fn spoq_gradient(x: ArrayView1<f64>, params: &SpoqParams) -> Result<Array1<f64>> {
    params.validate()?;
    check_finite(x)?;
    Ok(gradient_unchecked(x, params))
}

pub(crate) fn gradient_unchecked(x: ArrayView1<f64>, params: &SpoqParams) -> Array1<f64> {
    let SpoqParams {
        p,
        q,
        alpha,
        beta,
        eta,
    } = *params;
    let a2 = alpha * alpha;
    let s1 = smoothed_lp_pow(x, alpha, p) + beta.powf(p);
    let s2 = smoothed_lq_pow(x, eta, q);
    x.mapv(|v| {
        let g1 = v * (v * v + a2).powf(p / 2.0 - 1.0) / s1;
        let g2 = sign(v) * v.abs().powf(q - 1.0) / s2;
        g1 - g2
    })
}

/// Global Lipschitz constant of the SPOQ gradient for dimension `n`:
///
/// ```text
/// L = max(1, p) alpha^(p-2) / beta^p + p / (2 alpha^2) max(1, (N alpha^p / beta^p)^2) + (q - 1) / eta^2
/// ```
///
/// The diagonal part of the numerator Hessian reaches `alpha^(p-2) / beta^p`
/// at the origin, so the first term cannot carry a factor `p < 1`.
pub fn spoq_lipschitz(params: &SpoqParams, n: usize) -> f64 {
    let SpoqParams {
        p,
        q,
        alpha,
        beta,
        eta,
    } = *params;
    let bp = beta.powf(p);
    let ratio = n as f64 * alpha.powf(p) / bp;
    p.max(1.0) * alpha.powf(p - 2.0) / bp
        + p / (2.0 * alpha * alpha) * f64::max(1.0, ratio * ratio)
        + (q - 1.0) / (eta * eta)
}

/// Diagonal quadratic majorant metric, valid on the lq-ball complement of
/// radius `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct MajorantMetric {
    pub chi: f64,
    /// Full diagonal of the metric, `chi` included.
    pub diag: Array1<f64>,
    pub rho: f64,
}

impl MajorantMetric {
    /// `||u||_A^2`.
    pub fn norm_sq(&self, u: ArrayView1<f64>) -> f64 {
        Zip::from(&self.diag).and(u).fold(0.0, |acc, &a, &v| acc + a * v * v)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.diag.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn spoq_majorant_metric(
    x: ArrayView1<f64>,
    rho: f64,
    params: &SpoqParams,
) -> Result<MajorantMetric> {
    params.validate()?;
    check_finite(x)?;
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(SpoqError::InvalidParameter(format!(
            "trust-region radius must be finite and non-negative, got {rho}"
        )));
    }
    Ok(majorant_metric_unchecked(x, rho, params))
}

pub(crate) fn majorant_metric_unchecked(
    x: ArrayView1<f64>,
    rho: f64,
    params: &SpoqParams,
) -> MajorantMetric {
    let SpoqParams { p, alpha, beta, .. } = *params;
    let a2 = alpha * alpha;
    let chi = params.chi(rho);
    let upper = chi + params.curvature_excess();
    let s1 = smoothed_lp_pow(x, alpha, p) + beta.powf(p);
    // clamped so the sandwich bounds hold bit-exactly under rounding
    let diag = x.mapv(|v| (chi + (v * v + a2).powf(p / 2.0 - 1.0) / s1).clamp(chi, upper));
    MajorantMetric { chi, diag, rho }
}

/// `majorant(x'; x) - Psi(x')` for the metric of radius `rho`; both points
/// must lie in the lq-ball complement of that radius.
pub fn spoq_majorant_gap(
    x: ArrayView1<f64>,
    x_prime: ArrayView1<f64>,
    rho: f64,
    params: &SpoqParams,
) -> Result<f64> {
    params.validate()?;
    check_finite(x)?;
    check_finite(x_prime)?;
    if x.len() != x_prime.len() {
        return Err(SpoqError::Dimension {
            expected: x.len(),
            got: x_prime.len(),
        });
    }
    for (name, v) in [("x", x), ("x_prime", x_prime)] {
        if !in_lq_ball_complement(v, params.q, rho) {
            return Err(SpoqError::Domain(format!(
                "{name} lies inside the l{}-ball of radius {rho}",
                params.q
            )));
        }
    }
    let metric = majorant_metric_unchecked(x, rho, params);
    let grad = gradient_unchecked(x, params);
    let d = &x_prime - &x;
    let majorant = value_unchecked(x, params) + d.dot(&grad) + 0.5 * metric.norm_sq(d.view());
    Ok(majorant - value_unchecked(x_prime, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroMinimizer {
    Local,
    Global,
    None,
}

/// Classifies the zero vector as a local or global minimizer of the penalty
/// from the parameters alone.
pub fn check_zero_minimizer(params: &SpoqParams) -> ZeroMinimizer {
    let SpoqParams {
        p,
        q,
        alpha,
        beta,
        eta,
    } = *params;
    let local = q > 2.0 || eta * eta * alpha.powf(p - 2.0) > beta.powf(p);
    if !local {
        return ZeroMinimizer::None;
    }
    let first = 8.0 * alpha.powf(2.0 - p) / (p * (2.0 + p) * beta.powf(2.0 - p));
    let second = 1.0 / (2f64.powf(p / 2.0) - 1.0).powf(2.0 / p);
    if eta * eta >= beta * beta * first.max(second) {
        ZeroMinimizer::Global
    } else {
        ZeroMinimizer::Local
    }
}

/// Unsmoothed `lp / lq` ratio.
pub fn exact_ratio(x: ArrayView1<f64>, p: f64, q: f64) -> Result<f64> {
    check_finite(x)?;
    if !(p > 0.0 && p < 2.0 && q >= 2.0) {
        return Err(SpoqError::InvalidParameter(format!(
            "exact ratio needs 0 < p < 2 <= q, got p = {p}, q = {q}"
        )));
    }
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(SpoqError::Domain("ratio undefined at x = 0".into()));
    }
    let total: f64 = x.iter().map(|v| (v.abs() / scale).powf(q)).sum();
    let sum: f64 = x
        .iter()
        .map(|v| ((v.abs() / scale).powf(q) / total).powf(p / q))
        .sum();
    Ok(sum.powf(1.0 / p))
}

/// Hessian as a diagonal plus two rank-one corrections:
/// `H = Diag(diag) + sum_i coef_i v_i v_i^T`.
#[derive(Debug, Clone)]
pub struct HessianParts {
    pub diag: Array1<f64>,
    pub rank_one: [(f64, Array1<f64>); 2],
}

impl HessianParts {
    /// `H u` without assembling the matrix.
    pub fn apply(&self, u: ArrayView1<f64>) -> Array1<f64> {
        let mut out = &self.diag * &u;
        for (coef, v) in &self.rank_one {
            out.scaled_add(coef * v.dot(&u), v);
        }
        out
    }
}

pub fn spoq_hessian_parts(x: ArrayView1<f64>, params: &SpoqParams) -> Result<HessianParts> {
    params.validate()?;
    check_finite(x)?;
    let SpoqParams {
        p,
        q,
        alpha,
        beta,
        eta,
    } = *params;
    let a2 = alpha * alpha;
    let s1 = smoothed_lp_pow(x, alpha, p) + beta.powf(p);
    let s2 = smoothed_lq_pow(x, eta, q);
    let diag = x.mapv(|v| {
        let h1 = ((p - 1.0) * v * v + a2) * (v * v + a2).powf(p / 2.0 - 2.0);
        let h2 = (q - 1.0) * v.abs().powf(q - 2.0);
        h1 / s1 - h2 / s2
    });
    let grad_lp = x.mapv(|v| p * v * (v * v + a2).powf(p / 2.0 - 1.0));
    let grad_lq = x.mapv(|v| q * sign(v) * v.abs().powf(q - 1.0));
    Ok(HessianParts {
        diag,
        rank_one: [
            (-1.0 / (p * s1 * s1), grad_lp),
            (1.0 / (q * s2 * s2), grad_lq),
        ],
    })
}
