//! Sparsity penalties: the smoothed lp-over-lq penalty and the separable
//! baselines it is compared against.

mod baseline;
mod spoq;

pub use baseline::{
    baseline_curvature, baseline_gradient, baseline_value, cauchy_scalar, cel0_scalar,
    scad_scalar, welsch_scalar, PenaltySpec,
};
pub use spoq::{
    check_zero_minimizer, exact_ratio, in_lq_ball_complement, lq_pow, smoothed_lp_pow,
    smoothed_lq_pow, spoq_gradient, spoq_hessian_parts, spoq_lipschitz, spoq_majorant_gap,
    spoq_majorant_metric, spoq_value, HessianParts, MajorantMetric, SpoqParams, ZeroMinimizer,
};

pub(crate) use spoq::{check_finite, gradient_unchecked, majorant_metric_unchecked, sign, value_unchecked};
