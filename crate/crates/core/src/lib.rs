//! Sparse signal recovery with the smoothed lp-over-lq (SPOQ) penalty.
//!
//! The crate provides the penalty itself together with its gradient,
//! Lipschitz constant and local quadratic majorants, a trust-region
//! variable metric forward-backward solver for the constrained problem
//!
//! ```text
//! minimize  Psi(x)  subject to  0 <= x <= x_max,  ||D x - y|| <= xi
//! ```
//!
//! baseline penalties and solvers used for comparison, a synthetic
//! mass-spectrometry instance generator and the quality metrics used to
//! compare reconstructions.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod cli;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod msdata;
pub mod operators;
pub mod penalties;
pub mod solvers;

pub use error::{Result, SpoqError};
pub use metrics::{debias_least_squares, snr, sparsity_degree, tsnr, RunReport};
pub use msdata::{DatasetPreset, DictionarySpec, GroundTruth, Instance};
pub use operators::{kappa_bound, prox_metric_phi, InnerSolveResult, Problem};
pub use penalties::{
    baseline_curvature, baseline_value, check_zero_minimizer, exact_ratio, spoq_gradient,
    spoq_lipschitz, spoq_majorant_gap, spoq_majorant_metric, spoq_value, MajorantMetric,
    PenaltySpec, SpoqParams, ZeroMinimizer,
};
pub use solvers::{
    fb_solve, primal_dual_solve, tr_vmfb_solve, vmfb_halfquadratic_solve, vmfb_solve,
    warm_start_l1, IterateTrace, SolveOutput, SolverConfig,
};
