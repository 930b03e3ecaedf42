//! Reconstruction quality metrics and least-squares debiasing.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoqError};
use crate::linalg;

/// Default threshold above which an entry counts as nonzero.
pub const SPARSITY_THRESHOLD: f64 = 1e-4;

fn same_len(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(SpoqError::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

fn ratio_db(signal: f64, error: f64) -> f64 {
    if error == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (signal / error).log10()
    }
}

/// `20 log10(||x|| / ||x - x_hat||)` in dB; `+inf` for an exact match.
pub fn snr(x_true: ArrayView1<f64>, x_hat: ArrayView1<f64>) -> Result<f64> {
    same_len(x_true, x_hat)?;
    let signal = linalg::norm(x_true);
    if signal == 0.0 {
        return Err(SpoqError::Domain("SNR of a zero reference signal".into()));
    }
    Ok(ratio_db(signal, linalg::dist(x_true, x_hat)))
}

/// SNR restricted to the support of `x_true`.
pub fn tsnr(x_true: ArrayView1<f64>, x_hat: ArrayView1<f64>) -> Result<f64> {
    same_len(x_true, x_hat)?;
    let (mut signal, mut error) = (0.0, 0.0);
    for (&t, &h) in x_true.iter().zip(x_hat.iter()) {
        if t != 0.0 {
            signal += t * t;
            error += (t - h) * (t - h);
        }
    }
    if signal == 0.0 {
        return Err(SpoqError::Domain("TSNR with an empty support".into()));
    }
    Ok(ratio_db(signal.sqrt(), error.sqrt()))
}

/// Number of entries with `|x_n| > threshold`.
pub fn sparsity_degree(x_hat: ArrayView1<f64>, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0) {
        return Err(SpoqError::InvalidParameter(format!(
            "sparsity threshold must be positive, got {threshold}"
        )));
    }
    Ok(x_hat.iter().filter(|v| v.abs() > threshold).count())
}

pub fn support(x: ArrayView1<f64>, threshold: f64) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Least-squares fit of `y` on the columns in `support`, zero elsewhere.
#[derive(Debug, Clone)]
pub struct Debiased {
    pub x: Array1<f64>,
    /// Coefficients before clamping negatives to zero.
    pub unclamped: Array1<f64>,
    pub rank_deficient: bool,
}

/// Refits amplitudes on `support` by least squares and clamps negative
/// coefficients to zero. A rank-deficient restriction yields the
/// minimum-norm solution.
pub fn debias_least_squares(
    d: &Array2<f64>,
    y: ArrayView1<f64>,
    support: &[usize],
) -> Result<Array1<f64>> {
    Ok(debias_detailed(d, y, support)?.x)
}

pub fn debias_detailed(d: &Array2<f64>, y: ArrayView1<f64>, support: &[usize]) -> Result<Debiased> {
    let (m, n) = d.dim();
    if y.len() != m {
        return Err(SpoqError::Dimension {
            expected: m,
            got: y.len(),
        });
    }
    if support.is_empty() {
        return Err(SpoqError::Domain("debiasing needs a nonempty support".into()));
    }
    if let Some(&bad) = support.iter().find(|&&j| j >= n) {
        return Err(SpoqError::InvalidParameter(format!(
            "support index {bad} out of range for {n} columns"
        )));
    }
    let ds = DMatrix::from_fn(m, support.len(), |i, k| d[[i, support[k]]]);
    let rhs = DVector::from_iterator(m, y.iter().cloned());
    let svd = ds.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (m.max(support.len()) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let rank_deficient = rank < support.len();
    if rank_deficient {
        log::warn!(
            "debias: support matrix has rank {rank} < {}, using the minimum-norm solution",
            support.len()
        );
    }
    let coef = svd
        .solve(&rhs, tol)
        .map_err(|e| SpoqError::Domain(format!("least-squares solve failed: {e}")))?;
    let mut unclamped = Array1::zeros(n);
    for (k, &j) in support.iter().enumerate() {
        unclamped[j] = coef[k];
    }
    let x = unclamped.mapv(|v: f64| v.max(0.0));
    Ok(Debiased {
        x,
        unclamped,
        rank_deficient,
    })
}

/// One row of results for a single solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub solver_id: String,
    pub penalty_id: String,
    pub seed: u64,
    pub noise_percent: f64,
    pub snr_db: f64,
    pub tsnr_db: f64,
    /// SNR of the solver output before debiasing.
    pub raw_snr_db: f64,
    pub sparsity_estimate: usize,
    pub true_sparsity: usize,
    pub support_precision: f64,
    pub support_recall: f64,
    pub wall_time: f64,
    pub iterations: usize,
    pub stop_reason: String,
    pub objective: f64,
    pub config_hash: String,
}

/// `(precision, recall)` of the estimated support against the true one.
pub fn support_scores(x_true: ArrayView1<f64>, x_hat: ArrayView1<f64>, threshold: f64) -> (f64, f64) {
    let est = support(x_hat, threshold);
    let truth: Vec<usize> = support(x_true, 0.0);
    let hits = est.iter().filter(|j| x_true[**j] != 0.0).count() as f64;
    let precision = if est.is_empty() { 1.0 } else { hits / est.len() as f64 };
    let recall = if truth.is_empty() { 1.0 } else { hits / truth.len() as f64 };
    (precision, recall)
}

/// Mean and sample standard deviation; `(nan, nan)` for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn snr_examples() {
        let x = array![3.0, -4.0, 0.0, 1.0];
        assert_relative_eq!(snr(x.view(), Array1::zeros(4).view()).unwrap(), 0.0);
        let scaled = &x * 0.99;
        assert_relative_eq!(snr(x.view(), scaled.view()).unwrap(), 40.0, epsilon = 1e-10);
        assert_eq!(snr(x.view(), x.view()).unwrap(), f64::INFINITY);
        assert!(matches!(
            snr(Array1::zeros(3).view(), x.slice(ndarray::s![..3])),
            Err(SpoqError::Domain(_))
        ));
    }

    #[test]
    fn tsnr_examples() {
        let x = array![0.0, 2.0, 0.0, 5.0];
        let off = array![7.0, 2.0, -1.0, 5.0];
        assert_eq!(tsnr(x.view(), off.view()).unwrap(), f64::INFINITY);
        assert!(snr(x.view(), off.view()).unwrap().is_finite());
        assert_relative_eq!(tsnr(x.view(), Array1::zeros(4).view()).unwrap(), 0.0);
        assert!(tsnr(Array1::zeros(4).view(), off.view()).is_err());
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity_degree(Array1::zeros(5).view(), 1e-4).unwrap(), 0);
        let x = array![1e-5, -2e-4, 3.0, 0.0];
        assert_eq!(sparsity_degree(x.view(), SPARSITY_THRESHOLD).unwrap(), 2);
        assert_eq!(sparsity_degree(x.view(), 1.0).unwrap(), 1);
        assert!(sparsity_degree(x.view(), 0.0).is_err());
    }

    #[test]
    fn debias_recovers_noise_free_amplitudes() {
        let d = array![
            [1.0, 0.5, 0.0, 0.1],
            [0.2, 1.0, 0.3, 0.0],
            [0.0, 0.4, 1.0, 0.2],
            [0.1, 0.0, 0.5, 1.0],
            [0.3, 0.2, 0.0, 0.6]
        ];
        let x = array![2.0, 0.0, 7.5, 0.0];
        let y = d.dot(&x);
        let got = debias_least_squares(&d, y.view(), &[0, 2]).unwrap();
        for i in 0..4 {
            assert_relative_eq!(got[i], x[i], max_relative = 1e-8, epsilon = 1e-12);
        }
    }

    #[test]
    fn debias_full_support_inverts_and_clamps() {
        let d = array![[2.0, 1.0], [1.0, 3.0]];
        let y = array![1.0, -7.0];
        // D^-1 y = (2, -3) -> clamped (2, 0)
        let got = debias_detailed(&d, y.view(), &[0, 1]).unwrap();
        assert_relative_eq!(got.unclamped[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(got.unclamped[1], -3.0, epsilon = 1e-12);
        assert_eq!(got.x[1], 0.0);
        assert!(!got.rank_deficient);
    }

    #[test]
    fn debias_empty_support_is_domain_error() {
        let d = Array2::eye(2);
        assert!(matches!(
            debias_least_squares(&d, array![1.0, 1.0].view(), &[]),
            Err(SpoqError::Domain(_))
        ));
    }

    #[test]
    fn debias_rank_deficient_uses_minimum_norm() {
        let d = array![[1.0, 1.0], [1.0, 1.0]];
        let got = debias_detailed(&d, array![2.0, 2.0].view(), &[0, 1]).unwrap();
        assert!(got.rank_deficient);
        assert_relative_eq!(got.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(got.x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn support_scores_count_hits() {
        let t = array![1.0, 0.0, 2.0, 0.0];
        let h = array![0.9, 0.5, 0.0, 0.0];
        let (p, r) = support_scores(t.view(), h.view(), 1e-4);
        assert_eq!(p, 0.5);
        assert_eq!(r, 0.5);
    }

    proptest! {
        #[test]
        fn snr_shifts_by_twenty_db_per_decade(
            x in proptest::collection::vec(-10.0f64..10.0, 2..20),
            seed in proptest::collection::vec(-1.0f64..1.0, 20),
        ) {
            let x = Array1::from(x);
            prop_assume!(linalg::norm(x.view()) > 1e-3);
            let r = Array1::from_iter(seed.iter().take(x.len()).cloned());
            prop_assume!(linalg::norm(r.view()) > 1e-3);
            let a = snr(x.view(), (&x + &r).view()).unwrap();
            let b = snr(x.view(), (&x + &(&r / 10.0)).view()).unwrap();
            prop_assert!((b - a - 20.0).abs() < 1e-9);
        }

        #[test]
        fn sparsity_is_monotone_in_threshold(
            x in proptest::collection::vec(-1.0f64..1.0, 0..30),
            t1 in 1e-6f64..0.5,
            dt in 0.0f64..0.5,
        ) {
            let x = Array1::from(x);
            prop_assert!(
                sparsity_degree(x.view(), t1 + dt).unwrap() <= sparsity_degree(x.view(), t1).unwrap()
            );
        }

        #[test]
        fn debias_never_worsens_residual(
            vals in proptest::collection::vec(0.0f64..1.0, 24),
            amps in proptest::collection::vec(0.1f64..5.0, 2),
            noise in proptest::collection::vec(-0.01f64..0.01, 6),
        ) {
            let d = Array2::from_shape_vec((6, 4), vals).unwrap() + Array2::<f64>::eye(6).slice(ndarray::s![.., ..4]);
            let mut x = Array1::zeros(4);
            x[0] = amps[0];
            x[3] = amps[1];
            let y = d.dot(&x) + Array1::from(noise);
            let deb = debias_detailed(&d, y.view(), &[0, 3]).unwrap();
            prop_assume!(deb.unclamped.iter().all(|&v| v >= 0.0));
            let before = linalg::dist(d.dot(&x).view(), y.view());
            let after = linalg::dist(d.dot(&deb.x).view(), y.view());
            prop_assert!(after <= before + 1e-12);
        }
    }
}
