//! Separable comparison penalties.

use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use super::spoq::{check_finite, spoq_value, SpoqParams};
use crate::error::{Result, SpoqError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PenaltySpec {
    Spoq(SpoqParams),
    L1,
    L0,
    Scad { delta: f64, a: f64 },
    Cauchy { delta: f64 },
    Welsch { delta: f64 },
    Cel0 { delta: f64 },
}

impl PenaltySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PenaltySpec::Spoq(params) => params.validate(),
            PenaltySpec::L1 | PenaltySpec::L0 => Ok(()),
            PenaltySpec::Scad { delta, a } => {
                positive("delta", delta)?;
                if !(a > 2.0 && a.is_finite()) {
                    return Err(SpoqError::InvalidParameter(format!(
                        "SCAD needs a > 2, got {a}"
                    )));
                }
                Ok(())
            }
            PenaltySpec::Cauchy { delta }
            | PenaltySpec::Welsch { delta }
            | PenaltySpec::Cel0 { delta } => positive("delta", delta),
        }
    }

    /// Short stable identifier used in reports and CSV rows.
    pub fn id(&self) -> String {
        match self {
            PenaltySpec::Spoq(s) => format!(
                "spoq(p={},q={},alpha={:e},beta={:e},eta={:e})",
                s.p, s.q, s.alpha, s.beta, s.eta
            ),
            PenaltySpec::L1 => "l1".into(),
            PenaltySpec::L0 => "l0".into(),
            PenaltySpec::Scad { delta, a } => format!("scad(delta={delta},a={a})"),
            PenaltySpec::Cauchy { delta } => format!("cauchy(delta={delta})"),
            PenaltySpec::Welsch { delta } => format!("welsch(delta={delta})"),
            PenaltySpec::Cel0 { delta } => format!("cel0(delta={delta})"),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            PenaltySpec::Spoq(_) => "spoq",
            PenaltySpec::L1 => "l1",
            PenaltySpec::L0 => "l0",
            PenaltySpec::Scad { .. } => "scad",
            PenaltySpec::Cauchy { .. } => "cauchy",
            PenaltySpec::Welsch { .. } => "welsch",
            PenaltySpec::Cel0 { .. } => "cel0",
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SpoqError::InvalidParameter(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

pub fn scad_scalar(x: f64, delta: f64, a: f64) -> f64 {
    let t = x.abs();
    if t < delta {
        delta * t
    } else if t < a * delta {
        (2.0 * a * delta * t - t * t - delta * delta) / (2.0 * (a - 1.0))
    } else {
        (a + 1.0) * delta * delta / 2.0
    }
}

pub fn cauchy_scalar(x: f64, delta: f64) -> f64 {
    (x * x / (delta * delta)).ln_1p()
}

pub fn welsch_scalar(x: f64, delta: f64) -> f64 {
    -(-x * x / (delta * delta)).exp_m1()
}

/// CEL0 term for a column of norm `col_norm`.
pub fn cel0_scalar(x: f64, delta: f64, col_norm: f64) -> f64 {
    let threshold = (2.0 * delta).sqrt() / col_norm;
    let t = x.abs();
    if t < threshold {
        let d = t - threshold;
        delta - 0.5 * col_norm * col_norm * d * d
    } else {
        delta
    }
}

/// Value of any supported penalty; `column_norms` is required for CEL0.
pub fn baseline_value(
    x: ArrayView1<f64>,
    spec: &PenaltySpec,
    column_norms: Option<ArrayView1<f64>>,
) -> Result<f64> {
    spec.validate()?;
    check_finite(x)?;
    Ok(match *spec {
        PenaltySpec::Spoq(params) => spoq_value(x, &params)?,
        PenaltySpec::L1 => x.iter().map(|v| v.abs()).sum(),
        PenaltySpec::L0 => x.iter().filter(|&&v| v != 0.0).count() as f64,
        PenaltySpec::Scad { delta, a } => x.iter().map(|&v| scad_scalar(v, delta, a)).sum(),
        PenaltySpec::Cauchy { delta } => x.iter().map(|&v| cauchy_scalar(v, delta)).sum(),
        PenaltySpec::Welsch { delta } => x.iter().map(|&v| welsch_scalar(v, delta)).sum(),
        PenaltySpec::Cel0 { delta } => {
            let norms = column_norms.ok_or_else(|| {
                SpoqError::Config("CEL0 needs the dictionary column norms".into())
            })?;
            if norms.len() != x.len() {
                return Err(SpoqError::Dimension {
                    expected: x.len(),
                    got: norms.len(),
                });
            }
            if norms.iter().any(|&c| !(c > 0.0)) {
                return Err(SpoqError::Config(
                    "CEL0 needs strictly positive column norms".into(),
                ));
            }
            Zip::from(x)
                .and(norms)
                .fold(0.0, |acc, &v, &c| acc + cel0_scalar(v, delta, c))
        }
    })
}

/// Gradient of the smooth separable penalties (Cauchy and Welsch).
pub fn baseline_gradient(x: ArrayView1<f64>, spec: &PenaltySpec) -> Result<Array1<f64>> {
    spec.validate()?;
    check_finite(x)?;
    match *spec {
        PenaltySpec::Cauchy { delta } => {
            let d2 = delta * delta;
            Ok(x.mapv(|v| 2.0 * v / (d2 + v * v)))
        }
        PenaltySpec::Welsch { delta } => {
            let d2 = delta * delta;
            Ok(x.mapv(|v| 2.0 * v / d2 * (-v * v / d2).exp()))
        }
        other => Err(SpoqError::Unsupported(format!(
            "gradient of {} is not used by any solver",
            other.family()
        ))),
    }
}

/// Half-quadratic curvature `psi'(x) / x` (with its limit at zero), which
/// yields a diagonal majorant metric for Cauchy and Welsch.
pub fn baseline_curvature(x: ArrayView1<f64>, spec: &PenaltySpec) -> Result<Array1<f64>> {
    spec.validate()?;
    check_finite(x)?;
    match *spec {
        PenaltySpec::Cauchy { delta } => {
            let d2 = delta * delta;
            Ok(x.mapv(|v| 2.0 / (d2 + v * v)))
        }
        PenaltySpec::Welsch { delta } => {
            let d2 = delta * delta;
            Ok(x.mapv(|v| 2.0 / d2 * (-v * v / d2).exp()))
        }
        other => Err(SpoqError::Unsupported(format!(
            "no half-quadratic metric for {}",
            other.family()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn welsch_and_cauchy_values() {
        let w = PenaltySpec::Welsch { delta: 3.0 };
        assert_eq!(baseline_value(Array1::zeros(4).view(), &w, None).unwrap(), 0.0);
        let c = PenaltySpec::Cauchy { delta: 1.0 };
        assert_relative_eq!(
            baseline_value(array![1.0].view(), &c, None).unwrap(),
            2f64.ln(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn scad_branches() {
        let (delta, a) = (1.5, 3.0);
        let spec = PenaltySpec::Scad { delta, a };
        let plateau = (a + 1.0) * delta * delta / 2.0;
        for x in [a * delta, 10.0, -7.0] {
            let v = baseline_value(array![x].view(), &spec, None).unwrap();
            assert_relative_eq!(v, plateau, max_relative = 1e-15);
        }
        assert_relative_eq!(scad_scalar(0.5, delta, a), 0.75);
        // continuity at both knots
        let eps = 1e-9;
        assert_relative_eq!(
            scad_scalar(delta - eps, delta, a),
            scad_scalar(delta, delta, a),
            epsilon = 1e-8
        );
        assert_relative_eq!(
            scad_scalar(a * delta - eps, delta, a),
            plateau,
            epsilon = 1e-8
        );
    }

    #[test]
    fn l0_and_l1() {
        let x = array![0.0, -2.0, 0.5, 0.0];
        assert_eq!(baseline_value(x.view(), &PenaltySpec::L0, None).unwrap(), 2.0);
        assert_eq!(baseline_value(x.view(), &PenaltySpec::L1, None).unwrap(), 2.5);
    }

    #[test]
    fn cel0_requires_column_norms() {
        let spec = PenaltySpec::Cel0 { delta: 0.5 };
        let x = array![0.0, 1.0];
        assert!(matches!(
            baseline_value(x.view(), &spec, None),
            Err(SpoqError::Config(_))
        ));
        let norms = array![1.0, 2.0];
        // |x| = 0 < threshold: delta - c^2/2 threshold^2 = delta - delta = 0
        // second entry: threshold = 1/2, |x| = 1 >= threshold -> delta
        let v = baseline_value(x.view(), &spec, Some(norms.view())).unwrap();
        assert_relative_eq!(v, 0.5, epsilon = 1e-15);
        assert!(baseline_value(x.view(), &spec, Some(array![1.0, 0.0].view())).is_err());
    }

    #[test]
    fn scad_validation() {
        assert!(PenaltySpec::Scad { delta: 1.0, a: 2.0 }.validate().is_err());
        assert!(PenaltySpec::Scad { delta: 0.0, a: 3.0 }.validate().is_err());
        assert!(PenaltySpec::Scad { delta: 1.0, a: 2.25 }.validate().is_ok());
    }

    #[test]
    fn curvature_limits_at_zero() {
        let zero = array![0.0];
        let c = baseline_curvature(zero.view(), &PenaltySpec::Cauchy { delta: 1.0 }).unwrap();
        let w = baseline_curvature(zero.view(), &PenaltySpec::Welsch { delta: 1.0 }).unwrap();
        assert_eq!(c[0], 2.0);
        assert_eq!(w[0], 2.0);
        assert!(matches!(
            baseline_curvature(zero.view(), &PenaltySpec::L1),
            Err(SpoqError::Unsupported(_))
        ));
    }

    #[test]
    fn half_quadratic_majorization_on_grid() {
        for spec in [
            PenaltySpec::Cauchy { delta: 0.7 },
            PenaltySpec::Welsch { delta: 1.3 },
        ] {
            let psi = |v: f64| baseline_value(array![v].view(), &spec, None).unwrap();
            for &x in &[-3.0, -0.4, 0.0, 0.2, 1.0, 2.5] {
                let g = baseline_gradient(array![x].view(), &spec).unwrap()[0];
                let w = baseline_curvature(array![x].view(), &spec).unwrap()[0];
                for k in 0..=400 {
                    let xp = -5.0 + 10.0 * k as f64 / 400.0;
                    let bound = psi(x) + g * (xp - x) + 0.5 * w * (xp - x) * (xp - x);
                    assert!(psi(xp) <= bound + 1e-12, "{spec:?} x={x} x'={xp}");
                }
            }
        }
    }

    #[test]
    fn spec_serde_roundtrip() {
        let spec = PenaltySpec::Scad { delta: 1.0, a: 2.25 };
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(s, r#"{"kind":"scad","delta":1.0,"a":2.25}"#);
        let back: PenaltySpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
    }
}
