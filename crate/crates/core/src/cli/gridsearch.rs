//! Hyperparameter grid search maximizing the SNR on one instance.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SpoqError};
use crate::experiment::{run_single, SolverKind};
use crate::msdata::Instance;
use crate::penalties::{PenaltySpec, SpoqParams};
use crate::solvers::SolverConfig;

/// Log-spaced axis `10^min_exp ..= 10^max_exp` with `points` values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogAxis {
    pub min_exp: f64,
    pub max_exp: f64,
    pub points: usize,
}

impl LogAxis {
    pub fn new(min_exp: f64, max_exp: f64, points: usize) -> Result<Self> {
        if points == 0 || !(min_exp <= max_exp) || !min_exp.is_finite() || !max_exp.is_finite() {
            return Err(SpoqError::Config(format!(
                "bad grid axis 1e{min_exp}..1e{max_exp} with {points} points"
            )));
        }
        Ok(Self { min_exp, max_exp, points })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![10f64.powf(self.min_exp)];
        }
        let step = (self.max_exp - self.min_exp) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| 10f64.powf(self.min_exp + step * i as f64))
            .collect()
    }
}

/// Candidates for one penalty family. SPOQ varies `(alpha, beta, eta)` over
/// the full product of `axis` at fixed `(p, q)`; SCAD varies `delta` and the
/// shoulder `a` over `a_values`; the other families vary `delta` only.
pub fn candidates(family: &str, axis: LogAxis, p: f64, q: f64, a_values: &[f64]) -> Result<Vec<PenaltySpec>> {
    let v = axis.values();
    let specs: Vec<PenaltySpec> = match family {
        "spoq" => {
            let mut out = Vec::with_capacity(v.len().pow(3));
            for &alpha in &v {
                for &beta in &v {
                    for &eta in &v {
                        out.push(PenaltySpec::Spoq(SpoqParams { p, q, alpha, beta, eta }));
                    }
                }
            }
            out
        }
        "scad" => v
            .iter()
            .flat_map(|&delta| a_values.iter().map(move |&a| PenaltySpec::Scad { delta, a }))
            .collect(),
        "cauchy" => v.iter().map(|&delta| PenaltySpec::Cauchy { delta }).collect(),
        "welsch" => v.iter().map(|&delta| PenaltySpec::Welsch { delta }).collect(),
        "cel0" => v.iter().map(|&delta| PenaltySpec::Cel0 { delta }).collect(),
        "l0" | "l1" => {
            return Err(SpoqError::Config(format!(
                "{family} has no shape parameter to search; its weight is fixed by the constraint"
            )))
        }
        other => return Err(SpoqError::Config(format!("unknown penalty family '{other}'"))),
    };
    let valid: Vec<PenaltySpec> = specs.into_iter().filter(|s| s.validate().is_ok()).collect();
    if valid.is_empty() {
        return Err(SpoqError::Config(format!("no valid {family} parameters on this grid")));
    }
    Ok(valid)
}

/// One grid cell. Failed solves carry the error and a NaN SNR.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub penalty_id: String,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub eta: Option<f64>,
    pub delta: Option<f64>,
    pub a: Option<f64>,
    pub snr_db: f64,
    pub tsnr_db: f64,
    pub sparsity_estimate: Option<usize>,
    pub iterations: Option<usize>,
    pub config_hash: String,
    pub error: String,
    #[serde(skip)]
    pub spec: PenaltySpec,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub points: Vec<GridPoint>,
    /// Index into `points` of the highest SNR, if any solve succeeded.
    pub best: Option<usize>,
}

impl GridSearchResult {
    pub fn best_point(&self) -> Option<&GridPoint> {
        self.best.map(|i| &self.points[i])
    }

    /// Points that differ from the best one in a single parameter, so each
    /// axis can be read as a one-dimensional sensitivity curve.
    pub fn sensitivity(&self) -> Vec<(&'static str, &GridPoint)> {
        let Some(best) = self.best_point() else {
            return Vec::new();
        };
        let axes: [(&'static str, fn(&GridPoint) -> Option<f64>); 5] = [
            ("alpha", |g| g.alpha),
            ("beta", |g| g.beta),
            ("eta", |g| g.eta),
            ("delta", |g| g.delta),
            ("a", |g| g.a),
        ];
        let mut out = Vec::new();
        for (i, (name, get)) in axes.iter().enumerate() {
            if get(best).is_none() {
                continue;
            }
            for g in &self.points {
                let others_match = axes
                    .iter()
                    .enumerate()
                    .all(|(j, (_, other))| j == i || other(g) == other(best));
                if others_match {
                    out.push((*name, g));
                }
            }
        }
        out
    }
}

/// Solves `instance` once per candidate, in parallel, with the usual warm
/// start and debiasing.
pub fn grid_search(
    instance: &Instance,
    specs: &[PenaltySpec],
    solver: Option<SolverKind>,
    config: &SolverConfig,
) -> Result<GridSearchResult> {
    config.validate()?;
    let points: Vec<GridPoint> = specs
        .par_iter()
        .map(|spec| {
            let kind = solver.unwrap_or_else(|| SolverKind::default_for(spec));
            let mut point = GridPoint {
                penalty_id: spec.id(),
                alpha: None,
                beta: None,
                eta: None,
                delta: None,
                a: None,
                snr_db: f64::NAN,
                tsnr_db: f64::NAN,
                sparsity_estimate: None,
                iterations: None,
                config_hash: crate::experiment::config_hash(spec, kind, config),
                error: String::new(),
                spec: *spec,
            };
            match *spec {
                PenaltySpec::Spoq(s) => {
                    point.alpha = Some(s.alpha);
                    point.beta = Some(s.beta);
                    point.eta = Some(s.eta);
                }
                PenaltySpec::Scad { delta, a } => {
                    point.delta = Some(delta);
                    point.a = Some(a);
                }
                PenaltySpec::Cauchy { delta } | PenaltySpec::Welsch { delta } | PenaltySpec::Cel0 { delta } => {
                    point.delta = Some(delta)
                }
                PenaltySpec::L1 | PenaltySpec::L0 => {}
            }
            match run_single(instance, spec, kind, config) {
                Ok(o) => {
                    point.snr_db = o.report.snr_db;
                    point.tsnr_db = o.report.tsnr_db;
                    point.sparsity_estimate = Some(o.report.sparsity_estimate);
                    point.iterations = Some(o.report.iterations);
                }
                Err(e) => point.error = e.to_string(),
            }
            point
        })
        .collect();
    let best = points
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.snr_db.is_nan())
        .max_by(|a, b| a.1.snr_db.total_cmp(&b.1.snr_db))
        .map(|(i, _)| i);
    Ok(GridSearchResult { points, best })
}
