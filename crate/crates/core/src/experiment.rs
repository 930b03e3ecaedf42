//! One experiment cell: warm start, solve, debias and score.

use std::str::FromStr;
use std::time::Instant;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SpoqError};
use crate::metrics::{self, RunReport, SPARSITY_THRESHOLD};
use crate::msdata::Instance;
use crate::operators::Problem;
use crate::penalties::PenaltySpec;
use crate::solvers::{self, SolveOutput, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Trvmfb,
    Vmfb,
    Fb,
    /// Primal-dual splitting.
    Pd,
    /// Half-quadratic VMFB.
    Hq,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Trvmfb => "trvmfb",
            SolverKind::Vmfb => "vmfb",
            SolverKind::Fb => "fb",
            SolverKind::Pd => "pd",
            SolverKind::Hq => "hq",
        }
    }

    /// The solver each penalty is run with unless told otherwise.
    pub fn default_for(spec: &PenaltySpec) -> Self {
        match spec {
            PenaltySpec::Spoq(_) => SolverKind::Trvmfb,
            PenaltySpec::Cauchy { .. } | PenaltySpec::Welsch { .. } => SolverKind::Hq,
            _ => SolverKind::Pd,
        }
    }

    pub fn supports(self, spec: &PenaltySpec) -> bool {
        match self {
            SolverKind::Trvmfb | SolverKind::Vmfb | SolverKind::Fb => {
                matches!(spec, PenaltySpec::Spoq(_))
            }
            SolverKind::Hq => matches!(spec, PenaltySpec::Cauchy { .. } | PenaltySpec::Welsch { .. }),
            SolverKind::Pd => matches!(
                spec,
                PenaltySpec::L1 | PenaltySpec::L0 | PenaltySpec::Scad { .. } | PenaltySpec::Cel0 { .. }
            ),
        }
    }
}

impl FromStr for SolverKind {
    type Err = SpoqError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trvmfb" => Ok(SolverKind::Trvmfb),
            "vmfb" => Ok(SolverKind::Vmfb),
            "fb" => Ok(SolverKind::Fb),
            "pd" => Ok(SolverKind::Pd),
            "hq" => Ok(SolverKind::Hq),
            other => Err(SpoqError::Config(format!("unknown solver '{other}'"))),
        }
    }
}

/// Short hex digest of the solver, penalty and settings of a run.
pub fn config_hash(spec: &PenaltySpec, solver: SolverKind, config: &SolverConfig) -> String {
    let payload = serde_json::json!({ "penalty": spec, "solver": solver, "config": config });
    let digest = Sha256::digest(payload.to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn problem_for(instance: &Instance) -> Result<Problem> {
    if instance.meta.sigma > 0.0 {
        Problem::from_noise_level(
            instance.d.clone(),
            instance.y.clone(),
            instance.meta.sigma,
            instance.meta.x_max,
        )
    } else {
        Err(SpoqError::Config(
            "instance has no noise level; the data-fidelity radius would be zero".into(),
        ))
    }
}

/// Runs `solver` from `x0` on `problem`, scoring iterates against `truth`.
pub fn solve_with(
    problem: &Problem,
    spec: &PenaltySpec,
    solver: SolverKind,
    config: &SolverConfig,
    x0: &Array1<f64>,
    truth: Option<&Array1<f64>>,
) -> Result<SolveOutput> {
    if !solver.supports(spec) {
        return Err(SpoqError::Config(format!(
            "solver {} cannot run penalty {}",
            solver.name(),
            spec.family()
        )));
    }
    let truth = truth.map(|t| t.view());
    match (solver, spec) {
        (SolverKind::Trvmfb, PenaltySpec::Spoq(p)) => solvers::tr_vmfb_solve(problem, p, config, x0.view(), truth),
        (SolverKind::Vmfb, PenaltySpec::Spoq(p)) => solvers::vmfb_solve(problem, p, config, x0.view(), truth),
        (SolverKind::Fb, PenaltySpec::Spoq(p)) => solvers::fb_solve(problem, p, config, x0.view(), truth),
        (SolverKind::Hq, spec) => solvers::vmfb_halfquadratic_solve(problem, spec, config, x0.view(), truth),
        (SolverKind::Pd, spec) => solvers::primal_dual_solve(problem, spec, config, x0.view(), truth),
        _ => unreachable!("checked by supports"),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output: SolveOutput,
    /// Least-squares refit on the estimated support.
    pub debiased: Array1<f64>,
    pub report: RunReport,
}

/// Warm start, solve, debias on the estimated support, then score.
pub fn run_single(
    instance: &Instance,
    spec: &PenaltySpec,
    solver: SolverKind,
    config: &SolverConfig,
) -> Result<RunOutcome> {
    spec.validate()?;
    config.validate()?;
    let problem = problem_for(instance)?;
    let start = Instant::now();
    let x0 = solvers::warm_start_l1(&problem, config.init_pd_iters);
    let output = solve_with(&problem, spec, solver, config, &x0, Some(&instance.x_true))?;
    let wall_time = start.elapsed().as_secs_f64();

    let est_support = metrics::support(output.x.view(), SPARSITY_THRESHOLD);
    let debiased = if est_support.is_empty() {
        output.x.clone()
    } else {
        metrics::debias_least_squares(&instance.d, instance.y.view(), &est_support)?
    };
    let truth = instance.x_true.view();
    let (precision, recall) = metrics::support_scores(truth, output.x.view(), SPARSITY_THRESHOLD);
    let report = RunReport {
        solver_id: solver.name().into(),
        penalty_id: spec.id(),
        seed: instance.meta.seed,
        noise_percent: instance.meta.noise_percent,
        snr_db: metrics::snr(truth, debiased.view())?,
        tsnr_db: metrics::tsnr(truth, debiased.view())?,
        raw_snr_db: metrics::snr(truth, output.x.view())?,
        sparsity_estimate: est_support.len(),
        true_sparsity: metrics::sparsity_degree(truth, SPARSITY_THRESHOLD)?,
        support_precision: precision,
        support_recall: recall,
        wall_time,
        iterations: output.iterations,
        stop_reason: format!("{:?}", output.stop).to_lowercase(),
        objective: output
            .trace
            .records
            .last()
            .map(|r| r.objective)
            .unwrap_or(output.trace.initial_objective),
        config_hash: config_hash(spec, solver, config),
    };
    Ok(RunOutcome {
        output,
        debiased,
        report,
    })
}
