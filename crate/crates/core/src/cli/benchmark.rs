//! Runs an experiment plan on a worker pool and aggregates the results.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::plan::ExperimentPlan;
use crate::error::Result;
use crate::experiment::{self, config_hash, problem_for, run_single, SolverKind};
use crate::metrics::{self, RunReport};
use crate::msdata::{build_dictionary, Instance};
use crate::penalties::{PenaltySpec, SpoqParams};
use crate::solvers;

/// One solve, with provenance. Wall time is kept apart in [`TimingRow`] so
/// these rows replay exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub dataset: String,
    pub penalty_id: String,
    pub family: String,
    pub solver_id: String,
    pub config_hash: String,
    pub noise_percent: f64,
    pub seed: u64,
    pub n_nonzero: usize,
    pub snr_db: f64,
    pub tsnr_db: f64,
    pub raw_snr_db: f64,
    pub sparsity_estimate: usize,
    pub true_sparsity: usize,
    pub support_precision: f64,
    pub support_recall: f64,
    pub iterations: usize,
    pub stop_reason: String,
    pub objective: f64,
}

impl RunRow {
    fn new(dataset: &str, family: &str, n_nonzero: usize, r: &RunReport) -> Self {
        Self {
            dataset: dataset.into(),
            penalty_id: r.penalty_id.clone(),
            family: family.into(),
            solver_id: r.solver_id.clone(),
            config_hash: r.config_hash.clone(),
            noise_percent: r.noise_percent,
            seed: r.seed,
            n_nonzero,
            snr_db: r.snr_db,
            tsnr_db: r.tsnr_db,
            raw_snr_db: r.raw_snr_db,
            sparsity_estimate: r.sparsity_estimate,
            true_sparsity: r.true_sparsity,
            support_precision: r.support_precision,
            support_recall: r.support_recall,
            iterations: r.iterations,
            stop_reason: r.stop_reason.clone(),
            objective: r.objective,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub penalty_id: String,
    pub solver_id: String,
    pub config_hash: String,
    pub noise_percent: f64,
    pub seed: u64,
    pub n_nonzero: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRow {
    pub penalty_id: String,
    pub solver_id: String,
    pub config_hash: String,
    pub noise_percent: f64,
    pub seed: u64,
    pub n_nonzero: usize,
    pub error: String,
}

/// Mean and standard deviation over seeds for one penalty and noise level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub dataset: String,
    pub penalty_id: String,
    pub family: String,
    pub solver_id: String,
    pub config_hash: String,
    pub noise_percent: f64,
    pub n_nonzero: usize,
    pub runs: usize,
    pub failures: usize,
    pub snr_mean: f64,
    pub snr_std: f64,
    pub tsnr_mean: f64,
    pub tsnr_std: f64,
    pub sparsity_mean: f64,
    pub sparsity_std: f64,
    pub raw_snr_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseRow {
    pub penalty_id: String,
    pub solver_id: String,
    pub config_hash: String,
    pub noise_percent: f64,
    pub runs: usize,
    pub snr_mean: f64,
    pub snr_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub penalty_id: String,
    pub solver_id: String,
    pub config_hash: String,
    pub p: f64,
    pub n_nonzero: usize,
    pub noise_percent: f64,
    pub runs: usize,
    pub sparsity_mean: f64,
    pub sparsity_std: f64,
    pub snr_mean: f64,
    pub snr_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub solver_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub iter: usize,
    pub elapsed_s: f64,
    pub snr_db: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkOutput {
    pub runs: Vec<RunRow>,
    pub timings: Vec<TimingRow>,
    pub failures: Vec<FailureRow>,
    pub table: Vec<TableRow>,
    pub noise_sweep: Vec<NoiseRow>,
    pub sweep_runs: Vec<RunRow>,
    pub sparsity_sweep: Vec<SweepRow>,
    pub convergence: Vec<ConvergenceRow>,
}

struct Cell {
    penalty: usize,
    spec: PenaltySpec,
    solver: SolverKind,
    instance: usize,
}

type CellResult = std::result::Result<(RunReport, f64), String>;

pub fn run_benchmark(plan: &ExperimentPlan) -> Result<BenchmarkOutput> {
    plan.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs)
        .build()
        .map_err(|e| crate::error::SpoqError::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_in_pool(plan))
}

fn run_in_pool(plan: &ExperimentPlan) -> Result<BenchmarkOutput> {
    let dspec = plan.dictionary_spec();
    let dataset = if plan.dictionary.is_some() { "custom" } else { plan.preset.name() };
    let preset = plan.dictionary.is_none().then_some(plan.preset);
    let mut out = BenchmarkOutput::default();
    let needs_dictionary =
        !plan.penalties.is_empty() && !plan.noise_percent.is_empty() && plan.seeds > 0
            || plan.sparsity_sweep.is_some()
            || plan.convergence.is_some();
    if !needs_dictionary {
        return Ok(out);
    }
    let d = build_dictionary(&dspec)?;
    let n_nonzero = plan.nonzeros();

    // main grid
    let keys: Vec<(f64, u64)> = plan
        .noise_percent
        .iter()
        .flat_map(|&nl| plan.seed_range().map(move |s| (nl, s)))
        .collect();
    let instances: Vec<Instance> = keys
        .par_iter()
        .map(|&(nl, seed)| Instance::with_dictionary(dspec, d.clone(), preset, n_nonzero, nl, seed))
        .collect::<Result<_>>()?;
    let cells: Vec<Cell> = plan
        .penalties
        .iter()
        .enumerate()
        .flat_map(|(pi, e)| {
            (0..instances.len()).map(move |ii| Cell {
                penalty: pi,
                spec: e.spec,
                solver: e.solver(),
                instance: ii,
            })
        })
        .collect();
    let results = run_cells(&cells, &instances, &plan.solver);
    let mut groups: BTreeMap<(usize, usize), Vec<RunReport>> = BTreeMap::new();
    let mut failed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let noise_index = |nl: f64| plan.noise_percent.iter().position(|&v| v == nl).unwrap_or(0);
    for (cell, res) in cells.iter().zip(results) {
        let inst = &instances[cell.instance];
        let hash = config_hash(&cell.spec, cell.solver, &plan.solver);
        let key = (cell.penalty, noise_index(inst.meta.noise_percent));
        match res {
            Ok((report, wall)) => {
                out.runs.push(RunRow::new(dataset, cell.spec.family(), n_nonzero, &report));
                out.timings.push(TimingRow {
                    penalty_id: report.penalty_id.clone(),
                    solver_id: report.solver_id.clone(),
                    config_hash: hash,
                    noise_percent: report.noise_percent,
                    seed: report.seed,
                    n_nonzero,
                    wall_time_s: wall,
                });
                groups.entry(key).or_default().push(report);
            }
            Err(error) => {
                out.failures.push(FailureRow {
                    penalty_id: cell.spec.id(),
                    solver_id: cell.solver.name().into(),
                    config_hash: hash,
                    noise_percent: inst.meta.noise_percent,
                    seed: inst.meta.seed,
                    n_nonzero,
                    error,
                });
                *failed.entry(key).or_default() += 1;
            }
        }
    }
    for (pi, entry) in plan.penalties.iter().enumerate() {
        for (ni, &nl) in plan.noise_percent.iter().enumerate() {
            let reports = groups.get(&(pi, ni)).map(Vec::as_slice).unwrap_or(&[]);
            let solver = entry.solver();
            let hash = config_hash(&entry.spec, solver, &plan.solver);
            let snr = stats(reports, |r| r.snr_db);
            let tsnr = stats(reports, |r| r.tsnr_db);
            let sparsity = stats(reports, |r| r.sparsity_estimate as f64);
            out.table.push(TableRow {
                dataset: dataset.into(),
                penalty_id: entry.spec.id(),
                family: entry.spec.family().into(),
                solver_id: solver.name().into(),
                config_hash: hash.clone(),
                noise_percent: nl,
                n_nonzero,
                runs: reports.len(),
                failures: failed.get(&(pi, ni)).copied().unwrap_or(0),
                snr_mean: snr.0,
                snr_std: snr.1,
                tsnr_mean: tsnr.0,
                tsnr_std: tsnr.1,
                sparsity_mean: sparsity.0,
                sparsity_std: sparsity.1,
                raw_snr_mean: stats(reports, |r| r.raw_snr_db).0,
            });
            out.noise_sweep.push(NoiseRow {
                penalty_id: entry.spec.id(),
                solver_id: solver.name().into(),
                config_hash: hash,
                noise_percent: nl,
                runs: reports.len(),
                snr_mean: snr.0,
                snr_std: snr.1,
            });
        }
    }

    if let Some(sweep) = &plan.sparsity_sweep {
        sparsity_sweep(plan, sweep, dataset, &d, &mut out)?;
    }
    if let Some(conv) = &plan.convergence {
        let inst = Instance::with_dictionary(dspec, d.clone(), preset, n_nonzero, conv.noise_percent, conv.seed)?;
        out.convergence = convergence_rows(&inst, conv.p, conv.q, &conv.solvers, &plan.solver)?;
    }
    Ok(out)
}

fn run_cells(cells: &[Cell], instances: &[Instance], config: &solvers::SolverConfig) -> Vec<CellResult> {
    cells
        .par_iter()
        .map(|c| {
            run_single(&instances[c.instance], &c.spec, c.solver, config)
                .map(|o| {
                    let wall = o.report.wall_time;
                    (o.report, wall)
                })
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn sparsity_sweep(
    plan: &ExperimentPlan,
    sweep: &super::plan::SparsitySweep,
    dataset: &str,
    d: &ndarray::Array2<f64>,
    out: &mut BenchmarkOutput,
) -> Result<()> {
    let dspec = plan.dictionary_spec();
    let sizes: Vec<usize> = sweep.sizes.iter().copied().filter(|&s| s <= dspec.n_atoms).collect();
    let mut keys = Vec::new();
    for &size in &sizes {
        for seed in plan.first_seed..plan.first_seed + sweep.seeds {
            keys.push((size, seed));
        }
    }
    let instances: Vec<Instance> = keys
        .par_iter()
        .map(|&(size, seed)| Instance::with_dictionary(dspec, d.clone(), None, size, sweep.noise_percent, seed))
        .collect::<Result<_>>()?;
    let cells: Vec<Cell> = sweep
        .p
        .iter()
        .enumerate()
        .flat_map(|(pi, &p)| {
            let spec = PenaltySpec::Spoq(SpoqParams::ms_preset(p, sweep.q).expect("validated"));
            (0..instances.len()).map(move |ii| Cell {
                penalty: pi,
                spec,
                solver: SolverKind::Trvmfb,
                instance: ii,
            })
        })
        .collect();
    let results = run_cells(&cells, &instances, &plan.solver);
    let mut groups: BTreeMap<(usize, usize), Vec<RunReport>> = BTreeMap::new();
    for (cell, res) in cells.iter().zip(results) {
        let inst = &instances[cell.instance];
        let size = inst.meta.n_nonzero;
        match res {
            Ok((report, _)) => {
                out.sweep_runs.push(RunRow::new(dataset, "spoq", size, &report));
                groups.entry((cell.penalty, size)).or_default().push(report);
            }
            Err(error) => out.failures.push(FailureRow {
                penalty_id: cell.spec.id(),
                solver_id: cell.solver.name().into(),
                config_hash: config_hash(&cell.spec, cell.solver, &plan.solver),
                noise_percent: sweep.noise_percent,
                seed: inst.meta.seed,
                n_nonzero: size,
                error,
            }),
        }
    }
    for (pi, &p) in sweep.p.iter().enumerate() {
        let spec = PenaltySpec::Spoq(SpoqParams::ms_preset(p, sweep.q)?);
        for &size in &sizes {
            let reports = groups.get(&(pi, size)).map(Vec::as_slice).unwrap_or(&[]);
            let sparsity = stats(reports, |r| r.sparsity_estimate as f64);
            let snr = stats(reports, |r| r.snr_db);
            out.sparsity_sweep.push(SweepRow {
                penalty_id: spec.id(),
                solver_id: SolverKind::Trvmfb.name().into(),
                config_hash: config_hash(&spec, SolverKind::Trvmfb, &plan.solver),
                p,
                n_nonzero: size,
                noise_percent: sweep.noise_percent,
                runs: reports.len(),
                sparsity_mean: sparsity.0,
                sparsity_std: sparsity.1,
                snr_mean: snr.0,
                snr_std: snr.1,
            });
        }
    }
    Ok(())
}

/// SNR of the raw iterates against elapsed time, one block per solver, all
/// started from the same warm start.
pub fn convergence_rows(
    instance: &Instance,
    p: f64,
    q: f64,
    solvers: &[SolverKind],
    config: &solvers::SolverConfig,
) -> Result<Vec<ConvergenceRow>> {
    let spec = PenaltySpec::Spoq(SpoqParams::ms_preset(p, q)?);
    let problem = problem_for(instance)?;
    let x0 = solvers::warm_start_l1(&problem, config.init_pd_iters);
    let mut rows = Vec::new();
    for &kind in solvers {
        let output = experiment::solve_with(&problem, &spec, kind, config, &x0, Some(&instance.x_true))?;
        let hash = config_hash(&spec, kind, config);
        let trace = &output.trace;
        rows.push(ConvergenceRow {
            solver_id: kind.name().into(),
            config_hash: hash.clone(),
            seed: instance.meta.seed,
            iter: 0,
            elapsed_s: 0.0,
            snr_db: trace.initial_snr.unwrap_or(f64::NAN),
            objective: trace.initial_objective,
        });
        rows.extend(trace.records.iter().map(|r| ConvergenceRow {
            solver_id: kind.name().into(),
            config_hash: hash.clone(),
            seed: instance.meta.seed,
            iter: r.iter,
            elapsed_s: r.elapsed,
            snr_db: r.snr.unwrap_or(f64::NAN),
            objective: r.objective,
        }));
    }
    Ok(rows)
}

fn stats(reports: &[RunReport], f: impl Fn(&RunReport) -> f64) -> (f64, f64) {
    let values: Vec<f64> = reports.iter().map(f).collect();
    metrics::mean_std(&values)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    if rows.is_empty() {
        w.write_record(header).map_err(csv_error)?;
    }
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> crate::error::SpoqError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => crate::error::SpoqError::Domain(format!("CSV output: {other:?}")),
    }
}

impl BenchmarkOutput {
    /// Writes every table into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("runs.csv"), &self.runs, RUN_HEADER)?;
        write_csv(
            &dir.join("timings.csv"),
            &self.timings,
            &["penalty_id", "solver_id", "config_hash", "noise_percent", "seed", "n_nonzero", "wall_time_s"],
        )?;
        write_csv(
            &dir.join("failures.csv"),
            &self.failures,
            &["penalty_id", "solver_id", "config_hash", "noise_percent", "seed", "n_nonzero", "error"],
        )?;
        write_csv(
            &dir.join("table.csv"),
            &self.table,
            &[
                "dataset", "penalty_id", "family", "solver_id", "config_hash", "noise_percent", "n_nonzero", "runs",
                "failures", "snr_mean", "snr_std", "tsnr_mean", "tsnr_std", "sparsity_mean", "sparsity_std",
                "raw_snr_mean",
            ],
        )?;
        write_csv(
            &dir.join("noise_sweep.csv"),
            &self.noise_sweep,
            &["penalty_id", "solver_id", "config_hash", "noise_percent", "runs", "snr_mean", "snr_std"],
        )?;
        write_csv(&dir.join("sweep_runs.csv"), &self.sweep_runs, RUN_HEADER)?;
        write_csv(
            &dir.join("sparsity_sweep.csv"),
            &self.sparsity_sweep,
            &[
                "penalty_id", "solver_id", "config_hash", "p", "n_nonzero", "noise_percent", "runs", "sparsity_mean",
                "sparsity_std", "snr_mean", "snr_std",
            ],
        )?;
        write_csv(
            &dir.join("convergence.csv"),
            &self.convergence,
            &["solver_id", "config_hash", "seed", "iter", "elapsed_s", "snr_db", "objective"],
        )?;
        Ok(())
    }
}

const RUN_HEADER: &[&str] = &[
    "dataset",
    "penalty_id",
    "family",
    "solver_id",
    "config_hash",
    "noise_percent",
    "seed",
    "n_nonzero",
    "snr_db",
    "tsnr_db",
    "raw_snr_db",
    "sparsity_estimate",
    "true_sparsity",
    "support_precision",
    "support_recall",
    "iterations",
    "stop_reason",
    "objective",
];
