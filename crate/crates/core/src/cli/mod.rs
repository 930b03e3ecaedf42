//! Command-line batch runner: instance generation, single solves, benchmark
//! plans and hyperparameter searches. Every result goes to a file; the exit
//! code is the only other output that matters.

mod benchmark;
mod gridsearch;
mod plan;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use benchmark::{
    convergence_rows, run_benchmark, write_csv, BenchmarkOutput, ConvergenceRow, FailureRow, NoiseRow, RunRow,
    SweepRow, TableRow, TimingRow,
};
pub use gridsearch::{candidates, grid_search, GridPoint, GridSearchResult, LogAxis};
pub use plan::{default_penalties, load_solver_config, ConvergenceRun, ExperimentPlan, PenaltyEntry, SparsitySweep};

use crate::error::{Result, SpoqError};
use crate::experiment::{run_single, SolverKind};
use crate::msdata::{DatasetPreset, Instance};
use crate::penalties::{PenaltySpec, SpoqParams};
use crate::solvers::{SolverConfig, StopReason};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_MAX_ITERATIONS: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_STALLED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "spoq", version, about = "Sparse recovery experiments with the SPOQ penalty")]
pub struct Cli {
    /// Solver settings (TOML, one key per setting); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic instance file.
    Generate(GenerateArgs),
    /// Solve one instance; writes report.json and trace.csv.
    Solve(SolveArgs),
    /// Run an experiment plan and write the result tables.
    Benchmark(BenchmarkArgs),
    /// Grid search penalty hyperparameters for the best SNR.
    Gridsearch(GridsearchArgs),
    /// Print the default plan, solver settings included, as TOML.
    Defaults(DefaultsArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "a")]
    pub preset: DatasetPreset,
    /// Same as `--preset small`.
    #[arg(long)]
    pub small: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub noise_percent: f64,
    /// Overrides the preset number of nonzeros.
    #[arg(long)]
    pub n_nonzero: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
pub struct PenaltyArgs {
    /// spoq, l1, l0, scad, cauchy, welsch or cel0.
    #[arg(long, default_value = "spoq")]
    pub penalty: String,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// SCAD shoulder.
    #[arg(long)]
    pub a: Option<f64>,
}

impl PenaltyArgs {
    pub fn to_spec(&self) -> Result<PenaltySpec> {
        let delta = || {
            self.delta
                .ok_or_else(|| SpoqError::Config(format!("--delta is required for {}", self.penalty)))
        };
        let spec = match self.penalty.to_ascii_lowercase().as_str() {
            "spoq" | "soot" => {
                let soot = self.penalty.eq_ignore_ascii_case("soot");
                PenaltySpec::Spoq(SpoqParams::new(
                    self.p.unwrap_or(if soot { 1.0 } else { 0.75 }),
                    self.q.unwrap_or(2.0),
                    self.alpha.unwrap_or(SpoqParams::MS_ALPHA),
                    self.beta.unwrap_or(SpoqParams::MS_BETA),
                    self.eta.unwrap_or(SpoqParams::MS_ETA),
                )?)
            }
            "l1" => PenaltySpec::L1,
            "l0" => PenaltySpec::L0,
            "scad" => PenaltySpec::Scad {
                delta: delta()?,
                a: self.a.unwrap_or(3.7),
            },
            "cauchy" => PenaltySpec::Cauchy { delta: delta()? },
            "welsch" => PenaltySpec::Welsch { delta: delta()? },
            "cel0" => PenaltySpec::Cel0 { delta: delta()? },
            other => return Err(SpoqError::Config(format!("unknown penalty '{other}'"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Solver settings settable from the command line.
#[derive(Debug, Args, Clone, Default)]
pub struct SettingsArgs {
    /// Trust-region radius shrink factor.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Trust-region trials per outer iteration.
    #[arg(long = "B")]
    pub trials: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Relative step tolerance for stopping.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub max_inner: Option<usize>,
}

impl SettingsArgs {
    pub fn apply(&self, mut config: SolverConfig) -> Result<SolverConfig> {
        if let Some(v) = self.theta {
            config.theta = v;
        }
        if let Some(v) = self.trials {
            config.trials = v;
        }
        if let Some(v) = self.gamma {
            config.gamma = v;
        }
        if let Some(v) = self.eps {
            config.eps_stop = v;
        }
        if let Some(v) = self.max_outer {
            config.max_outer = v;
        }
        if let Some(v) = self.max_inner {
            config.max_inner = v;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    /// Defaults to the usual solver for the penalty.
    #[arg(long)]
    pub solver: Option<SolverKind>,
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Plan file (TOML); the default plan otherwise.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Use the scaled-down dataset.
    #[arg(long)]
    pub small: bool,
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Comma-separated noise levels in percent.
    #[arg(long, value_delimiter = ',')]
    pub noise_percent: Vec<f64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridsearchArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Penalty family; `--p`/`--q` fix the SPOQ exponents.
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[arg(long)]
    pub solver: Option<SolverKind>,
    /// Grid points per axis.
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    /// Smallest exponent of the log-spaced axes.
    #[arg(long, default_value_t = -7.0, allow_hyphen_values = true)]
    pub min_exp: f64,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub max_exp: f64,
    /// SCAD shoulder values, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "2.5,3.7,5,10")]
    pub a_values: Vec<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DefaultsArgs {
    /// Print the scaled-down plan.
    #[arg(long)]
    pub small: bool,
}

/// Exit code for an error: bad input or configuration versus anything else.
pub fn exit_code_for(err: &SpoqError) -> i32 {
    match err {
        SpoqError::InvalidParameter(_)
        | SpoqError::NonFinite(_)
        | SpoqError::Config(_)
        | SpoqError::Dimension { .. }
        | SpoqError::Parse { .. }
        | SpoqError::Io(_) => EXIT_INPUT,
        SpoqError::Domain(_) | SpoqError::Unsupported(_) | SpoqError::Initialization(_) => EXIT_FAILURE,
    }
}

pub fn exit_code_for_stop(stop: StopReason) -> i32 {
    match stop {
        StopReason::Converged => EXIT_OK,
        StopReason::MaxIterations => EXIT_MAX_ITERATIONS,
        StopReason::Stalled => EXIT_STALLED,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INPUT
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn base_config(path: Option<&Path>, fallback: SolverConfig) -> Result<SolverConfig> {
    match path {
        Some(p) => load_solver_config(p),
        None => Ok(fallback),
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Generate(args) => {
            let preset = if args.small { DatasetPreset::Small } else { args.preset };
            let inst = match args.n_nonzero {
                None => Instance::from_preset(preset, args.noise_percent, args.seed)?,
                Some(k) => {
                    let spec = preset.spec();
                    let d = crate::msdata::build_dictionary(&spec)?;
                    Instance::with_dictionary(spec, d, Some(preset), k, args.noise_percent, args.seed)?
                }
            };
            inst.save(&args.out)?;
            Ok(EXIT_OK)
        }
        Command::Solve(args) => {
            let spec = args.penalty.to_spec()?;
            let config = args.settings.apply(base_config(config_path, SolverConfig::default())?)?;
            let inst = Instance::load(&args.instance)?;
            let solver = args.solver.unwrap_or_else(|| SolverKind::default_for(&spec));
            let outcome = run_single(&inst, &spec, solver, &config)?;
            std::fs::create_dir_all(&args.out)?;
            let report = serde_json::to_string_pretty(&outcome.report)
                .map_err(|e| SpoqError::Domain(format!("report serialization: {e}")))?;
            std::fs::write(args.out.join("report.json"), report + "\n")?;
            std::fs::write(args.out.join("trace.csv"), outcome.output.trace.to_csv())?;
            Ok(exit_code_for_stop(outcome.output.stop))
        }
        Command::Benchmark(args) => {
            let mut plan = match &args.plan {
                Some(p) => ExperimentPlan::load(p)?,
                None if args.small => ExperimentPlan::small(),
                None => ExperimentPlan::default(),
            };
            if args.small {
                plan.preset = DatasetPreset::Small;
                plan.dictionary = None;
                plan.n_nonzero = None;
            }
            if let Some(s) = args.seeds {
                plan.seeds = s;
            }
            if !args.noise_percent.is_empty() {
                plan.noise_percent = args.noise_percent.clone();
            }
            if let Some(j) = args.jobs {
                plan.jobs = j;
            }
            plan.solver = args.settings.apply(base_config(config_path, plan.solver)?)?;
            let out = run_benchmark(&plan)?;
            out.write(&args.out)?;
            std::fs::write(args.out.join("plan.toml"), plan.to_toml())?;
            if !out.failures.is_empty() {
                log::warn!("{} cells failed; see failures.csv", out.failures.len());
            }
            Ok(EXIT_OK)
        }
        Command::Gridsearch(args) => {
            let config = args.settings.apply(base_config(config_path, SolverConfig::default())?)?;
            let inst = Instance::load(&args.instance)?;
            let axis = LogAxis::new(args.min_exp, args.max_exp, args.points)?;
            let family = args.penalty.penalty.to_ascii_lowercase();
            let specs = candidates(
                &family,
                axis,
                args.penalty.p.unwrap_or(0.75),
                args.penalty.q.unwrap_or(2.0),
                &args.a_values,
            )?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(args.jobs.unwrap_or(0))
                .build()
                .map_err(|e| SpoqError::Config(format!("worker pool: {e}")))?;
            let res = pool.install(|| grid_search(&inst, &specs, args.solver, &config))?;
            std::fs::create_dir_all(&args.out)?;
            write_csv(&args.out.join("grid.csv"), &res.points, &[])?;
            let slices: Vec<SensitivityRow> = res
                .sensitivity()
                .into_iter()
                .map(|(axis, g)| SensitivityRow {
                    axis,
                    value: match axis {
                        "alpha" => g.alpha,
                        "beta" => g.beta,
                        "eta" => g.eta,
                        "a" => g.a,
                        _ => g.delta,
                    }
                    .unwrap_or(f64::NAN),
                    snr_db: g.snr_db,
                    penalty_id: g.penalty_id.clone(),
                })
                .collect();
            write_csv(
                &args.out.join("sensitivity.csv"),
                &slices,
                &["axis", "value", "snr_db", "penalty_id"],
            )?;
            let Some(best) = res.best_point() else {
                return Err(SpoqError::Domain("every grid point failed; see grid.csv".into()));
            };
            let summary = serde_json::json!({
                "penalty": best.spec,
                "penalty_id": best.penalty_id,
                "snr_db": best.snr_db,
                "tsnr_db": best.tsnr_db,
                "sparsity_estimate": best.sparsity_estimate,
                "config_hash": best.config_hash,
            });
            std::fs::write(
                args.out.join("best.json"),
                serde_json::to_string_pretty(&summary).expect("plain JSON") + "\n",
            )?;
            println!("{} {:.2} dB", best.penalty_id, best.snr_db);
            Ok(EXIT_OK)
        }
        Command::Defaults(args) => {
            let mut plan = if args.small { ExperimentPlan::small() } else { ExperimentPlan::default() };
            plan.solver = base_config(config_path, plan.solver)?;
            print!("{}", plan.to_toml());
            Ok(EXIT_OK)
        }
    }
}

#[derive(Debug, serde::Serialize)]
struct SensitivityRow {
    axis: &'static str,
    value: f64,
    snr_db: f64,
    penalty_id: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_flags_build_specs() {
        let mut args = PenaltyArgs {
            penalty: "spoq".into(),
            ..PenaltyArgs::default()
        };
        assert_eq!(
            args.to_spec().unwrap(),
            PenaltySpec::Spoq(SpoqParams::ms_preset(0.75, 2.0).unwrap())
        );
        args.penalty = "cauchy".into();
        assert!(matches!(args.to_spec(), Err(SpoqError::Config(_))));
        args.delta = Some(2.0);
        assert_eq!(args.to_spec().unwrap(), PenaltySpec::Cauchy { delta: 2.0 });
        args.penalty = "scad".into();
        args.a = Some(1.0);
        assert!(matches!(args.to_spec(), Err(SpoqError::InvalidParameter(_))));
        args.penalty = "tv".into();
        assert!(args.to_spec().is_err());
    }

    #[test]
    fn settings_override_and_validate() {
        let s = SettingsArgs {
            theta: Some(0.3),
            trials: Some(4),
            ..SettingsArgs::default()
        };
        let c = s.apply(SolverConfig::default()).unwrap();
        assert_eq!((c.theta, c.trials), (0.3, 4));
        let bad = SettingsArgs {
            gamma: Some(2.5),
            ..SettingsArgs::default()
        };
        assert!(bad.apply(SolverConfig::default()).is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            EXIT_OK,
            EXIT_FAILURE,
            EXIT_MAX_ITERATIONS,
            EXIT_INPUT,
            EXIT_STALLED,
        ];
        for (i, a) in codes.iter().enumerate() {
            for b in &codes[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(exit_code_for(&SpoqError::Config("x".into())), EXIT_INPUT);
        assert_eq!(exit_code_for_stop(StopReason::MaxIterations), EXIT_MAX_ITERATIONS);
    }

    #[test]
    fn unknown_flags_are_input_errors() {
        assert_eq!(main_with_args(["spoq", "solve", "--bogus"]), EXIT_INPUT);
        assert_eq!(main_with_args(["spoq", "--help"]), EXIT_OK);
    }
}
