//! Experiment plans: which datasets, penalties, seeds and sweeps to run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoqError};
use crate::experiment::SolverKind;
use crate::msdata::{DatasetPreset, DictionarySpec};
use crate::penalties::{PenaltySpec, SpoqParams};
use crate::solvers::SolverConfig;

/// One penalty in the grid, optionally pinned to a solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyEntry {
    #[serde(flatten)]
    pub spec: PenaltySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverKind>,
}

impl PenaltyEntry {
    pub fn new(spec: PenaltySpec) -> Self {
        Self { spec, solver: None }
    }

    pub fn solver(&self) -> SolverKind {
        self.solver.unwrap_or_else(|| SolverKind::default_for(&self.spec))
    }
}

/// Estimated against true sparsity for SPOQ with several `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparsitySweep {
    pub sizes: Vec<usize>,
    pub p: Vec<f64>,
    pub q: f64,
    pub seeds: u64,
    pub noise_percent: f64,
}

impl Default for SparsitySweep {
    fn default() -> Self {
        Self {
            sizes: vec![10, 20, 48, 94, 182, 256, 323, 388],
            p: vec![0.25, 0.75, 1.0],
            q: 2.0,
            seeds: 10,
            noise_percent: 0.1,
        }
    }
}

/// SNR against wall time for the SPOQ solvers on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceRun {
    pub seed: u64,
    pub noise_percent: f64,
    pub p: f64,
    pub q: f64,
    pub solvers: Vec<SolverKind>,
}

impl Default for ConvergenceRun {
    fn default() -> Self {
        Self {
            seed: 0,
            noise_percent: 0.1,
            p: 0.75,
            q: 2.0,
            solvers: vec![SolverKind::Trvmfb, SolverKind::Vmfb, SolverKind::Fb],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub preset: DatasetPreset,
    /// Replaces the preset dictionary when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<DictionarySpec>,
    /// Replaces the preset number of nonzeros when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_nonzero: Option<usize>,
    pub noise_percent: Vec<f64>,
    pub seeds: u64,
    pub first_seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub solver: SolverConfig,
    #[serde(rename = "penalty")]
    pub penalties: Vec<PenaltyEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sparsity_sweep: Option<SparsitySweep>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceRun>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        let spoq = SpoqParams::ms_preset(0.75, 2.0).expect("preset parameters are valid");
        Self {
            preset: DatasetPreset::A,
            dictionary: None,
            n_nonzero: None,
            noise_percent: vec![0.1, 0.2],
            seeds: 10,
            first_seed: 0,
            jobs: 0,
            solver: SolverConfig::default(),
            penalties: default_penalties(spoq),
            sparsity_sweep: None,
            convergence: None,
        }
    }
}

/// Penalties compared in the default plan. Baseline shape parameters are
/// the grid-search optimum on a held-out dataset-A instance (seed 100).
pub fn default_penalties(spoq: SpoqParams) -> Vec<PenaltyEntry> {
    vec![
        PenaltyEntry::new(PenaltySpec::Spoq(spoq)),
        PenaltyEntry::new(PenaltySpec::L1),
        PenaltyEntry::new(PenaltySpec::L0),
        PenaltyEntry::new(PenaltySpec::Scad { delta: 3.16, a: 2.5 }),
        PenaltyEntry::new(PenaltySpec::Cauchy { delta: 100.0 }),
        PenaltyEntry::new(PenaltySpec::Welsch { delta: 0.1 }),
        PenaltyEntry::new(PenaltySpec::Cel0 { delta: 1.0 }),
    ]
}

impl ExperimentPlan {
    /// Scaled-down plan for quick runs.
    pub fn small() -> Self {
        Self {
            preset: DatasetPreset::Small,
            ..Self::default()
        }
    }

    pub fn dictionary_spec(&self) -> DictionarySpec {
        self.dictionary.unwrap_or_else(|| self.preset.spec())
    }

    pub fn nonzeros(&self) -> usize {
        self.n_nonzero.unwrap_or_else(|| self.preset.n_nonzero())
    }

    pub fn seed_range(&self) -> std::ops::Range<u64> {
        self.first_seed..self.first_seed + self.seeds
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.dictionary_spec().validate()?;
        for e in &self.penalties {
            e.spec.validate()?;
            if !e.solver().supports(&e.spec) {
                return Err(SpoqError::Config(format!(
                    "solver {} cannot run penalty {}",
                    e.solver().name(),
                    e.spec.id()
                )));
            }
        }
        if let Some(&nl) = self.noise_percent.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(SpoqError::Config(format!("noise levels must be positive, got {nl}")));
        }
        if let Some(sweep) = &self.sparsity_sweep {
            for &p in &sweep.p {
                SpoqParams::ms_preset(p, sweep.q)?;
            }
            if sweep.noise_percent <= 0.0 {
                return Err(SpoqError::Config("sweep noise level must be positive".into()));
            }
        }
        if let Some(conv) = &self.convergence {
            SpoqParams::ms_preset(conv.p, conv.q)?;
            if let Some(k) = conv.solvers.iter().find(|k| matches!(k, SolverKind::Pd | SolverKind::Hq)) {
                return Err(SpoqError::Config(format!(
                    "convergence runs compare SPOQ solvers, got {}",
                    k.name()
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plans serialize to TOML")
    }
}

/// Solver settings from a TOML file with one key per field.
pub fn load_solver_config(path: impl AsRef<Path>) -> Result<SolverConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: SolverConfig = toml::from_str(&text).map_err(|e| toml_error(&text, &e))?;
    config.validate()?;
    Ok(config)
}

fn toml_error(text: &str, e: &toml::de::Error) -> SpoqError {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
        .unwrap_or(0);
    SpoqError::Parse {
        line,
        msg: e.message().to_string(),
    }
}
