//! Run configuration: one TOML file per run, fully validated, unknown keys
//! rejected. Every default is materialized on parse so the recorded config
//! (and its hash) pins the entire run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assumptions::{CheckOptions, HmmSpec};
use crate::error::{Error, Result};
use crate::hmm::DemoLengthPolicy;
use crate::operator::MomentEstimator;
use crate::predict::NormalizationDomain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HmmSource {
    /// Generate from a constructive spec with `generation_seed`.
    Generate { spec: HmmSpec, generation_seed: u64 },
    /// Load from the structured text format.
    File { path: String },
}

impl Default for HmmSource {
    fn default() -> Self {
        HmmSource::Generate { spec: HmmSpec::default(), generation_seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub root_seed: u64,
    pub trials: u64,
    pub n_grid: Vec<usize>,
    pub delta_prob: f64,
    /// Ridge weight for predictor moment matrices, relative to trace/dim.
    pub lambda: f64,
    pub demo_length: DemoLengthPolicy,
    pub allow_noncompliant: bool,
    pub sigma_estimator: MomentEstimator,
    pub normalize_over: NormalizationDomain,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            root_seed: 42,
            trials: 500,
            n_grid: vec![1, 2, 4, 8, 16, 32, 64],
            delta_prob: 0.1,
            // large enough to clip kernel-weight spikes from thin moment
            // directions, small enough to leave the leading spectrum intact
            lambda: 3e-2,
            demo_length: DemoLengthPolicy::Fixed { length: 6 },
            allow_noncompliant: false,
            sigma_estimator: MomentEstimator::Exact { cap: 5_000_000 },
            normalize_over: NormalizationDomain::Labels,
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config {
                path: "run.trials".into(),
                message: "trials must be >= 1".into(),
            });
        }
        if self.n_grid.is_empty() {
            return Err(Error::Config {
                path: "run.n_grid".into(),
                message: "n_grid must be nonempty".into(),
            });
        }
        if !self.n_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config {
                path: "run.n_grid".into(),
                message: "n_grid must be strictly increasing".into(),
            });
        }
        if !(self.delta_prob > 0.0 && self.delta_prob <= 1.0) {
            return Err(Error::Config {
                path: "run.delta_prob".into(),
                message: "delta_prob must lie in (0, 1]".into(),
            });
        }
        if self.lambda < 0.0 {
            return Err(Error::Config {
                path: "run.lambda".into(),
                message: "lambda must be >= 0".into(),
            });
        }
        self.demo_length.validate().map_err(|e| Error::Config {
            path: "run.demo_length".into(),
            message: e.to_string(),
        })
    }
}

/// Expectation-identity suite settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentityConfig {
    pub ladder: Vec<u64>,
    pub seeds: u64,
    pub length: usize,
    pub lambda: f64,
    pub task: usize,
    pub tolerance: f64,
    pub min_monotone_seeds: u64,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        IdentityConfig {
            ladder: vec![1_000, 10_000, 100_000],
            seeds: 10,
            length: 4,
            lambda: 1e-10,
            task: 0,
            tolerance: 0.05,
            min_monotone_seeds: 8,
        }
    }
}

/// Hoeffding-envelope suite settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoeffdingConfig {
    pub n_grid: Vec<usize>,
    pub trials: u64,
}

impl Default for HoeffdingConfig {
    fn default() -> Self {
        HoeffdingConfig { n_grid: vec![8, 32], trials: 2000 }
    }
}

/// Task-posterior concentration suite settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcentrationConfig {
    pub trials: u64,
    /// Demonstration count; defaults to the instance's n_delta.
    pub n: Option<usize>,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig { trials: 200, n: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AblationKind {
    Retrieval,
    LabelPermute,
    Ood { source_task: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub kind: Option<AblationKind>,
    pub n: usize,
    pub trials: u64,
    /// Retrieval pool holds pool_factor * n candidates.
    pub pool_factor: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { kind: None, n: 8, trials: 500, pool_factor: 5 }
    }
}

/// Random-model sweep for the operator-vs-forward equivalence check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Eq2Config {
    pub hmm_count: usize,
    pub max_states: usize,
    pub max_obs: usize,
    pub max_len: usize,
    pub sequences_per_hmm: usize,
    pub tolerance: f64,
}

impl Default for Eq2Config {
    fn default() -> Self {
        Eq2Config {
            hmm_count: 200,
            max_states: 8,
            max_obs: 10,
            max_len: 12,
            sequences_per_hmm: 10,
            tolerance: 1e-10,
        }
    }
}

/// The whole run configuration; the CLI subcommand picks the sections it
/// needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub hmm: HmmSource,
    pub run: RunConfig,
    pub assumptions: CheckOptions,
    pub identity: IdentityConfig,
    pub hoeffding: HoeffdingConfig,
    pub concentration: ConcentrationConfig,
    pub ablation: AblationConfig,
    pub eq2: Eq2Config,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        if let HmmSource::Generate { spec, .. } = &self.hmm {
            spec.validate().map_err(|e| Error::Config {
                path: "hmm.spec".into(),
                message: e.to_string(),
            })?;
        }
        if self.identity.ladder.is_empty()
            || !self.identity.ladder.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::Config {
                path: "identity.ladder".into(),
                message: "ladder must be nonempty and strictly increasing".into(),
            });
        }
        if self.hoeffding.n_grid.is_empty()
            || !self.hoeffding.n_grid.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::Config {
                path: "hoeffding.n_grid".into(),
                message: "n_grid must be nonempty and strictly increasing".into(),
            });
        }
        Ok(())
    }

    pub fn from_toml_str(file: &str, text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: file.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = crate::textfmt::read_to_string(path)?;
        Self::from_toml_str(&path.display().to_string(), &text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
