//! Canonical run configurations for each verification suite. The shipped
//! TOML files under `configs/` are renderings of these; the acceptance
//! suite runs exactly these. Tuned once and frozen: changing anything here
//! changes the reference artifacts.

use crate::assumptions::HmmSpec;
use crate::config::{AblationKind, ExperimentConfig, HmmSource};
use crate::hmm::DemoLengthPolicy;

/// The central instance: 3 tasks, 3 states per task, 12 tokens, shared
/// anchors (finite distinguishability), constant per-task margins.
pub fn default_hmm_spec() -> HmmSpec {
    HmmSpec::default()
}

/// Theorem-1 agreement curves on the default instance, demo length 6,
/// n grid 1..64, 500 trials per point.
pub fn agreement_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.run.n_grid = vec![1, 2, 4, 8, 16, 32, 64];
    cfg.run.trials = 500;
    cfg
}

/// Task-posterior concentration on the default instance at n = n_delta.
pub fn concentration_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.concentration.trials = 200;
    cfg.concentration.n = None; // resolved to the instance's n_delta
    cfg
}

/// Expectation-identity ladder on a single-task d = 3 instance with enough
/// operator diversity for the 1/sqrt(N) trend to be visible above the
/// Monte-Carlo floor.
pub fn identity_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.hmm = HmmSource::Generate {
        spec: HmmSpec {
            num_tasks: 1,
            d_per_task: 3,
            m: 8,
            filler_jitter: 0.3,
            ..HmmSpec::default()
        },
        generation_seed: 1,
    };
    cfg.run.demo_length = DemoLengthPolicy::Fixed { length: 6 };
    cfg.assumptions.kl_length = 6;
    cfg.assumptions.margin_length = 6;
    cfg.identity.length = 6;
    cfg.identity.lambda = 1e-10;
    cfg.identity.ladder = vec![1_000, 10_000, 100_000];
    cfg.identity.seeds = 10;
    cfg
}

/// Concentration-envelope coverage. Single-token demonstrations on a
/// single-task instance with a small delimiter floor keep the kernel
/// weights in the bounded regime the envelope presumes: the operator
/// family is two near-atoms, the task-exact moment matrix expresses both,
/// and per-atom weight means are exactly 1.
pub fn hoeffding_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.hmm = HmmSource::Generate {
        spec: HmmSpec {
            num_tasks: 1,
            d_per_task: 2,
            m: 8,
            epsilon_r_target: 0.25,
            epsilon_d_target: 0.02,
            label_share: 0.1,
            filler_jitter: 0.0,
            ..HmmSpec::default()
        },
        generation_seed: 1,
    };
    cfg.run.demo_length = DemoLengthPolicy::Fixed { length: 1 };
    cfg.run.lambda = 1e-4;
    cfg.assumptions.kl_length = 3;
    cfg.assumptions.margin_length = 1;
    cfg.hoeffding.n_grid = vec![8, 32];
    cfg.hoeffding.trials = 2000;
    cfg
}

/// Similarity-retrieval ablation: the candidate pool spans the whole
/// pre-training mixture, so retrieval has to find the test task's own
/// demonstrations.
pub fn retrieval_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.ablation.kind = Some(AblationKind::Retrieval);
    cfg.ablation.n = 8;
    cfg.ablation.pool_factor = 5;
    cfg.ablation.trials = 500;
    cfg
}

/// Label-format ablation: a fixed rotation of the label set applied to
/// demonstration labels only.
pub fn label_permute_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.ablation.kind = Some(AblationKind::LabelPermute);
    cfg.ablation.n = 8;
    cfg.ablation.trials = 500;
    cfg
}

/// Out-of-distribution ablation at n = 32: demonstrations from task 0,
/// test inputs from the remaining tasks.
pub fn ood_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.ablation.kind = Some(AblationKind::Ood { source_task: 0 });
    cfg.ablation.n = 32;
    cfg.ablation.trials = 500;
    cfg
}

/// Operator-vs-forward equivalence sweep over random dense models.
pub fn eq2_config() -> ExperimentConfig {
    ExperimentConfig::default()
}

/// Variant registry for config-file generation and lookups.
pub fn all() -> Vec<(&'static str, ExperimentConfig)> {
    vec![
        ("agreement", agreement_config()),
        ("concentration", concentration_config()),
        ("identity", identity_config()),
        ("hoeffding", hoeffding_config()),
        ("ablation-retrieval", retrieval_config()),
        ("ablation-label-permute", label_permute_config()),
        ("ablation-ood", ood_config()),
        ("eq2", eq2_config()),
    ]
}
