//! Experiment orchestration: every suite is a pure function of
//! (config, root seed). Trials run data-parallel with per-trial derived
//! seeds and are reduced in trial order, so parallel and serial runs emit
//! identical reports.

pub mod ablation;
pub mod agreement;
pub mod concentration;
pub mod eq2;
pub mod hoeffding;
pub mod identity;

use serde::Serialize;

use crate::assumptions::{check_assumptions, generate_compliant_hmm, AssumptionReport};
use crate::config::{ExperimentConfig, HmmSource};
use crate::error::{Error, Result};
use crate::hmm::Hmm;

/// A prepared experiment: the resolved HMM plus its assumption report,
/// after the compliance gate.
pub struct Lab {
    pub hmm: Hmm,
    pub report: AssumptionReport,
    pub config: ExperimentConfig,
}

/// Resolve the HMM, measure the assumptions, and refuse non-compliant
/// instances unless the config overrides. The refusal error carries the
/// report.
pub fn prepare(config: &ExperimentConfig) -> Result<Lab> {
    let hmm = resolve_hmm(config)?;
    let report = check_assumptions(&hmm, &config.assumptions)?;
    if !report.compliant() && !config.run.allow_noncompliant {
        return Err(Error::NonCompliant {
            violations: report.violations().join("; "),
            report_json: serde_json::to_string_pretty(&report).expect("report serializes"),
        });
    }
    Ok(Lab { hmm, report, config: config.clone() })
}

pub fn resolve_hmm(config: &ExperimentConfig) -> Result<Hmm> {
    match &config.hmm {
        HmmSource::Generate { spec, generation_seed } => {
            generate_compliant_hmm(spec, *generation_seed)
        }
        HmmSource::File { path } => crate::textfmt::load_hmm(std::path::Path::new(path)),
    }
}

/// Shared header prepended to every suite summary: the config hash and the
/// assumption report make outputs self-describing.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryHeader {
    pub config_hash: String,
    pub root_seed: u64,
    pub assumption_report: AssumptionReport,
}

impl SummaryHeader {
    pub fn new(lab: &Lab) -> Self {
        SummaryHeader {
            config_hash: crate::report::config_hash(&lab.config),
            root_seed: lab.config.run.root_seed,
            assumption_report: lab.report.clone(),
        }
    }
}
