//! Task-posterior concentration: per trial, the exact posterior mass on the
//! generating task's start state is compared against the closed-form lower
//! bound 1 − exp(−n·ε_KL + √(ln(4/δ)/n) + n·ln(1/ε_d) + (n+1)·ln(1/ε_r)
//! + ln(1/p₀_min)). The suite reports the violation rate and the first n at
//! which the bound becomes nontrivial.

use rayon::prelude::*;
use serde::Serialize;

use crate::assumptions::ExtReal;
use crate::error::{Error, Result};
use crate::hmm::build_prompt;
use crate::predict::task_posterior;
use crate::report::{Cell, Csv};
use crate::rng::{derive_seed, streams};
use crate::stats::binomial_se;

use super::{Lab, SummaryHeader};

/// Exponent of the concentration bound at demonstration count n.
pub fn bound_exponent(
    n: f64,
    epsilon_kl: f64,
    epsilon_d: f64,
    epsilon_r: f64,
    delta_prob: f64,
    p0_min: f64,
) -> f64 {
    -n * epsilon_kl
        + ((4.0 / delta_prob).ln() / n).sqrt()
        + n * (1.0 / epsilon_d).ln()
        + (n + 1.0) * (1.0 / epsilon_r).ln()
        + (1.0 / p0_min).ln()
}

/// 1 − exp(exponent); the +inf KL convention sends the bound to exactly 1.
pub fn posterior_bound(n: usize, lab_report: &crate::assumptions::AssumptionReport, delta_prob: f64) -> f64 {
    match lab_report.epsilon_kl {
        ExtReal::PosInf => 1.0,
        ExtReal::Finite(kl) => {
            let e = bound_exponent(
                n as f64,
                kl,
                lab_report.epsilon_d,
                lab_report.epsilon_r,
                delta_prob,
                lab_report.provenance.p0_min,
            );
            1.0 - e.exp()
        }
    }
}

/// Smallest n >= 1 with a strictly positive bound, scanning up to `limit`.
pub fn bound_positivity_onset(
    lab_report: &crate::assumptions::AssumptionReport,
    delta_prob: f64,
    limit: usize,
) -> Option<usize> {
    (1..=limit).find(|&n| posterior_bound(n, lab_report, delta_prob) > 0.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    #[serde(flatten)]
    pub header: SummaryHeader,
    pub n: usize,
    pub trials: u64,
    pub bound: f64,
    pub violations: u64,
    pub violation_rate: f64,
    pub allowed_rate: f64,
    pub pass: bool,
    pub bound_positivity_onset: Option<usize>,
    pub min_posterior: f64,
    pub median_posterior: f64,
}

pub fn run(lab: &Lab) -> Result<ConcentrationReport> {
    let cfg = &lab.config.concentration;
    let run = &lab.config.run;
    let n = match cfg.n {
        Some(n) => n,
        None => lab.report.n_delta.ok_or_else(|| Error::validation(
            "concentration.n not set and the instance has no defined n_delta",
        ))? as usize,
    };
    let delta = run.delta_prob;
    let bound = posterior_bound(n, &lab.report, delta);
    let num_tasks = lab.hmm.num_tasks();

    let posteriors: Vec<f64> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let task = (t % num_tasks as u64) as usize;
            let seed = derive_seed(run.root_seed, streams::CONCENTRATION, t);
            let prompt = build_prompt(&lab.hmm, task, n, run.demo_length, seed)?;
            let post = task_posterior(&lab.hmm, &prompt)?;
            Ok(post.probs[task])
        })
        .collect::<Result<Vec<_>>>()?;

    let violations = posteriors.iter().filter(|&&p| p < bound).count() as u64;
    let violation_rate = violations as f64 / cfg.trials as f64;
    let allowed = delta / 2.0 + 2.0 * binomial_se(delta / 2.0, cfg.trials);
    let mut sorted = posteriors.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    Ok(ConcentrationReport {
        header: SummaryHeader::new(lab),
        n,
        trials: cfg.trials,
        bound,
        violations,
        violation_rate,
        allowed_rate: allowed,
        pass: violation_rate <= allowed,
        bound_positivity_onset: bound_positivity_onset(&lab.report, delta, 100_000),
        min_posterior: sorted[0],
        median_posterior: sorted[sorted.len() / 2],
    })
}

pub fn to_csv(report: &ConcentrationReport) -> Csv {
    let mut csv = Csv::new(vec![
        "n",
        "trials",
        "bound",
        "violations",
        "violation_rate",
        "allowed_rate",
        "pass",
        "min_posterior",
        "median_posterior",
    ]);
    csv.push(vec![
        Cell::UInt(report.n as u64),
        Cell::UInt(report.trials),
        Cell::Float(report.bound),
        Cell::UInt(report.violations),
        Cell::Float(report.violation_rate),
        Cell::Float(report.allowed_rate),
        Cell::Bool(report.pass),
        Cell::Float(report.min_posterior),
        Cell::Float(report.median_posterior),
    ]);
    csv
}
