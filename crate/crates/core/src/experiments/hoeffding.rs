//! Empirical coverage of the concentration envelope on the unnormalized
//! kernel average: ‖ŷ − P(y | x_test, θ*)‖_∞ ≤ √(ln(4m/δ)/(2n)) + η²ε_θ,
//! with ŷ = (1/n) Σ w_i e(y_i) and weights taken against the task's own
//! exact moment matrices (the proof-step premise). The comparison target is
//! the label-restricted conditional, the same quantity the margin Δ is
//! defined on.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::hmm::{build_prompt, label_conditional};
use crate::operator::{InitKey, SigmaCache};
use crate::predict::kernel_weights;
use crate::report::{Cell, Csv};
use crate::rng::{derive_seed, streams};
use crate::stats::binomial_se;

use super::{Lab, SummaryHeader};

#[derive(Debug, Clone, Serialize)]
pub struct HoeffdingRow {
    pub n: usize,
    pub trials: u64,
    pub bound: f64,
    pub covered: u64,
    pub coverage: f64,
    pub required_coverage: f64,
    pub pass: bool,
    pub mean_max_err: f64,
    pub median_max_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HoeffdingReport {
    #[serde(flatten)]
    pub header: SummaryHeader,
    pub delta_prob: f64,
    pub eta: f64,
    pub epsilon_theta: f64,
    pub rows: Vec<HoeffdingRow>,
    pub pass_all: bool,
    /// median error at the largest n does not exceed the median at the
    /// smallest n
    pub median_decreases: bool,
}

pub fn run(lab: &Lab) -> Result<HoeffdingReport> {
    let cfg = &lab.config.hoeffding;
    let run = &lab.config.run;
    let m = lab.hmm.num_obs() as f64;
    let delta = run.delta_prob;
    let eta = lab.report.eta;
    let eps_theta = lab.report.max_epsilon_theta();
    let deviation_term = eta * eta * eps_theta;

    let cache = SigmaCache::new(&lab.hmm, run.lambda, run.sigma_estimator);
    let num_tasks = lab.hmm.num_tasks();
    for l in run.demo_length.support() {
        for t in 0..num_tasks {
            cache.inverse(InitKey::Task(t), l)?;
        }
    }

    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    for (n_idx, &n) in cfg.n_grid.iter().enumerate() {
        let bound = ((4.0 * m / delta).ln() / (2.0 * n as f64)).sqrt() + deviation_term;
        let errs: Vec<f64> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| -> Result<f64> {
                let task = (t % num_tasks as u64) as usize;
                let seed =
                    derive_seed(run.root_seed, streams::HOEFFDING, ((n_idx as u64) << 40) | t);
                let prompt = build_prompt(&lab.hmm, task, n, run.demo_length, seed)?;
                let weights = kernel_weights(&lab.hmm, &prompt, &cache, InitKey::Task(task))?;
                // unnormalized kernel average on label coordinates
                let labels = lab.hmm.label_set();
                let mut y_hat = vec![0.0f64; labels.len()];
                for ((_, y), &w) in prompt.demos.iter().zip(&weights) {
                    let idx = labels.iter().position(|l| l == y).expect("label in set");
                    y_hat[idx] += w / n as f64;
                }
                let init = lab.hmm.task_init(task)?;
                let truth = label_conditional(&lab.hmm, &init, prompt.test_input.tokens())?;
                let err = y_hat
                    .iter()
                    .zip(&truth)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                Ok(err)
            })
            .collect::<Result<Vec<_>>>()?;

        let covered = errs.iter().filter(|&&e| e <= bound).count() as u64;
        let coverage = covered as f64 / cfg.trials as f64;
        let target = 1.0 - delta / 2.0;
        let required = target - 2.0 * binomial_se(target, cfg.trials);
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let mut sorted = errs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        rows.push(HoeffdingRow {
            n,
            trials: cfg.trials,
            bound,
            covered,
            coverage,
            required_coverage: required,
            pass: coverage >= required,
            mean_max_err: mean,
            median_max_err: median,
        });
    }

    let pass_all = rows.iter().all(|r| r.pass);
    let median_decreases = rows.len() < 2
        || rows.last().unwrap().median_max_err <= rows.first().unwrap().median_max_err;

    Ok(HoeffdingReport {
        header: SummaryHeader::new(lab),
        delta_prob: delta,
        eta,
        epsilon_theta: eps_theta,
        rows,
        pass_all,
        median_decreases,
    })
}

pub fn to_csv(report: &HoeffdingReport) -> Csv {
    let mut csv = Csv::new(vec![
        "n",
        "trials",
        "bound",
        "coverage",
        "required_coverage",
        "pass",
        "mean_max_err",
        "median_max_err",
    ]);
    for r in &report.rows {
        csv.push(vec![
            Cell::UInt(r.n as u64),
            Cell::UInt(r.trials),
            Cell::Float(r.bound),
            Cell::Float(r.coverage),
            Cell::Float(r.required_coverage),
            Cell::Bool(r.pass),
            Cell::Float(r.mean_max_err),
            Cell::Float(r.median_max_err),
        ]);
    }
    csv
}
