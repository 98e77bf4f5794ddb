//! The expectation identity behind the kernel estimator: for x drawn from a
//! task at fixed length with that task's exact moment matrix,
//! E[⟨vec(T_test), Σ⁻¹ vec(T_x)⟩ vec(T_x)] = vec(T_test). Verified by a
//! sample-size ladder of Monte-Carlo averages.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::hmm::sample_sequence_with;
use crate::mat::dot;
use crate::operator::{moment_matrix, operator_of, relative_lambda, ridge_inverse, MomentEstimator};
use crate::report::{Cell, Csv};
use crate::rng::{derive_seed, rng_from_seed, streams};

use super::{Lab, SummaryHeader};

#[derive(Debug, Clone, Serialize)]
pub struct IdentitySeedResult {
    pub seed_index: u64,
    /// Relative L2 error against vec(T_test) at each ladder point.
    pub errors: Vec<f64>,
    pub monotone_decreasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    #[serde(flatten)]
    pub header: SummaryHeader,
    pub length: usize,
    pub lambda_abs: f64,
    pub ladder: Vec<u64>,
    pub results: Vec<IdentitySeedResult>,
    pub max_final_error: f64,
    pub monotone_seeds: u64,
    pub pass_final_tolerance: bool,
    pub pass_monotone: bool,
}

pub fn run(lab: &Lab) -> Result<IdentityReport> {
    let cfg = &lab.config.identity;
    let run = &lab.config.run;
    let task = cfg.task;
    let init = lab.hmm.task_init(task)?;
    let cap = match run.sigma_estimator {
        MomentEstimator::Exact { cap } => cap,
        _ => 5_000_000,
    };
    // the identity is a statement about the exact moment matrix
    let sigma = moment_matrix(
        &lab.hmm,
        &init,
        &format!("task{task}"),
        cfg.length,
        MomentEstimator::Exact { cap },
    )?;
    let lambda_abs = relative_lambda(&sigma.sigma, cfg.lambda);
    let inv = ridge_inverse(&sigma, lambda_abs)?;

    let n_max = *cfg.ladder.last().expect("validated nonempty");
    let results: Vec<IdentitySeedResult> = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| -> Result<IdentitySeedResult> {
            let mut test_rng =
                rng_from_seed(derive_seed(run.root_seed, streams::IDENTITY, 2 * s + 1));
            let x_test = sample_sequence_with(&lab.hmm, &init, cfg.length, &mut test_rng);
            let vec_test = operator_of(&lab.hmm, x_test.tokens())?.flatten();
            let test_norm = dot(&vec_test, &vec_test).sqrt();

            let mut rng = rng_from_seed(derive_seed(run.root_seed, streams::IDENTITY, 2 * s));
            let mut acc = vec![0.0f64; vec_test.len()];
            let mut errors = Vec::with_capacity(cfg.ladder.len());
            let mut next = 0usize;
            for i in 1..=n_max {
                let x = sample_sequence_with(&lab.hmm, &init, cfg.length, &mut rng);
                let v = operator_of(&lab.hmm, x.tokens())?.flatten();
                let w = dot(&vec_test, &inv.vecmul_right(&v));
                for (a, &vi) in acc.iter_mut().zip(&v) {
                    *a += w * vi;
                }
                if next < cfg.ladder.len() && i == cfg.ladder[next] {
                    let n = i as f64;
                    let err2: f64 = acc
                        .iter()
                        .zip(&vec_test)
                        .map(|(a, t)| (a / n - t) * (a / n - t))
                        .sum();
                    errors.push(err2.sqrt() / test_norm);
                    next += 1;
                }
            }
            let monotone = errors.windows(2).all(|w| w[1] < w[0]);
            Ok(IdentitySeedResult { seed_index: s, errors, monotone_decreasing: monotone })
        })
        .collect::<Result<Vec<_>>>()?;

    let max_final_error = results
        .iter()
        .map(|r| *r.errors.last().unwrap())
        .fold(0.0f64, f64::max);
    let monotone_seeds = results.iter().filter(|r| r.monotone_decreasing).count() as u64;

    Ok(IdentityReport {
        header: SummaryHeader::new(lab),
        length: cfg.length,
        lambda_abs,
        ladder: cfg.ladder.clone(),
        max_final_error,
        monotone_seeds,
        pass_final_tolerance: max_final_error <= cfg.tolerance,
        pass_monotone: monotone_seeds >= cfg.min_monotone_seeds,
        results,
    })
}

pub fn to_csv(report: &IdentityReport) -> Csv {
    let mut csv = Csv::new(vec!["seed_index", "samples", "rel_l2_error"]);
    for r in &report.results {
        for (point, err) in report.ladder.iter().zip(&r.errors) {
            csv.push(vec![Cell::UInt(r.seed_index), Cell::UInt(*point), Cell::Float(*err)]);
        }
    }
    csv
}
