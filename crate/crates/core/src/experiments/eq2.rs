//! Operator-vs-forward equivalence sweep: random dense HMMs, random
//! initial distributions and sequences, and the maximum relative deviation
//! between the two likelihood routes.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::Eq2Config;
use crate::error::Result;
use crate::hmm::{forward_likelihood, operator_likelihood, sample_sequence_with, Hmm};
use crate::mat::Mat;
use crate::rng::{derive_seed, rng_from_seed, streams, Rng};

#[derive(Debug, Clone, Serialize)]
pub struct Eq2Report {
    pub hmm_count: usize,
    pub sequences_checked: u64,
    pub max_relative_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn dirichlet_row(rng: &mut Rng, n: usize) -> Vec<f64> {
    use rand::Rng as _;
    let raw: Vec<f64> = (0..n).map(|_| -(rng.gen::<f64>().max(1e-12)).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

/// Dense random HMM for equivalence sweeps (single nominal task; the
/// likelihood routes are tested under arbitrary initial distributions).
pub fn random_dense_hmm(d: usize, m: usize, seed: u64) -> Hmm {
    let mut rng = rng_from_seed(seed);
    let t = Mat::from_rows(&(0..d).map(|_| dirichlet_row(&mut rng, d)).collect::<Vec<_>>())
        .expect("rows");
    let b = Mat::from_rows(&(0..d).map(|_| dirichlet_row(&mut rng, m)).collect::<Vec<_>>())
        .expect("rows");
    let mut init = vec![0.0; d];
    init[0] = 1.0;
    let delimiter = 0;
    let label = if m > 1 { 1 } else { 0 };
    Hmm::new(d, m, t, b, vec![0], init, delimiter, vec![label]).expect("valid random hmm")
}

pub fn run(cfg: &Eq2Config, root_seed: u64) -> Result<Eq2Report> {
    let stats: Vec<(u64, f64)> = (0..cfg.hmm_count as u64)
        .into_par_iter()
        .map(|i| -> Result<(u64, f64)> {
            let seed = derive_seed(root_seed, streams::EQ2, i);
            let mut rng = rng_from_seed(seed);
            use rand::Rng as _;
            let d = rng.gen_range(1..=cfg.max_states);
            let m = rng.gen_range(2..=cfg.max_obs);
            let hmm = random_dense_hmm(d, m, seed ^ 0x9e37_79b9);
            let mut worst = 0.0f64;
            let mut count = 0u64;
            for _ in 0..cfg.sequences_per_hmm {
                let init = dirichlet_row(&mut rng, d);
                let len = rng.gen_range(1..=cfg.max_len);
                // half sampled from the model, half uniform token noise
                let seq = if rng.gen::<bool>() {
                    sample_sequence_with(&hmm, &init, len, &mut rng).0
                } else {
                    (0..len).map(|_| rng.gen_range(0..m)).collect()
                };
                let f = forward_likelihood(&hmm, &init, &seq)?;
                let o = operator_likelihood(&hmm, &init, &seq)?;
                let dev = if f > 0.0 { (f - o).abs() / f } else { o.abs() };
                if dev > worst {
                    worst = dev;
                }
                count += 1;
            }
            Ok((count, worst))
        })
        .collect::<Result<Vec<_>>>()?;

    let sequences_checked = stats.iter().map(|s| s.0).sum();
    let max_relative_deviation = stats.iter().map(|s| s.1).fold(0.0f64, f64::max);
    Ok(Eq2Report {
        hmm_count: cfg.hmm_count,
        sequences_checked,
        max_relative_deviation,
        tolerance: cfg.tolerance,
        pass: max_relative_deviation <= cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_passes_at_default_tolerance() {
        let cfg = Eq2Config { hmm_count: 20, ..Eq2Config::default() };
        let report = run(&cfg, 7).unwrap();
        assert!(report.pass, "max deviation {}", report.max_relative_deviation);
        assert_eq!(report.sequences_checked, 20 * cfg.sequences_per_hmm as u64);
    }

    #[test]
    fn sweep_is_deterministic() {
        let cfg = Eq2Config { hmm_count: 5, ..Eq2Config::default() };
        let a = run(&cfg, 3).unwrap();
        let b = run(&cfg, 3).unwrap();
        assert_eq!(a.max_relative_deviation, b.max_relative_deviation);
    }
}
