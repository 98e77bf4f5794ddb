//! Pre-registered statistical tests used by the experiment reports:
//! binomial standard errors, the pooled two-proportion z test, and the
//! exact sign test. Nothing here corrects for multiple comparisons; each
//! report names the single test it runs.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

pub fn normal_cdf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(z)
}

/// sqrt(p(1-p)/n)
pub fn binomial_se(p_hat: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoProportion {
    pub p_a: f64,
    pub p_b: f64,
    pub z: f64,
    /// P(observing a gap this large in favor of A) under p_a = p_b.
    pub p_one_sided: f64,
    pub p_two_sided: f64,
}

/// Pooled two-proportion z test of H1: p_a > p_b.
pub fn two_proportion_z(successes_a: u64, n_a: u64, successes_b: u64, n_b: u64) -> TwoProportion {
    let pa = successes_a as f64 / n_a as f64;
    let pb = successes_b as f64 / n_b as f64;
    let pooled = (successes_a + successes_b) as f64 / (n_a + n_b) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    let z = if se > 0.0 {
        (pa - pb) / se
    } else if pa == pb {
        0.0
    } else if pa > pb {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    let p_one = 1.0 - normal_cdf(z);
    let p_two = 2.0 * (1.0 - normal_cdf(z.abs()));
    TwoProportion { p_a: pa, p_b: pb, z, p_one_sided: p_one, p_two_sided: p_two.min(1.0) }
}

/// Exact one-sided sign test: P(X >= wins) for X ~ Binomial(wins+losses, 1/2).
/// Ties are dropped by the caller.
pub fn sign_test_one_sided(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let bin = Binomial::new(0.5, n).unwrap();
    if wins == 0 {
        return 1.0;
    }
    1.0 - bin.cdf(wins - 1)
}

/// 95% normal-approximation CI for p_a − p_b (unpooled).
pub fn diff_ci_95(successes_a: u64, n_a: u64, successes_b: u64, n_b: u64) -> (f64, f64) {
    let pa = successes_a as f64 / n_a as f64;
    let pb = successes_b as f64 / n_b as f64;
    let se = (pa * (1.0 - pa) / n_a as f64 + pb * (1.0 - pb) / n_b as f64).sqrt();
    let d = pa - pb;
    (d - 1.96 * se, d + 1.96 * se)
}
