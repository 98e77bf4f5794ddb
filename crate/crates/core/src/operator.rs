//! Observable-operator algebra: per-sequence operators T_x, the second-moment
//! matrix Σ_{p,l} of their flattenings (exact enumeration or Monte-Carlo),
//! regularized inversion, spectral radius, the operator-norm bound η, and the
//! per-task deviation ε_θ.
//!
//! Σ here is the *uncentered* second moment E[vec(T_x) vec(T_x)ᵀ]; the
//! expectation identity E[⟨a, Σ⁻¹ vec(T_x)⟩ vec(T_x)] = a that the kernel
//! estimator rests on holds only for the uncentered moment.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{sample_sequence_with, Hmm, TokenSeq};
use crate::mat::{jacobi_eigenvalues, Cholesky, Mat};
use crate::rng::{derive_seed, rng_from_seed, streams};

/// The d×d operator T_x = ∏_i diag(p_{o_i}) T for a token sequence x.
#[derive(Debug, Clone)]
pub struct ObservableOperator {
    pub matrix: Mat,
    pub source_len: usize,
}

impl ObservableOperator {
    /// d²-vector flattening, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.matrix.flatten()
    }
}

/// Per-token step matrix diag(p_o) T.
fn step_matrix(hmm: &Hmm, o: usize) -> Mat {
    let d = hmm.num_states();
    Mat::from_fn(d, d, |i, j| hmm.emission().get(i, o) * hmm.transition().get(i, j))
}

fn step_matrices(hmm: &Hmm) -> Vec<Mat> {
    (0..hmm.num_obs()).map(|o| step_matrix(hmm, o)).collect()
}

/// T_x = ∏ diag(p_{o_i}) T over all tokens of `seq`; the empty sequence is
/// the identity operator.
pub fn operator_of(hmm: &Hmm, seq: &[usize]) -> Result<ObservableOperator> {
    TokenSeq(seq.to_vec()).validate(hmm.num_obs())?;
    let d = hmm.num_states();
    let mut m = Mat::identity(d);
    for &o in seq {
        m = m.matmul(&step_matrix(hmm, o));
    }
    Ok(ObservableOperator { matrix: m, source_len: seq.len() })
}

// ---------------------------------------------------------------------------
// Second-moment matrices
// ---------------------------------------------------------------------------

/// How a moment matrix was (or should be) estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MomentEstimator {
    /// Exact enumeration over all m^l sequences (zero-probability subtrees
    /// are pruned; they contribute nothing). Requires m^l <= cap.
    Exact { cap: u64 },
    /// Empirical mean of vec(T_x)vec(T_x)ᵀ over `samples` draws.
    MonteCarlo { samples: u64, seed: u64 },
}

/// Σ_{p,l} together with its provenance.
#[derive(Debug, Clone)]
pub struct MomentMatrix {
    pub sigma: Mat,
    pub init_label: String,
    pub length: usize,
    pub estimator: MomentEstimator,
    /// λ used when this matrix was last inverted; 0 until then.
    pub ridge: f64,
}

impl MomentMatrix {
    pub fn dim(&self) -> usize {
        self.sigma.rows()
    }
}

pub(crate) fn checked_pow(m: usize, l: usize) -> u128 {
    (m as u128).checked_pow(l as u32).unwrap_or(u128::MAX)
}

/// Σ_{p,l} = E[vec(T_x) vec(T_x)ᵀ] over length-l sequences from `init`.
pub fn moment_matrix(
    hmm: &Hmm,
    init: &[f64],
    init_label: &str,
    l: usize,
    estimator: MomentEstimator,
) -> Result<MomentMatrix> {
    if l == 0 {
        return Err(Error::validation("moment matrix length must be at least 1"));
    }
    crate::hmm::check_distribution("init", init, 1e-9)?;
    let sigma = match estimator {
        MomentEstimator::Exact { cap } => {
            let needed = checked_pow(hmm.num_obs(), l);
            if needed > cap as u128 {
                return Err(Error::EnumerationCap { needed, cap: cap as u128 });
            }
            exact_moment(hmm, init, l)
        }
        MomentEstimator::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::validation("Monte-Carlo moment estimate needs samples >= 1"));
            }
            mc_moment(hmm, init, l, samples, seed)
        }
    };
    Ok(MomentMatrix {
        sigma,
        init_label: init_label.to_string(),
        length: l,
        estimator,
        ridge: 0.0,
    })
}

fn exact_moment(hmm: &Hmm, init: &[f64], l: usize) -> Mat {
    let d = hmm.num_states();
    let steps = step_matrices(hmm);
    let mut sigma = Mat::zeros(d * d, d * d);
    // DFS over the token tree carrying the prefix operator and the row
    // vector initᵀ·T_prefix (whose sum is the prefix's sequence probability,
    // since T·1 = 1).
    struct Frame<'a> {
        steps: &'a [Mat],
        l: usize,
        sigma: &'a mut Mat,
    }
    fn go(f: &mut Frame, depth: usize, op: &Mat, u: &[f64]) {
        let p: f64 = u.iter().sum();
        if p == 0.0 {
            return;
        }
        if depth == f.l {
            f.sigma.add_scaled_outer(p, op.data());
            return;
        }
        for s in f.steps {
            let child = op.matmul(s);
            let u_child = s.vecmul_left(u);
            go(f, depth + 1, &child, &u_child);
        }
    }
    let mut frame = Frame { steps: &steps, l, sigma: &mut sigma };
    go(&mut frame, 0, &Mat::identity(d), init);
    sigma.symmetrized()
}

const MC_SHARD: u64 = 4096;

fn mc_moment(hmm: &Hmm, init: &[f64], l: usize, samples: u64, seed: u64) -> Mat {
    let d = hmm.num_states();
    let n_shards = samples.div_ceil(MC_SHARD);
    let partials: Vec<Mat> = (0..n_shards)
        .into_par_iter()
        .map(|shard| {
            let lo = shard * MC_SHARD;
            let hi = (lo + MC_SHARD).min(samples);
            let mut rng = rng_from_seed(derive_seed(seed, streams::MOMENT_MC, shard));
            let mut acc = Mat::zeros(d * d, d * d);
            for _ in lo..hi {
                let x = sample_sequence_with(hmm, init, l, &mut rng);
                let op = operator_of(hmm, x.tokens()).expect("sampled tokens are in-alphabet");
                acc.add_scaled_outer(1.0, op.matrix.data());
            }
            acc
        })
        .collect();
    let mut sigma = Mat::zeros(d * d, d * d);
    for p in partials {
        sigma = sigma.add(&p);
    }
    sigma.scale(1.0 / samples as f64).symmetrized()
}

// ---------------------------------------------------------------------------
// Ridge inversion and spectral radius
// ---------------------------------------------------------------------------

/// (Σ + λI)⁻¹ with absolute λ ≥ 0. With λ = 0 the matrix must be numerically
/// nonsingular; otherwise the error names the smallest eigenvalue.
pub fn ridge_inverse(m: &MomentMatrix, lambda: f64) -> Result<Mat> {
    ridge_inverse_mat(&m.sigma, lambda)
}

pub fn ridge_inverse_mat(sigma: &Mat, lambda: f64) -> Result<Mat> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::validation("ridge lambda must be finite and >= 0"));
    }
    let n = sigma.rows();
    let mut a = sigma.symmetrized();
    if lambda > 0.0 {
        for i in 0..n {
            a.set(i, i, a.get(i, i) + lambda);
        }
    }
    match Cholesky::new(&a) {
        Some(ch) => Ok(ch.inverse()),
        None => {
            let eig = jacobi_eigenvalues(&a)?;
            Err(Error::SingularMatrix { min_eigenvalue: eig[0] })
        }
    }
}

/// λ scaled relative to the matrix: λ_abs = rel · trace(Σ)/dim. A zero-trace
/// Σ (all operators vanish) gets a tiny absolute floor so the inverse exists.
pub fn relative_lambda(sigma: &Mat, rel: f64) -> f64 {
    let scale = sigma.trace() / sigma.rows() as f64;
    if scale > 0.0 {
        rel * scale
    } else {
        rel.max(f64::MIN_POSITIVE.sqrt())
    }
}

/// Spectral radius (max |eigenvalue|) of a symmetric matrix via the cyclic
/// Jacobi iteration. Rejects input whose asymmetry exceeds 1e-8.
pub fn spectral_radius_sym(m: &Mat) -> Result<f64> {
    if m.rows() != m.cols() {
        return Err(Error::validation("spectral_radius_sym requires a square matrix"));
    }
    let asym = m.asymmetry();
    if asym > 1e-8 {
        return Err(Error::validation(format!(
            "spectral_radius_sym requires a symmetric matrix (asymmetry {asym:.3e})"
        )));
    }
    let eig = jacobi_eigenvalues(m)?;
    Ok(eig.iter().fold(0.0f64, |acc, &e| acc.max(e.abs())))
}

// ---------------------------------------------------------------------------
// η bound
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EtaMode {
    /// max over all sequences of length 1..=l_max of ‖T_x‖_F, by
    /// branch-and-bound enumeration.
    Exact { cap: u64 },
    /// Submultiplicative bound: c = max_o ‖diag(p_o)T‖_F raised over
    /// lengths 1..=l_max.
    Upper,
}

/// Upper bound η on the Frobenius norm of observable operators for
/// sequences up to length `l_max`.
pub fn eta_bound(hmm: &Hmm, l_max: usize, mode: EtaMode) -> Result<f64> {
    if l_max == 0 {
        return Err(Error::validation("eta_bound requires l_max >= 1"));
    }
    let steps = step_matrices(hmm);
    let c = steps.iter().map(|s| s.frobenius_norm()).fold(0.0f64, f64::max);
    match mode {
        EtaMode::Upper => Ok(if c >= 1.0 { c.powi(l_max as i32) } else { c }),
        EtaMode::Exact { cap } => {
            let needed = checked_pow(hmm.num_obs(), l_max);
            if needed > cap as u128 {
                return Err(Error::EnumerationCap { needed, cap: cap as u128 });
            }
            let d = hmm.num_states();
            let mut best = 0.0f64;
            // every prefix of length >= 1 is itself a candidate
            fn go(steps: &[Mat], op: &Mat, depth: usize, l_max: usize, c: f64, best: &mut f64) {
                for s in steps {
                    let child = op.matmul(s);
                    let norm = child.frobenius_norm();
                    if norm > *best {
                        *best = norm;
                    }
                    if depth + 1 < l_max {
                        let remaining = (l_max - depth - 1) as i32;
                        let gain = if c >= 1.0 { c.powi(remaining) } else { c };
                        if norm == 0.0 || norm * gain <= *best {
                            continue;
                        }
                        go(steps, &child, depth + 1, l_max, c, best);
                    }
                }
            }
            go(&steps, &Mat::identity(d), 0, l_max, c, &mut best);
            Ok(best)
        }
    }
}

// ---------------------------------------------------------------------------
// ε_θ: per-task deviation of inverse moment matrices
// ---------------------------------------------------------------------------

/// η and per-task ε_θ for one HMM, with the search horizon they were
/// computed under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationStats {
    pub eta: f64,
    pub epsilon_theta: Vec<f64>,
    pub l_max: usize,
}

/// min over l in `l_grid` of ρ((Σ_pretrain,l + λI)⁻¹ − (Σ_{s_θ},l + λI)⁻¹).
///
/// The paper's infimum over all lengths is approximated on the supplied
/// finite grid; the caller reports the grid alongside the value. λ is the
/// relative ridge weight, resolved against the pretrain moment's trace so
/// both inverses use one absolute λ per length.
pub fn epsilon_theta(
    hmm: &Hmm,
    task_id: usize,
    l_grid: &[usize],
    lambda_rel: f64,
    estimator: MomentEstimator,
) -> Result<f64> {
    if l_grid.is_empty() {
        return Err(Error::validation("epsilon_theta requires a nonempty l_grid"));
    }
    let task_init = hmm.task_init(task_id)?;
    let mut best = f64::INFINITY;
    for &l in l_grid {
        let sig_p = moment_matrix(hmm, hmm.pretrain_init(), "pretrain", l, estimator)?;
        let sig_t =
            moment_matrix(hmm, &task_init, &format!("task{task_id}"), l, estimator)?;
        let lambda = relative_lambda(&sig_p.sigma, lambda_rel);
        let inv_p = ridge_inverse(&sig_p, lambda)?;
        let inv_t = ridge_inverse(&sig_t, lambda)?;
        let rho = spectral_radius_sym(&inv_p.sub(&inv_t))?;
        if rho < best {
            best = rho;
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Per-length Σ⁻¹ cache
// ---------------------------------------------------------------------------

/// Which initial distribution a cached moment matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitKey {
    Pretrain,
    Task(usize),
}

impl InitKey {
    pub fn label(&self) -> String {
        match self {
            InitKey::Pretrain => "pretrain".to_string(),
            InitKey::Task(t) => format!("task{t}"),
        }
    }
}

/// Read-mostly cache of ridge-inverted moment matrices keyed by
/// (initial distribution, sequence length). Lengths vary per demonstration,
/// so the kernel predictor pulls the length-matched inverse from here.
/// Concurrent reads are cheap; inserts are serialized by the write lock.
pub struct SigmaCache<'a> {
    hmm: &'a Hmm,
    lambda_rel: f64,
    estimator: MomentEstimator,
    map: RwLock<HashMap<(InitKey, usize), Arc<Mat>>>,
}

impl<'a> SigmaCache<'a> {
    pub fn new(hmm: &'a Hmm, lambda_rel: f64, estimator: MomentEstimator) -> Self {
        SigmaCache { hmm, lambda_rel, estimator, map: RwLock::new(HashMap::new()) }
    }

    pub fn lambda_rel(&self) -> f64 {
        self.lambda_rel
    }

    fn init_of(&self, key: InitKey) -> Result<Vec<f64>> {
        match key {
            InitKey::Pretrain => Ok(self.hmm.pretrain_init().to_vec()),
            InitKey::Task(t) => self.hmm.task_init(t),
        }
    }

    /// (Σ_{key,l} + λI)⁻¹, computed on first use.
    pub fn inverse(&self, key: InitKey, l: usize) -> Result<Arc<Mat>> {
        if let Some(hit) = self.map.read().expect("sigma cache lock").get(&(key, l)) {
            return Ok(Arc::clone(hit));
        }
        let init = self.init_of(key)?;
        // Monte-Carlo estimates get a length-specific derived seed so two
        // lengths never share a sample stream.
        let estimator = match self.estimator {
            MomentEstimator::MonteCarlo { samples, seed } => MomentEstimator::MonteCarlo {
                samples,
                seed: derive_seed(seed, streams::MOMENT_MC, l as u64),
            },
            e => e,
        };
        let mut sigma = moment_matrix(self.hmm, &init, &key.label(), l, estimator)?;
        let lambda = relative_lambda(&sigma.sigma, self.lambda_rel);
        sigma.ridge = lambda;
        let inv = Arc::new(ridge_inverse(&sigma, lambda)?);
        let mut w = self.map.write().expect("sigma cache lock");
        let entry = w.entry((key, l)).or_insert_with(|| Arc::clone(&inv));
        Ok(Arc::clone(entry))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::sample_sequence;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    fn two_state_hmm() -> Hmm {
        Hmm::new(
            2,
            2,
            Mat::from_rows(&[vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap(),
            Mat::from_rows(&[vec![0.8, 0.2], vec![0.25, 0.75]]).unwrap(),
            vec![0],
            vec![1.0, 0.0],
            1,
            vec![0],
        )
        .unwrap()
    }

    fn random_hmm(d: usize, m: usize, seed: u64) -> Hmm {
        let mut rng = rng_from_seed(seed);
        let mut dirichlet_row = |n: usize| -> Vec<f64> {
            let raw: Vec<f64> = (0..n).map(|_| -(rng.gen::<f64>().max(1e-12)).ln()).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x / s).collect()
        };
        let t = Mat::from_rows(&(0..d).map(|_| dirichlet_row(d)).collect::<Vec<_>>()).unwrap();
        let b = Mat::from_rows(&(0..d).map(|_| dirichlet_row(m)).collect::<Vec<_>>()).unwrap();
        let mut init = vec![0.0; d];
        init[0] = 1.0;
        Hmm::new(d, m, t, b, vec![0], init, 0, vec![1]).unwrap()
    }

    #[test]
    fn empty_sequence_is_identity() {
        let hmm = two_state_hmm();
        let op = operator_of(&hmm, &[]).unwrap();
        assert_eq!(op.matrix, Mat::identity(2));
        assert_eq!(op.source_len, 0);
    }

    #[test]
    fn composition_law() {
        let hmm = random_hmm(3, 4, 5);
        let mut rng = rng_from_seed(6);
        for _ in 0..50 {
            let lu = rng.gen_range(0..=5);
            let lv = rng.gen_range(0..=5);
            let u: Vec<usize> = (0..lu).map(|_| rng.gen_range(0..4)).collect();
            let v: Vec<usize> = (0..lv).map(|_| rng.gen_range(0..4)).collect();
            let mut uv = u.clone();
            uv.extend_from_slice(&v);
            let lhs = operator_of(&hmm, &uv).unwrap().matrix;
            let rhs = operator_of(&hmm, &u).unwrap().matrix.matmul(&operator_of(&hmm, &v).unwrap().matrix);
            assert!(lhs.sub(&rhs).max_abs() <= 1e-12);
        }
    }

    #[test]
    fn eq2_reassembly_matches_likelihoods() {
        let hmm = random_hmm(4, 5, 9);
        let init = hmm.pretrain_init().to_vec();
        for seed in 0..20u64 {
            let seq = sample_sequence(&hmm, &init, 7, seed).unwrap();
            let toks = seq.tokens();
            let prefix = operator_of(&hmm, &toks[..toks.len() - 1]).unwrap();
            let v = prefix.matrix.vecmul_left(&init);
            let p_last = hmm.emission_col(toks[toks.len() - 1]);
            let reassembled: f64 = v.iter().zip(&p_last).map(|(a, b)| a * b).sum();
            let fwd = crate::hmm::forward_likelihood(&hmm, &init, toks).unwrap();
            let op = crate::hmm::operator_likelihood(&hmm, &init, toks).unwrap();
            assert!((reassembled - fwd).abs() <= 1e-12 * fwd.max(1e-30));
            assert!((op - fwd).abs() <= 1e-12 * fwd.max(1e-30));
        }
    }

    #[test]
    fn moment_deterministic_chain_is_rank_one() {
        // two states cycling 0 -> 1 -> 0, each emitting its own token
        let hmm = Hmm::new(
            2,
            2,
            Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0],
            vec![1.0, 0.0],
            1,
            vec![0],
        )
        .unwrap();
        let m = moment_matrix(&hmm, &[1.0, 0.0], "task0", 3, MomentEstimator::Exact { cap: 100 })
            .unwrap();
        // only sequence is 0,1,0
        let v = operator_of(&hmm, &[0, 1, 0]).unwrap().flatten();
        let mut want = Mat::zeros(4, 4);
        want.add_scaled_outer(1.0, &v);
        assert!(m.sigma.sub(&want).max_abs() < 1e-15);
        let eig = jacobi_eigenvalues(&m.sigma).unwrap();
        assert!(eig[..3].iter().all(|&e| e.abs() < 1e-12), "rank one");
    }

    #[test]
    fn moment_scalar_hand_enumeration() {
        // d = 1, m = 2, B = (0.6, 0.4), l = 2:
        // Sigma = E[(p_{o0} p_{o1})^2] = (0.6^3 + 0.4^3)^2 = 0.28^2 = 0.0784
        let hmm = Hmm::new(
            1,
            2,
            Mat::from_rows(&[vec![1.0]]).unwrap(),
            Mat::from_rows(&[vec![0.6, 0.4]]).unwrap(),
            vec![0],
            vec![1.0],
            0,
            vec![1],
        )
        .unwrap();
        let m = moment_matrix(&hmm, &[1.0], "task0", 2, MomentEstimator::Exact { cap: 10 }).unwrap();
        assert!((m.sigma.get(0, 0) - 0.0784).abs() < 1e-15);
    }

    #[test]
    fn moment_exact_cap_errors() {
        let hmm = two_state_hmm();
        let err = moment_matrix(&hmm, &[1.0, 0.0], "task0", 20, MomentEstimator::Exact { cap: 100 });
        assert!(matches!(err, Err(Error::EnumerationCap { .. })));
    }

    #[test]
    fn moment_mc_close_to_exact() {
        let hmm = random_hmm(3, 3, 42);
        let init = hmm.pretrain_init().to_vec();
        let l = 4;
        let exact =
            moment_matrix(&hmm, &init, "pretrain", l, MomentEstimator::Exact { cap: 1_000_000 })
                .unwrap();
        let n = 100_000u64;
        let mc = moment_matrix(
            &hmm,
            &init,
            "pretrain",
            l,
            MomentEstimator::MonteCarlo { samples: n, seed: 3 },
        )
        .unwrap();
        // conservative elementwise 3-standard-error band from the bounded
        // range of the per-sample entries
        let eta = eta_bound(&hmm, l, EtaMode::Exact { cap: 1_000_000 }).unwrap();
        let half_range = eta * eta / 2.0;
        let band = 3.0 * half_range / (n as f64).sqrt();
        assert!(
            exact.sigma.sub(&mc.sigma).max_abs() <= band,
            "max diff {} vs band {}",
            exact.sigma.sub(&mc.sigma).max_abs(),
            band
        );
        // symmetric PSD by construction
        assert!(mc.sigma.asymmetry() == 0.0);
        let eig = jacobi_eigenvalues(&mc.sigma).unwrap();
        assert!(eig[0] >= -1e-9);
    }

    #[test]
    fn ridge_identity_cases() {
        let ident = MomentMatrix {
            sigma: Mat::identity(4),
            init_label: "pretrain".into(),
            length: 1,
            estimator: MomentEstimator::Exact { cap: 10 },
            ridge: 0.0,
        };
        let inv = ridge_inverse(&ident, 0.0).unwrap();
        assert!(inv.sub(&Mat::identity(4)).max_abs() < 1e-14);
    }

    #[test]
    fn ridge_inverse_definition_and_column_solve_oracle() {
        let mut rng = rng_from_seed(10);
        for trial in 0..10 {
            let n = 8;
            let g = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let sigma = g.matmul(&g.transpose()); // PSD
            let lambda = 1e-3;
            let m = MomentMatrix {
                sigma: sigma.clone(),
                init_label: "pretrain".into(),
                length: 1,
                estimator: MomentEstimator::Exact { cap: 10 },
                ridge: 0.0,
            };
            let inv = ridge_inverse(&m, lambda).unwrap();
            let mut a = sigma.clone();
            for i in 0..n {
                a.set(i, i, a.get(i, i) + lambda);
            }
            let prod = inv.matmul(&a);
            assert!(prod.sub(&Mat::identity(n)).max_abs() < 1e-8, "trial {trial}");
            assert!(inv.asymmetry() < 1e-9);

            // independent dense column solve: Gaussian elimination with
            // partial pivoting, one unit column at a time
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let col = gauss_solve(&a, &e);
                for i in 0..n {
                    assert!((inv.get(i, j) - col[i]).abs() < 1e-9);
                }
            }
        }
    }

    fn gauss_solve(a: &Mat, b: &[f64]) -> Vec<f64> {
        let n = a.rows();
        let mut aug: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row = a.row(i).to_vec();
                row.push(b[i]);
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| aug[i][col].abs().partial_cmp(&aug[j][col].abs()).unwrap()).unwrap();
            aug.swap(col, piv);
            let p = aug[col][col];
            for i in (col + 1)..n {
                let f = aug[i][col] / p;
                for k in col..=n {
                    aug[i][k] -= f * aug[col][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = aug[i][n];
            for k in (i + 1)..n {
                s -= aug[i][k] * x[k];
            }
            x[i] = s / aug[i][i];
        }
        x
    }

    #[test]
    fn ridge_singular_names_smallest_eigenvalue() {
        let m = MomentMatrix {
            sigma: Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap(),
            init_label: "pretrain".into(),
            length: 1,
            estimator: MomentEstimator::Exact { cap: 10 },
            ridge: 0.0,
        };
        match ridge_inverse(&m, 0.0) {
            Err(Error::SingularMatrix { min_eigenvalue }) => {
                assert!(min_eigenvalue.abs() < 1e-12);
            }
            other => panic!("expected SingularMatrix, got {other:?}"),
        }
    }

    #[test]
    fn spectral_radius_diagonal_and_identity() {
        let d = Mat::from_rows(&[vec![-3.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert!((spectral_radius_sym(&d).unwrap() - 3.0).abs() < 1e-12);
        assert!((spectral_radius_sym(&Mat::identity(5)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_radius_rejects_asymmetric() {
        let m = Mat::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(spectral_radius_sym(&m).is_err());
    }

    #[test]
    fn eta_single_state_is_max_emission() {
        let hmm = Hmm::new(
            1,
            3,
            Mat::from_rows(&[vec![1.0]]).unwrap(),
            Mat::from_rows(&[vec![0.5, 0.3, 0.2]]).unwrap(),
            vec![0],
            vec![1.0],
            0,
            vec![1],
        )
        .unwrap();
        let eta = eta_bound(&hmm, 4, EtaMode::Exact { cap: 1000 }).unwrap();
        assert!((eta - 0.5).abs() < 1e-15);
        assert!((eta_bound(&hmm, 4, EtaMode::Upper).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eta_exact_matches_brute_force_and_is_monotone() {
        for seed in [1u64, 2, 3] {
            let hmm = random_hmm(3, 4, seed);
            let mut brute = vec![0.0f64; 6];
            // plain enumeration without pruning, lengths 1..=5
            fn enumerate(hmm: &Hmm, prefix: &mut Vec<usize>, l_max: usize, brute: &mut [f64]) {
                if !prefix.is_empty() {
                    let norm = operator_of(hmm, prefix).unwrap().matrix.frobenius_norm();
                    let l = prefix.len();
                    if norm > brute[l] {
                        brute[l] = norm;
                    }
                }
                if prefix.len() == l_max {
                    return;
                }
                for o in 0..hmm.num_obs() {
                    prefix.push(o);
                    enumerate(hmm, prefix, l_max, brute);
                    prefix.pop();
                }
            }
            enumerate(&hmm, &mut Vec::new(), 5, &mut brute);
            let mut last = 0.0;
            for l_max in 1..=5 {
                let want = brute[1..=l_max].iter().cloned().fold(0.0f64, f64::max);
                let got = eta_bound(&hmm, l_max, EtaMode::Exact { cap: 2000 }).unwrap();
                assert!((got - want).abs() < 1e-12, "seed {seed} l_max {l_max}");
                assert!(got >= last - 1e-15, "monotone in l_max");
                last = got;
            }
        }
    }

    #[test]
    fn epsilon_theta_single_task_is_zero() {
        let hmm = random_hmm(3, 3, 77); // single task, pretrain = point mass
        let eps = epsilon_theta(&hmm, 0, &[1, 2, 3], 1e-6, MomentEstimator::Exact { cap: 100_000 })
            .unwrap();
        assert!(eps.abs() < 1e-9, "got {eps}");
    }

    #[test]
    fn epsilon_theta_grid_order_invariant() {
        let hmm = crate::assumptions::tests::small_compliant_hmm();
        let est = MomentEstimator::Exact { cap: 1_000_000 };
        let a = epsilon_theta(&hmm, 1, &[1, 2, 3], 1e-6, est).unwrap();
        let b = epsilon_theta(&hmm, 1, &[3, 1, 2], 1e-6, est).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn epsilon_theta_matches_independent_pipeline() {
        // d=2, m=3 two-task instance: re-derive end-to-end with nalgebra and
        // a plain enumeration that never touches the production DFS.
        let hmm = Hmm::new(
            2,
            3,
            Mat::from_rows(&[vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap(),
            Mat::from_rows(&[vec![0.5, 0.25, 0.25], vec![0.1, 0.2, 0.7]]).unwrap(),
            vec![0, 1],
            vec![0.5, 0.5],
            0,
            vec![1],
        )
        .unwrap();
        let l = 3;
        let rel = 1e-4;
        let est = MomentEstimator::Exact { cap: 1000 };
        let got = epsilon_theta(&hmm, 0, &[l], rel, est).unwrap();

        // oracle: enumerate all 27 sequences by counting
        let build_sigma = |init: &[f64]| -> nalgebra::DMatrix<f64> {
            let mut sigma = nalgebra::DMatrix::<f64>::zeros(4, 4);
            for code in 0..27usize {
                let seq = [(code / 9) % 3, (code / 3) % 3, code % 3];
                let p = crate::hmm::forward_likelihood(&hmm, init, &seq).unwrap();
                let v = operator_of(&hmm, &seq).unwrap().flatten();
                let nv = nalgebra::DVector::from_vec(v);
                sigma += p * &nv * nv.transpose();
            }
            sigma
        };
        let sp = build_sigma(&[0.5, 0.5]);
        let st = build_sigma(&[1.0, 0.0]);
        let lambda = rel * sp.trace() / 4.0;
        let ident = nalgebra::DMatrix::<f64>::identity(4, 4);
        let inv_p = (sp + lambda * &ident).try_inverse().unwrap();
        let inv_t = (st + lambda * &ident).try_inverse().unwrap();
        let diff = inv_p - inv_t;
        let want = diff
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0f64, |m, &e| m.max(e.abs()));
        assert!(
            (got - want).abs() <= 1e-7 * want.max(1.0),
            "got {got}, oracle {want}"
        );
    }

    #[test]
    fn sigma_cache_returns_shared_inverse() {
        let hmm = two_state_hmm();
        let cache = SigmaCache::new(&hmm, 1e-6, MomentEstimator::Exact { cap: 100_000 });
        let a = cache.inverse(InitKey::Pretrain, 3).unwrap();
        let b = cache.inverse(InitKey::Pretrain, 3).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let c = cache.inverse(InitKey::Task(0), 3).unwrap();
        // task 0 start == pretrain support here, so values match but the
        // entry is distinct
        assert!(!Arc::ptr_eq(&a, &c));
    }

    #[test]
    fn operator_norm_within_eta_bound() {
        let hmm = random_hmm(3, 4, 123);
        let eta = eta_bound(&hmm, 6, EtaMode::Exact { cap: 10_000 }).unwrap();
        let mut rng = rng_from_seed(5);
        for _ in 0..200 {
            let l = rng.gen_range(1..=6);
            let seq: Vec<usize> = (0..l).map(|_| rng.gen_range(0..4)).collect();
            let norm = operator_of(&hmm, &seq).unwrap().matrix.frobenius_norm();
            assert!(norm <= eta + 1e-12);
        }
    }
}
