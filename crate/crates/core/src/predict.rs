//! The two prediction pathways compared by the laboratory: exact Bayesian
//! posterior prediction over the full prompt, and the kernel-regression
//! estimator whose weights are Σ⁻¹-weighted inner products of observable-
//! operator flattenings. Plus the task posterior and prediction similarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{forward_filter, next_token_distribution, Hmm, IclPrompt};
use crate::operator::{operator_of, InitKey, SigmaCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMethod {
    Bayes,
    Kernel,
}

/// Which set the Bayes scores normalize over. `Labels` is the estimator of
/// the theorem (the one-hot labels live on the label set); `AllTokens`
/// keeps plain next-token semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationDomain {
    #[default]
    Labels,
    AllTokens,
}

/// Scores over the label set plus the argmax decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    /// Aligned with the HMM's label_set order.
    pub label_scores: Vec<f64>,
    /// Observation index of the winning label.
    pub argmax_label: usize,
    /// Top two scores within 1e-12 of each other.
    pub tie: bool,
    /// Per-demonstration kernel weights (kernel pathway only).
    pub weights: Option<Vec<f64>>,
    pub method: PredictionMethod,
}

impl PredictionOutcome {
    /// One-line record for CSV aggregation:
    /// method, n, argmax, tie, top-2 scores, weight statistics.
    pub fn record_line(&self, n: usize) -> String {
        let mut sorted = self.label_scores.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let top = sorted.first().copied().unwrap_or(f64::NAN);
        let second = sorted.get(1).copied().unwrap_or(f64::NAN);
        let (wmean, wmax) = match &self.weights {
            Some(w) if !w.is_empty() => {
                let mean = w.iter().map(|x| x.abs()).sum::<f64>() / w.len() as f64;
                let max = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                (mean, max)
            }
            _ => (f64::NAN, f64::NAN),
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            match self.method {
                PredictionMethod::Bayes => "bayes",
                PredictionMethod::Kernel => "kernel",
            },
            n,
            self.argmax_label,
            self.tie,
            crate::textfmt::fmt_g17(top),
            crate::textfmt::fmt_g17(second),
            crate::textfmt::fmt_g17(wmean),
            crate::textfmt::fmt_g17(wmax),
        )
    }
}

const TIE_TOL: f64 = 1e-12;

fn argmax_outcome(
    label_set: &[usize],
    scores: Vec<f64>,
    weights: Option<Vec<f64>>,
    method: PredictionMethod,
) -> PredictionOutcome {
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let tie = scores
        .iter()
        .enumerate()
        .any(|(i, &s)| i != best && (scores[best] - s).abs() < TIE_TOL);
    PredictionOutcome {
        argmax_label: label_set[best],
        label_scores: scores,
        tie,
        weights,
        method,
    }
}

// ---------------------------------------------------------------------------
// Bayes pathway
// ---------------------------------------------------------------------------

/// Exact posterior prediction: P(y | [S_n, x_test], p_pre-train) for every
/// label, computed by the scaled forward pass over the flattened prompt
/// (log-space safe; an impossible prompt surfaces as an exact zero, not as
/// underflow).
pub fn bayes_predict(
    hmm: &Hmm,
    prompt: &IclPrompt,
    domain: NormalizationDomain,
) -> Result<PredictionOutcome> {
    let flat = prompt.flatten();
    let init = hmm.pretrain_init().to_vec();
    if !flat.is_empty() {
        let (logp, _) = forward_filter(hmm, &init, &flat)?;
        if logp == f64::NEG_INFINITY {
            return Err(Error::ImpossiblePrompt);
        }
    }
    let dist = next_token_distribution(hmm, &init, &flat)?;
    let raw: Vec<f64> = hmm.label_set().iter().map(|&y| dist[y]).collect();
    let scores = match domain {
        NormalizationDomain::Labels => {
            let mass: f64 = raw.iter().sum();
            if mass <= 0.0 {
                return Err(Error::UnlabelableInput);
            }
            raw.iter().map(|s| s / mass).collect()
        }
        NormalizationDomain::AllTokens => raw,
    };
    Ok(argmax_outcome(hmm.label_set(), scores, None, PredictionMethod::Bayes))
}

// ---------------------------------------------------------------------------
// Kernel pathway
// ---------------------------------------------------------------------------

/// Kernel weights w_i = ⟨vec(T_test), Σ⁻¹_{key,|x_i|} vec(T_{x_i})⟩ with the
/// length-matched inverse pulled from the cache. `key` selects whose moment
/// matrix normalizes the kernel: the pre-training mixture for the estimator
/// itself, or a task's own for proof-step diagnostics.
pub fn kernel_weights(
    hmm: &Hmm,
    prompt: &IclPrompt,
    cache: &SigmaCache,
    key: InitKey,
) -> Result<Vec<f64>> {
    let test_vec = operator_of(hmm, prompt.test_input.tokens())?.flatten();
    let mut weights = Vec::with_capacity(prompt.n());
    for (x, _) in &prompt.demos {
        let inv = cache.inverse(key, x.len())?;
        let xi_vec = operator_of(hmm, x.tokens())?.flatten();
        let tmp = inv.vecmul_right(&xi_vec);
        weights.push(crate::mat::dot(&test_vec, &tmp));
    }
    Ok(weights)
}

/// Signed-weight kernel scores: Σ_i w_i e(y_i) / Σ_i w_i restricted to the
/// label set. Weights may be negative; a vanishing total mass is an error,
/// not a silent fallback.
pub fn scores_from_weights(
    label_set: &[usize],
    demos: &[(crate::hmm::TokenSeq, usize)],
    weights: &[f64],
) -> Result<Vec<f64>> {
    let mass: f64 = weights.iter().sum();
    if mass.abs() < 1e-12 {
        return Err(Error::DegenerateKernelMass { mass: mass.abs() });
    }
    let mut scores = vec![0.0f64; label_set.len()];
    for ((_, y), &w) in demos.iter().zip(weights) {
        let idx = label_set
            .iter()
            .position(|&l| l == *y)
            .ok_or_else(|| Error::validation(format!("demo label {y} not in label set")))?;
        scores[idx] += w;
    }
    for s in scores.iter_mut() {
        *s /= mass;
    }
    Ok(scores)
}

/// The kernel-regression predictor: argmax over labels of
/// Σ_i w_i e(y_i) / Σ_i w_i with pre-training-moment weights.
pub fn kernel_predict(
    hmm: &Hmm,
    prompt: &IclPrompt,
    cache: &SigmaCache,
) -> Result<PredictionOutcome> {
    if prompt.n() == 0 {
        return Err(Error::validation("kernel_predict requires at least one demonstration"));
    }
    let weights = kernel_weights(hmm, prompt, cache, InitKey::Pretrain)?;
    let scores = scores_from_weights(hmm.label_set(), &prompt.demos, &weights)?;
    Ok(argmax_outcome(hmm.label_set(), scores, Some(weights), PredictionMethod::Kernel))
}

// ---------------------------------------------------------------------------
// Task posterior
// ---------------------------------------------------------------------------

/// P(s_test = s_θ | prompt) per task, where s_test is the hidden state
/// emitting the first test token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPosterior {
    pub probs: Vec<f64>,
}

/// Forward-filter through the demonstrations and the *first* token of
/// x_test, then read the state posterior on the start states (renormalized
/// over them; exact whenever the first test token is an anchor, since then
/// non-start states carry no mass).
pub fn task_posterior(hmm: &Hmm, prompt: &IclPrompt) -> Result<TaskPosterior> {
    if prompt.test_input.is_empty() {
        return Err(Error::validation("task_posterior requires a nonempty test input"));
    }
    let mut tokens = Vec::new();
    for (x, y) in &prompt.demos {
        tokens.extend_from_slice(x.tokens());
        tokens.push(*y);
        tokens.push(prompt.delimiter);
    }
    tokens.push(prompt.test_input.tokens()[0]);
    let (logp, filtered) = forward_filter(hmm, hmm.pretrain_init(), &tokens)?;
    if logp == f64::NEG_INFINITY {
        return Err(Error::ImpossiblePrompt);
    }
    let start_mass: f64 = hmm.task_starts().iter().map(|&s| filtered[s]).sum();
    if start_mass <= 0.0 {
        return Err(Error::validation(
            "state posterior at the first test token has no mass on start states",
        ));
    }
    let probs = hmm.task_starts().iter().map(|&s| filtered[s] / start_mass).collect();
    Ok(TaskPosterior { probs })
}

// ---------------------------------------------------------------------------
// Prediction similarity
// ---------------------------------------------------------------------------

/// sim(x₁, x₂) = P(o | x₁)ᵀ P(o | x₂) under the pre-training distribution;
/// the retrieval criterion.
pub fn prediction_similarity(hmm: &Hmm, x1: &[usize], x2: &[usize]) -> Result<f64> {
    let init = hmm.pretrain_init().to_vec();
    let p1 = predictive_or_impossible(hmm, &init, x1)?;
    let p2 = predictive_or_impossible(hmm, &init, x2)?;
    Ok(crate::mat::dot(&p1, &p2))
}

fn predictive_or_impossible(hmm: &Hmm, init: &[f64], x: &[usize]) -> Result<Vec<f64>> {
    if !x.is_empty() {
        let (logp, _) = forward_filter(hmm, init, x)?;
        if logp == f64::NEG_INFINITY {
            return Err(Error::ImpossibleInput);
        }
    }
    next_token_distribution(hmm, init, x)
}
