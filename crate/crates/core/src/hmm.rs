//! The task-mixture HMM: model type, sequence sampling, prompt construction,
//! and sequence likelihoods computed two independent ways (classical forward
//! recursion and observable-operator products).
//!
//! Conventions: a state emits a token, then transitions. A length-l sequence
//! `o_0..o_{l-1}` therefore has likelihood
//! `initᵀ · (∏_{i<l-1} diag(p_{o_i}) T) · diag(p_{o_{l-1}}) · 1`,
//! with no transition factor after the last emission.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{rng_from_seed, sample_discrete, Rng};

pub const ROW_SUM_TOL: f64 = 1e-12;

/// Unified task-mixture hidden Markov model.
///
/// Immutable after construction; all operations are pure functions of
/// (inputs, seed) and safe to call concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct Hmm {
    num_states: usize,
    num_obs: usize,
    transition: Mat,        // d×d, row-stochastic
    emission: Mat,          // d×m, row-stochastic
    task_starts: Vec<usize>,
    pretrain_init: Vec<f64>, // supported exactly on task_starts
    delimiter: usize,
    label_set: Vec<usize>,
}

impl Hmm {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_obs: usize,
        transition: Mat,
        emission: Mat,
        task_starts: Vec<usize>,
        pretrain_init: Vec<f64>,
        delimiter: usize,
        label_set: Vec<usize>,
    ) -> Result<Hmm> {
        if num_states == 0 {
            return Err(Error::validation("num_states must be positive"));
        }
        if num_obs == 0 {
            return Err(Error::validation("num_obs must be positive"));
        }
        if transition.rows() != num_states || transition.cols() != num_states {
            return Err(Error::validation(format!(
                "transition must be {num_states}x{num_states}, got {}x{}",
                transition.rows(),
                transition.cols()
            )));
        }
        if emission.rows() != num_states || emission.cols() != num_obs {
            return Err(Error::validation(format!(
                "emission must be {num_states}x{num_obs}, got {}x{}",
                emission.rows(),
                emission.cols()
            )));
        }
        for i in 0..num_states {
            check_distribution(&format!("transition row {i}"), transition.row(i), ROW_SUM_TOL)?;
            check_distribution(&format!("emission row {i}"), emission.row(i), ROW_SUM_TOL)?;
        }
        if task_starts.is_empty() {
            return Err(Error::validation("task_starts must be nonempty"));
        }
        for (k, &s) in task_starts.iter().enumerate() {
            if s >= num_states {
                return Err(Error::validation(format!("task_starts[{k}] = {s} out of range")));
            }
            if task_starts[..k].contains(&s) {
                return Err(Error::validation(format!("task_starts[{k}] = {s} duplicated")));
            }
        }
        if pretrain_init.len() != num_states {
            return Err(Error::validation("pretrain_init length must equal num_states"));
        }
        check_distribution("pretrain_init", &pretrain_init, ROW_SUM_TOL)?;
        for (s, &p) in pretrain_init.iter().enumerate() {
            if p != 0.0 && !task_starts.contains(&s) {
                return Err(Error::validation(format!(
                    "pretrain_init has mass {p:.3e} on state {s}, which is not a task start"
                )));
            }
        }
        if delimiter >= num_obs {
            return Err(Error::validation(format!("delimiter {delimiter} out of range")));
        }
        if label_set.is_empty() {
            return Err(Error::validation("label_set must be nonempty"));
        }
        for (k, &y) in label_set.iter().enumerate() {
            if y >= num_obs {
                return Err(Error::validation(format!("label_set[{k}] = {y} out of range")));
            }
            if y == delimiter {
                return Err(Error::validation("label_set must not contain the delimiter"));
            }
            if label_set[..k].contains(&y) {
                return Err(Error::validation(format!("label_set[{k}] = {y} duplicated")));
            }
        }
        Ok(Hmm {
            num_states,
            num_obs,
            transition,
            emission,
            task_starts,
            pretrain_init,
            delimiter,
            label_set,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_obs(&self) -> usize {
        self.num_obs
    }

    pub fn transition(&self) -> &Mat {
        &self.transition
    }

    pub fn emission(&self) -> &Mat {
        &self.emission
    }

    pub fn task_starts(&self) -> &[usize] {
        &self.task_starts
    }

    pub fn num_tasks(&self) -> usize {
        self.task_starts.len()
    }

    pub fn pretrain_init(&self) -> &[f64] {
        &self.pretrain_init
    }

    pub fn delimiter(&self) -> usize {
        self.delimiter
    }

    pub fn label_set(&self) -> &[usize] {
        &self.label_set
    }

    /// Emission column p_o: P(o | s) for every state s.
    pub fn emission_col(&self, o: usize) -> Vec<f64> {
        (0..self.num_states).map(|s| self.emission.get(s, o)).collect()
    }

    /// Point-mass initial distribution on task θ's start state.
    pub fn task_init(&self, task_id: usize) -> Result<Vec<f64>> {
        let &s = self
            .task_starts
            .get(task_id)
            .ok_or_else(|| Error::validation(format!("task_id {task_id} out of range")))?;
        let mut v = vec![0.0; self.num_states];
        v[s] = 1.0;
        Ok(v)
    }

    /// Smallest positive entry of the pre-training initial distribution,
    /// the ‖p₀‖_{-∞} term of the sample-size threshold.
    pub fn p0_min(&self) -> f64 {
        self.pretrain_init
            .iter()
            .cloned()
            .filter(|&p| p > 0.0)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn check_distribution(what: &str, v: &[f64], tol: f64) -> Result<()> {
    if v.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::validation(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::NotADistribution { what: what.to_string(), sum, tol });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sequences and prompts
// ---------------------------------------------------------------------------

/// A token sequence over the HMM's observation alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<usize>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn validate(&self, num_obs: usize) -> Result<()> {
        if let Some(&t) = self.0.iter().find(|&&t| t >= num_obs) {
            return Err(Error::validation(format!("token {t} outside alphabet of size {num_obs}")));
        }
        Ok(())
    }
}

impl From<Vec<usize>> for TokenSeq {
    fn from(v: Vec<usize>) -> Self {
        TokenSeq(v)
    }
}

/// How demonstration input lengths are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DemoLengthPolicy {
    Fixed { length: usize },
    Uniform { min: usize, max: usize },
}

impl DemoLengthPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DemoLengthPolicy::Fixed { length } if length >= 1 => Ok(()),
            DemoLengthPolicy::Fixed { .. } => {
                Err(Error::validation("demo length must be at least 1"))
            }
            DemoLengthPolicy::Uniform { min, max } if min >= 1 && min <= max => Ok(()),
            DemoLengthPolicy::Uniform { .. } => {
                Err(Error::validation("uniform demo length requires 1 <= min <= max"))
            }
        }
    }

    pub fn draw(&self, rng: &mut Rng) -> usize {
        use rand::Rng as _;
        match *self {
            DemoLengthPolicy::Fixed { length } => length,
            DemoLengthPolicy::Uniform { min, max } => rng.gen_range(min..=max),
        }
    }

    /// Every length this policy can produce.
    pub fn support(&self) -> Vec<usize> {
        match *self {
            DemoLengthPolicy::Fixed { length } => vec![length],
            DemoLengthPolicy::Uniform { min, max } => (min..=max).collect(),
        }
    }

    pub fn max_len(&self) -> usize {
        match *self {
            DemoLengthPolicy::Fixed { length } => length,
            DemoLengthPolicy::Uniform { max, .. } => max,
        }
    }
}

/// An in-context prompt: n demonstration pairs plus a test input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclPrompt {
    pub demos: Vec<(TokenSeq, usize)>,
    pub delimiter: usize,
    pub test_input: TokenSeq,
    pub task_id: usize,
}

impl IclPrompt {
    pub fn n(&self) -> usize {
        self.demos.len()
    }

    /// `[x_1, y_1, delim, ..., x_n, y_n, delim, x_test]`
    pub fn flatten(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (x, y) in &self.demos {
            out.extend_from_slice(x.tokens());
            out.push(*y);
            out.push(self.delimiter);
        }
        out.extend_from_slice(self.test_input.tokens());
        out
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

fn validate_init(hmm: &Hmm, init: &[f64]) -> Result<()> {
    if init.len() != hmm.num_states {
        return Err(Error::validation(format!(
            "init length {} does not match {} states",
            init.len(),
            hmm.num_states
        )));
    }
    // user-facing tolerance is looser than the model invariant
    check_distribution("init", init, 1e-9)
}

pub(crate) fn sample_sequence_with(hmm: &Hmm, init: &[f64], length: usize, rng: &mut Rng) -> TokenSeq {
    let mut state = sample_discrete(rng, init);
    let mut tokens = Vec::with_capacity(length);
    for t in 0..length {
        tokens.push(sample_discrete(rng, hmm.emission.row(state)));
        if t + 1 < length {
            state = sample_discrete(rng, hmm.transition.row(state));
        }
    }
    TokenSeq(tokens)
}

/// Draw a length-`length` sequence from the generative process started at
/// `init`. Deterministic for a fixed seed.
pub fn sample_sequence(hmm: &Hmm, init: &[f64], length: usize, seed: u64) -> Result<TokenSeq> {
    validate_init(hmm, init)?;
    if length == 0 {
        return Err(Error::validation("sequence length must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    Ok(sample_sequence_with(hmm, init, length, &mut rng))
}

// ---------------------------------------------------------------------------
// Likelihoods: forward recursion and observable operators
// ---------------------------------------------------------------------------

/// Exact P(seq | init) by the classical forward recursion in linear space.
///
/// This is the independent oracle against which the observable-operator
/// route is checked. Empty sequences have likelihood 1 by convention.
pub fn forward_likelihood(hmm: &Hmm, init: &[f64], seq: &[usize]) -> Result<f64> {
    validate_init(hmm, init)?;
    TokenSeq(seq.to_vec()).validate(hmm.num_obs)?;
    if seq.is_empty() {
        return Ok(1.0);
    }
    let d = hmm.num_states;
    let mut alpha: Vec<f64> = (0..d).map(|s| init[s] * hmm.emission.get(s, seq[0])).collect();
    for &o in &seq[1..] {
        let prop = hmm.transition.vecmul_left(&alpha);
        alpha = (0..d).map(|s| prop[s] * hmm.emission.get(s, o)).collect();
    }
    Ok(alpha.iter().sum())
}

/// ln P(seq | init) by the scaled forward recursion; `-inf` when the
/// sequence is impossible. Survives sequence lengths far past the point
/// where linear-space products underflow.
pub fn log_forward_likelihood(hmm: &Hmm, init: &[f64], seq: &[usize]) -> Result<f64> {
    let (logp, _) = forward_filter(hmm, init, seq)?;
    Ok(logp)
}

/// Scaled forward pass. Returns (ln P(seq|init), filtered state posterior
/// after the last token). The posterior is unspecified (empty) for the empty
/// sequence, and the log-likelihood is exactly `-inf` for impossible input:
/// zero probability shows up as an exact zero step sum, never as underflow.
pub fn forward_filter(hmm: &Hmm, init: &[f64], seq: &[usize]) -> Result<(f64, Vec<f64>)> {
    validate_init(hmm, init)?;
    TokenSeq(seq.to_vec()).validate(hmm.num_obs)?;
    if seq.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let d = hmm.num_states;
    let mut logp = 0.0f64;
    let mut alpha: Vec<f64> = (0..d).map(|s| init[s] * hmm.emission.get(s, seq[0])).collect();
    for (t, &o) in seq.iter().enumerate() {
        if t > 0 {
            let prop = hmm.transition.vecmul_left(&alpha);
            alpha = (0..d).map(|s| prop[s] * hmm.emission.get(s, o)).collect();
        }
        let norm: f64 = alpha.iter().sum();
        if norm == 0.0 {
            return Ok((f64::NEG_INFINITY, vec![0.0; d]));
        }
        logp += norm.ln();
        for a in alpha.iter_mut() {
            *a /= norm;
        }
    }
    Ok((logp, alpha))
}

/// P(seq | init) via Eq.-style observable-operator products: the full d×d
/// operator for the prefix is built by matrix products and contracted with
/// the final emission diagonal. Numerically independent of the forward
/// recursion (different association order and intermediate quantities).
pub fn operator_likelihood(hmm: &Hmm, init: &[f64], seq: &[usize]) -> Result<f64> {
    validate_init(hmm, init)?;
    TokenSeq(seq.to_vec()).validate(hmm.num_obs)?;
    if seq.is_empty() {
        return Ok(1.0);
    }
    let last = seq[seq.len() - 1];
    let prefix_op = crate::operator::operator_of(hmm, &seq[..seq.len() - 1])?;
    let v = prefix_op.matrix.vecmul_left(init);
    let p_last = hmm.emission_col(last);
    Ok(v.iter().zip(&p_last).map(|(a, b)| a * b).sum())
}

/// Distribution over the state that will emit the next token, after
/// observing `seq` from `init`. For the empty sequence this is `init`
/// itself (the first token is emitted by the initial state).
pub fn next_state_distribution(hmm: &Hmm, init: &[f64], seq: &[usize]) -> Result<Vec<f64>> {
    if seq.is_empty() {
        validate_init(hmm, init)?;
        return Ok(init.to_vec());
    }
    let (logp, filtered) = forward_filter(hmm, init, seq)?;
    if logp == f64::NEG_INFINITY {
        return Err(Error::ImpossibleInput);
    }
    Ok(hmm.transition.vecmul_left(&filtered))
}

/// Next-token predictive distribution P(o | seq, init) over the whole
/// alphabet.
pub fn next_token_distribution(hmm: &Hmm, init: &[f64], seq: &[usize]) -> Result<Vec<f64>> {
    let state_dist = next_state_distribution(hmm, init, seq)?;
    Ok(hmm.emission.vecmul_left(&state_dist))
}

/// P(y | seq, init) restricted to the label set and renormalized.
/// Errors with `UnlabelableInput` when the label mass is identically zero.
pub fn label_conditional(hmm: &Hmm, init: &[f64], seq: &[usize]) -> Result<Vec<f64>> {
    let dist = next_token_distribution(hmm, init, seq)?;
    let mut scores: Vec<f64> = hmm.label_set.iter().map(|&y| dist[y]).collect();
    let mass: f64 = scores.iter().sum();
    if mass <= 0.0 {
        return Err(Error::UnlabelableInput);
    }
    for s in scores.iter_mut() {
        *s /= mass;
    }
    Ok(scores)
}

// ---------------------------------------------------------------------------
// Prompt construction
// ---------------------------------------------------------------------------

/// Sample an in-context prompt for task `task_id`: n i.i.d. demonstrations
/// `(x_i, y_i)` plus a test input, all drawn from the task's start state.
/// Labels are the next-token emission after x_i, conditioned on the label
/// set. Deterministic per seed.
pub fn build_prompt(
    hmm: &Hmm,
    task_id: usize,
    n: usize,
    policy: DemoLengthPolicy,
    seed: u64,
) -> Result<IclPrompt> {
    policy.validate()?;
    let init = hmm.task_init(task_id)?;
    let mut rng = rng_from_seed(seed);
    let mut demos = Vec::with_capacity(n);
    for _ in 0..n {
        let len = policy.draw(&mut rng);
        let x = sample_sequence_with(hmm, &init, len, &mut rng);
        let y = sample_label(hmm, &init, &x, &mut rng)?;
        demos.push((x, y));
    }
    let test_len = policy.draw(&mut rng);
    let test_input = sample_sequence_with(hmm, &init, test_len, &mut rng);
    Ok(IclPrompt { demos, delimiter: hmm.delimiter, test_input, task_id })
}

pub(crate) fn sample_label(hmm: &Hmm, init: &[f64], x: &TokenSeq, rng: &mut Rng) -> Result<usize> {
    let cond = label_conditional(hmm, init, x.tokens())?;
    Ok(hmm.label_set[sample_discrete(rng, &cond)])
}
