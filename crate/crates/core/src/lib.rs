//! Synthetic laboratory for studying in-context learning on a task-mixture
//! hidden Markov model.
//!
//! The pre-training distribution is a single HMM whose initial distribution
//! mixes a set of task start states. Demonstration prompts
//! `[x_1, y_1, delim, ..., x_n, y_n, delim, x_test]` are sampled from one
//! task, and two predictors are compared on them:
//!
//! * exact Bayesian posterior prediction over the full prompt, and
//! * a kernel-regression estimator whose kernel is the Σ⁻¹-weighted inner
//!   product of observable-operator flattenings.
//!
//! The crate verifies, by exact enumeration and seeded Monte-Carlo
//! experiments, that the two agree once the demonstration count clears an
//! explicit threshold, and it measures every assumption parameter that
//! threshold depends on (ε_r, ε_d, ε_KL, ε_θ, η, Δ).

pub mod assumptions;
pub mod config;
pub mod defaults;
pub mod error;
pub mod experiments;
pub mod hmm;
pub mod mat;
pub mod operator;
pub mod predict;
pub mod report;
pub mod rng;
pub mod stats;
pub mod textfmt;

pub use error::{Error, Result};
pub use hmm::{DemoLengthPolicy, Hmm, IclPrompt, TokenSeq};
