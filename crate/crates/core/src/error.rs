use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("{what} is not a probability distribution (sum = {sum:.17e}, tolerance {tol:e})")]
    NotADistribution { what: String, sum: f64, tol: f64 },

    #[error(
        "enumeration cap exceeded: {needed} sequences required but cap is {cap}; \
         use the Monte-Carlo estimator instead"
    )]
    EnumerationCap { needed: u128, cap: u128 },

    #[error("matrix is singular at lambda = 0: smallest eigenvalue = {min_eigenvalue:.17e}")]
    SingularMatrix { min_eigenvalue: f64 },

    #[error("unlabelable input: conditional label distribution is identically zero on the label set")]
    UnlabelableInput,

    #[error("impossible prompt: flattened prompt has zero probability under the initial distribution")]
    ImpossiblePrompt,

    #[error("impossible input: sequence has zero probability under the given initial distribution")]
    ImpossibleInput,

    #[error("degenerate kernel mass: |sum of kernel weights| = {mass:.17e} < 1e-12")]
    DegenerateKernelMass { mass: f64 },

    #[error("distinguishability condition violated: epsilon_KL = {epsilon_kl} <= ln(1/(epsilon_r*epsilon_d)) = {bound:.17e}")]
    DistinguishabilityViolated { epsilon_kl: String, bound: f64 },

    #[error("deviation condition violated: Delta/2 = {half_delta:.17e} <= epsilon_theta*eta^2 = {deviation:.17e}")]
    DeviationViolated { half_delta: f64, deviation: f64 },

    #[error("infeasible HMM spec: {0}")]
    InfeasibleSpec(String),

    #[error("assumption check refused the run (set allow_noncompliant = true to override): {violations}")]
    NonCompliant { violations: String, report_json: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error in {file} at line {line}: {message}")]
    TextFormat { file: String, line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit status used by the CLI for this error class.
    pub fn exit_status(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::TextFormat { .. } => 3,
            Error::NonCompliant { .. } => 4,
            _ => 1,
        }
    }
}
