//! Command-line entry point: generate/validate HMMs, run the verification
//! suites, and write CSV/JSON artifacts plus a run manifest.
//!
//! Exit status: 0 success, 1 runtime failure (including a suite whose own
//! verdicts fail), 2 usage error, 3 config/schema error, 4 assumption
//! refusal.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use icl_lab::config::ExperimentConfig;
use icl_lab::error::Error;
use icl_lab::experiments::{self, ablation, agreement, concentration, eq2, hoeffding, identity};
use icl_lab::report::{config_hash, OutputDir, RunManifest};

#[derive(Parser)]
#[command(
    name = "icl-lab",
    version,
    about = "Synthetic laboratory for HMM-mixture in-context learning",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for artifacts (created if absent).
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,

    /// Override the config's root seed; recorded in the manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Verbosity (-v prints suite summaries, -vv per-row detail).
    #[arg(short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a compliant HMM and write it in the structured text format.
    GenerateHmm,
    /// Measure all assumption parameters and write the report.
    CheckAssumptions,
    /// Agreement curves: kernel argmax vs Bayes argmax over the n grid.
    RunAgreement,
    /// Expectation-identity Monte-Carlo ladder.
    RunIdentity,
    /// Concentration-envelope coverage on the unnormalized kernel average.
    RunHoeffding,
    /// Task-posterior concentration against the closed-form lower bound.
    RunConcentration,
    /// One of the directional ablations (per config: retrieval,
    /// label-permute, ood).
    RunAblation,
    /// Operator-vs-forward likelihood equivalence sweep on random models.
    VerifyEq2,
}

fn main() {
    let cli = Cli::parse();
    init_thread_pool();
    let started = Instant::now();
    match run(&cli, started) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_status());
        }
    }
}

/// ICL_LAB_THREADS caps rayon parallelism; default all cores.
fn init_thread_pool() {
    if let Ok(v) = std::env::var("ICL_LAB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn subcommand_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::GenerateHmm => "generate-hmm",
        Command::CheckAssumptions => "check-assumptions",
        Command::RunAgreement => "run-agreement",
        Command::RunIdentity => "run-identity",
        Command::RunHoeffding => "run-hoeffding",
        Command::RunConcentration => "run-concentration",
        Command::RunAblation => "run-ablation",
        Command::VerifyEq2 => "verify-eq2",
    }
}

fn run(cli: &Cli, started: Instant) -> Result<i32, Error> {
    let config_path = cli.config.as_ref().ok_or_else(|| Error::Config {
        path: "--config".into(),
        message: "a config file is required".into(),
    })?;
    let mut config = ExperimentConfig::load(config_path)?;
    let seed_overridden = cli.seed.is_some();
    if let Some(seed) = cli.seed {
        config.run.root_seed = seed;
    }

    let mut out = OutputDir::create(&cli.out)?;
    // the resolved config (defaults filled, seed applied) is itself an artifact
    out.write_text("config.resolved.toml", &config.to_toml_string())?;
    let hash = config_hash(&config);
    if cli.verbose > 0 {
        eprintln!("config {} hash {}", config_path.display(), &hash[..16]);
    }

    let name = subcommand_name(&cli.command);
    let mut exit = 0i32;

    match &cli.command {
        Command::GenerateHmm => {
            let hmm = experiments::resolve_hmm(&config)?;
            out.write_text("hmm.txt", &icl_lab::textfmt::hmm_to_string(&hmm))?;
            if cli.verbose > 0 {
                eprintln!("wrote hmm.txt: d={} m={}", hmm.num_states(), hmm.num_obs());
            }
        }
        Command::CheckAssumptions => {
            let hmm = experiments::resolve_hmm(&config)?;
            let report = icl_lab::assumptions::check_assumptions(&hmm, &config.assumptions)?;
            out.write_json("assumptions.json", &report)?;
            out.write_text("assumptions.txt", &report.table())?;
            if cli.verbose > 0 {
                eprint!("{}", report.table());
            }
        }
        Command::RunAgreement => {
            let lab = experiments::prepare(&config)?;
            let report = agreement::run(&lab)?;
            out.write_csv("agreement.csv", &agreement::to_csv(&report))?;
            out.write_json("summary.json", &report)?;
            for r in &report.rows {
                println!(
                    "n={:<4} agreement={:.4} bayes_acc={:.4} kernel_acc={:.4}",
                    r.n, r.agreement_rate, r.bayes_accuracy, r.kernel_accuracy
                );
            }
            println!(
                "endpoint trend z={:.3} one-sided p={:.3e}",
                report.endpoint_trend.test.z, report.endpoint_trend.test.p_one_sided
            );
        }
        Command::RunIdentity => {
            let lab = experiments::prepare(&config)?;
            let report = identity::run(&lab)?;
            out.write_csv("identity.csv", &identity::to_csv(&report))?;
            out.write_json("summary.json", &report)?;
            println!(
                "identity: max final rel L2 error {:.4e} (tolerance {:.4e}); monotone seeds {}/{}",
                report.max_final_error,
                lab.config.identity.tolerance,
                report.monotone_seeds,
                lab.config.identity.seeds
            );
            if !(report.pass_final_tolerance && report.pass_monotone) {
                exit = 1;
            }
        }
        Command::RunHoeffding => {
            let lab = experiments::prepare(&config)?;
            let report = hoeffding::run(&lab)?;
            out.write_csv("hoeffding.csv", &hoeffding::to_csv(&report))?;
            out.write_json("summary.json", &report)?;
            for r in &report.rows {
                println!(
                    "n={:<4} coverage={:.4} required={:.4} bound={:.4} {}",
                    r.n,
                    r.coverage,
                    r.required_coverage,
                    r.bound,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            if !report.pass_all {
                exit = 1;
            }
        }
        Command::RunConcentration => {
            let lab = experiments::prepare(&config)?;
            let report = concentration::run(&lab)?;
            out.write_csv("concentration.csv", &concentration::to_csv(&report))?;
            out.write_json("summary.json", &report)?;
            println!(
                "concentration: n={} violation_rate={:.4} allowed={:.4} bound={:.6} {}",
                report.n,
                report.violation_rate,
                report.allowed_rate,
                report.bound,
                if report.pass { "pass" } else { "FAIL" }
            );
            if !report.pass {
                exit = 1;
            }
        }
        Command::RunAblation => {
            let lab = experiments::prepare(&config)?;
            let report = ablation::run(&lab)?;
            out.write_csv("ablation.csv", &ablation::to_csv(&report))?;
            out.write_json("summary.json", &report)?;
            for arm in &report.arms {
                println!(
                    "{:<16} kernel_acc={:.4} bayes_acc={:.4} agreement={:.4}",
                    arm.label, arm.kernel_accuracy, arm.bayes_accuracy, arm.agreement_rate
                );
            }
            println!("kernel sign-test one-sided p = {:.4e}", report.kernel_sign_test_p);
        }
        Command::VerifyEq2 => {
            let report = eq2::run(&config.eq2, config.run.root_seed)?;
            out.write_json("eq2.json", &report)?;
            println!(
                "eq2: {} models, {} sequences, max relative deviation {:.3e} (tolerance {:.1e}) {}",
                report.hmm_count,
                report.sequences_checked,
                report.max_relative_deviation,
                report.tolerance,
                if report.pass { "pass" } else { "FAIL" }
            );
            if !report.pass {
                exit = 1;
            }
        }
    }

    let mut manifest = RunManifest::new(name, hash, config.run.root_seed, seed_overridden);
    manifest.wall_time_ms = started.elapsed().as_millis();
    out.finish(manifest)?;
    Ok(exit)
}
