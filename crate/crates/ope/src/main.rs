//! Command-line interface for simulation, fitting, estimation, variance,
//! and Monte Carlo experiments.
//!
//! Exit codes: 0 on success, 2 on validation errors (bad inputs, malformed
//! logs, impossible configs), 3 on numerical failures (singular bases,
//! non-convergence, zero propensities at chosen actions).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ope::error::{Error, Result};
use ope::estimators::{ipw_estimated, ipw_realized, ipw_true, EstimatorKind};
use ope::harness::{
    monte_carlo, report, BasisConfig, EnvSource, ExperimentConfig, ReportFormat,
};
use ope::log::{read_csv, validate_log, write_csv};
use ope::nuisance::{
    fit_reward_models, fit_ridge_logistic_propensity, fit_sieve_logit, fit_sieve_ls, LinkKind,
    PropensityModel,
};
use ope::variance::{avar_estimated, avar_true, confidence_interval, VarianceReport};
use ope::{BanditLog64, PolicySpec64, RewardModel64, SyntheticEnv64, ValueEstimate64};

#[derive(Parser)]
#[command(
    name = "ope",
    version,
    about = "Off-policy evaluation of logged contextual-bandit data",
    after_help = "Exit codes: 0 success, 2 validation error, 3 numerical failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a batched bandit log from an environment JSON file.
    Simulate {
        /// Environment description (JSON).
        #[arg(long)]
        env: PathBuf,
        /// Number of rounds.
        #[arg(long)]
        t: usize,
        /// Number of batches.
        #[arg(long, default_value_t = 1)]
        b: usize,
        /// RNG seed; identical seeds reproduce identical logs.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output log (CSV).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a propensity-score model on a log.
    FitPropensity {
        #[arg(long)]
        log: PathBuf,
        /// One of: sieve-ls, sieve-logit, ridge, import.
        #[arg(long)]
        family: String,
        /// One of: intercept, onehot, poly:<degree>.
        #[arg(long, default_value = "onehot")]
        basis: String,
        /// Ridge penalty (ridge family only).
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Clipping floor applied at prediction time.
        #[arg(long, default_value_t = 0.01)]
        clip: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Precomputed per-round scores (CSV: round,p_0..p_m); import family.
        #[arg(long)]
        import: Option<PathBuf>,
        /// Output model (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit per-action reward models on a log.
    FitReward {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "onehot")]
        basis: String,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// logistic (rewards in [0,1]) or identity.
        #[arg(long, default_value = "logistic")]
        link: String,
        /// Output reward-model set (JSON array).
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a target policy's value from a log.
    Estimate {
        #[arg(long)]
        log: PathBuf,
        /// Target policy (JSON).
        #[arg(long)]
        policy: PathBuf,
        /// Weight source: estimated:<model.json>, true, or realized.
        #[arg(long)]
        score: String,
        /// Self-normalize the weighted sum (requires weights summing to 1).
        #[arg(long)]
        self_normalized: bool,
        /// Output estimate (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the asymptotic variance of a previous estimate and build a
    /// confidence interval.
    Variance {
        #[arg(long)]
        log: PathBuf,
        /// Estimate produced by `estimate` (JSON).
        #[arg(long)]
        est: PathBuf,
        /// Reward-model set produced by `fit-reward` (JSON).
        #[arg(long)]
        mu: PathBuf,
        /// Target policy (JSON); the influence terms depend on it.
        #[arg(long)]
        policy: PathBuf,
        /// Propensity model (JSON); required for estimated-score kinds.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Output report (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a replicated Monte Carlo experiment from a config file.
    MonteCarlo {
        /// Experiment config (JSON); see README for the schema.
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; results are identical for any worker count.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output summary (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a Monte Carlo summary as json, csv, or md.
    Report {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_log(path: &Path) -> Result<BanditLog64> {
    let file = fs::File::open(path)?;
    let log = read_csv::<f64, _>(file)?;
    let violations = validate_log(&log);
    if !violations.is_empty() {
        for v in &violations {
            match v.record {
                Some(i) => eprintln!("log violation at record {i}: {} ({})", v.rule, v.detail),
                None => eprintln!("log violation: {} ({})", v.rule, v.detail),
            }
        }
        return Err(Error::InvalidLog(format!(
            "{} violation(s) in {}",
            violations.len(),
            path.display()
        )));
    }
    Ok(log)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            env,
            t,
            b,
            seed,
            out,
        } => {
            let env: SyntheticEnv64 = load_json(&env)?;
            let log = ope::dgp::run_logging(&env, t, b, seed)?;
            let file = fs::File::create(&out)?;
            write_csv(&log, file)?;
            eprintln!("wrote {} rounds to {}", log.len(), out.display());
            Ok(())
        }

        Command::FitPropensity {
            log,
            family,
            basis,
            lambda,
            clip,
            max_iter,
            tol,
            import,
            out,
        } => {
            let data = load_log(&log)?;
            let basis = BasisConfig::parse(&basis)?.instantiate(&data);
            let model = match family.as_str() {
                "sieve-ls" => fit_sieve_ls(&data, basis)?.with_clip_floor(clip),
                "sieve-logit" => {
                    fit_sieve_logit(&data, basis, max_iter, tol)?.with_clip_floor(clip)
                }
                "ridge" => {
                    fit_ridge_logistic_propensity(&data, basis, lambda)?.with_clip_floor(clip)
                }
                "import" => {
                    let path = import.ok_or_else(|| {
                        Error::InvalidConfig(
                            "--import <scores.csv> is required with --family import".into(),
                        )
                    })?;
                    let file = fs::File::open(&path)?;
                    let model = PropensityModel::<f64>::from_import_csv(file, clip)?;
                    if model.coefficients.len() != data.len() {
                        return Err(Error::ImportMisaligned {
                            rows: model.coefficients.len(),
                            records: data.len(),
                        });
                    }
                    model
                }
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown family {other:?} (expected sieve-ls, sieve-logit, ridge, import)"
                    )))
                }
            };
            write_json(&out, &model)?;
            eprintln!("wrote model to {}", out.display());
            Ok(())
        }

        Command::FitReward {
            log,
            basis,
            lambda,
            link,
            out,
        } => {
            let data = load_log(&log)?;
            let link = match link.as_str() {
                "logistic" => LinkKind::Logistic,
                "identity" => LinkKind::Identity,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown link {other:?} (expected logistic or identity)"
                    )))
                }
            };
            let basis = BasisConfig::parse(&basis)?.instantiate(&data);
            let models = fit_reward_models(&data, &basis, lambda, link)?;
            write_json(&out, &models)?;
            eprintln!("wrote {} reward models to {}", models.len(), out.display());
            Ok(())
        }

        Command::Estimate {
            log,
            policy,
            score,
            self_normalized,
            out,
        } => {
            let data = load_log(&log)?;
            let policy: PolicySpec64 = load_json(&policy)?;
            let estimate = match score.as_str() {
                "true" => ipw_true(&data, &policy, self_normalized)?,
                "realized" => ipw_realized(&data, &policy, self_normalized)?,
                other => {
                    let model_path = other.strip_prefix("estimated:").ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "unknown score {other:?} (expected estimated:<model.json>, true, or realized)"
                        ))
                    })?;
                    let model: PropensityModel<f64> = load_json(Path::new(model_path))?;
                    ipw_estimated(&data, &policy, &model, self_normalized)?
                }
            };
            write_json(&out, &estimate)?;
            eprintln!(
                "{} = {:.6} (T = {})",
                estimate.kind.name(),
                estimate.value,
                estimate.t
            );
            Ok(())
        }

        Command::Variance {
            log,
            est,
            mu,
            policy,
            model,
            level,
            out,
        } => {
            let data = load_log(&log)?;
            let estimate: ValueEstimate64 = load_json(&est)?;
            let policy: PolicySpec64 = load_json(&policy)?;
            let mu: Vec<RewardModel64> = load_json(&mu)?;
            let avar = match estimate.kind {
                EstimatorKind::EstimatedScore | EstimatorKind::EstimatedScoreSn => {
                    let model_path = model.ok_or_else(|| {
                        Error::InvalidConfig(
                            "--model <model.json> is required for estimated-score kinds".into(),
                        )
                    })?;
                    let p_hat: PropensityModel<f64> = load_json(&model_path)?;
                    avar_estimated(&data, estimate.value, &p_hat, &mu, &policy)?
                }
                EstimatorKind::TrueScore | EstimatorKind::TrueScoreSn => {
                    avar_true(&data, estimate.value, &policy)?
                }
                EstimatorKind::RealizedScore | EstimatorKind::RealizedScoreSn => {
                    return Err(Error::InvalidConfig(
                        "no asymptotic-variance estimator exists for realized-score kinds"
                            .into(),
                    ))
                }
            };
            let ci = confidence_interval(estimate.value, &avar, level)?;
            let report = VarianceReport {
                estimator_kind: estimate.kind,
                value: estimate.value,
                avar: avar.avar,
                t: avar.t,
                level,
                ci: [ci.0, ci.1],
            };
            write_json(&out, &report)?;
            eprintln!(
                "avar = {:.6}, {:.0}% CI = [{:.6}, {:.6}]",
                report.avar,
                level * 100.0,
                report.ci[0],
                report.ci[1]
            );
            Ok(())
        }

        Command::MonteCarlo {
            config,
            workers,
            out,
        } => {
            let mut experiment: ExperimentConfig<f64> = load_json(&config)?;
            // resolve a relative env path against the config's directory
            let base = config.parent().map(Path::to_path_buf);
            let env = match &experiment.env {
                EnvSource::Path(_) => experiment.env.resolve(base.as_deref())?,
                EnvSource::Inline(env) => env.clone(),
            };
            experiment.env = EnvSource::Inline(env);
            let summary = monte_carlo(&experiment, workers.max(1))?;
            write_json(&out, &summary)?;
            eprintln!(
                "ran {} replications (T = {}); wrote {}",
                summary.replications,
                summary.t,
                out.display()
            );
            Ok(())
        }

        Command::Report {
            summary,
            format,
            out,
        } => {
            let summary: ope::ReplicationSummary64 = load_json(&summary)?;
            let rendered = report(&summary, ReportFormat::parse(&format)?)?;
            match out {
                Some(path) => fs::write(path, rendered)?,
                None => print!("{rendered}"),
            }
            Ok(())
        }
    }
}
