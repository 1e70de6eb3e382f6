use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spd_align::bench::{emit_report, gen_synthetic_shift, run_experiment, ExperimentConfig};
use spd_align::coral::{apply_alignment, fit_coral, verify_alignment};
use spd_align::grad::{random_gradient_check, CheckedLoss};
use spd_align::metrics::Dissimilarity;
use spd_align::trainer::{train, Mode, TrainConfig};
use spd_align::{batch_covariance, ErrorKind, FeatureBatch, SpdError, SpdMatrix, DEFAULT_GAMMA};

const THREADS_VAR: &str = "SPD_ALIGN_THREADS";

/// Covariance alignment on the SPD manifold: distances, CORAL, gradient checks,
/// training and benchmarks.
#[derive(Debug, Parser)]
#[command(name = "spd-align", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dissimilarity between two covariances (or the covariances of two feature CSVs).
    Dist {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// euclidean, logE, affine, jeffrey, stein or all.
        #[arg(long, default_value = "all")]
        metric: String,
        /// Ridge added to covariances estimated from feature rows.
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
    },
    /// Closed-form CORAL: recolor source features to the target covariance.
    Align {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Aligned source features (CSV).
        #[arg(long)]
        out: PathBuf,
        /// Before/after dissimilarities (JSON).
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
    },
    /// Compare analytic loss gradients with central finite differences.
    GradCheck {
        /// coral or log.
        #[arg(long)]
        loss: String,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the MLP on labeled source and unlabeled target features.
    Train {
        /// Training configuration (JSON); omitted keys take their defaults.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Per-step loss trace (CSV).
        #[arg(long)]
        trace: PathBuf,
        /// Trained parameters (JSON).
        #[arg(long)]
        params_out: PathBuf,
    },
    /// Run baseline, CORAL-loss and log-loss training on a synthetic shift.
    Bench {
        /// Experiment description (JSON); defaults to the strong-shift benchmark.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation => 1,
        ErrorKind::Numerical => 2,
        ErrorKind::Io => 3,
    }
}

/// 12 significant digits, switching to exponent form outside `[1e-5, 1e12)`.
fn format_sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.11}");
    }
    // the exponent of the rounded mantissa already accounts for carries
    let sci = format!("{v:.11e}");
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp) as usize;
        format!("{v:.decimals$}")
    } else {
        sci
    }
}

/// A square, symmetric CSV without labels is a covariance; anything else is a
/// batch of feature rows whose regularized covariance is used.
fn load_covariance(path: &Path, gamma: f64) -> spd_align::Result<SpdMatrix> {
    let batch = FeatureBatch::read_csv(path)?;
    let m = batch.rows();
    let square = batch.labels().is_none() && m.nrows() == m.ncols() && m.nrows() > 0;
    if square {
        let scale = m.amax().max(f64::MIN_POSITIVE);
        if (m - m.transpose()).amax() <= 1e-12 * scale {
            return SpdMatrix::new(m.clone());
        }
    }
    batch_covariance(&batch, gamma)
}

fn threads() -> spd_align::Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(SpdError::Invalid(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

fn write_file(path: &Path, text: &str) -> spd_align::Result<()> {
    std::fs::write(path, text).map_err(|e| SpdError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn json_error(e: serde_json::Error) -> SpdError {
    SpdError::Invalid(format!("cannot serialize output: {e}"))
}

fn run(cmd: Command) -> spd_align::Result<ExitCode> {
    match cmd {
        Command::Dist { a, b, metric, gamma } => {
            let metrics: Vec<Dissimilarity> = if metric.eq_ignore_ascii_case("all") {
                Dissimilarity::ALL.to_vec()
            } else {
                vec![metric.parse()?]
            };
            let ca = load_covariance(&a, gamma)?;
            let cb = load_covariance(&b, gamma)?;
            for m in metrics {
                println!("{},{}", m.name(), format_sig12(m.eval(&ca, &cb)?));
            }
        }
        Command::Align {
            source,
            target,
            out,
            report,
            gamma,
        } => {
            let source = FeatureBatch::read_csv(&source)?;
            let target = FeatureBatch::read_csv(&target)?;
            let (t, c_s, c_t) = fit_coral(&source, &target, gamma)?;
            let aligned = apply_alignment(&t, &source)?;
            let summary = verify_alignment(&c_s, &c_t, &t)?;
            aligned.write_csv(&out)?;
            write_file(&report, &(serde_json::to_string_pretty(&summary).map_err(json_error)? + "\n"))?;
            println!("before_max={}", format_sig12(summary.before.max()));
            println!("after_max={}", format_sig12(summary.after.max()));
        }
        Command::GradCheck { loss, dim, trials, seed } => {
            let loss: CheckedLoss = loss.parse()?;
            let err = random_gradient_check(loss, dim, trials, seed)?;
            println!("max_rel_err={err:e}");
            if !(err < loss.threshold()) {
                eprintln!("error: exceeds threshold {:e}", loss.threshold());
                return Ok(ExitCode::from(2));
            }
        }
        Command::Train {
            config,
            source,
            target,
            trace,
            params_out,
        } => {
            let cfg = TrainConfig::read_json(&config)?;
            let source = FeatureBatch::read_csv(&source)?;
            let target = FeatureBatch::read_csv(&target)?;
            let (params, losses) = train(&cfg, &source, &target)?;
            losses.write_csv(&trace)?;
            write_file(&params_out, &(serde_json::to_string_pretty(&params).map_err(json_error)? + "\n"))?;
            match losses.records().last() {
                Some(r) => {
                    println!("steps={}", losses.len());
                    println!("loss_class={}", format_sig12(r.loss_class));
                    println!("loss_align_weighted={}", format_sig12(r.loss_align_weighted));
                }
                None => println!("steps=0"),
            }
        }
        Command::Bench { spec, out_dir } => {
            let cfg = match spec {
                Some(path) => ExperimentConfig::read_json(&path)?,
                None => ExperimentConfig::default(),
            };
            let report = run_experiment(&cfg.shift, &cfg.mode_configs(), threads()?)?;
            emit_report(&report, &out_dir)?;
            gen_synthetic_shift(&cfg.shift)?.write_csvs(&out_dir)?;

            let base = report
                .summary
                .mode(Mode::Baseline)
                .map(|r| r.target_accuracy)
                .unwrap_or(f64::NAN);
            println!("{:<10} {:>10} {:>8}", "mode", "accuracy", "gain");
            for r in &report.summary.modes {
                println!(
                    "{:<10} {:>10.2} {:>+8.2}",
                    r.mode.name(),
                    100.0 * r.target_accuracy,
                    100.0 * (r.target_accuracy - base)
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
