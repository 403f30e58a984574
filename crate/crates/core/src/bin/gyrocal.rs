use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gyrocal::calibration::Method;
use gyrocal::cli::{cmd_calibrate, cmd_evaluate, cmd_simulate, cmd_train, CalibrateArgs, CHECKPOINT_FILE};
use gyrocal::config::RunConfig;
use gyrocal::Result;

/// Gyroscope z-axis turntable calibration experiments.
#[derive(Parser)]
#[command(name = "gyrocal", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config value, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and label the synthetic scenario corpus.
    Simulate {
        /// Output directory [default: paths.corpus_dir].
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Build the dataset, train the learned calibrator, save the best checkpoint.
    Train {
        /// Corpus directory [default: paths.corpus_dir].
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        /// Output directory [default: paths.train_dir].
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Calibrate one up/down recording pair and print the result as JSON.
    Calibrate {
        /// Up-facing recording CSV (`t_s,omega_z_dps`).
        #[arg(long, value_name = "CSV")]
        up: PathBuf,
        /// Down-facing recording CSV.
        #[arg(long, value_name = "CSV")]
        down: PathBuf,
        /// Turntable rate, DPS [default: corpus.rate_dps].
        #[arg(long, value_name = "DPS")]
        rate: Option<f64>,
        /// Sample rate, Hz [default: corpus.fs_hz].
        #[arg(long, value_name = "HZ")]
        fs: Option<f64>,
        /// Calibration window from the start of each recording, seconds.
        #[arg(long, value_name = "S", default_value_t = 2.0)]
        window: f64,
        /// `baseline` or `learned`.
        #[arg(long, default_value = "baseline")]
        method: Method,
        /// Model checkpoint; required for `learned`.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the held-out scenarios and write the report.
    Evaluate {
        /// Model checkpoint [default: paths.train_dir/model.json].
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Corpus directory [default: paths.corpus_dir].
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        /// Output directory [default: paths.report_dir].
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.set(o)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let paths = cfg.paths.clone();
    match cli.command {
        Command::Simulate { out } => {
            let out = out.unwrap_or(paths.corpus_dir);
            let m = cmd_simulate(&cfg, &out)?;
            println!(
                "wrote {} scenarios ({} train, {} test) to {}",
                m.scenarios.len(),
                m.train_ids.len(),
                m.test_ids.len(),
                out.display()
            );
        }
        Command::Train { corpus, out } => {
            let out = out.unwrap_or(paths.train_dir);
            let o = cmd_train(&cfg, &corpus.unwrap_or(paths.corpus_dir), &out)?;
            println!(
                "trained on {} / validated on {} points; best epoch {} of {} (val loss {:.6}, initial {:.6}); checkpoint {}",
                o.dataset.n_train,
                o.dataset.n_val,
                o.history.best_epoch,
                o.history.epochs.len(),
                o.history.best_val_loss,
                o.history.initial_val_loss,
                o.checkpoint.display()
            );
        }
        Command::Calibrate {
            up,
            down,
            rate,
            fs,
            window,
            method,
            checkpoint,
        } => {
            let args = CalibrateArgs {
                up,
                down,
                rate_dps: rate.unwrap_or(cfg.corpus.rate_dps),
                fs_hz: fs.unwrap_or(cfg.corpus.fs_hz),
                window_s: window,
                method,
                checkpoint,
            };
            let result = cmd_calibrate(&cfg, &args)?;
            println!("{}", serde_json::to_string(&result).expect("result serializes"));
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            out,
        } => {
            let checkpoint = checkpoint.unwrap_or_else(|| paths.train_dir.join(CHECKPOINT_FILE));
            let out = out.unwrap_or(paths.report_dir);
            let r = cmd_evaluate(&cfg, &checkpoint, &corpus.unwrap_or(paths.corpus_dir), &out)?;
            println!("evaluated {} scenarios; report in {}", r.scenarios.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
