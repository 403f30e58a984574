//! The four experiment commands behind the `gyrocal` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::calibration::{calibrate_single_axis, mean_window, CalibrationResult, Method};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, learned_estimate, write_report, EvalReport};
use crate::nn::{train, Checkpoint, History, Model};
use crate::pipeline::{
    build_datapoints, build_synthetic_corpus, read_corpus, split_train_val, write_dataset, CorpusManifest,
    DatasetManifest, CORPUS_MANIFEST,
};
use crate::sensor_model::{Orientation, Recording, Scenario};

pub const CHECKPOINT_FILE: &str = "model.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const DATASET_DIR: &str = "dataset";

/// Simulates, labels, and writes the synthetic corpus.
pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<CorpusManifest> {
    cfg.validate()?;
    let (_, manifest) = build_synthetic_corpus(&cfg.corpus, cfg.seeds.corpus, out_dir, &cfg.hash())?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub history: History,
    pub dataset: DatasetManifest,
}

pub fn history_csv(history: &History, config_hash: &str) -> String {
    let mut out = format!("# config_hash={config_hash}\n");
    out.push_str("epoch,train_loss,val_loss\n");
    for e in &history.epochs {
        let _ = writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.val_loss);
    }
    out
}

/// Builds the dataset from the corpus's training scenarios, trains, and
/// saves the best checkpoint, the loss history, and the dataset files.
pub fn cmd_train(cfg: &RunConfig, corpus_dir: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    let corpus = read_corpus(corpus_dir)?;
    let train_scenarios: Vec<Scenario> = corpus.train_scenarios().into_iter().cloned().collect();
    if train_scenarios.is_empty() {
        return Err(Error::format(corpus_dir.join(CORPUS_MANIFEST), "corpus has no training scenarios"));
    }
    let points = build_datapoints(&train_scenarios, &cfg.pipeline)?;
    let split = split_train_val(points, cfg.pipeline.split_ratio, cfg.seeds.split)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dataset = write_dataset(&split, &corpus, &out_dir.join(DATASET_DIR), &hash)?;

    let model = Model::new(cfg.model.clone(), cfg.seeds.init)?;
    let (model, history) = train(model, &split.train, &split.val, &cfg.train_hyper())?;

    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    Checkpoint::new(model, cfg.seeds.train, Some(hash.clone())).save(&checkpoint)?;
    let hpath = out_dir.join(HISTORY_FILE);
    fs::write(&hpath, history_csv(&history, &hash)).map_err(|e| Error::io(&hpath, e))?;
    Ok(TrainOutcome {
        checkpoint,
        history,
        dataset,
    })
}

/// Calibration request for one up/down recording pair.
#[derive(Debug, Clone)]
pub struct CalibrateArgs {
    pub up: PathBuf,
    pub down: PathBuf,
    pub rate_dps: f64,
    pub fs_hz: f64,
    pub window_s: f64,
    pub method: Method,
    pub checkpoint: Option<PathBuf>,
}

pub fn cmd_calibrate(cfg: &RunConfig, args: &CalibrateArgs) -> Result<CalibrationResult> {
    let checkpoint = match (args.method, &args.checkpoint) {
        (Method::Learned, None) => {
            return Err(Error::invalid("method `learned` requires --checkpoint"));
        }
        (_, c) => c.clone(),
    };
    let up = Recording::read_csv(&args.up, args.fs_hz, Orientation::Up, args.rate_dps)?;
    let down = Recording::read_csv(&args.down, args.fs_hz, Orientation::Down, args.rate_dps)?;
    match args.method {
        Method::Baseline => {
            let u = mean_window(&up, 0.0, args.window_s)?;
            let d = mean_window(&down, 0.0, args.window_s)?;
            calibrate_single_axis(u, d, args.rate_dps, args.window_s)
        }
        Method::Learned => {
            let path = checkpoint.expect("checked above");
            let ckpt = Checkpoint::load(&path)?;
            let scenario = Scenario::new("input", up, down, None)?;
            let est = learned_estimate(&ckpt.model, &scenario, args.window_s, cfg.pipeline.stride)?;
            CalibrationResult::new(Method::Learned, args.window_s, est)
        }
    }
}

/// Evaluates a checkpoint on the corpus's held-out scenarios and writes the
/// report files.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, corpus_dir: &Path, out_dir: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let corpus = read_corpus(corpus_dir)?;
    let tests = corpus.test_scenarios();
    if tests.is_empty() {
        return Err(Error::format(corpus_dir.join(CORPUS_MANIFEST), "corpus has no test scenarios"));
    }
    let report = evaluate(&ckpt.model, &tests, &cfg.eval.windows_s, cfg.pipeline.stride, &cfg.hash())?;
    write_report(&report, out_dir)?;
    Ok(report)
}
