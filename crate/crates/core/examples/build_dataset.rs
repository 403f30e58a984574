//! Simulates the default corpus, cuts it into windows, splits it, and writes
//! the dataset files.
//!
//! ```text
//! cargo run --release --example build_dataset -- [out_dir]
//! ```

use std::path::PathBuf;

use gyrocal::config::RunConfig;
use gyrocal::pipeline::{build_datapoints, build_synthetic_corpus, split_train_val, write_dataset};
use gyrocal::sensor_model::Scenario;

fn main() -> gyrocal::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/example".into()));
    let cfg = RunConfig::default();
    let hash = cfg.hash();
    let (corpus, manifest) = build_synthetic_corpus(&cfg.corpus, cfg.seeds.corpus, &out.join("corpus"), &hash)?;
    println!(
        "corpus: {} train + {} held-out scenarios, config {hash}",
        manifest.train_ids.len(),
        manifest.test_ids.len()
    );

    let train: Vec<Scenario> = corpus.train_scenarios().into_iter().cloned().collect();
    let points = build_datapoints(&train, &cfg.pipeline)?;
    let split = split_train_val(points, cfg.pipeline.split_ratio, cfg.seeds.split)?;
    let m = write_dataset(&split, &corpus, &out.join("dataset"), &hash)?;
    println!("datapoints: {} train / {} val, window {} samples", m.n_train, m.n_val, m.window_len);

    let p = &split.train[0];
    println!(
        "first train point: {} segment {} window {}, label scale {:.6} bias {:.5}",
        p.provenance.scenario_id, p.provenance.segment, p.provenance.window, p.label.scale, p.label.bias
    );
    Ok(())
}
