//! Full experiment in memory: simulate a corpus, train, evaluate the held-out
//! scenarios, and print a per-window AE summary.
//!
//! ```text
//! cargo run --release --example train_and_evaluate -- [epochs] [corpus_seed]
//! ```

use std::time::Instant;

use gyrocal::config::RunConfig;
use gyrocal::eval::evaluate;
use gyrocal::nn::{train, Model};
use gyrocal::pipeline::{build_datapoints, generate_corpus, split_train_val};
use gyrocal::sensor_model::Scenario;

fn main() -> gyrocal::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    if let Some(e) = args.next() {
        cfg.train.epochs = e.parse().expect("epochs must be an integer");
    }
    if let Some(s) = args.next() {
        cfg.seeds.corpus = s.parse().expect("seed must be an integer");
    }

    let t0 = Instant::now();
    let corpus = generate_corpus(&cfg.corpus, cfg.seeds.corpus)?;
    let train_scenarios: Vec<Scenario> = corpus.train_scenarios().into_iter().cloned().collect();
    let points = build_datapoints(&train_scenarios, &cfg.pipeline)?;
    let split = split_train_val(points, cfg.pipeline.split_ratio, cfg.seeds.split)?;
    println!(
        "corpus: {} scenarios, {} train / {} val points ({:.1?})",
        corpus.scenarios.len(),
        split.train.len(),
        split.val.len(),
        t0.elapsed()
    );

    let t1 = Instant::now();
    let model = Model::new(cfg.model.clone(), cfg.seeds.init)?;
    let (model, history) = train(model, &split.train, &split.val, &cfg.train_hyper())?;
    println!(
        "trained {} epochs in {:.1?}: val loss {:.5} -> {:.5} (best epoch {})",
        history.epochs.len(),
        t1.elapsed(),
        history.initial_val_loss,
        history.best_val_loss,
        history.best_epoch
    );

    for e in &history.epochs {
        println!("  epoch {:>3}  train {:.5}  val {:.5}", e.epoch, e.train_loss, e.val_loss);
    }

    let report = evaluate(&model, &corpus.test_scenarios(), &cfg.eval.windows_s, cfg.pipeline.stride, &cfg.hash())?;
    println!("{:<6} {:>4} {:>6} {:>12} {:>12} {:>8}", "scen", "win", "term", "AE ours", "AE base", "impr %");
    for s in &report.scenarios {
        for w in &s.windows {
            for (term, ours, base, imp) in [
                ("scale", w.ae_ours.scale, w.ae_baseline.scale, w.improvement_pct.scale),
                ("bias", w.ae_ours.bias, w.ae_baseline.bias, w.improvement_pct.bias),
            ] {
                let imp = imp.map_or("-".to_string(), |v| format!("{v:.1}"));
                println!("{:<6} {:>4} {term:>6} {ours:>12.6} {base:>12.6} {imp:>8}", s.id, w.window_s);
            }
        }
    }
    Ok(())
}
