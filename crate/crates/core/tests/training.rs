//! Training-loop behavior: memorization, frozen optimizer, determinism.

use gyrocal::nn::{eval_loss, train, Example, Model, ModelConfig, Tape, Tensor, TrainHyper};
use gyrocal::pipeline::{build_datapoints, generate_corpus, split_train_val, CorpusParams, DataPoint, PipelineConfig};
use gyrocal::sensor_model::Scenario;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_points(n_scenarios: usize, seed: u64) -> Vec<DataPoint> {
    let params = CorpusParams {
        n_scenarios: n_scenarios + 1,
        n_test: 1,
        duration_s: 48.0,
        ..CorpusParams::default()
    };
    let corpus = generate_corpus(&params, seed).unwrap();
    let train: Vec<Scenario> = corpus.train_scenarios().into_iter().cloned().collect();
    build_datapoints(&train, &PipelineConfig::default()).unwrap()
}

/// Train-mode loss of one batch with a fixed dropout stream.
fn train_mode_loss(model: &Model, points: &[DataPoint]) -> f64 {
    let x: Vec<f64> = points.iter().flat_map(|p| p.window().to_vec()).collect();
    let y: Vec<f64> = points.iter().flat_map(|p| p.target()).collect();
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let input = tape.leaf(Tensor::new(vec![points.len(), 3, 290], x).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = model.forward_on_tape(&mut tape, &params, input, Some(&mut rng)).unwrap();
    let loss = tape.rmse100(pass.output, &Tensor::new(vec![points.len(), 2], y).unwrap()).unwrap();
    tape.value(loss).values()[0]
}

#[test]
fn memorizes_a_single_datapoint() {
    let points = small_points(1, 3);
    // Dropout noise on the hidden layer would keep the loss from collapsing.
    let config = ModelConfig {
        dropout_p: 0.0,
        ..ModelConfig::default()
    };
    let hyper = TrainHyper {
        epochs: 200,
        batch_size: 1,
        patience: 200,
        ..TrainHyper::default()
    };
    for seed in 1..4 {
        let one = vec![points[seed as usize].clone()];
        let model = Model::new(config.clone(), seed).unwrap();
        let initial = train_mode_loss(&model, &one);
        let (_, history) = train(model, &one, &one, &hyper).unwrap();
        assert_eq!(history.epochs.len(), 200);
        // With a fixed step size on a non-squared loss the optimizer settles
        // into a small limit cycle around the fit instead of converging.
        let best = history.epochs.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
        let tail = history.epochs[180..].iter().map(|e| e.train_loss).sum::<f64>() / 20.0;
        assert!(best < 0.01 * initial, "seed {seed}: initial {initial}, best {best}");
        assert!(tail < 0.05 * initial, "seed {seed}: initial {initial}, last-20 mean {tail}");
    }
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let points = small_points(1, 4);
    let model = Model::new(ModelConfig::default(), 2).unwrap();
    let before: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
    let hyper = TrainHyper {
        lr: 0.0,
        epochs: 3,
        patience: 10,
        ..TrainHyper::default()
    };
    let (after, history) = train(model, &points[..24], &points[24..], &hyper).unwrap();
    assert_eq!(history.epochs.len(), 3);
    for (a, b) in before.iter().zip(after.parameters()) {
        assert_eq!(a.values(), b.values());
    }
}

#[test]
fn same_seed_gives_identical_history_and_model() {
    let points = small_points(2, 5);
    let split = split_train_val(points, 0.8, 1).unwrap();
    let hyper = TrainHyper {
        epochs: 4,
        patience: 10,
        seed: 9,
        ..TrainHyper::default()
    };
    let run = || {
        let model = Model::new(ModelConfig::default(), 8).unwrap();
        train(model, &split.train, &split.val, &hyper).unwrap()
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
    let other = TrainHyper { seed: 10, ..hyper.clone() };
    let (_, h3) = train(Model::new(ModelConfig::default(), 8).unwrap(), &split.train, &split.val, &other).unwrap();
    assert_ne!(h1, h3);
}

#[test]
fn best_validation_model_is_returned() {
    let points = small_points(2, 6);
    let split = split_train_val(points, 0.8, 2).unwrap();
    let hyper = TrainHyper {
        epochs: 6,
        patience: 2,
        ..TrainHyper::default()
    };
    let (model, history) = train(Model::new(ModelConfig::default(), 1).unwrap(), &split.train, &split.val, &hyper).unwrap();
    let reported = eval_loss(&model, &split.val).unwrap();
    assert_eq!(reported, history.best_val_loss);
    let best = history.epochs.iter().map(|e| e.val_loss).fold(history.initial_val_loss, f64::min);
    assert_eq!(history.best_val_loss, best);
    assert!(history.best_val_loss <= history.initial_val_loss);
    if history.stopped_early {
        assert_eq!(history.epochs.len(), history.best_epoch + hyper.patience);
    }
}

#[test]
fn invalid_training_inputs_are_rejected() {
    let points = small_points(1, 7);
    let model = Model::new(ModelConfig::default(), 1).unwrap();
    let hyper = TrainHyper::default();
    assert!(train(model.clone(), &points[..0], &points, &hyper).is_err());
    let bad = TrainHyper { batch_size: 0, ..hyper.clone() };
    assert!(train(model.clone(), &points, &points, &bad).is_err());
    let bad = TrainHyper { lr: f64::NAN, ..hyper };
    assert!(train(model, &points, &points, &bad).is_err());
}

#[test]
fn divergence_is_a_numeric_error() {
    let points = small_points(1, 8);
    let model = Model::new(ModelConfig::default(), 1).unwrap();
    let hyper = TrainHyper {
        lr: 1e300,
        epochs: 5,
        ..TrainHyper::default()
    };
    match train(model, &points, &points, &hyper) {
        Err(gyrocal::Error::Numeric(msg)) => assert!(msg.contains("epoch")),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}
