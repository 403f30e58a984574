//! Mini-batch training with best-validation retention and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Mode, Model};
use super::ops;
use super::optim::Adam;
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A labeled `3 x W` input window.
pub trait Example {
    /// Row-major `3 x W` buffer: up, down, ground-truth rate.
    fn window(&self) -> &[f64];
    /// `[scale, bias]`.
    fn target(&self) -> [f64; 2];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            epochs: 300,
            seed: 0,
            patience: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean train-mode mini-batch loss over the epoch.
    pub train_loss: f64,
    /// Eval-mode loss over the whole validation set after the epoch.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Eval-mode validation loss of the untrained model.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Stacks examples into a `[batch, 3, W]` input and `[batch, 2]` target.
pub fn make_batch<E: Example>(examples: &[&E], window_len: usize) -> Result<(Tensor, Tensor)> {
    let mut x = Vec::with_capacity(examples.len() * 3 * window_len);
    let mut y = Vec::with_capacity(examples.len() * 2);
    for e in examples {
        if e.window().len() != 3 * window_len {
            return Err(Error::shape(format!(
                "example window has {} values, model expects 3 x {window_len}",
                e.window().len()
            )));
        }
        x.extend_from_slice(e.window());
        y.extend_from_slice(&e.target());
    }
    Ok((
        Tensor::new(vec![examples.len(), 3, window_len], x)?,
        Tensor::new(vec![examples.len(), 2], y)?,
    ))
}

/// Eval-mode predictions, one `[scale, bias]` per example.
pub fn predict_all<E: Example>(model: &Model, examples: &[E]) -> Result<Vec<[f64; 2]>> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(CHUNK) {
        let refs: Vec<&E> = chunk.iter().collect();
        let (x, _) = make_batch(&refs, model.config.window_len)?;
        let pred = model.predict(&x)?;
        out.extend(pred.values().chunks_exact(2).map(|p| [p[0], p[1]]));
    }
    Ok(out)
}

/// Eval-mode loss over a whole set.
pub fn eval_loss<E: Example>(model: &Model, examples: &[E]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("loss over an empty set"));
    }
    let pred: Vec<f64> = predict_all(model, examples)?.into_iter().flatten().collect();
    let target: Vec<f64> = examples.iter().flat_map(|e| e.target()).collect();
    Ok(ops::rmse100(&pred, &target))
}

/// One optimization step on a batch; returns the batch loss.
pub fn train_step<E: Example>(
    model: &mut Model,
    optimizer: &mut Adam,
    batch: &[&E],
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (x, y) = make_batch(batch, model.config.window_len)?;
    model.set_mode(Mode::Train);
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let input = tape.leaf(x);
    let pass = model.forward_on_tape(&mut tape, &params, input, Some(dropout_rng))?;
    let loss = tape.rmse100(pass.output, &y)?;
    let loss_value = tape.value(loss).values()[0];
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!("training loss became {loss_value}")));
    }
    let mut grads = tape.backward(loss)?;
    for (p, &v) in model.parameters_mut().into_iter().zip(params.all()) {
        p.set_grad(grads.take(v))?;
    }
    optimizer.step(model.parameters_mut())?;
    model.update_running_stats(&pass.bn_stats)?;
    Ok(loss_value)
}

/// Trains `model`, returning the best-validation parameters (in Eval mode)
/// and the per-epoch loss history. Shuffling and dropout are seeded from
/// `hyper.seed`.
pub fn train<E: Example>(mut model: Model, train_set: &[E], val_set: &[E], hyper: &TrainHyper) -> Result<(Model, History)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    if hyper.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if !(hyper.lr >= 0.0 && hyper.lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate {} must be finite and >= 0", hyper.lr)));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    dropout_rng.set_stream(2);

    let mut optimizer = Adam::new(hyper.lr);
    model.set_mode(Mode::Eval);
    let initial_val_loss = eval_loss(&model, val_set)?;
    let mut history = History {
        initial_val_loss,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: initial_val_loss,
        stopped_early: false,
    };
    let mut best = model.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut since_best = 0;

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut weighted = 0.0;
        for idx in order.chunks(hyper.batch_size) {
            let batch: Vec<&E> = idx.iter().map(|&i| &train_set[i]).collect();
            let loss = train_step(&mut model, &mut optimizer, &batch, &mut dropout_rng)
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
                    other => other,
                })?;
            weighted += loss * batch.len() as f64;
        }
        let train_loss = weighted / train_set.len() as f64;
        model.set_mode(Mode::Eval);
        let val_loss = eval_loss(&model, val_set)?;
        if !val_loss.is_finite() || !model.all_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: validation loss became {val_loss}")));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    for p in best.parameters_mut() {
        p.zero_grad();
    }
    best.set_mode(Mode::Eval);
    Ok((best, history))
}
