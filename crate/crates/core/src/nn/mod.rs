//! Minimal neural-network engine and the multi-head calibration network.
//!
//! Forward passes are recorded on a [`Tape`]; [`Tape::backward`] produces exact
//! reverse-mode gradients. The standalone functions below are forward-only
//! conveniences over the same kernels.

pub mod checkpoint;
pub mod model;
pub mod ops;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use model::{ConvSpec, Model, ModelConfig, Mode, PoolSpec};
pub use optim::Adam;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use train::{eval_loss, predict_all, train, EpochRecord, Example, History, TrainHyper};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Weight and bias of a fully connected layer; `weight` is `[n_out, n_in]`.
pub struct FcParams<'a> {
    pub weight: &'a Tensor,
    pub bias: &'a Tensor,
}

fn run_unary(input: &Tensor, f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let y = f(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

/// `[batch, n_prev] -> [batch, n]`.
pub fn fc_forward(input: &Tensor, layer: FcParams<'_>) -> Result<Tensor> {
    run_unary(input, |t, x| {
        let w = t.leaf(layer.weight.clone());
        let b = t.leaf(layer.bias.clone());
        t.linear(x, w, b)
    })
}

/// Valid, stride-1 convolution of `[batch, c_in, H, W]` with `[c_out, c_in, n, m]` kernels.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, biases: &Tensor) -> Result<Tensor> {
    run_unary(input, |t, x| {
        let k = t.leaf(kernels.clone());
        let b = t.leaf(biases.clone());
        t.conv2d(x, k, b)
    })
}

pub fn leaky_relu(input: &Tensor, alpha: f64) -> Result<Tensor> {
    run_unary(input, |t, x| t.leaky_relu(x, alpha))
}

pub fn tanh_act(input: &Tensor) -> Result<Tensor> {
    run_unary(input, |t, x| t.tanh(x))
}

/// Batch-norm parameters and running statistics of one layer.
pub struct BatchNormParams<'a> {
    pub gamma: &'a Tensor,
    pub beta: &'a Tensor,
    pub running_mean: &'a mut Vec<f64>,
    pub running_var: &'a mut Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// Batch norm over `[batch, ch, H, W]`. Train mode normalizes with batch
/// statistics and blends them into the running statistics; Eval mode uses the
/// running statistics.
pub fn batch_norm(input: &Tensor, params: BatchNormParams<'_>, mode: Mode) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let g = tape.leaf(params.gamma.clone());
    let b = tape.leaf(params.beta.clone());
    let y = match mode {
        Mode::Train => {
            let (y, st) = tape.batch_norm_train(x, g, b, params.eps)?;
            let m = params.momentum;
            let correction = st.count as f64 / (st.count as f64 - 1.0).max(1.0);
            for c in 0..st.mean.len() {
                params.running_mean[c] = (1.0 - m) * params.running_mean[c] + m * st.mean[c];
                params.running_var[c] = (1.0 - m) * params.running_var[c] + m * st.var[c] * correction;
            }
            y
        }
        Mode::Eval => tape.batch_norm_frozen(x, g, b, params.running_mean, params.running_var, params.eps)?,
    };
    Ok(tape.value(y).clone())
}

pub fn avg_pool(input: &Tensor, pool_rows: usize, pool_cols: usize) -> Result<Tensor> {
    run_unary(input, |t, x| t.avg_pool(x, pool_rows, pool_cols))
}

/// Inverted dropout in Train mode, identity in Eval mode.
pub fn dropout(input: &Tensor, p: f64, mode: Mode, rng_seed: u64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
    }
    if mode == Mode::Eval {
        return Ok(input.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    run_unary(input, |t, x| t.dropout(x, p, &mut rng))
}

/// `100 * RMSE` over all elements of a `[batch, 2]` prediction.
pub fn loss_rmse100(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("loss over an empty batch"));
    }
    Ok(ops::rmse100(pred.values(), target.values()))
}

/// Eval-mode forward pass of a `[batch, 3, W]` input.
pub fn model_forward(model: &Model, batch: &Tensor) -> Result<Tensor> {
    model.predict(batch)
}
