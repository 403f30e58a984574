//! Multi-head 2D-CNN that maps a `3 x W` calibration window to `(scale, bias)`.
//!
//! ```text
//! rows {up, gt}   -> BN -> conv -> avg-pool -> LeakyReLU --\
//!                                                           stack (height) -> BN -> conv -> avg-pool -> LeakyReLU
//! rows {down, gt} -> BN -> conv -> avg-pool -> LeakyReLU --/                                            |
//!                                   flatten -> fc1 -> tanh -> dropout -> fc2 -> [scale, bias]  <--------/
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Dims4};
use super::tape::{BatchStats, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Samples per input window.
    pub window_len: usize,
    /// Up/down head convolution; `kernel_rows` must be 2.
    pub head_conv: ConvSpec,
    pub combined_conv: ConvSpec,
    pub pool: PoolSpec,
    pub fc_hidden: usize,
    pub dropout_p: f64,
    pub leaky_alpha: f64,
    pub bn_epsilon: f64,
    /// Weight of the current batch when blending running statistics.
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window_len: 290,
            head_conv: ConvSpec {
                kernel_rows: 2,
                kernel_cols: 15,
                out_channels: 16,
            },
            combined_conv: ConvSpec {
                kernel_rows: 2,
                kernel_cols: 7,
                out_channels: 32,
            },
            pool: PoolSpec { rows: 1, cols: 4 },
            fc_hidden: 64,
            dropout_p: 0.2,
            leaky_alpha: 0.01,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

/// Feature-map shapes after each stage, as `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapePlan {
    pub head_conv: (usize, usize, usize),
    pub head_pool: (usize, usize, usize),
    pub stacked: (usize, usize, usize),
    pub combined_conv: (usize, usize, usize),
    pub combined_pool: (usize, usize, usize),
    pub flat_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.head_conv.kernel_rows != 2 {
            return Err(Error::invalid("head convolution must span both input rows (kernel_rows = 2)"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::invalid("bn_epsilon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("bn_momentum must lie in [0, 1]"));
        }
        if !(self.leaky_alpha >= 0.0) {
            return Err(Error::invalid("leaky_alpha must be >= 0"));
        }
        if self.fc_hidden == 0 || self.head_conv.out_channels == 0 || self.combined_conv.out_channels == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        self.shape_plan().map(|_| ())
    }

    /// Propagates shapes through the network, failing if any stage does not fit.
    pub fn shape_plan(&self) -> Result<ShapePlan> {
        let input = Dims4::new(1, 1, 2, self.window_len);
        let hc = ops::conv2d_out_dims(
            input,
            self.head_conv.out_channels,
            self.head_conv.kernel_rows,
            self.head_conv.kernel_cols,
        )?;
        let hp = ops::avg_pool_out_dims(hc, self.pool.rows, self.pool.cols)?;
        let stacked = Dims4::new(1, hp.c, 2 * hp.h, hp.w);
        let cc = ops::conv2d_out_dims(
            stacked,
            self.combined_conv.out_channels,
            self.combined_conv.kernel_rows,
            self.combined_conv.kernel_cols,
        )?;
        let cp = ops::avg_pool_out_dims(cc, self.pool.rows, self.pool.cols)?;
        let flat_len = cp.c * cp.h * cp.w;
        if flat_len == 0 {
            return Err(Error::shape("network flattens to zero features"));
        }
        let chw = |d: Dims4| (d.c, d.h, d.w);
        Ok(ShapePlan {
            head_conv: chw(hc),
            head_pool: chw(hp),
            stacked: chw(stacked),
            combined_conv: chw(cc),
            combined_pool: chw(cp),
            flat_len,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Batch norm, then convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvHead {
    pub bn_gamma: Tensor,
    pub bn_beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub kernels: Tensor,
    pub bias: Tensor,
}

impl ConvHead {
    fn init(c_in: usize, spec: ConvSpec, rng: &mut impl Rng) -> Result<Self> {
        let fan_in = c_in * spec.kernel_rows * spec.kernel_cols;
        let n = spec.out_channels * fan_in;
        Ok(Self {
            bn_gamma: Tensor::parameter(vec![c_in], vec![1.0; c_in])?,
            bn_beta: Tensor::parameter(vec![c_in], vec![0.0; c_in])?,
            running_mean: vec![0.0; c_in],
            running_var: vec![1.0; c_in],
            kernels: Tensor::parameter(
                vec![spec.out_channels, c_in, spec.kernel_rows, spec.kernel_cols],
                fan_in_uniform(n, fan_in, rng),
            )?,
            bias: Tensor::parameter(vec![spec.out_channels], vec![0.0; spec.out_channels])?,
        })
    }

    fn params(&self) -> [&Tensor; 4] {
        [&self.bn_gamma, &self.bn_beta, &self.kernels, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.bn_gamma, &mut self.bn_beta, &mut self.kernels, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[n_out, n_in]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn init(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            weight: Tensor::parameter(vec![n_out, n_in], fan_in_uniform(n_out * n_in, n_in, rng))?,
            bias: Tensor::parameter(vec![n_out], vec![0.0; n_out])?,
        })
    }
}

fn fan_in_uniform(n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// The multi-head calibration network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub up_head: ConvHead,
    pub down_head: ConvHead,
    pub combined_head: ConvHead,
    pub fc1: Dense,
    pub fc2: Dense,
    pub mode: Mode,
}

/// Tape handles for every parameter, in [`Model::parameters`] order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn all(&self) -> &[Var] {
        &self.vars
    }

    fn head(&self, k: usize) -> [Var; 4] {
        [self.vars[4 * k], self.vars[4 * k + 1], self.vars[4 * k + 2], self.vars[4 * k + 3]]
    }

    fn fc(&self, k: usize) -> (Var, Var) {
        (self.vars[12 + 2 * k], self.vars[13 + 2 * k])
    }
}

/// Result of one forward pass.
pub struct ForwardPass {
    /// `[batch, 2]` estimates: scale fraction, bias DPS.
    pub output: Var,
    /// Train-mode batch statistics for the up, down and combined heads.
    pub bn_stats: Vec<BatchStats>,
}

/// Row indices of the model input.
pub const ROW_UP: usize = 0;
pub const ROW_DOWN: usize = 1;
pub const ROW_GT: usize = 2;

impl Model {
    /// Fresh model with fan-in-scaled uniform weights, zero biases, unit gamma.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let plan = config.shape_plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let up_head = ConvHead::init(1, config.head_conv, &mut rng)?;
        let down_head = ConvHead::init(1, config.head_conv, &mut rng)?;
        let combined_head = ConvHead::init(config.head_conv.out_channels, config.combined_conv, &mut rng)?;
        let fc1 = Dense::init(plan.flat_len, config.fc_hidden, &mut rng)?;
        let fc2 = Dense::init(config.fc_hidden, 2, &mut rng)?;
        Ok(Self {
            config,
            up_head,
            down_head,
            combined_head,
            fc1,
            fc2,
            mode: Mode::Train,
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// All learnable tensors in a fixed order: up, down, combined head
    /// (gamma, beta, kernels, bias each), then fc1 and fc2 (weight, bias).
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::with_capacity(16);
        out.extend(self.up_head.params());
        out.extend(self.down_head.params());
        out.extend(self.combined_head.params());
        out.extend([&self.fc1.weight, &self.fc1.bias, &self.fc2.weight, &self.fc2.bias]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(16);
        out.extend(self.up_head.params_mut());
        out.extend(self.down_head.params_mut());
        out.extend(self.combined_head.params_mut());
        out.extend([
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.parameters().iter().all(|t| t.all_finite())
            && [&self.up_head, &self.down_head, &self.combined_head]
                .iter()
                .all(|h| h.running_mean.iter().chain(&h.running_var).all(|v| v.is_finite()))
    }

    /// Checks every buffer against the shapes implied by `config`.
    pub fn check_shapes(&self) -> Result<()> {
        let reference = Model::new(self.config.clone(), 0)?;
        for (i, (a, b)) in reference.parameters().iter().zip(self.parameters()).enumerate() {
            if a.shape() != b.shape() || b.len() != b.values().len() {
                return Err(Error::shape(format!(
                    "parameter {i} has shape {:?}, config implies {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        for (head, r) in [&self.up_head, &self.down_head, &self.combined_head]
            .iter()
            .zip([&reference.up_head, &reference.down_head, &reference.combined_head])
        {
            if head.running_mean.len() != r.running_mean.len() || head.running_var.len() != r.running_var.len() {
                return Err(Error::shape("running statistics do not match channel count"));
            }
        }
        Ok(())
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self.parameters().into_iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    /// Records the forward pass of a `[batch, 3, W]` input.
    ///
    /// Train mode uses batch statistics and needs `dropout_rng`; Eval mode uses
    /// running statistics and ignores it.
    pub fn forward_on_tape<R: Rng>(
        &self,
        tape: &mut Tape,
        params: &ParamVars,
        input: Var,
        dropout_rng: Option<&mut R>,
    ) -> Result<ForwardPass> {
        let shape = tape.value(input).shape().to_vec();
        if shape.len() != 3 || shape[1] != 3 || shape[2] != self.config.window_len || shape[0] == 0 {
            return Err(Error::shape(format!(
                "model expects [batch, 3, {}], got {shape:?}",
                self.config.window_len
            )));
        }
        let batch = shape[0];
        let mut bn_stats = Vec::new();
        let up_in = tape.select_rows(input, &[ROW_UP, ROW_GT])?;
        let down_in = tape.select_rows(input, &[ROW_DOWN, ROW_GT])?;
        let up = self.conv_block(tape, &self.up_head, params.head(0), up_in, &mut bn_stats)?;
        let down = self.conv_block(tape, &self.down_head, params.head(1), down_in, &mut bn_stats)?;
        let stacked = tape.concat_height(up, down)?;
        let combined = self.conv_block(tape, &self.combined_head, params.head(2), stacked, &mut bn_stats)?;
        let flat_len = tape.value(combined).len() / batch;
        let flat = tape.reshape(combined, vec![batch, flat_len])?;
        let (w1, b1) = params.fc(0);
        let hidden = tape.linear(flat, w1, b1)?;
        let hidden = tape.tanh(hidden)?;
        let hidden = match (self.mode, dropout_rng) {
            (Mode::Train, Some(rng)) => tape.dropout(hidden, self.config.dropout_p, rng)?,
            (Mode::Train, None) if self.config.dropout_p > 0.0 => {
                return Err(Error::invalid("train-mode forward needs a dropout RNG"))
            }
            _ => hidden,
        };
        let (w2, b2) = params.fc(1);
        let output = tape.linear(hidden, w2, b2)?;
        Ok(ForwardPass { output, bn_stats })
    }

    fn conv_block(
        &self,
        tape: &mut Tape,
        head: &ConvHead,
        [gamma, beta, kernels, bias]: [Var; 4],
        input: Var,
        bn_stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let normed = match self.mode {
            Mode::Train => {
                let (v, st) = tape.batch_norm_train(input, gamma, beta, cfg.bn_epsilon)?;
                bn_stats.push(st);
                v
            }
            Mode::Eval => tape.batch_norm_frozen(
                input,
                gamma,
                beta,
                &head.running_mean,
                &head.running_var,
                cfg.bn_epsilon,
            )?,
        };
        let conv = tape.conv2d(normed, kernels, bias)?;
        let pooled = tape.avg_pool(conv, cfg.pool.rows, cfg.pool.cols)?;
        tape.leaky_relu(pooled, cfg.leaky_alpha)
    }

    /// Blends observed batch statistics into the running statistics.
    ///
    /// The running variance tracks the unbiased batch variance.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != 3 {
            return Err(Error::invalid(format!("expected 3 batch-norm statistics, got {}", stats.len())));
        }
        let m = self.config.bn_momentum;
        for (head, st) in [&mut self.up_head, &mut self.down_head, &mut self.combined_head]
            .into_iter()
            .zip(stats)
        {
            let correction = st.count as f64 / (st.count as f64 - 1.0).max(1.0);
            for c in 0..head.running_mean.len() {
                head.running_mean[c] = (1.0 - m) * head.running_mean[c] + m * st.mean[c];
                head.running_var[c] = (1.0 - m) * head.running_var[c] + m * st.var[c] * correction;
            }
        }
        Ok(())
    }

    /// Eval-mode prediction for a `[batch, 3, W]` input; returns `[batch, 2]`.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let eval;
        let model = if self.mode == Mode::Eval {
            self
        } else {
            eval = Model {
                mode: Mode::Eval,
                ..self.clone()
            };
            &eval
        };
        let mut tape = Tape::new();
        let params = model.register(&mut tape);
        let x = tape.leaf(input.clone());
        let pass = model.forward_on_tape::<ChaCha8Rng>(&mut tape, &params, x, None)?;
        Ok(tape.value(pass.output).clone())
    }
}
