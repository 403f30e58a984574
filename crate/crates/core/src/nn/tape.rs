//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Each operation appends a node holding its output value plus whatever the
//! backward pass needs. [`Tape::backward`] walks the nodes in reverse order and
//! accumulates vector-Jacobian products into every input.

use rand::Rng;

use super::ops::{self, Dims4};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    AvgPool {
        input: Var,
        rows: usize,
        cols: usize,
    },
    LeakyRelu {
        input: Var,
        alpha: f64,
    },
    Tanh {
        input: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    SelectRows {
        input: Var,
        rows: Vec<usize>,
    },
    ConcatHeight {
        a: Var,
        b: Var,
    },
    Reshape {
        input: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Rmse100 {
        pred: Var,
        target: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Batch statistics observed by a train-mode batch-norm node.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient buffer for `var`; `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `var`, zero-filled when the loss does not depend on it.
    pub fn take(&mut self, var: Var) -> Vec<f64> {
        let len = self.shapes[var.0].iter().product();
        self.grads[var.0].take().unwrap_or_else(|| vec![0.0; len])
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::invalid(format!("variable {} is not on this tape", var.0)))
        }
    }

    /// Records a constant or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `[batch, n_in] x [n_out, n_in]^T + bias -> [batch, n_out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (batch, n_in) = self.value(input).dims2()?;
        let (n_out, w_in) = self.value(weight).dims2()?;
        if w_in != n_in || self.value(bias).len() != n_out {
            return Err(Error::shape(format!(
                "linear: input [{batch}, {n_in}] vs weight {:?} and bias {:?}",
                self.value(weight).shape(),
                self.value(bias).shape()
            )));
        }
        let out = ops::linear_forward(
            self.value(input).values(),
            batch,
            n_in,
            self.value(weight).values(),
            self.value(bias).values(),
            n_out,
        );
        let value = Tensor::new(vec![batch, n_out], out)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }))
    }

    /// Valid, stride-1 2D convolution; kernels are `[c_out, c_in, rows, cols]`.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let (c_out, k_in, k_rows, k_cols) = self.value(kernels).dims4()?;
        if k_in != c || self.value(bias).len() != c_out {
            return Err(Error::shape(format!(
                "conv2d: {c} input channels vs kernels {:?}, bias {:?}",
                self.value(kernels).shape(),
                self.value(bias).shape()
            )));
        }
        let (out, od) = ops::conv2d_forward(
            self.value(input).values(),
            Dims4::new(n, c, h, w),
            self.value(kernels).values(),
            self.value(bias).values(),
            c_out,
            k_rows,
            k_cols,
        )?;
        let value = Tensor::new(vec![od.n, od.c, od.h, od.w], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernels, bias }))
    }

    /// Train-mode batch norm; returns the node and the batch statistics used.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let dims = self.bn_dims(input, gamma, beta)?;
        if dims.n * dims.plane() < 2 {
            return Err(Error::shape(
                "batch norm needs at least two values per channel in train mode",
            ));
        }
        let st = ops::channel_stats(self.value(input).values(), dims);
        let (out, xhat, inv_std) = ops::batch_norm_apply(
            self.value(input).values(),
            dims,
            &st.mean,
            &st.var,
            self.value(gamma).values(),
            self.value(beta).values(),
            eps,
        );
        let value = Tensor::new(self.value(input).shape().to_vec(), out)?;
        let var = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
        );
        Ok((
            var,
            BatchStats {
                mean: st.mean,
                var: st.var,
                count: st.count,
            },
        ))
    }

    /// Eval-mode batch norm with fixed statistics.
    pub fn batch_norm_frozen(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let dims = self.bn_dims(input, gamma, beta)?;
        if mean.len() != dims.c || var.len() != dims.c {
            return Err(Error::shape("batch norm running statistics do not match channels"));
        }
        let (out, xhat, inv_std) = ops::batch_norm_apply(
            self.value(input).values(),
            dims,
            mean,
            var,
            self.value(gamma).values(),
            self.value(beta).values(),
            eps,
        );
        let value = Tensor::new(self.value(input).shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
        ))
    }

    fn bn_dims(&self, input: Var, gamma: Var, beta: Var) -> Result<Dims4> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape(format!(
                "batch norm over {c} channels with gamma {:?}, beta {:?}",
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        Ok(Dims4::new(n, c, h, w))
    }

    pub fn avg_pool(&mut self, input: Var, rows: usize, cols: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let (out, od) = ops::avg_pool_forward(self.value(input).values(), Dims4::new(n, c, h, w), rows, cols)?;
        let value = Tensor::new(vec![od.n, od.c, od.h, od.w], out)?;
        Ok(self.push(value, Op::AvgPool { input, rows, cols }))
    }

    pub fn leaky_relu(&mut self, input: Var, alpha: f64) -> Result<Var> {
        if !(alpha >= 0.0) {
            return Err(Error::invalid(format!("LeakyReLU slope {alpha} must be >= 0")));
        }
        let x = self.value(input);
        let out = x.values().iter().map(|&v| ops::leaky_relu(v, alpha)).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, Op::LeakyRelu { input, alpha }))
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let out = x.values().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Tanh { input }))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1 / (1 - p)`.
    pub fn dropout(&mut self, input: Var, p: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - p);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = x.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Dropout { input, mask }))
    }

    /// Picks rows of a `[batch, rows, width]` input into a `[batch, 1, k, width]` plane.
    pub fn select_rows(&mut self, input: Var, rows: &[usize]) -> Result<Var> {
        let x = self.value(input);
        let [batch, n_rows, width] = x.shape()[..] else {
            return Err(Error::shape(format!("expected [batch, rows, width], got {:?}", x.shape())));
        };
        if let Some(&r) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(Error::shape(format!("row {r} out of range for {n_rows} rows")));
        }
        let mut out = Vec::with_capacity(batch * rows.len() * width);
        for b in 0..batch {
            for &r in rows {
                let base = (b * n_rows + r) * width;
                out.extend_from_slice(&x.values()[base..base + width]);
            }
        }
        let value = Tensor::new(vec![batch, 1, rows.len(), width], out)?;
        Ok(self.push(
            value,
            Op::SelectRows {
                input,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Stacks two `[n, c, h, w]` maps along the height axis.
    pub fn concat_height(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, c, ha, w) = self.value(a).dims4()?;
        let (n2, c2, hb, w2) = self.value(b).dims4()?;
        if (n, c, w) != (n2, c2, w2) {
            return Err(Error::shape(format!(
                "cannot stack {:?} and {:?} along height",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let (va, vb) = (self.value(a).values(), self.value(b).values());
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for nc in 0..n * c {
            out.extend_from_slice(&va[nc * ha * w..(nc + 1) * ha * w]);
            out.extend_from_slice(&vb[nc * hb * w..(nc + 1) * hb * w]);
        }
        let value = Tensor::new(vec![n, c, ha + hb, w], out)?;
        Ok(self.push(value, Op::ConcatHeight { a, b }))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { input }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let x = self.value(input);
        let out = x.values().iter().map(|v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Scale { input, factor }))
    }

    /// Scalar `100 * RMSE(pred, target)` over all elements.
    pub fn rmse100(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape(format!(
                "prediction {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        if p.is_empty() {
            return Err(Error::invalid("loss over an empty batch"));
        }
        let loss = ops::rmse100(p.values(), target.values());
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Rmse100 {
                pred,
                target: target.values().to_vec(),
            },
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_scaled(loss, 1.0)
    }

    /// Gradients of `seed * loss`.
    pub fn backward_scaled(&self, loss: Var, seed: f64) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("backward called on an empty tape"));
        }
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![seed]);

        fn acc(grads: &mut [Option<Vec<f64>>], var: Var, g: Vec<f64>) {
            match &mut grads[var.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(e, v)| *e += v),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Linear { input, weight, bias } => {
                    let (batch, n_in) = self.value(*input).dims2()?;
                    let n_out = self.value(*bias).len();
                    let (dx, dw, db) = ops::linear_backward(
                        &g,
                        self.value(*input).values(),
                        batch,
                        n_in,
                        self.value(*weight).values(),
                        n_out,
                    );
                    acc(&mut grads, *input, dx);
                    acc(&mut grads, *weight, dw);
                    acc(&mut grads, *bias, db);
                }
                Op::Conv2d { input, kernels, bias } => {
                    let (n, c, h, w) = self.value(*input).dims4()?;
                    let (c_out, _, k_rows, k_cols) = self.value(*kernels).dims4()?;
                    let (dx, dk, db) = ops::conv2d_backward(
                        &g,
                        self.value(*input).values(),
                        Dims4::new(n, c, h, w),
                        self.value(*kernels).values(),
                        c_out,
                        k_rows,
                        k_cols,
                    );
                    acc(&mut grads, *input, dx);
                    acc(&mut grads, *kernels, dk);
                    acc(&mut grads, *bias, db);
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (n, c, h, w) = self.value(*input).dims4()?;
                    let (dx, dg, dbeta) = ops::batch_norm_backward(
                        &g,
                        Dims4::new(n, c, h, w),
                        xhat,
                        inv_std,
                        self.value(*gamma).values(),
                        *batch_stats,
                    );
                    acc(&mut grads, *input, dx);
                    acc(&mut grads, *gamma, dg);
                    acc(&mut grads, *beta, dbeta);
                }
                Op::AvgPool { input, rows, cols } => {
                    let (n, c, h, w) = self.value(*input).dims4()?;
                    let dx = ops::avg_pool_backward(&g, Dims4::new(n, c, h, w), *rows, *cols);
                    acc(&mut grads, *input, dx);
                }
                Op::LeakyRelu { input, alpha } => {
                    let dx = g
                        .iter()
                        .zip(self.value(*input).values())
                        .map(|(gv, &x)| gv * ops::leaky_relu_grad(x, *alpha))
                        .collect();
                    acc(&mut grads, *input, dx);
                }
                Op::Tanh { input } => {
                    let dx = g
                        .iter()
                        .zip(node.value.values())
                        .map(|(gv, y)| gv * (1.0 - y * y))
                        .collect();
                    acc(&mut grads, *input, dx);
                }
                Op::Dropout { input, mask } => {
                    let dx = g.iter().zip(mask).map(|(gv, m)| gv * m).collect();
                    acc(&mut grads, *input, dx);
                }
                Op::SelectRows { input, rows } => {
                    let shape = self.value(*input).shape();
                    let (batch, n_rows, width) = (shape[0], shape[1], shape[2]);
                    let mut dx = vec![0.0; batch * n_rows * width];
                    for b in 0..batch {
                        for (k, &r) in rows.iter().enumerate() {
                            let src = (b * rows.len() + k) * width;
                            let dst = (b * n_rows + r) * width;
                            dx[dst..dst + width]
                                .iter_mut()
                                .zip(&g[src..src + width])
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                    acc(&mut grads, *input, dx);
                }
                Op::ConcatHeight { a, b } => {
                    let (n, c, ha, w) = self.value(*a).dims4()?;
                    let hb = self.value(*b).dims4()?.2;
                    let mut da = Vec::with_capacity(n * c * ha * w);
                    let mut db = Vec::with_capacity(n * c * hb * w);
                    for nc in 0..n * c {
                        let base = nc * (ha + hb) * w;
                        da.extend_from_slice(&g[base..base + ha * w]);
                        db.extend_from_slice(&g[base + ha * w..base + (ha + hb) * w]);
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Reshape { input } => acc(&mut grads, *input, g),
                Op::Scale { input, factor } => {
                    let dx = g.iter().map(|v| v * factor).collect();
                    acc(&mut grads, *input, dx);
                }
                Op::Rmse100 { pred, target } => {
                    let p = self.value(*pred).values();
                    let loss = node.value.values()[0];
                    let n = p.len() as f64;
                    let dx = if loss == 0.0 {
                        vec![0.0; p.len()]
                    } else {
                        // d/dp of 100 * sqrt(mean r^2) = 100^2 * r / (n * loss)
                        let k = g[0] * 1.0e4 / (n * loss);
                        p.iter().zip(target).map(|(pv, tv)| k * (pv - tv)).collect()
                    };
                    acc(&mut grads, *pred, dx);
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}
