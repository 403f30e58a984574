//! Oracles shared by the layer, gradient, and acceptance suites.
#![allow(dead_code)]

use gyrocal::nn::{avg_pool, conv2d_forward, ConvSpec, Model, ModelConfig, PoolSpec, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn t(shape: &[usize], values: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), values).unwrap()
}

pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    t(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
}

pub fn conv_oracle(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, ci, h, w) = x.dims4().unwrap();
    let (co, _, kh, kw) = k.dims4().unwrap();
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let xv = x.values();
    let kv = k.values();
    let mut out = Vec::with_capacity(n * co * oh * ow);
    for bi in 0..n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = b.values()[o];
                    for c in 0..ci {
                        for a in 0..kh {
                            for bb in 0..kw {
                                s += kv[((o * ci + c) * kh + a) * kw + bb] * xv[((bi * ci + c) * h + i + a) * w + j + bb];
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    out
}

pub fn pool_oracle(x: &Tensor, pr: usize, pc: usize) -> Vec<f64> {
    let (n, c, h, w) = x.dims4().unwrap();
    let mut out = Vec::new();
    for plane in 0..n * c {
        for i in 0..h / pr {
            for j in 0..w / pc {
                let mut s = 0.0;
                for a in 0..pr {
                    for b in 0..pc {
                        s += x.values()[(plane * h + i * pr + a) * w + j * pc + b];
                    }
                }
                out.push(s / (pr * pc) as f64);
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst deviation of `conv2d_forward` from the loop oracle over `cases` random shapes.
pub fn conv_worst_case(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, ci, co) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..12));
        let (kh, kw) = (rng.random_range(1..=h), rng.random_range(1..=w));
        let x = random(&[n, ci, h, w], &mut rng);
        let k = random(&[co, ci, kh, kw], &mut rng);
        let b = random(&[co], &mut rng);
        let y = conv2d_forward(&x, &k, &b).unwrap();
        assert_eq!(y.shape(), &[n, co, h - kh + 1, w - kw + 1]);
        worst = worst.max(max_abs_diff(y.values(), &conv_oracle(&x, &k, &b)));
    }
    worst
}

pub fn pool_worst_case(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, c) = (rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (rng.random_range(1..7), rng.random_range(1..20));
        let (pr, pc) = (rng.random_range(1..=h), rng.random_range(1..=w));
        let x = random(&[n, c, h, w], &mut rng);
        let y = avg_pool(&x, pr, pc).unwrap();
        assert_eq!(y.shape(), &[n, c, h / pr, w / pc]);
        worst = worst.max(max_abs_diff(y.values(), &pool_oracle(&x, pr, pc)));
    }
    worst
}

/// The full architecture shrunk to a 12-sample window and 2 channels.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        window_len: 12,
        head_conv: ConvSpec {
            kernel_rows: 2,
            kernel_cols: 3,
            out_channels: 2,
        },
        combined_conv: ConvSpec {
            kernel_rows: 2,
            kernel_cols: 3,
            out_channels: 2,
        },
        pool: PoolSpec { rows: 1, cols: 2 },
        fc_hidden: 4,
        dropout_p: 0.2,
        ..ModelConfig::default()
    }
}

pub fn tiny_batch(rng: &mut ChaCha8Rng, n: usize) -> (Tensor, Tensor) {
    let w = 12;
    let mut x = Vec::new();
    for _ in 0..n {
        let gt = 1.0;
        x.extend((0..w).map(|_| gt + rng.random_range(-0.5..0.5)));
        x.extend((0..w).map(|_| -gt + rng.random_range(-0.5..0.5)));
        x.extend(std::iter::repeat_n(gt, w));
    }
    let y = (0..2 * n).map(|_| rng.random_range(-0.5..0.5)).collect();
    (t(&[n, 3, w], x), t(&[n, 2], y))
}

/// Train-mode loss with a fixed dropout mask, plus analytic gradients when asked.
pub fn loss_and_grads(model: &Model, x: &Tensor, y: &Tensor, want_grads: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let input = tape.leaf(x.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let pass = model.forward_on_tape(&mut tape, &params, input, Some(&mut rng)).unwrap();
    let loss = tape.rmse100(pass.output, y).unwrap();
    let value = tape.value(loss).values()[0];
    if !want_grads {
        return (value, Vec::new());
    }
    let grads = tape.backward(loss).unwrap();
    let g = params
        .all()
        .iter()
        .map(|&v| grads.get(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    (value, g)
}

pub struct GradCheck {
    pub tensors: usize,
    pub checked: usize,
    pub parameter_count: usize,
    pub worst_rel: f64,
}

/// Central differences against reverse mode for every scalar parameter.
pub fn gradient_check(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(tiny_config(), seed + 12).unwrap();
    let (x, y) = tiny_batch(&mut rng, 3);
    // non-trivial batch-norm affine parameters
    for p in model.parameters_mut() {
        for v in p.values_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let (_, analytic) = loss_and_grads(&model, &x, &y, true);
    let tensors = model.parameters().len();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for p in 0..tensors {
        for i in 0..model.parameters()[p].len() {
            let orig = model.parameters()[p].values()[i];
            model.parameters_mut()[p].values_mut()[i] = orig + FD_STEP;
            let (lp, _) = loss_and_grads(&model, &x, &y, false);
            model.parameters_mut()[p].values_mut()[i] = orig - FD_STEP;
            let (lm, _) = loss_and_grads(&model, &x, &y, false);
            model.parameters_mut()[p].values_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let a = analytic[p][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            checked += 1;
        }
    }
    GradCheck {
        tensors,
        checked,
        parameter_count: model.parameter_count(),
        worst_rel: worst,
    }
}
