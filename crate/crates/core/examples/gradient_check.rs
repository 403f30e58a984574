//! Compares reverse-mode gradients of a reduced model with central
//! differences and prints the worst relative error per parameter tensor.

use gyrocal::nn::{ConvSpec, Model, ModelConfig, PoolSpec, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(model: &Model, x: &Tensor, y: &Tensor) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let input = tape.leaf(x.clone());
    // same dropout mask on every evaluation
    let mut drop = ChaCha8Rng::seed_from_u64(99);
    let pass = model.forward_on_tape(&mut tape, &params, input, Some(&mut drop)).unwrap();
    let l = tape.rmse100(pass.output, y).unwrap();
    let value = tape.value(l).values()[0];
    let grads = tape.backward(l).unwrap();
    let g = params.all().iter().map(|&v| grads.get(v).map(<[f64]>::to_vec).unwrap_or_default()).collect();
    (value, g)
}

fn main() -> gyrocal::Result<()> {
    let w = 12;
    let config = ModelConfig {
        window_len: w,
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
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = Model::new(config, 1)?;
    let n = 4;
    let x: Vec<f64> = (0..n)
        .flat_map(|_| {
            let mut row: Vec<f64> = (0..w).map(|_| 1.0 + rng.random_range(-0.5..0.5)).collect();
            row.extend((0..w).map(|_| -1.0 + rng.random_range(-0.5..0.5)));
            row.extend(std::iter::repeat_n(1.0, w));
            row
        })
        .collect();
    let x = Tensor::new(vec![n, 3, w], x)?;
    let y = Tensor::new(vec![n, 2], (0..2 * n).map(|_| rng.random_range(-0.5..0.5)).collect())?;

    let (_, analytic) = loss(&model, &x, &y);
    let h = 1e-5;
    println!("tensor  size  worst relative error");
    for p in 0..analytic.len() {
        let mut worst = 0.0f64;
        for i in 0..analytic[p].len() {
            let orig = model.parameters()[p].values()[i];
            model.parameters_mut()[p].values_mut()[i] = orig + h;
            let lp = loss(&model, &x, &y).0;
            model.parameters_mut()[p].values_mut()[i] = orig - h;
            let lm = loss(&model, &x, &y).0;
            model.parameters_mut()[p].values_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[p][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        println!("{p:>6}  {:>4}  {worst:.2e}", analytic[p].len());
    }
    Ok(())
}
