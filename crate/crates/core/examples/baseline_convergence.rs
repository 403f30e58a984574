//! Baseline absolute error against calibration time, averaged over seeds.
//!
//! ```text
//! cargo run --release --example baseline_convergence -- [n_seeds]
//! ```

use gyrocal::calibration::baseline_ae_curve;
use gyrocal::sensor_model::{default_noise_sigma, generate_scenario, GyroErrorTerms};

fn main() -> gyrocal::Result<()> {
    let n: u64 = std::env::args().nth(1).map_or(50, |a| a.parse().expect("n_seeds must be an integer"));
    let terms = GyroErrorTerms::new(0.004, -0.05, default_noise_sigma(145.0))?;
    let grid: Vec<f64> = (1..=70).map(f64::from).collect();
    let mut sum = vec![(0.0, 0.0); grid.len()];
    for seed in 0..n {
        let s = generate_scenario("c", 78.0, 70.0, 145.0, &terms, seed)?;
        for (acc, p) in sum.iter_mut().zip(baseline_ae_curve(&s, terms.scale_bias(), &grid)?) {
            acc.0 += p.ae_scale;
            acc.1 += p.ae_bias;
        }
    }
    println!("t_s  mean AE scale  mean AE bias (DPS)  over {n} seeds");
    for (t, (s, b)) in grid.iter().zip(&sum) {
        if [1.0, 2.0, 4.0, 6.0, 10.0, 20.0, 35.0, 50.0, 70.0].contains(t) {
            println!("{t:>3}  {:>13.3e}  {:>18.3e}", s / n as f64, b / n as f64);
        }
    }
    Ok(())
}
