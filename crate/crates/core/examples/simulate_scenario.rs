//! Simulates one turntable scenario, writes its recordings as CSV, and
//! calibrates it from the files.
//!
//! ```text
//! cargo run --release --example simulate_scenario -- [out_dir]
//! ```

use std::path::PathBuf;

use gyrocal::calibration::{calibrate_scenario, mean_window};
use gyrocal::sensor_model::{default_noise_sigma, generate_scenario, GyroErrorTerms, Orientation, Recording};

fn main() -> gyrocal::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/example".into()));
    std::fs::create_dir_all(&out).map_err(|source| gyrocal::Error::Io { path: out.clone(), source })?;

    let (rate, fs) = (78.0, 145.0);
    let terms = GyroErrorTerms::new(0.00414, -0.07337, default_noise_sigma(fs))?;
    let s = generate_scenario("demo", rate, 70.0, fs, &terms, 7)?;
    let (up, down) = (out.join("demo_up.csv"), out.join("demo_down.csv"));
    s.up.write_csv(&up)?;
    s.down.write_csv(&down)?;
    println!("wrote {} and {} ({} samples each)", up.display(), down.display(), s.up.len());
    println!("truth: scale {:.5}, bias {:.5} DPS, noise sigma {:.5} DPS", terms.scale, terms.bias, terms.sigma);

    let up_back = Recording::read_csv(&up, fs, Orientation::Up, rate)?;
    let down_back = Recording::read_csv(&down, fs, Orientation::Down, rate)?;
    println!("window   mean up     mean down   scale      bias");
    for w in [2.0, 4.0, 6.0, 70.0] {
        let c = calibrate_scenario(&s, w)?;
        let (u, d) = (mean_window(&up_back, 0.0, w)?, mean_window(&down_back, 0.0, w)?);
        println!("{w:>4} s  {u:>10.5}  {d:>10.5}  {:>9.6}  {:>8.5}", c.scale, c.bias);
    }
    Ok(())
}
