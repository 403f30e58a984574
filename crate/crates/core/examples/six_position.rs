//! Six-position calibration of a full gyroscope triad from averaged readings.

use gyrocal::calibration::{calibrate_six_position, SixPositionInput};
use nalgebra::{Matrix3, Matrix3x6, Vector3};

fn main() -> gyrocal::Result<()> {
    let rate = 78.0;
    let scale = Vector3::new(0.0041, -0.0022, 0.0035);
    let bias = Vector3::new(-0.073, 0.012, -0.041);
    // small cross-axis coupling that the solve should also recover
    let mut gain = Matrix3::from_diagonal(&scale.add_scalar(1.0));
    gain[(0, 1)] = 0.0006;
    gain[(2, 0)] = -0.0003;

    let gt = SixPositionInput::turntable_gt(rate);
    let mut measured: Matrix3x6<f64> = gain * gt.fixed_rows::<3>(0);
    for axis in 0..3 {
        measured.row_mut(axis).add_scalar_mut(bias[axis]);
    }
    let sol = calibrate_six_position(&SixPositionInput::new(measured, gt)?)?;

    println!("axis  scale (true / est)        bias DPS (true / est)");
    for (axis, name) in ["x", "y", "z"].iter().enumerate() {
        println!(
            "{name}     {:+.6} / {:+.6}     {:+.6} / {:+.6}",
            scale[axis],
            sol.scale(axis),
            bias[axis],
            sol.bias(axis)
        );
    }
    println!("error matrix [gain | bias]:");
    for r in sol.z.row_iter() {
        println!("  {:+.6} {:+.6} {:+.6} | {:+.6}", r[0], r[1], r[2], r[3]);
    }
    Ok(())
}
