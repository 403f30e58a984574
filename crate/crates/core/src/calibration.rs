//! Model-based turntable calibration.
//!
//! Averaging removes the white noise; the averaged up/down readings then give
//! scale and bias in closed form for one axis, or through a least-squares
//! solve over six positions for a full triad.

use nalgebra::{Matrix3x4, Matrix3x6, Matrix4x6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::absolute_error;
use crate::sensor_model::{Recording, ScaleBias, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Learned,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Method::Baseline),
            "learned" => Ok(Method::Learned),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

/// Calibration output, serialized as `{method, window_s, scale, bias}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: Method,
    pub window_s: f64,
    pub scale: f64,
    pub bias: f64,
}

impl CalibrationResult {
    pub fn new(method: Method, window_s: f64, estimate: ScaleBias) -> Result<Self> {
        if !(window_s.is_finite() && window_s > 0.0) {
            return Err(Error::invalid(format!("window {window_s} s must be positive")));
        }
        Ok(Self {
            method,
            window_s,
            scale: estimate.scale,
            bias: estimate.bias,
        })
    }

    pub fn estimate(&self) -> ScaleBias {
        ScaleBias::new(self.scale, self.bias)
    }
}

/// Sample index range `[ceil(t_start*fs), floor(t_end*fs))` of a time window.
pub fn window_indices(recording: &Recording, t_start: f64, t_end: f64) -> Result<(usize, usize)> {
    let duration = recording.duration_s();
    if !(t_start.is_finite() && t_end.is_finite()) || t_start < 0.0 || t_end > duration + 1e-9 {
        return Err(Error::invalid(format!(
            "window [{t_start}, {t_end}) outside recording of {duration} s"
        )));
    }
    let fs = recording.sample_rate_hz();
    let start = (t_start * fs).ceil() as usize;
    let end = ((t_end * fs).floor() as usize).min(recording.len());
    if start >= end {
        return Err(Error::invalid(format!(
            "window [{t_start}, {t_end}) contains no samples"
        )));
    }
    Ok((start, end))
}

/// Arithmetic mean of a non-empty slice.
///
/// Accumulates deviations from the first sample so constant input yields its
/// value exactly.
pub fn mean(samples: &[f64]) -> f64 {
    let x0 = samples[0];
    let dev: f64 = samples.iter().map(|&x| x - x0).sum();
    x0 + dev / samples.len() as f64
}

/// Mean of the samples with `t_start <= t < t_end`.
pub fn mean_window(recording: &Recording, t_start: f64, t_end: f64) -> Result<f64> {
    let (start, end) = window_indices(recording, t_start, t_end)?;
    Ok(mean(&recording.samples()[start..end]))
}

/// Closed-form single-axis solve from the averaged up and down readings.
///
/// `mean_down` is the raw down-facing output (sensed rate `-rate_dps`).
pub fn calibrate_single_axis(
    mean_up: f64,
    mean_down: f64,
    rate_dps: f64,
    window_s: f64,
) -> Result<CalibrationResult> {
    if !(rate_dps.is_finite() && rate_dps > 0.0) {
        return Err(Error::invalid(format!("turntable rate {rate_dps} must be positive")));
    }
    let bias = (mean_up + mean_down) / 2.0;
    let scale = ((mean_up - mean_down) - 2.0 * rate_dps) / (2.0 * rate_dps);
    CalibrationResult::new(Method::Baseline, window_s, ScaleBias::new(scale, bias))
}

/// Baseline calibration over the first `window_s` seconds of a scenario.
pub fn calibrate_scenario(scenario: &Scenario, window_s: f64) -> Result<CalibrationResult> {
    let up = mean_window(&scenario.up, 0.0, window_s)?;
    let down = mean_window(&scenario.down, 0.0, window_s)?;
    calibrate_single_axis(up, down, scenario.rate_dps(), window_s)
}

/// Averaged readings and ground truth for the six-position procedure.
///
/// Column order is x+, x-, y+, y-, z+, z-.
#[derive(Debug, Clone, PartialEq)]
pub struct SixPositionInput {
    averaged_measured: Matrix3x6<f64>,
    gt_matrix: Matrix4x6<f64>,
}

impl SixPositionInput {
    pub fn new(averaged_measured: Matrix3x6<f64>, gt_matrix: Matrix4x6<f64>) -> Result<Self> {
        if gt_matrix.row(3).iter().any(|&v| v != 1.0) {
            return Err(Error::invalid("ground-truth matrix bottom row must be all ones"));
        }
        Ok(Self {
            averaged_measured,
            gt_matrix,
        })
    }

    /// Standard turntable layout: each axis driven at `+rate` then `-rate`.
    pub fn turntable_gt(rate_dps: f64) -> Matrix4x6<f64> {
        let mut gt = Matrix4x6::zeros();
        for axis in 0..3 {
            gt[(axis, 2 * axis)] = rate_dps;
            gt[(axis, 2 * axis + 1)] = -rate_dps;
        }
        gt.row_mut(3).fill(1.0);
        gt
    }

    pub fn averaged_measured(&self) -> &Matrix3x6<f64> {
        &self.averaged_measured
    }

    pub fn gt_matrix(&self) -> &Matrix4x6<f64> {
        &self.gt_matrix
    }
}

/// Least-squares error matrix: rows are axes, columns `[gain_x, gain_y, gain_z, bias]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SixPositionSolution {
    pub z: Matrix3x4<f64>,
}

impl SixPositionSolution {
    /// Scale factor of `axis`: diagonal gain minus one.
    pub fn scale(&self, axis: usize) -> f64 {
        self.z[(axis, axis)] - 1.0
    }

    pub fn bias(&self, axis: usize) -> f64 {
        self.z[(axis, 3)]
    }
}

/// Solves `measured = Z * gt` for `Z` in the least-squares sense.
///
/// Uses a Householder QR solve of the transposed system rather than forming
/// `(gt * gt^T)^-1` explicitly.
pub fn calibrate_six_position(input: &SixPositionInput) -> Result<SixPositionSolution> {
    let qr = input.gt_matrix.transpose().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..4).map(|i| r[(i, i)].abs()).collect();
    let max_d = diag.iter().cloned().fold(0.0, f64::max);
    let min_d = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max_d > 0.0) || min_d <= max_d * 1e-12 {
        return Err(Error::Numeric(format!("ground-truth matrix is rank deficient (R diagonal {diag:?})")));
    }
    let rhs = qr.q().transpose() * input.averaged_measured.transpose();
    let z_t = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    Ok(SixPositionSolution { z: z_t.transpose() })
}

/// One point of a baseline absolute-error curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeCurvePoint {
    pub t: f64,
    pub ae_scale: f64,
    pub ae_bias: f64,
}

/// The 1..=70 s grid in one-second steps.
pub fn default_t_grid() -> Vec<f64> {
    (1..=70).map(f64::from).collect()
}

/// Baseline absolute error against `gt` after calibrating on `[0, t)` for each `t`.
pub fn baseline_ae_curve(scenario: &Scenario, gt: ScaleBias, t_grid: &[f64]) -> Result<Vec<AeCurvePoint>> {
    t_grid
        .iter()
        .map(|&t| {
            let est = calibrate_scenario(scenario, t)?;
            Ok(AeCurvePoint {
                t,
                ae_scale: absolute_error(est.scale, gt.scale),
                ae_bias: absolute_error(est.bias, gt.bias),
            })
        })
        .collect()
}
