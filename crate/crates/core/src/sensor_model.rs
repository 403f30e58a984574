//! Reduced z-axis gyroscope error model and turntable recording simulator.
//!
//! A single gyro axis reads `(1 + s) * omega + b + w`, where `s` is the scale
//! factor, `b` the bias, and `w` zero-mean white Gaussian noise. Cross-axis
//! misalignment is taken to be zero, so no type carries it.
//!
//! A scenario is one turntable run recorded twice: once with the sensitive axis
//! pointing up (sensed rate `+omega`) and once flipped (sensed rate `-omega`).
//! Recordings store the raw sensor output; the down recording is not
//! sign-normalized.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Turntable rate used throughout the reference experiment, in DPS.
pub const DEFAULT_RATE_DPS: f64 = 78.0;
/// Sampling rate of the reference IMU, in Hz.
pub const DEFAULT_FS_HZ: f64 = 145.0;
/// Length of one scenario recording, in seconds.
pub const DEFAULT_DURATION_S: f64 = 70.0;
/// Gyro noise density, DPS/sqrt(Hz).
pub const NOISE_DENSITY_DPS_RT_HZ: f64 = 3.8e-3;

/// Per-sample white-noise standard deviation for a sensor with the default
/// noise density sampled at `fs_hz` (bandwidth taken as Nyquist).
pub fn default_noise_sigma(fs_hz: f64) -> f64 {
    NOISE_DENSITY_DPS_RT_HZ * (fs_hz / 2.0).sqrt()
}

/// Ground-truth error terms of one simulated z-axis gyro.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GyroErrorTerms {
    /// Scale factor as a fraction (0.00388 is 0.388 %).
    pub scale: f64,
    /// Additive bias, DPS.
    pub bias: f64,
    /// White-noise standard deviation per sample, DPS.
    pub sigma: f64,
}

impl GyroErrorTerms {
    pub fn new(scale: f64, bias: f64, sigma: f64) -> Result<Self> {
        let terms = Self { scale, bias, sigma };
        terms.validate()?;
        Ok(terms)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.bias.is_finite() && self.sigma.is_finite()) {
            return Err(Error::invalid("error terms must be finite"));
        }
        if self.sigma < 0.0 {
            return Err(Error::invalid(format!("noise sigma {} < 0", self.sigma)));
        }
        if self.scale <= -1.0 {
            return Err(Error::invalid(format!(
                "scale {} makes the effective gain non-positive",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn scale_bias(&self) -> ScaleBias {
        ScaleBias {
            scale: self.scale,
            bias: self.bias,
        }
    }
}

/// A (scale factor, bias) pair: a label, an estimate, or an error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScaleBias {
    pub scale: f64,
    pub bias: f64,
}

impl ScaleBias {
    pub fn new(scale: f64, bias: f64) -> Self {
        Self { scale, bias }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Up,
    Down,
}

impl Orientation {
    /// Sign of the sensed turntable rate in this orientation.
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Up => 1.0,
            Orientation::Down => -1.0,
        }
    }
}

/// Uniformly sampled angular-velocity record of the z-axis gyro.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    orientation: Orientation,
    true_rate_dps: f64,
}

impl Recording {
    pub fn new(
        samples: Vec<f64>,
        sample_rate_hz: f64,
        orientation: Orientation,
        true_rate_dps: f64,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("recording has no samples"));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::invalid(format!(
                "sample rate {sample_rate_hz} Hz must be positive"
            )));
        }
        if !(true_rate_dps.is_finite() && true_rate_dps > 0.0) {
            return Err(Error::invalid(format!(
                "turntable rate {true_rate_dps} DPS must be positive"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            orientation,
            true_rate_dps,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn true_rate_dps(&self) -> f64 {
        self.true_rate_dps
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Writes the recording as `t_s,omega_z_dps` CSV with 9 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.samples.len() * 24);
        out.push_str("t_s,omega_z_dps\n");
        for (i, &w) in self.samples.iter().enumerate() {
            let t = i as f64 / self.sample_rate_hz;
            let _ = writeln!(out, "{},{}", fmt_sig9(t), fmt_sig9(w));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a `t_s,omega_z_dps` CSV. Metadata the file does not carry is
    /// supplied by the caller; the time column must match `i / fs`.
    pub fn read_csv(
        path: &Path,
        sample_rate_hz: f64,
        orientation: Orientation,
        true_rate_dps: f64,
    ) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "t_s,omega_z_dps" => {}
            Some((_, h)) => {
                return Err(parse_err(1, format!("expected header `t_s,omega_z_dps`, found `{h}`")))
            }
            None => return Err(parse_err(1, "empty file".into())),
        }
        let mut samples = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let (Some(t), Some(w), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err(lineno, format!("expected 2 fields in `{line}`")));
            };
            let t: f64 = t
                .trim()
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad time `{t}`: {e}")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad rate `{w}`: {e}")))?;
            if !w.is_finite() {
                return Err(parse_err(lineno, "non-finite rate".into()));
            }
            let expected_t = samples.len() as f64 / sample_rate_hz;
            if (t - expected_t).abs() > 1e-6 * expected_t.max(1.0) {
                return Err(parse_err(
                    lineno,
                    format!("time {t} s does not match sample index (expected {expected_t})"),
                ));
            }
            samples.push(w);
        }
        Recording::new(samples, sample_rate_hz, orientation, true_rate_dps).map_err(|e| {
            Error::format(path, e)
        })
    }
}

/// Formats `x` with 9 significant digits.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.8e}")
    }
}

/// Rounds `x` to the value a 9-significant-digit CSV round trip yields.
pub fn quantize_sig9(x: f64) -> f64 {
    fmt_sig9(x).parse().expect("formatted float parses")
}

/// Paired up/down recordings of one turntable scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub up: Recording,
    pub down: Recording,
    pub truth: Option<GyroErrorTerms>,
    pub labels: Option<ScaleBias>,
}

impl Scenario {
    pub fn new(
        id: impl Into<String>,
        up: Recording,
        down: Recording,
        truth: Option<GyroErrorTerms>,
    ) -> Result<Self> {
        if up.orientation != Orientation::Up || down.orientation != Orientation::Down {
            return Err(Error::invalid("scenario needs one Up and one Down recording"));
        }
        if up.true_rate_dps != down.true_rate_dps {
            return Err(Error::invalid("up/down recordings disagree on turntable rate"));
        }
        if up.sample_rate_hz != down.sample_rate_hz {
            return Err(Error::invalid("up/down recordings disagree on sample rate"));
        }
        Ok(Self {
            id: id.into(),
            up,
            down,
            truth,
            labels: None,
        })
    }

    pub fn rate_dps(&self) -> f64 {
        self.up.true_rate_dps
    }

    pub fn fs_hz(&self) -> f64 {
        self.up.sample_rate_hz
    }

    /// Duration covered by both recordings.
    pub fn duration_s(&self) -> f64 {
        self.up.duration_s().min(self.down.duration_s())
    }

    /// Replaces every sample with its 9-significant-digit CSV value.
    pub fn quantize(&mut self) {
        for r in [&mut self.up, &mut self.down] {
            r.samples.iter_mut().for_each(|w| *w = quantize_sig9(*w));
        }
    }
}

fn noise_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn apply_with_rng(input: &[f64], terms: &GyroErrorTerms, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    terms.validate()?;
    if input.is_empty() {
        return Err(Error::invalid("true-rate sequence is empty"));
    }
    if let Some(i) = input.iter().position(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("true rate at index {i} is not finite")));
    }
    let gain = 1.0 + terms.scale;
    if terms.sigma == 0.0 {
        return Ok(input.iter().map(|&w| gain * w + terms.bias).collect());
    }
    let normal = Normal::new(0.0, terms.sigma).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(input
        .iter()
        .map(|&w| gain * w + terms.bias + normal.sample(rng))
        .collect())
}

/// Applies the reduced error model to a true sensed-rate sequence.
///
/// The noise draw is fully determined by `rng_seed`.
pub fn apply_error_model(true_rate: &[f64], terms: &GyroErrorTerms, rng_seed: u64) -> Result<Vec<f64>> {
    apply_with_rng(true_rate, terms, &mut noise_rng(rng_seed, 0))
}

/// Simulates one up/down turntable scenario at a constant rate.
pub fn generate_scenario(
    id: impl Into<String>,
    rate_dps: f64,
    duration_s: f64,
    fs_hz: f64,
    terms: &GyroErrorTerms,
    rng_seed: u64,
) -> Result<Scenario> {
    if !(rate_dps.is_finite() && rate_dps > 0.0) {
        return Err(Error::invalid(format!("rate {rate_dps} DPS must be positive")));
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::invalid(format!("duration {duration_s} s must be positive")));
    }
    if !(fs_hz.is_finite() && fs_hz > 0.0) {
        return Err(Error::invalid(format!("sample rate {fs_hz} Hz must be positive")));
    }
    let n = (duration_s * fs_hz).round() as usize;
    if n == 0 {
        return Err(Error::invalid("scenario would contain no samples"));
    }
    let record = |orientation: Orientation, stream: u64| {
        let sensed = vec![orientation.sign() * rate_dps; n];
        let samples = apply_with_rng(&sensed, terms, &mut noise_rng(rng_seed, stream))?;
        Recording::new(samples, fs_hz, orientation, rate_dps)
    };
    let up = record(Orientation::Up, 1)?;
    let down = record(Orientation::Down, 2)?;
    Scenario::new(id, up, down, Some(*terms))
}

/// Closed interval `[lo, hi]`; `lo == hi` is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let i = Self { lo, hi };
        i.validate()?;
        Ok(i)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::invalid("interval bounds must be finite"));
        }
        if self.lo > self.hi {
            return Err(Error::invalid(format!(
                "inverted interval [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        let u: f64 = rng.random();
        (self.lo + (self.hi - self.lo) * u).clamp(self.lo, self.hi)
    }
}

/// Draws error terms uniformly from the given ranges.
pub fn sample_error_terms(
    rng_seed: u64,
    scale_range: Interval,
    bias_range: Interval,
    sigma: f64,
) -> Result<GyroErrorTerms> {
    scale_range.validate()?;
    bias_range.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let scale = scale_range.sample(&mut rng);
    let bias = bias_range.sample(&mut rng);
    GyroErrorTerms::new(scale, bias, sigma)
}
