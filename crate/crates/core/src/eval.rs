//! Accuracy and convergence-time metrics, and the held-out evaluation report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::calibration::{baseline_ae_curve, calibrate_scenario, AeCurvePoint};
use crate::error::{Error, Result};
use crate::nn::{predict_all, Model};
use crate::pipeline::{window_offsets, write_json, DataPoint, Provenance};
use crate::sensor_model::{ScaleBias, Scenario};

pub const REPORT_SCHEMA: &str = "gyrocal.report/1";
pub const REPORT_JSON: &str = "report.json";
pub const AE_TABLE_CSV: &str = "ae_table.csv";
pub const AE_CURVE_CSV: &str = "ae_curve.csv";

/// Calibration windows reported by default, seconds.
pub const DEFAULT_WINDOWS_S: [f64; 3] = [2.0, 4.0, 6.0];

pub fn absolute_error(estimate: f64, gt: f64) -> f64 {
    (estimate - gt).abs()
}

/// Relative AE reduction in percent.
pub fn improvement_pct(ae_baseline: f64, ae_ours: f64) -> Result<f64> {
    if !(ae_baseline > 0.0) {
        return Err(Error::invalid(format!(
            "improvement is undefined for baseline AE {ae_baseline}"
        )));
    }
    Ok(100.0 * (ae_baseline - ae_ours) / ae_baseline)
}

/// Earliest grid time at which the baseline matches the learned AE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvTime {
    Reached(f64),
    NotReached,
}

impl ConvTime {
    pub fn seconds(self) -> Option<f64> {
        match self {
            ConvTime::Reached(t) => Some(t),
            ConvTime::NotReached => None,
        }
    }
}

impl Serialize for ConvTime {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ConvTime::Reached(t) => s.serialize_f64(*t),
            ConvTime::NotReached => s.serialize_str("not_reached"),
        }
    }
}

impl<'de> Deserialize<'de> for ConvTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            T(f64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::T(t) => Ok(ConvTime::Reached(t)),
            Raw::S(s) if s == "not_reached" => Ok(ConvTime::NotReached),
            Raw::S(s) => Err(serde::de::Error::custom(format!("unexpected T_conv `{s}`"))),
        }
    }
}

/// Smallest `t` whose baseline AE is at most `ae_ours`.
pub fn t_conv(curve: &[(f64, f64)], ae_ours: f64) -> Result<ConvTime> {
    if curve.is_empty() {
        return Err(Error::invalid("convergence time of an empty curve"));
    }
    Ok(curve
        .iter()
        .find(|&&(_, ae)| ae <= ae_ours)
        .map_or(ConvTime::NotReached, |&(t, _)| ConvTime::Reached(t)))
}

/// Share of the baseline's convergence time saved by stopping at `window_s`.
pub fn conv_time_improvement(t_conv: f64, window_s: f64) -> Result<f64> {
    if !(t_conv > 0.0) {
        return Err(Error::invalid(format!("convergence time {t_conv} must be positive")));
    }
    if t_conv < window_s {
        return Ok(0.0);
    }
    Ok(100.0 * (t_conv - window_s) / t_conv)
}

/// A learned estimator that maps 2-second data points to `(scale, bias)`.
pub trait LearnedCalibrator {
    fn window_len(&self) -> usize;
    fn predict(&self, points: &[DataPoint]) -> Result<Vec<ScaleBias>>;
}

impl LearnedCalibrator for Model {
    fn window_len(&self) -> usize {
        self.config.window_len
    }

    fn predict(&self, points: &[DataPoint]) -> Result<Vec<ScaleBias>> {
        Ok(predict_all(self, points)?
            .into_iter()
            .map(|[s, b]| ScaleBias::new(s, b))
            .collect())
    }
}

/// Learned estimate from the first `window_s` seconds: the mean prediction
/// over the model-sized windows that fit, taken at `stride`.
pub fn learned_estimate<C: LearnedCalibrator + ?Sized>(
    calibrator: &C,
    scenario: &Scenario,
    window_s: f64,
    stride: usize,
) -> Result<ScaleBias> {
    let n = (window_s * scenario.fs_hz() + 1e-9).floor() as usize;
    let (up, down) = (scenario.up.samples(), scenario.down.samples());
    if n > up.len().min(down.len()) {
        return Err(Error::invalid(format!(
            "scenario `{}` is shorter than the {window_s} s window",
            scenario.id
        )));
    }
    let w = calibrator.window_len();
    let points = window_offsets(n, w, stride)?
        .into_iter()
        .enumerate()
        .map(|(k, off)| {
            DataPoint::new(
                &up[off..off + w],
                &down[off..off + w],
                scenario.rate_dps(),
                ScaleBias::default(),
                Provenance {
                    scenario_id: scenario.id.clone(),
                    segment: 0,
                    window: k,
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let preds = calibrator.predict(&points)?;
    let k = preds.len() as f64;
    Ok(ScaleBias::new(
        preds.iter().map(|p| p.scale).sum::<f64>() / k,
        preds.iter().map(|p| p.bias).sum::<f64>() / k,
    ))
}

/// A value per error term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerTerm<T> {
    pub scale: T,
    pub bias: T,
}

impl<T> PerTerm<T> {
    pub fn new(scale: T, bias: T) -> Self {
        Self { scale, bias }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window_s: f64,
    pub ours: ScaleBias,
    pub baseline: ScaleBias,
    pub ae_ours: PerTerm<f64>,
    pub ae_baseline: PerTerm<f64>,
    /// `None` when the baseline AE is zero and ours is not.
    pub improvement_pct: PerTerm<Option<f64>>,
    pub t_conv: PerTerm<ConvTime>,
    /// `None` when T_conv was not reached.
    pub conv_time_improvement_pct: PerTerm<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub id: String,
    pub labels: ScaleBias,
    pub windows: Vec<WindowReport>,
    pub curve: Vec<AeCurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub config_hash: String,
    pub scenarios: Vec<ScenarioReport>,
}

fn improvement_or_tie(ae_baseline: f64, ae_ours: f64) -> Option<f64> {
    if ae_baseline == 0.0 {
        (ae_ours == 0.0).then_some(0.0)
    } else {
        improvement_pct(ae_baseline, ae_ours).ok()
    }
}

fn conv_entry(curve: &[(f64, f64)], ae_ours: f64, window_s: f64) -> Result<(ConvTime, Option<f64>)> {
    let t = t_conv(curve, ae_ours)?;
    let pct = t.seconds().map(|t| conv_time_improvement(t, window_s)).transpose()?;
    Ok((t, pct))
}

/// Evaluates one labeled scenario at each calibration window.
pub fn evaluate_scenario<C: LearnedCalibrator + ?Sized>(
    calibrator: &C,
    scenario: &Scenario,
    windows_s: &[f64],
    stride: usize,
) -> Result<ScenarioReport> {
    let gt = scenario
        .labels
        .ok_or_else(|| Error::invalid(format!("test scenario `{}` has no label", scenario.id)))?;
    let longest = windows_s.iter().copied().fold(0.0, f64::max);
    if scenario.duration_s() + 1e-9 < longest {
        return Err(Error::invalid(format!(
            "scenario `{}` lasts {} s, shorter than the {longest} s window",
            scenario.id,
            scenario.duration_s()
        )));
    }
    let horizon = (scenario.duration_s() + 1e-9).floor().min(70.0) as u32;
    let grid: Vec<f64> = (1..=horizon).map(f64::from).collect();
    let curve = baseline_ae_curve(scenario, gt, &grid)?;
    let scale_curve: Vec<(f64, f64)> = curve.iter().map(|p| (p.t, p.ae_scale)).collect();
    let bias_curve: Vec<(f64, f64)> = curve.iter().map(|p| (p.t, p.ae_bias)).collect();

    let mut windows = Vec::with_capacity(windows_s.len());
    for &w in windows_s {
        let ours = learned_estimate(calibrator, scenario, w, stride)?;
        let baseline = calibrate_scenario(scenario, w)?.estimate();
        let ae_ours = PerTerm::new(absolute_error(ours.scale, gt.scale), absolute_error(ours.bias, gt.bias));
        let ae_baseline = PerTerm::new(
            absolute_error(baseline.scale, gt.scale),
            absolute_error(baseline.bias, gt.bias),
        );
        let (ts, cs) = conv_entry(&scale_curve, ae_ours.scale, w)?;
        let (tb, cb) = conv_entry(&bias_curve, ae_ours.bias, w)?;
        windows.push(WindowReport {
            window_s: w,
            ours,
            baseline,
            ae_ours,
            ae_baseline,
            improvement_pct: PerTerm::new(
                improvement_or_tie(ae_baseline.scale, ae_ours.scale),
                improvement_or_tie(ae_baseline.bias, ae_ours.bias),
            ),
            t_conv: PerTerm::new(ts, tb),
            conv_time_improvement_pct: PerTerm::new(cs, cb),
        });
    }
    Ok(ScenarioReport {
        id: scenario.id.clone(),
        labels: gt,
        windows,
        curve,
    })
}

/// Evaluates every test scenario.
pub fn evaluate<C: LearnedCalibrator + ?Sized>(
    calibrator: &C,
    test_scenarios: &[&Scenario],
    windows_s: &[f64],
    stride: usize,
    config_hash: &str,
) -> Result<EvalReport> {
    if test_scenarios.is_empty() {
        return Err(Error::invalid("no test scenarios to evaluate"));
    }
    let scenarios = test_scenarios
        .iter()
        .map(|s| evaluate_scenario(calibrator, s, windows_s, stride))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        schema: REPORT_SCHEMA.to_string(),
        config_hash: config_hash.to_string(),
        scenarios,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.1}"))
}

fn conv(t: ConvTime) -> String {
    match t {
        ConvTime::Reached(t) => format!("{t}"),
        ConvTime::NotReached => "not_reached".to_string(),
    }
}

/// Per scenario and window: AE of both methods, AE improvement, and T_conv.
pub fn ae_table_csv(report: &EvalReport) -> String {
    let mut out = format!("# config_hash={}\n", report.config_hash);
    out.push_str(
        "scenario,window_s,term,ae_ours,ae_baseline,improvement_pct,t_conv_s,conv_time_improvement_pct\n",
    );
    for s in &report.scenarios {
        for w in &s.windows {
            let rows = [
                ("scale", w.ae_ours.scale, w.ae_baseline.scale, w.improvement_pct.scale, w.t_conv.scale, w.conv_time_improvement_pct.scale),
                ("bias", w.ae_ours.bias, w.ae_baseline.bias, w.improvement_pct.bias, w.t_conv.bias, w.conv_time_improvement_pct.bias),
            ];
            for (term, ours, base, imp, t, ct) in rows {
                let _ = writeln!(
                    out,
                    "{},{},{term},{ours:e},{base:e},{},{},{}",
                    s.id,
                    w.window_s,
                    opt(imp),
                    conv(t),
                    opt(ct)
                );
            }
        }
    }
    out
}

/// Baseline AE over the time grid, with the learned AE filled in only at the
/// evaluated window lengths.
pub fn ae_curve_csv(report: &EvalReport) -> String {
    let mut out = format!("# config_hash={}\n", report.config_hash);
    out.push_str("scenario,term,t_s,ae_baseline,ae_ours\n");
    for s in &report.scenarios {
        for term in ["scale", "bias"] {
            for p in &s.curve {
                let base = if term == "scale" { p.ae_scale } else { p.ae_bias };
                let ours = s
                    .windows
                    .iter()
                    .find(|w| w.window_s == p.t)
                    .map(|w| if term == "scale" { w.ae_ours.scale } else { w.ae_ours.bias });
                let ours = ours.map_or(String::new(), |v| format!("{v:e}"));
                let _ = writeln!(out, "{},{term},{},{base:e},{ours}", s.id, p.t);
            }
        }
    }
    out
}

/// Writes the JSON report and both CSVs into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(REPORT_JSON), report)?;
    for (name, text) in [(AE_TABLE_CSV, ae_table_csv(report)), (AE_CURVE_CSV, ae_curve_csv(report))] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absolute_error_examples() {
        assert!((absolute_error(0.00403, 0.00388) - 0.00015).abs() < 1e-15);
        assert_eq!(absolute_error(3.5, 3.5), 0.0);
        assert_eq!(absolute_error(1.0, -2.0), absolute_error(-2.0, 1.0));
    }

    #[test]
    fn improvement_examples() {
        assert!((improvement_pct(0.00053, 0.00015).unwrap() - 71.7).abs() < 0.1);
        assert!((improvement_pct(0.07856, 0.02615).unwrap() - 66.7).abs() < 0.1);
        assert_eq!(improvement_pct(0.2, 0.2).unwrap(), 0.0);
        assert!(improvement_pct(0.0, 0.1).is_err());
    }

    #[test]
    fn t_conv_examples() {
        let curve: Vec<(f64, f64)> = (1..=70).map(|t| (t as f64, 0.003 / t as f64)).collect();
        // 0.003 / t <= 0.000151 first at t = 20
        assert_eq!(t_conv(&curve, 0.000151).unwrap(), ConvTime::Reached(20.0));
        assert_eq!(t_conv(&curve, 1.0).unwrap(), ConvTime::Reached(1.0));
        assert_eq!(t_conv(&curve, 1e-9).unwrap(), ConvTime::NotReached);
        assert!(t_conv(&[], 1.0).is_err());
    }

    #[test]
    fn conv_time_examples() {
        assert!((conv_time_improvement(17.0, 2.0).unwrap() - 88.2).abs() < 0.1);
        assert_eq!(conv_time_improvement(4.0, 2.0).unwrap(), 50.0);
        assert_eq!(conv_time_improvement(6.0, 6.0).unwrap(), 0.0);
        assert_eq!(conv_time_improvement(1.0, 2.0).unwrap(), 0.0);
        assert!(conv_time_improvement(0.0, 2.0).is_err());
    }

    #[test]
    fn conv_time_json() {
        let v = serde_json::to_string(&[ConvTime::Reached(17.0), ConvTime::NotReached]).unwrap();
        assert_eq!(v, r#"[17.0,"not_reached"]"#);
        let back: Vec<ConvTime> = serde_json::from_str(&v).unwrap();
        assert_eq!(back, vec![ConvTime::Reached(17.0), ConvTime::NotReached]);
    }
}
