//! Dataset construction: labeling, segmentation, windowing, splitting, and
//! synthetic corpus generation.
//!
//! A scenario's first `usable_s` seconds are cut into `segment_s` segments;
//! each segment yields overlapping `window_len` windows at `stride`. With the
//! defaults (6 s segments over 48 s, 290-sample windows at stride 174) that is
//! 8 x 4 = 32 data points per scenario.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_single_axis, mean};
use crate::error::{Error, Result};
use crate::nn::Example;
use crate::sensor_model::{
    generate_scenario, sample_error_terms, GyroErrorTerms, Interval, Orientation, Recording, ScaleBias, Scenario,
};
use crate::seeds::derive_seed;

pub const CORPUS_SCHEMA: &str = "gyrocal.corpus/1";
pub const DATASET_SCHEMA: &str = "gyrocal.dataset/1";
pub const CORPUS_MANIFEST: &str = "manifest.json";
pub const DATASET_MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario_id: String,
    pub segment: usize,
    pub window: usize,
}

/// One `3 x W` window with its `(scale, bias)` label.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    window: Vec<f64>,
    window_len: usize,
    pub label: ScaleBias,
    pub provenance: Provenance,
}

impl DataPoint {
    /// Stacks the up row, down row, and a constant `gt_rate` row.
    pub fn new(up: &[f64], down: &[f64], gt_rate: f64, label: ScaleBias, provenance: Provenance) -> Result<Self> {
        if up.len() != down.len() || up.is_empty() {
            return Err(Error::shape(format!(
                "up/down windows must be equal and non-empty ({} vs {})",
                up.len(),
                down.len()
            )));
        }
        let w = up.len();
        let mut window = Vec::with_capacity(3 * w);
        window.extend_from_slice(up);
        window.extend_from_slice(down);
        window.extend(std::iter::repeat_n(gt_rate, w));
        Ok(Self {
            window,
            window_len: w,
            label,
            provenance,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// Row `r` of the window (0 up, 1 down, 2 ground-truth rate).
    pub fn row(&self, r: usize) -> &[f64] {
        &self.window[r * self.window_len..(r + 1) * self.window_len]
    }
}

impl Example for DataPoint {
    fn window(&self) -> &[f64] {
        &self.window
    }

    fn target(&self) -> [f64; 2] {
        [self.label.scale, self.label.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<DataPoint>,
    pub val: Vec<DataPoint>,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub segment_s: f64,
    pub usable_s: f64,
    pub window_len: usize,
    pub stride: usize,
    /// Fraction of data points assigned to training.
    pub split_ratio: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segment_s: 6.0,
            usable_s: 48.0,
            window_len: 290,
            stride: 174,
            split_ratio: 0.8,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.segment_s > 0.0 && self.segment_s.is_finite()) {
            return Err(Error::invalid("segment_s must be positive"));
        }
        if !(self.usable_s >= self.segment_s && self.usable_s.is_finite()) {
            return Err(Error::invalid("usable_s must be at least one segment"));
        }
        if self.window_len == 0 || self.stride == 0 {
            return Err(Error::invalid("window_len and stride must be positive"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::invalid(format!("split ratio {} outside (0, 1)", self.split_ratio)));
        }
        Ok(())
    }
}

/// Baseline calibration over the full recordings.
pub fn label_scenario(scenario: &Scenario) -> Result<ScaleBias> {
    let n = scenario.up.len().min(scenario.down.len());
    let up = mean(&scenario.up.samples()[..n]);
    let down = mean(&scenario.down.samples()[..n]);
    let window_s = n as f64 / scenario.fs_hz();
    Ok(calibrate_single_axis(up, down, scenario.rate_dps(), window_s)?.estimate())
}

/// Labels every scenario in place.
pub fn label_all(scenarios: &mut [Scenario]) -> Result<()> {
    for s in scenarios {
        s.labels = Some(label_scenario(s)?);
    }
    Ok(())
}

/// Matching up/down slices of one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPair<'a> {
    pub index: usize,
    pub up: &'a [f64],
    pub down: &'a [f64],
}

/// Cuts `[0, usable_s)` into consecutive `segment_s` segments.
pub fn segment_scenario(scenario: &Scenario, segment_s: f64, usable_s: f64) -> Result<Vec<SegmentPair<'_>>> {
    if !(segment_s > 0.0 && usable_s >= segment_s) {
        return Err(Error::invalid(format!(
            "cannot cut {usable_s} s into {segment_s} s segments"
        )));
    }
    if scenario.duration_s() + 1e-9 < usable_s {
        return Err(Error::invalid(format!(
            "scenario `{}` lasts {} s, shorter than the usable span {usable_s} s",
            scenario.id,
            scenario.duration_s()
        )));
    }
    let seg_len = (segment_s * scenario.fs_hz()).round() as usize;
    let count = (usable_s / segment_s + 1e-9).floor() as usize;
    let up = scenario.up.samples();
    let down = scenario.down.samples();
    if seg_len == 0 || count * seg_len > up.len().min(down.len()) {
        return Err(Error::invalid(format!(
            "scenario `{}` has too few samples for {count} segments of {seg_len}",
            scenario.id
        )));
    }
    Ok((0..count)
        .map(|k| SegmentPair {
            index: k,
            up: &up[k * seg_len..(k + 1) * seg_len],
            down: &down[k * seg_len..(k + 1) * seg_len],
        })
        .collect())
}

/// Start offsets of the windows that fit in `len` samples.
pub fn window_offsets(len: usize, window_len: usize, stride: usize) -> Result<Vec<usize>> {
    if window_len == 0 || stride == 0 {
        return Err(Error::invalid("window_len and stride must be positive"));
    }
    if len < window_len {
        return Err(Error::invalid(format!(
            "{len} samples are fewer than one {window_len}-sample window"
        )));
    }
    Ok((0..=(len - window_len) / stride).map(|k| k * stride).collect())
}

/// Slides a window over one segment pair.
pub fn window_segment(
    segment: &SegmentPair<'_>,
    window_len: usize,
    stride: usize,
    gt_rate: f64,
    label: ScaleBias,
    scenario_id: &str,
) -> Result<Vec<DataPoint>> {
    window_offsets(segment.up.len().min(segment.down.len()), window_len, stride)?
        .into_iter()
        .enumerate()
        .map(|(k, off)| {
            DataPoint::new(
                &segment.up[off..off + window_len],
                &segment.down[off..off + window_len],
                gt_rate,
                label,
                Provenance {
                    scenario_id: scenario_id.to_string(),
                    segment: segment.index,
                    window: k,
                },
            )
        })
        .collect()
}

/// Every data point of one labeled scenario.
pub fn scenario_datapoints(scenario: &Scenario, cfg: &PipelineConfig) -> Result<Vec<DataPoint>> {
    let label = scenario
        .labels
        .ok_or_else(|| Error::invalid(format!("scenario `{}` has no label", scenario.id)))?;
    let mut out = Vec::new();
    for seg in segment_scenario(scenario, cfg.segment_s, cfg.usable_s)? {
        out.extend(window_segment(
            &seg,
            cfg.window_len,
            cfg.stride,
            scenario.rate_dps(),
            label,
            &scenario.id,
        )?);
    }
    Ok(out)
}

pub fn build_datapoints(scenarios: &[Scenario], cfg: &PipelineConfig) -> Result<Vec<DataPoint>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for s in scenarios {
        out.extend(scenario_datapoints(s, cfg)?);
    }
    Ok(out)
}

/// Number of points sent to training: `floor(ratio * n)`.
pub fn train_count(n: usize, ratio: f64) -> usize {
    // The epsilon absorbs products like 0.8 * 10 landing just under 8.
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Seeded shuffle, then `floor(ratio * N)` points to training.
pub fn split_train_val(points: Vec<DataPoint>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if points.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut points = points;
    points.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = points.split_off(train_count(points.len(), ratio));
    Ok(DatasetSplit {
        train: points,
        val,
        split_seed: seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    pub n_scenarios: usize,
    /// Scenarios at the end of the batch held out for testing.
    pub n_test: usize,
    pub rate_dps: f64,
    pub fs_hz: f64,
    pub duration_s: f64,
    pub scale_range: Interval,
    pub bias_range: Interval,
    pub noise_sigma: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        use crate::sensor_model::{default_noise_sigma, DEFAULT_DURATION_S, DEFAULT_FS_HZ, DEFAULT_RATE_DPS};
        Self {
            n_scenarios: 48,
            n_test: 2,
            rate_dps: DEFAULT_RATE_DPS,
            fs_hz: DEFAULT_FS_HZ,
            duration_s: DEFAULT_DURATION_S,
            scale_range: Interval { lo: 0.003, hi: 0.005 },
            bias_range: Interval { lo: -0.1, hi: 0.0 },
            noise_sigma: default_noise_sigma(DEFAULT_FS_HZ),
        }
    }
}

impl CorpusParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenarios == 0 {
            return Err(Error::invalid("n_scenarios must be at least 1"));
        }
        if self.n_test >= self.n_scenarios {
            return Err(Error::invalid(format!(
                "n_test {} leaves no training scenarios out of {}",
                self.n_test, self.n_scenarios
            )));
        }
        self.scale_range.validate()?;
        self.bias_range.validate()?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Labeled scenarios plus their train/test roles.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
    pub test_ids: Vec<String>,
}

impl Corpus {
    pub fn is_test(&self, id: &str) -> bool {
        self.test_ids.iter().any(|t| t == id)
    }

    pub fn train_scenarios(&self) -> Vec<&Scenario> {
        self.scenarios.iter().filter(|s| !self.is_test(&s.id)).collect()
    }

    pub fn test_scenarios(&self) -> Vec<&Scenario> {
        self.scenarios.iter().filter(|s| self.is_test(&s.id)).collect()
    }
}

pub fn scenario_id(i: usize) -> String {
    format!("s{i:03}")
}

/// Simulates and labels a corpus in memory.
///
/// Samples are quantized to their on-disk CSV precision, so a corpus read
/// back from disk equals the one generated here.
pub fn generate_corpus(params: &CorpusParams, seed: u64) -> Result<Corpus> {
    params.validate()?;
    let mut scenarios = Vec::with_capacity(params.n_scenarios);
    for i in 0..params.n_scenarios {
        let terms = sample_error_terms(
            derive_seed(seed, i as u64, 0),
            params.scale_range,
            params.bias_range,
            params.noise_sigma,
        )?;
        let mut s = generate_scenario(
            scenario_id(i),
            params.rate_dps,
            params.duration_s,
            params.fs_hz,
            &terms,
            derive_seed(seed, i as u64, 1),
        )?;
        s.quantize();
        s.labels = Some(label_scenario(&s)?);
        scenarios.push(s);
    }
    let test_ids = scenarios[params.n_scenarios - params.n_test..]
        .iter()
        .map(|s| s.id.clone())
        .collect();
    Ok(Corpus {
        seed,
        scenarios,
        test_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub id: String,
    pub rate_dps: f64,
    pub fs_hz: f64,
    pub up_file: String,
    pub down_file: String,
    pub truth: Option<GyroErrorTerms>,
    pub labels: Option<ScaleBias>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema: String,
    pub config_hash: String,
    pub corpus_seed: u64,
    pub scenarios: Vec<ScenarioEntry>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// Writes one CSV pair per scenario and the corpus manifest.
pub fn write_corpus(corpus: &Corpus, dir: &Path, config_hash: &str) -> Result<CorpusManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(corpus.scenarios.len());
    for s in &corpus.scenarios {
        let up_file = format!("{}_up.csv", s.id);
        let down_file = format!("{}_down.csv", s.id);
        s.up.write_csv(&dir.join(&up_file))?;
        s.down.write_csv(&dir.join(&down_file))?;
        entries.push(ScenarioEntry {
            id: s.id.clone(),
            rate_dps: s.rate_dps(),
            fs_hz: s.fs_hz(),
            up_file,
            down_file,
            truth: s.truth,
            labels: s.labels,
        });
    }
    let manifest = CorpusManifest {
        schema: CORPUS_SCHEMA.to_string(),
        config_hash: config_hash.to_string(),
        corpus_seed: corpus.seed,
        scenarios: entries,
        train_ids: corpus.train_scenarios().iter().map(|s| s.id.clone()).collect(),
        test_ids: corpus.test_ids.clone(),
    };
    write_json(&dir.join(CORPUS_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_corpus_manifest(dir: &Path) -> Result<CorpusManifest> {
    let path = dir.join(CORPUS_MANIFEST);
    let m: CorpusManifest = read_json(&path)?;
    if m.schema != CORPUS_SCHEMA {
        return Err(Error::format(&path, format!("unsupported schema `{}`", m.schema)));
    }
    for id in m.train_ids.iter().chain(&m.test_ids) {
        if !m.scenarios.iter().any(|s| &s.id == id) {
            return Err(Error::format(&path, format!("split lists unknown scenario `{id}`")));
        }
    }
    if let Some(id) = m.test_ids.iter().find(|id| m.train_ids.contains(id)) {
        return Err(Error::format(&path, format!("scenario `{id}` is in both splits")));
    }
    Ok(m)
}

/// Loads a corpus written by [`write_corpus`]. Scenarios without a stored
/// label are labeled on load.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let m = read_corpus_manifest(dir)?;
    let mut scenarios = Vec::with_capacity(m.scenarios.len());
    for e in &m.scenarios {
        let up = Recording::read_csv(&dir.join(&e.up_file), e.fs_hz, Orientation::Up, e.rate_dps)?;
        let down = Recording::read_csv(&dir.join(&e.down_file), e.fs_hz, Orientation::Down, e.rate_dps)?;
        let mut s = Scenario::new(e.id.clone(), up, down, e.truth)?;
        s.labels = match e.labels {
            Some(l) => Some(l),
            None => Some(label_scenario(&s)?),
        };
        scenarios.push(s);
    }
    Ok(Corpus {
        seed: m.corpus_seed,
        scenarios,
        test_ids: m.test_ids,
    })
}

/// Generates a labeled corpus and writes it to `dir`.
pub fn build_synthetic_corpus(
    params: &CorpusParams,
    seed: u64,
    dir: &Path,
    config_hash: &str,
) -> Result<(Corpus, CorpusManifest)> {
    let corpus = generate_corpus(params, seed)?;
    let manifest = write_corpus(&corpus, dir, config_hash)?;
    Ok((corpus, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub config_hash: String,
    pub corpus_seed: u64,
    pub split_seed: u64,
    pub window_len: usize,
    pub train_scenarios: Vec<String>,
    pub test_scenarios: Vec<String>,
    pub n_train: usize,
    pub n_val: usize,
    /// Little-endian `f64`: per point, `3 x window_len` window values then scale, bias.
    pub tensor_file: String,
    pub index_file: String,
}

/// Writes the split as a flat binary tensor file, an index CSV, and a manifest.
pub fn write_dataset(
    split: &DatasetSplit,
    corpus: &Corpus,
    dir: &Path,
    config_hash: &str,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let window_len = split
        .train
        .first()
        .or(split.val.first())
        .map(DataPoint::window_len)
        .ok_or_else(|| Error::invalid("dataset is empty"))?;
    let tensor_file = "datapoints.f64".to_string();
    let index_file = "datapoints_index.csv".to_string();

    let tpath = dir.join(&tensor_file);
    let mut bin = BufWriter::new(fs::File::create(&tpath).map_err(|e| Error::io(&tpath, e))?);
    let ipath = dir.join(&index_file);
    let mut idx = BufWriter::new(fs::File::create(&ipath).map_err(|e| Error::io(&ipath, e))?);
    let werr = |p: &PathBuf| {
        let p = p.clone();
        move |e| Error::io(p, e)
    };
    writeln!(idx, "# config_hash={config_hash}").map_err(werr(&ipath))?;
    writeln!(idx, "row,split,scenario_id,segment,window,label_scale,label_bias").map_err(werr(&ipath))?;
    let rows = split.train.iter().map(|p| ("train", p)).chain(split.val.iter().map(|p| ("val", p)));
    for (row, (role, p)) in rows.enumerate() {
        if p.window_len() != window_len {
            return Err(Error::shape("data points have differing window lengths"));
        }
        for v in p.window().iter().chain(&p.target()) {
            bin.write_all(&v.to_le_bytes()).map_err(werr(&tpath))?;
        }
        writeln!(
            idx,
            "{row},{role},{},{},{},{:e},{:e}",
            p.provenance.scenario_id, p.provenance.segment, p.provenance.window, p.label.scale, p.label.bias
        )
        .map_err(werr(&ipath))?;
    }
    bin.flush().map_err(werr(&tpath))?;
    idx.flush().map_err(werr(&ipath))?;

    let manifest = DatasetManifest {
        schema: DATASET_SCHEMA.to_string(),
        config_hash: config_hash.to_string(),
        corpus_seed: corpus.seed,
        split_seed: split.split_seed,
        window_len,
        train_scenarios: corpus.train_scenarios().iter().map(|s| s.id.clone()).collect(),
        test_scenarios: corpus.test_ids.clone(),
        n_train: split.train.len(),
        n_val: split.val.len(),
        tensor_file,
        index_file,
    };
    write_json(&dir.join(DATASET_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Reads a split written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, DatasetSplit)> {
    let mpath = dir.join(DATASET_MANIFEST);
    let m: DatasetManifest = read_json(&mpath)?;
    if m.schema != DATASET_SCHEMA {
        return Err(Error::format(&mpath, format!("unsupported schema `{}`", m.schema)));
    }
    let tpath = dir.join(&m.tensor_file);
    let bytes = fs::read(&tpath).map_err(|e| Error::io(&tpath, e))?;
    let per_point = 3 * m.window_len + 2;
    let n = m.n_train + m.n_val;
    if bytes.len() != n * per_point * 8 {
        return Err(Error::format(
            &tpath,
            format!("expected {} bytes for {n} points, found {}", n * per_point * 8, bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();

    let ipath = dir.join(&m.index_file);
    let text = fs::read_to_string(&ipath).map_err(|e| Error::io(&ipath, e))?;
    let rows: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#'))
        .skip(1)
        .collect();
    if rows.len() != n {
        return Err(Error::format(&ipath, format!("expected {n} index rows, found {}", rows.len())));
    }
    let mut split = DatasetSplit {
        train: Vec::with_capacity(m.n_train),
        val: Vec::with_capacity(m.n_val),
        split_seed: m.split_seed,
    };
    let w = m.window_len;
    for (k, (line_no, line)) in rows.into_iter().enumerate() {
        let parse_err = |msg: &str| Error::Parse {
            path: ipath.clone(),
            line: line_no + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(parse_err("expected 7 fields"));
        }
        let chunk = &values[k * per_point..(k + 1) * per_point];
        let provenance = Provenance {
            scenario_id: f[2].to_string(),
            segment: f[3].parse().map_err(|_| parse_err("bad segment index"))?,
            window: f[4].parse().map_err(|_| parse_err("bad window index"))?,
        };
        let label = ScaleBias::new(chunk[3 * w], chunk[3 * w + 1]);
        let p = DataPoint::new(&chunk[..w], &chunk[w..2 * w], chunk[2 * w], label, provenance)?;
        if p.window() != &chunk[..3 * w] {
            return Err(parse_err("ground-truth row is not constant"));
        }
        match f[1] {
            "train" => split.train.push(p),
            "val" => split.val.push(p),
            _ => return Err(parse_err("split must be `train` or `val`")),
        }
    }
    if split.train.len() != m.n_train {
        return Err(Error::format(&ipath, "train count disagrees with manifest"));
    }
    Ok((m, split))
}
