//! Pre-training and fine-tuning corpus construction.
//!
//! Source series are cut into sliding windows, optionally thinned to one
//! representative per k-means cluster, and rendered into instruction records.
//! Records are stored one JSON object per line.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{encode, encode_with, BinGrid, CodecError, SeriesWindow};
use crate::prompt::{
    render_context_prompt, render_forecast_prompt, to_corpus_record, ContextBlock, DayContext,
    PromptError,
};
use crate::stats::{fill_missing, mean, std_dev};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid slice config: {0}")]
    InvalidConfig(String),
    #[error("slice has {0} non-missing values; at least 2 are needed")]
    TooFewValues(usize),
    #[error("cannot select {k} representatives from {available} slices")]
    InsufficientSlices { k: usize, available: usize },
    #[error("source for {task} has {available} records, {needed} needed")]
    SourceTooSmall {
        task: Task,
        available: usize,
        needed: usize,
    },
    #[error("record for {found} found in the {expected} source")]
    TaskMismatch { expected: Task, found: Task },
    #[error("invalid record on line {line}: {reason}")]
    InvalidRecord { line: usize, reason: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// The four fine-tuning tasks, in mix order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TextQa,
    Forecast,
    ContextForecast,
    TsQa,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::TextQa, Task::Forecast, Task::ContextForecast, Task::TsQa];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::TextQa => "text_qa",
            Task::Forecast => "forecast",
            Task::ContextForecast => "context_forecast",
            Task::TsQa => "ts_qa",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

/// Instruction/input/output triple in the Alpaca record shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub task: Task,
}

impl CorpusRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, value) in [
            ("instruction", &self.instruction),
            ("input", &self.input),
            ("output", &self.output),
        ] {
            if value.is_empty() {
                return Err(format!("{name} is empty"));
            }
        }
        Ok(())
    }
}

/// Writes records one JSON object per line, after an optional `# ` comment
/// header line.
pub fn write_corpus<W: Write>(mut w: W, records: &[CorpusRecord], header: Option<&str>) -> Result<()> {
    if let Some(h) = header {
        writeln!(w, "# {h}")?;
    }
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a corpus file, skipping `# ` comment lines.
pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.starts_with("# ") || line.is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::InvalidRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
        rec.validate()
            .map_err(|reason| CorpusError::InvalidRecord { line: i + 1, reason })?;
        out.push(rec);
    }
    Ok(out)
}

/// Sliding-window geometry: `window = history + prediction`, advanced by
/// `step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSliceConfig", into = "RawSliceConfig")]
pub struct SliceConfig {
    history: usize,
    prediction: usize,
    step: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSliceConfig {
    window: usize,
    history: usize,
    prediction: usize,
    step: usize,
}

impl TryFrom<RawSliceConfig> for SliceConfig {
    type Error = CorpusError;

    fn try_from(r: RawSliceConfig) -> Result<Self> {
        let c = SliceConfig::new(r.history, r.prediction, r.step)?;
        if c.window() != r.window {
            return Err(CorpusError::InvalidConfig(format!(
                "window {} != history {} + prediction {}",
                r.window, r.history, r.prediction
            )));
        }
        Ok(c)
    }
}

impl From<SliceConfig> for RawSliceConfig {
    fn from(c: SliceConfig) -> Self {
        RawSliceConfig {
            window: c.window(),
            history: c.history,
            prediction: c.prediction,
            step: c.step,
        }
    }
}

impl SliceConfig {
    pub fn new(history: usize, prediction: usize, step: usize) -> Result<Self> {
        if history == 0 || prediction == 0 || step == 0 {
            return Err(CorpusError::InvalidConfig(format!(
                "history {history}, prediction {prediction} and step {step} must all be positive"
            )));
        }
        Ok(Self {
            history,
            prediction,
            step,
        })
    }

    pub fn window(&self) -> usize {
        self.history + self.prediction
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn prediction(&self) -> usize {
        self.prediction
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Number of windows that fit in a series of length `len`.
    pub fn slice_count(&self, len: usize) -> usize {
        if len < self.window() {
            0
        } else {
            (len - self.window()) / self.step + 1
        }
    }
}

/// The five production window settings, largest first.
pub fn default_slice_configs() -> Vec<SliceConfig> {
    [(512, 64, 32), (256, 32, 16), (128, 16, 8), (64, 8, 4), (32, 4, 2)]
        .into_iter()
        .map(|(h, p, s)| SliceConfig::new(h, p, s).expect("valid default config"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlicePolicy {
    /// Only the largest config whose window fits the series.
    #[default]
    LargestOnly,
    /// Every config whose window fits, largest first.
    AllConfigs,
}

impl FromStr for SlicePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "largest_only" => Ok(SlicePolicy::LargestOnly),
            "all_configs" => Ok(SlicePolicy::AllConfigs),
            other => Err(format!("unknown slice policy `{other}`")),
        }
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = values
            .iter()
            .map(|v| if v.is_nan() { None } else { Some(*v) })
            .collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt = Vec::<Option<f64>>::deserialize(d)?;
        Ok(opt.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }
}

/// One window cut from a source series. Missing values are NaN.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Slice {
    pub source_id: String,
    pub offset: usize,
    pub config: SliceConfig,
    #[serde(with = "nan_as_null")]
    pub values: Vec<f64>,
}

impl PartialEq for Slice {
    fn eq(&self, other: &Self) -> bool {
        self.identity() == other.identity()
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

impl Slice {
    /// `(source, offset, window)` names a slice uniquely.
    pub fn identity(&self) -> (&str, usize, usize) {
        (&self.source_id, self.offset, self.config.window())
    }

    pub fn history(&self) -> &[f64] {
        &self.values[..self.config.history()]
    }

    pub fn future(&self) -> &[f64] {
        &self.values[self.config.history()..]
    }
}

pub fn slice_series(
    source_id: &str,
    series: &[f64],
    configs: &[SliceConfig],
    policy: SlicePolicy,
) -> Vec<Slice> {
    let mut fitting: Vec<SliceConfig> = configs
        .iter()
        .copied()
        .filter(|c| c.window() <= series.len())
        .collect();
    fitting.sort_by_key(|c| std::cmp::Reverse(c.window()));
    if policy == SlicePolicy::LargestOnly {
        fitting.truncate(1);
    }
    let mut out = Vec::new();
    for config in fitting {
        for i in 0..config.slice_count(series.len()) {
            let offset = i * config.step();
            out.push(Slice {
                source_id: source_id.to_string(),
                offset,
                config,
                values: series[offset..offset + config.window()].to_vec(),
            });
        }
    }
    out
}

/// Slices many sources in parallel; output order is source order.
pub fn slice_sources(
    sources: &[(String, Vec<f64>)],
    configs: &[SliceConfig],
    policy: SlicePolicy,
) -> Vec<Slice> {
    sources
        .par_iter()
        .flat_map_iter(|(id, values)| slice_series(id, values, configs, policy))
        .collect()
}

/// Default feature length for clustering.
pub const FEATURE_LEN: usize = 32;

/// Fixed-length shape descriptor: gaps interpolated, linearly resampled to
/// `target_len` points, then z-normalized (a constant slice gives zeros).
pub fn featurize_slice(slice: &Slice, target_len: usize) -> Result<Vec<f64>> {
    featurize(&slice.values, target_len)
}

pub fn featurize(values: &[f64], target_len: usize) -> Result<Vec<f64>> {
    let known = values.iter().filter(|v| v.is_finite()).count();
    if known < 2 {
        return Err(CorpusError::TooFewValues(known));
    }
    if target_len < 2 {
        return Err(CorpusError::InvalidConfig("feature length must be at least 2".into()));
    }
    let filled = fill_missing(values).expect("at least two finite values");
    let n = filled.len();
    let resampled: Vec<f64> = if n == target_len {
        filled
    } else {
        (0..target_len)
            .map(|j| {
                let pos = j as f64 * (n - 1) as f64 / (target_len - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                let t = pos - lo as f64;
                filled[lo] + t * (filled[hi] - filled[lo])
            })
            .collect()
    };
    let m = mean(&resampled);
    let sd = std_dev(&resampled);
    if sd <= 1e-12 * m.abs().max(1.0) {
        return Ok(vec![0.0; target_len]);
    }
    Ok(resampled.iter().map(|v| (v - m) / sd).collect())
}

/// Iteration limits for [`kmeans`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-4,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd's k-means with k-means++ seeding. Returns one cluster label per
/// point; every label in `0..k` is used.
///
/// Assignment runs in parallel per point; centroid sums are accumulated in
/// point order, so labels do not depend on the worker count.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, config: KMeansConfig) -> Vec<usize> {
    assert!(k >= 1 && k <= points.len(), "need 1 <= k <= points");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_plus_plus(points, k, &mut rng);
    let mut labels = assign(points, &centroids);
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..config.max_iter {
        centroids = update_centroids(points, &labels, k, &centroids);
        labels = assign(points, &centroids);
        backfill_empty(points, &mut labels, &mut centroids, k);
        let inertia: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, &l)| sq_dist(p, &centroids[l]))
            .sum();
        let converged = prev_inertia.is_finite()
            && (prev_inertia - inertia).abs() <= config.tol * prev_inertia.max(f64::MIN_POSITIVE);
        prev_inertia = inertia;
        if converged || inertia == 0.0 {
            break;
        }
    }
    backfill_empty(points, &mut labels, &mut centroids, k);
    labels
}

fn init_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // all remaining points coincide with a chosen center
            let free: Vec<usize> = (0..points.len()).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .par_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

fn update_centroids(
    points: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    previous: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(j, (s, c))| {
            if c == 0 {
                previous[j].clone()
            } else {
                s.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect()
}

/// Gives each empty cluster the point of the largest cluster that lies
/// farthest from its centroid.
fn backfill_empty(
    points: &[Vec<f64>],
    labels: &mut [usize],
    centroids: &mut [Vec<f64>],
    k: usize,
) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("k >= 1");
        let far = (0..points.len())
            .filter(|&i| labels[i] == largest)
            .max_by(|&a, &b| {
                sq_dist(&points[a], &centroids[largest])
                    .total_cmp(&sq_dist(&points[b], &centroids[largest]))
                    .then(b.cmp(&a))
            })
            .expect("largest cluster is non-empty");
        labels[far] = empty;
        centroids[empty] = points[far].clone();
    }
}

/// Clusters slices on their shape features and keeps one uniformly chosen
/// member per cluster. Output is in input order and has exactly `k` slices.
pub fn select_representatives(slices: &[Slice], k: usize, seed: u64) -> Result<Vec<Slice>> {
    select_representatives_with(slices, k, seed, FEATURE_LEN, KMeansConfig::default())
}

pub fn select_representatives_with(
    slices: &[Slice],
    k: usize,
    seed: u64,
    feature_len: usize,
    config: KMeansConfig,
) -> Result<Vec<Slice>> {
    if k == 0 || k > slices.len() {
        return Err(CorpusError::InsufficientSlices {
            k,
            available: slices.len(),
        });
    }
    let features = slices
        .par_iter()
        .map(|s| featurize_slice(s, feature_len))
        .collect::<Result<Vec<_>>>()?;
    let labels = kmeans(&features, k, seed, config);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5A3B_1E00_0001);
    let mut picks: Vec<usize> = members
        .iter()
        .map(|m| m[rng.random_range(0..m.len())])
        .collect();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| slices[i].clone()).collect())
}

/// One forecasting record per slice, split at the slice's history length.
pub fn build_pretrain_records(slices: &[Slice], grid: &BinGrid) -> Result<Vec<CorpusRecord>> {
    slices
        .par_iter()
        .map(|s| {
            let window = SeriesWindow::new(s.history().to_vec(), s.config.prediction())?;
            let (history, params) = encode(&window, grid)?;
            let future = encode_with(s.future(), &params, grid)?;
            Ok(to_corpus_record(&render_forecast_prompt(&history, Some(&future)))?)
        })
        .collect()
}

/// Seeded sample of `per_task` records from each task source, concatenated
/// in task order and shuffled.
pub fn build_finetune_mix(
    sources: &BTreeMap<Task, Vec<CorpusRecord>>,
    per_task: usize,
    seed: u64,
) -> Result<Vec<CorpusRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mix = Vec::with_capacity(per_task * Task::ALL.len());
    for task in Task::ALL {
        let source = sources.get(&task).map(Vec::as_slice).unwrap_or(&[]);
        if source.len() < per_task {
            return Err(CorpusError::SourceTooSmall {
                task,
                available: source.len(),
                needed: per_task,
            });
        }
        if let Some(bad) = source.iter().find(|r| r.task != task) {
            return Err(CorpusError::TaskMismatch {
                expected: task,
                found: bad.task,
            });
        }
        let mut picked = index::sample(&mut rng, source.len(), per_task).into_vec();
        picked.sort_unstable();
        mix.extend(picked.into_iter().map(|i| source[i].clone()));
    }
    mix.shuffle(&mut rng);
    Ok(mix)
}

/// A series whose steps align with calendar days, with per-day context.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSeries {
    pub background: String,
    pub start: NaiveDate,
    pub steps_per_day: usize,
    pub values: Vec<f64>,
    pub days: Vec<DayContext>,
}

impl ContextSeries {
    /// Context for the days touched by `[offset, offset + history + prediction)`.
    /// Only forecastable metadata is carried, never realized values.
    pub fn context_for(&self, offset: usize, window: usize) -> Result<ContextBlock> {
        let first_day = offset / self.steps_per_day;
        let last_day = (offset + window - 1) / self.steps_per_day;
        let days: Vec<DayContext> = self
            .days
            .iter()
            .filter(|d| {
                let idx = (d.date - self.start).num_days();
                idx >= first_day as i64 && idx <= last_day as i64
            })
            .cloned()
            .collect();
        let ctx = ContextBlock::new(self.background.clone(), days)?;
        let last_date = self.start + chrono::Days::new(last_day as u64);
        ctx.check_no_leakage(last_date)?;
        Ok(ctx)
    }
}

/// Context-guided forecasting records from windows over a context series.
pub fn build_context_records(
    src: &ContextSeries,
    config: SliceConfig,
    grid: &BinGrid,
) -> Result<Vec<CorpusRecord>> {
    let count = config.slice_count(src.values.len());
    (0..count)
        .into_par_iter()
        .map(|i| {
            let offset = i * config.step();
            let values = &src.values[offset..offset + config.window()];
            let window = SeriesWindow::new(values[..config.history()].to_vec(), config.prediction())?;
            let (history, params) = encode(&window, grid)?;
            let future = encode_with(&values[config.history()..], &params, grid)?;
            let ctx = src.context_for(offset, config.window())?;
            Ok(to_corpus_record(&render_context_prompt(&ctx, &history, Some(&future)))?)
        })
        .collect()
}

/// Synthetic stand-in for a solar-generation dataset: a daylight bell curve
/// per day, damped by the day's weather, with matching forecast notes.
pub fn synth_context_series(n_days: usize, steps_per_day: usize, seed: u64) -> ContextSeries {
    const WEATHER: [(&str, f64); 4] = [
        ("clear sky", 1.0),
        ("partly cloudy", 0.75),
        ("overcast", 0.45),
        ("rain", 0.25),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2021, 10, 1).expect("valid date");
    let mut values = Vec::with_capacity(n_days * steps_per_day);
    let mut days = Vec::with_capacity(n_days);
    for d in 0..n_days {
        let date = start + chrono::Days::new(d as u64);
        let (label, factor) = WEATHER[rng.random_range(0..WEATHER.len())];
        let low = rng.random_range(8..16);
        let high = low + rng.random_range(5..12);
        let sunrise = 6 * 60 + rng.random_range(0..40);
        let sunset = 19 * 60 + rng.random_range(0..40);
        let holiday = !matches!(date.weekday(), Weekday::Sat | Weekday::Sun) && rng.random_bool(0.04);
        days.push(DayContext {
            date,
            weather: format!(
                "{label}, {low} to {high} C, sunrise {:02}:{:02}, sunset {:02}:{:02}",
                sunrise / 60,
                sunrise % 60,
                sunset / 60,
                sunset % 60
            ),
            holiday,
        });
        for s in 0..steps_per_day {
            let minute = (s * 24 * 60 / steps_per_day) as i64;
            let daylight = if minute > sunrise && minute < sunset {
                let x = (minute - sunrise) as f64 / (sunset - sunrise) as f64;
                (std::f64::consts::PI * x).sin()
            } else {
                0.0
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push((100.0 * factor * daylight + 2.0 * z * daylight).max(0.0));
        }
    }
    ContextSeries {
        background: format!(
            "Power output in kW of a rooftop solar site, recorded every {} minutes.",
            24 * 60 / steps_per_day
        ),
        start,
        steps_per_day,
        values,
        days,
    }
}
