//! Synthetic series question answering over four feature taxonomies.
//!
//! Each sample is composed as `level + scale * (trend + season + noise +
//! outlier)` with only the labeled feature's term contrasted and the other
//! terms neutral, so labels hold by construction. [`oracle_classify`]
//! re-derives the label from the values alone and never looks at the
//! generation parameters.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{encode, BinGrid, CodecError, SeriesWindow};
use crate::corpus::CorpusRecord;
use crate::prompt::{render_qa_prompt, to_corpus_record, PromptError, QaPrompt};
use crate::stats::{best_sinusoid, fill_missing, mean, mix_seed, ols_line};

/// Series lengths used by the QA dataset.
pub const QA_LENGTHS: [usize; 4] = [64, 128, 256, 512];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QaError {
    #[error("invalid combination: {0}")]
    InvalidCombination(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

pub type Result<T> = std::result::Result<T, QaError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Trend,
    Volatility,
    Season,
    Outlier,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::Trend,
        Feature::Volatility,
        Feature::Season,
        Feature::Outlier,
    ];

    /// The three answer categories, in canonical order.
    pub fn categories(self) -> [&'static str; 3] {
        match self {
            Feature::Trend => ["upward trend", "downward trend", "constant trend"],
            Feature::Volatility => [
                "increased volatility",
                "decreased volatility",
                "constant volatility",
            ],
            Feature::Season => ["fixed seasonality", "shifting seasonality", "no seasonality"],
            Feature::Outlier => ["sudden spike", "level shift", "no outlier"],
        }
    }

    /// Noun used in questions.
    pub fn noun(self) -> &'static str {
        match self {
            Feature::Trend => "trend",
            Feature::Volatility => "volatility",
            Feature::Season => "seasonality",
            Feature::Outlier => "outliers",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Trend => "trend",
            Feature::Volatility => "volatility",
            Feature::Season => "season",
            Feature::Outlier => "outlier",
        }
    }

    fn category_index(self, category: &str) -> Option<usize> {
        self.categories().iter().position(|c| *c == category)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Feature::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown feature `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSample {
    pub series: Vec<f64>,
    pub feature: Feature,
    pub category: String,
    pub seed: u64,
    pub gen_params: BTreeMap<String, f64>,
}

impl QaSample {
    pub fn length(&self) -> usize {
        self.series.len()
    }

    /// Training record: the whole series encoded as input, the category as
    /// the answer.
    pub fn to_record(&self, grid: &BinGrid) -> Result<CorpusRecord> {
        let bundle = render_qa_prompt(&self.to_prompt(grid, true)?)?;
        Ok(to_corpus_record(&bundle)?)
    }

    pub fn to_prompt(&self, grid: &BinGrid, with_answer: bool) -> Result<QaPrompt> {
        let window = SeriesWindow::new(self.series.clone(), 0)?;
        let (series, _) = encode(&window, grid)?;
        Ok(QaPrompt {
            feature: self.feature,
            series,
            answer: with_answer.then(|| self.category.clone()),
        })
    }
}

// Generation margins, in units of the base noise standard deviation.
const TREND_TOTAL_CHANGE: (f64, f64) = (4.0, 8.0);
const VOL_RATIO: (f64, f64) = (3.5, 5.0);
const SEASON_AMPLITUDE: (f64, f64) = (4.0, 6.0);
const SEASON_DRIFT: (f64, f64) = (1.8, 2.2);
const SPIKE_SIZE: (f64, f64) = (9.0, 12.0);
const SHIFT_SIZE: (f64, f64) = (5.0, 8.0);

// Oracle thresholds.
const TREND_THRESHOLD: f64 = 2.0;
const VOL_THRESHOLD: f64 = 2.0;
const SEASON_PRESENCE: f64 = 0.6;
const SEASON_DRIFT_THRESHOLD: f64 = 1.25;
const SPIKE_Z: f64 = 6.5;
const SHIFT_EFFECT: f64 = 2.5;

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.random_range(range.0..=range.1)
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

pub fn generate_sample(
    feature: Feature,
    category: &str,
    length: usize,
    seed: u64,
) -> Result<QaSample> {
    let cat = feature.category_index(category).ok_or_else(|| {
        QaError::InvalidCombination(format!("`{category}` is not a {feature} category"))
    })?;
    if !QA_LENGTHS.contains(&length) {
        return Err(QaError::InvalidCombination(format!(
            "length {length} is not one of {QA_LENGTHS:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = length;
    let level = uniform(&mut rng, (-100.0, 100.0));
    let scale = 10f64.powf(uniform(&mut rng, (-1.0, 2.0)));
    let mut params = BTreeMap::new();
    params.insert("level".to_string(), level);
    params.insert("noise_std".to_string(), scale);

    let mut noise_std = vec![1.0; n];
    let mut signal = vec![0.0; n];

    match (feature, cat) {
        (Feature::Trend, 0 | 1) => {
            let total = uniform(&mut rng, TREND_TOTAL_CHANGE) * if cat == 0 { 1.0 } else { -1.0 };
            let slope = total / n as f64;
            for (t, s) in signal.iter_mut().enumerate() {
                *s = slope * t as f64;
            }
            params.insert("slope".into(), slope * scale);
        }
        (Feature::Volatility, 0 | 1) => {
            let ratio = uniform(&mut rng, VOL_RATIO);
            let (first, second) = if cat == 0 { (1.0, ratio) } else { (ratio, 1.0) };
            for (t, s) in noise_std.iter_mut().enumerate() {
                *s = if t < n / 2 { first } else { second };
            }
            params.insert("sigma_first".into(), first * scale);
            params.insert("sigma_second".into(), second * scale);
        }
        (Feature::Season, 0) => {
            let amplitude = uniform(&mut rng, SEASON_AMPLITUDE);
            let period = rng.random_range(8..=n / 4) as f64;
            let phase = uniform(&mut rng, (0.0, std::f64::consts::TAU));
            for (t, s) in signal.iter_mut().enumerate() {
                *s = amplitude * (std::f64::consts::TAU * t as f64 / period + phase).sin();
            }
            params.insert("amplitude".into(), amplitude * scale);
            params.insert("period".into(), period);
        }
        (Feature::Season, 1) => {
            let amplitude = uniform(&mut rng, SEASON_AMPLITUDE);
            let short = uniform(&mut rng, (6.0, (n / 10) as f64));
            let long = short * uniform(&mut rng, SEASON_DRIFT);
            let (p0, p1) = if rng.random_bool(0.5) {
                (short, long)
            } else {
                (long, short)
            };
            let phase = uniform(&mut rng, (0.0, std::f64::consts::TAU));
            let span = (n - 1) as f64;
            for (t, s) in signal.iter_mut().enumerate() {
                // phase of a sinusoid whose period moves linearly from p0 to p1
                let p_t = p0 + (p1 - p0) * t as f64 / span;
                let cycles = span / (p1 - p0) * (p_t / p0).ln();
                *s = amplitude * (std::f64::consts::TAU * cycles + phase).sin();
            }
            params.insert("amplitude".into(), amplitude * scale);
            params.insert("period_start".into(), p0);
            params.insert("period_end".into(), p1);
        }
        (Feature::Outlier, 0) => {
            let at = rng.random_range(2..n - 2);
            let size = uniform(&mut rng, SPIKE_SIZE) * sign(&mut rng);
            signal[at] = size;
            params.insert("spike_index".into(), at as f64);
            params.insert("spike_size".into(), size * scale);
        }
        (Feature::Outlier, 1) => {
            let at = rng.random_range(n / 4..=3 * n / 4);
            let size = uniform(&mut rng, SHIFT_SIZE) * sign(&mut rng);
            for s in &mut signal[at..] {
                *s = size;
            }
            params.insert("shift_index".into(), at as f64);
            params.insert("shift_size".into(), size * scale);
        }
        // neutral categories: noise only
        _ => {}
    }

    let series = signal
        .iter()
        .zip(&noise_std)
        .map(|(s, sd)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            level + scale * (s + sd * z)
        })
        .collect();

    Ok(QaSample {
        series,
        feature,
        category: category.to_string(),
        seed,
        gen_params: params,
    })
}

/// Rule-based label from the values alone.
pub fn oracle_classify(series: &[f64], feature: Feature) -> &'static str {
    let [first, second, neutral] = feature.categories();
    let xs = match fill_missing(series) {
        Some(xs) if xs.len() >= 8 => xs,
        _ => return neutral,
    };
    let n = xs.len();
    match feature {
        Feature::Trend => {
            let (slope, _, resid) = ols_line(&xs);
            let score = slope * n as f64 / resid.max(f64::MIN_POSITIVE);
            if score >= TREND_THRESHOLD {
                first
            } else if score <= -TREND_THRESHOLD {
                second
            } else {
                neutral
            }
        }
        Feature::Volatility => {
            let (_, _, s1) = ols_line(&xs[..n / 2]);
            let (_, _, s2) = ols_line(&xs[n / 2..]);
            let ratio = s2 / s1.max(f64::MIN_POSITIVE);
            if ratio >= VOL_THRESHOLD {
                first
            } else if ratio <= 1.0 / VOL_THRESHOLD {
                second
            } else {
                neutral
            }
        }
        Feature::Season => {
            // local period from the best sinusoid in each quarter
            let q = n / 4;
            let fits: Vec<(f64, f64)> = (0..4)
                .map(|i| {
                    let part = &xs[i * q..(i + 1) * q];
                    best_sinusoid(part, 1.0 / q as f64, 0.45)
                })
                .collect();
            let presence = fits.iter().map(|(_, frac)| frac).sum::<f64>() / 4.0;
            if presence < SEASON_PRESENCE {
                return neutral;
            }
            let (f1, f4) = (fits[0].0, fits[3].0);
            if f1.max(f4) / f1.min(f4) >= SEASON_DRIFT_THRESHOLD {
                second
            } else {
                first
            }
        }
        Feature::Outlier => {
            if max_leave_one_out_z(&xs) >= SPIKE_Z {
                return first;
            }
            if best_step_effect(&xs) >= SHIFT_EFFECT {
                second
            } else {
                neutral
            }
        }
    }
}

/// Largest `|x_i - mean_{-i}| / std_{-i}` over all points.
pub fn max_leave_one_out_z(xs: &[f64]) -> f64 {
    leave_one_out_z(xs).into_iter().fold(0.0, f64::max)
}

/// `|x_i - mean_{-i}| / std_{-i}` for every point, from running sums.
pub fn leave_one_out_z(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let shift = mean(xs);
    let sum: f64 = xs.iter().map(|x| x - shift).sum();
    let sum_sq: f64 = xs.iter().map(|x| (x - shift).powi(2)).sum();
    xs.iter()
        .map(|x| {
            let x = x - shift;
            let m = (sum - x) / (n - 1.0);
            let var = ((sum_sq - x * x) / (n - 1.0) - m * m).max(0.0);
            if var == 0.0 {
                0.0
            } else {
                (x - m).abs() / var.sqrt()
            }
        })
        .collect()
}

/// Largest standardized mean difference across a single split point, with
/// splits restricted to the central three quarters.
fn best_step_effect(xs: &[f64]) -> f64 {
    let n = xs.len();
    let mut best = 0.0;
    for k in (n / 8).max(2)..=(7 * n / 8).min(n - 2) {
        let (left, right) = xs.split_at(k);
        let (ml, mr) = (mean(left), mean(right));
        let within = left
            .iter()
            .map(|x| (x - ml).powi(2))
            .chain(right.iter().map(|x| (x - mr).powi(2)))
            .sum::<f64>()
            / n as f64;
        if within > 0.0 {
            let effect = (mr - ml).abs() / within.sqrt();
            if effect > best {
                best = effect;
            }
        }
    }
    best
}

/// Samples to draw for each (feature, length) cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPlan {
    pub cells: Vec<(Feature, usize, usize)>,
}

impl DatasetPlan {
    /// Spreads `per_feature` samples over `lengths` as evenly as possible,
    /// earlier lengths taking the remainder.
    pub fn per_feature(per_feature: usize, lengths: &[usize]) -> Self {
        let mut cells = Vec::new();
        for feature in Feature::ALL {
            for (i, &len) in lengths.iter().enumerate() {
                let base = per_feature / lengths.len();
                let extra = usize::from(i < per_feature % lengths.len());
                cells.push((feature, len, base + extra));
            }
        }
        Self { cells }
    }
}

/// Generates every cell of `plan`. Categories rotate through each feature's
/// set with a counter that runs across lengths, so per-feature category
/// counts differ by at most one.
pub fn generate_dataset(plan: &DatasetPlan, seed: u64) -> Result<Vec<QaSample>> {
    let mut jobs = Vec::new();
    let mut counters: BTreeMap<Feature, usize> = BTreeMap::new();
    for &(feature, length, count) in &plan.cells {
        let counter = counters.entry(feature).or_insert(0);
        for i in 0..count {
            let category = feature.categories()[*counter % 3];
            *counter += 1;
            let sample_seed = mix_seed(&[seed, feature as u64, length as u64, i as u64]);
            jobs.push((feature, category, length, sample_seed));
        }
    }
    jobs.into_par_iter()
        .map(|(f, c, len, s)| generate_sample(f, c, len, s))
        .collect()
}
