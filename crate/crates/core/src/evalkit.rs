//! Evaluation: chronological splits, rolling-origin MAE, QA accuracy and
//! cross-method ranks.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{BinGrid, SeriesWindow};
use crate::inference::{forecast, Backend, ForecastError};
use crate::qa::{Feature, QaSample};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("series too short: {0}")]
    TooShort(String),
    #[error("{responses} responses for {samples} samples")]
    LengthMismatch { responses: usize, samples: usize },
    #[error("incomplete table: {0}")]
    IncompleteTable(String),
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Train/valid/test proportions as integer parts, so split points are exact
/// floors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: u32,
    pub valid: u32,
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 6,
            valid: 2,
            test: 2,
        }
    }
}

impl SplitRatio {
    fn total(&self) -> u64 {
        u64::from(self.train) + u64::from(self.valid) + u64::from(self.test)
    }

    /// `(train_end, valid_end)` for a series of length `len`.
    pub fn boundaries(&self, len: usize) -> (usize, usize) {
        let t = self.total();
        let a = len as u64 * u64::from(self.train) / t;
        let b = len as u64 * (u64::from(self.train) + u64::from(self.valid)) / t;
        (a as usize, b as usize)
    }
}

pub const MIN_SPLIT_LEN: usize = 10;

pub fn chronological_split(
    series: &[f64],
    ratio: SplitRatio,
) -> Result<(&[f64], &[f64], &[f64])> {
    if series.len() < MIN_SPLIT_LEN {
        return Err(EvalError::TooShort(format!(
            "{} values, at least {MIN_SPLIT_LEN} needed to split",
            series.len()
        )));
    }
    if ratio.total() == 0 {
        return Err(EvalError::InvalidConfig("split ratio parts sum to zero".into()));
    }
    let (a, b) = ratio.boundaries(series.len());
    Ok((&series[..a], &series[a..b], &series[b..]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// The dataset's a priori period; also the forecast horizon.
    pub prediction_len: usize,
    pub history_multiples: Vec<usize>,
    pub split: SplitRatio,
    /// Distance between rolling origins; `None` means `prediction_len`.
    pub stride: Option<usize>,
}

impl EvalConfig {
    pub const DEFAULT_MULTIPLES: [usize; 4] = [2, 3, 4, 5];

    pub fn new(prediction_len: usize) -> Self {
        Self {
            prediction_len,
            history_multiples: Self::DEFAULT_MULTIPLES.to_vec(),
            split: SplitRatio::default(),
            stride: None,
        }
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.prediction_len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prediction_len == 0 {
            return Err(EvalError::InvalidConfig("prediction_len must be positive".into()));
        }
        if self.history_multiples.is_empty() || self.history_multiples.contains(&0) {
            return Err(EvalError::InvalidConfig(
                "history multiples must be non-empty and at least 1".into(),
            ));
        }
        if self.stride() == 0 {
            return Err(EvalError::InvalidConfig("stride must be positive".into()));
        }
        if self.split.total() == 0 {
            return Err(EvalError::InvalidConfig("split ratio parts sum to zero".into()));
        }
        Ok(())
    }
}

/// MAE of one backend at one history length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub history_len: usize,
    pub prediction_len: usize,
    pub origins: usize,
    pub mae: f64,
}

/// Start indices of the forecast windows: every `stride` steps from the test
/// boundary while the window stays inside the series.
pub fn rolling_origins(len: usize, config: &EvalConfig) -> Result<Vec<usize>> {
    config.validate()?;
    if len < MIN_SPLIT_LEN {
        return Err(EvalError::TooShort(format!("{len} values")));
    }
    let (_, test_start) = config.split.boundaries(len);
    let max_hist = config.prediction_len * config.history_multiples.iter().max().expect("validated");
    if test_start < max_hist {
        return Err(EvalError::TooShort(format!(
            "test segment starts at {test_start}, history of {max_hist} needed before it"
        )));
    }
    if len - test_start < config.prediction_len {
        return Err(EvalError::TooShort(format!(
            "test segment of {} values cannot hold a window of {}",
            len - test_start,
            config.prediction_len
        )));
    }
    Ok((test_start..=len - config.prediction_len)
        .step_by(config.stride())
        .collect())
}

/// Rolling-origin evaluation over the test segment, one entry per history
/// multiple. Histories may reach back into the train and valid segments.
/// Origins run in parallel; errors are summed in origin order.
pub fn evaluate_forecaster(
    series: &[f64],
    config: &EvalConfig,
    backend: &dyn Backend,
    grid: &BinGrid,
) -> Result<Vec<EvalEntry>> {
    let origins = rolling_origins(series.len(), config)?;
    let h = config.prediction_len;
    config
        .history_multiples
        .iter()
        .map(|&m| {
            let hist_len = m * h;
            let errors = origins
                .par_iter()
                .map(|&o| {
                    let window = SeriesWindow::new(series[o - hist_len..o].to_vec(), h)
                        .map_err(ForecastError::from)?;
                    let pred = forecast(&window, backend, None, grid)?;
                    Ok(pred
                        .iter()
                        .zip(&series[o..o + h])
                        .filter(|(_, t)| t.is_finite())
                        .map(|(p, t)| ((p - t).abs(), 1usize))
                        .collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()?;
            let (mut sum, mut count) = (0.0, 0usize);
            for (e, c) in errors.iter().flatten() {
                sum += e;
                count += c;
            }
            if count == 0 {
                return Err(EvalError::TooShort("no observed targets in the test segment".into()));
            }
            Ok(EvalEntry {
                history_len: hist_len,
                prediction_len: h,
                origins: origins.len(),
                mae: sum / count as f64,
            })
        })
        .collect()
}

pub fn mae(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// One row of a forecasting report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub hist: usize,
    pub pred: usize,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

/// Per-method MAE averages and mean ranks over the `(dataset, hist)`
/// settings of `rows`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub avg_mae: f64,
    pub avg_rank: f64,
}

pub fn summarize(rows: &[ReportRow]) -> Result<Vec<MethodSummary>> {
    let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    let mut settings: Vec<(&str, usize)> = rows.iter().map(|r| (r.dataset.as_str(), r.hist)).collect();
    settings.sort_unstable();
    settings.dedup();
    let mut cells: BTreeMap<(&str, (&str, usize)), f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == "mae") {
        if cells.insert((&r.method, (&r.dataset, r.hist)), r.value).is_some() {
            return Err(EvalError::IncompleteTable(format!(
                "duplicate cell for {} on {} hist {}",
                r.method, r.dataset, r.hist
            )));
        }
    }
    let table = methods
        .iter()
        .map(|m| {
            settings
                .iter()
                .map(|s| {
                    cells.get(&(*m, *s)).copied().ok_or_else(|| {
                        EvalError::IncompleteTable(format!("{m} has no value for {} hist {}", s.0, s.1))
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let ranks = rank_methods(&table)?;
    Ok(methods
        .iter()
        .zip(table.iter().zip(ranks))
        .map(|(m, (row, rank))| MethodSummary {
            method: m.to_string(),
            avg_mae: row.iter().sum::<f64>() / row.len() as f64,
            avg_rank: rank,
        })
        .collect())
}

/// Mean rank of each method (row) across settings (columns). Rank 1 is the
/// lowest value; ties share the mean of their ranks.
pub fn rank_methods(table: &[Vec<f64>]) -> Result<Vec<f64>> {
    let settings = table
        .first()
        .map(Vec::len)
        .ok_or_else(|| EvalError::IncompleteTable("no methods".into()))?;
    if settings == 0 {
        return Err(EvalError::IncompleteTable("no settings".into()));
    }
    for (i, row) in table.iter().enumerate() {
        if row.len() != settings {
            return Err(EvalError::IncompleteTable(format!(
                "method {i} has {} values, expected {settings}",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|v| v.is_nan()) {
            return Err(EvalError::IncompleteTable(format!("method {i}, setting {j} is missing")));
        }
    }
    let mut totals = vec![0.0; table.len()];
    for j in 0..settings {
        let mut order: Vec<usize> = (0..table.len()).collect();
        order.sort_by(|&a, &b| table[a][j].total_cmp(&table[b][j]));
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && table[order[end]][j] == table[order[start]][j] {
                end += 1;
            }
            // positions start..end hold ranks start+1..=end
            let rank = (start + 1 + end) as f64 / 2.0;
            for &i in &order[start..end] {
                totals[i] += rank;
            }
            start = end;
        }
    }
    Ok(totals.into_iter().map(|t| t / settings as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaScore {
    pub feature: Feature,
    pub length: usize,
    pub correct: usize,
    pub total: usize,
}

impl QaScore {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Whether `response` names the gold category, compared case-insensitively
/// as a substring.
pub fn qa_correct(response: &str, gold: &str) -> bool {
    !gold.is_empty() && response.to_lowercase().contains(&gold.to_lowercase())
}

/// Accuracy per `(feature, length)`, in feature then length order.
pub fn score_qa(responses: &[String], samples: &[QaSample]) -> Result<Vec<QaScore>> {
    if responses.len() != samples.len() {
        return Err(EvalError::LengthMismatch {
            responses: responses.len(),
            samples: samples.len(),
        });
    }
    let mut cells: BTreeMap<(Feature, usize), (usize, usize)> = BTreeMap::new();
    for (r, s) in responses.iter().zip(samples) {
        let cell = cells.entry((s.feature, s.length())).or_default();
        cell.0 += usize::from(qa_correct(r, &s.category));
        cell.1 += 1;
    }
    Ok(cells
        .into_iter()
        .map(|((feature, length), (correct, total))| QaScore {
            feature,
            length,
            correct,
            total,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{LastValueBackend, SeasonalNaiveBackend};
    use proptest::prelude::*;

    #[test]
    fn split_examples() {
        let s: Vec<f64> = (0..100).map(f64::from).collect();
        let (a, b, c) = chronological_split(&s, SplitRatio::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (60, 20, 20));
        let s: Vec<f64> = (0..101).map(f64::from).collect();
        let (a, b, c) = chronological_split(&s, SplitRatio::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (60, 20, 21));
        assert!(matches!(
            chronological_split(&s[..9], SplitRatio::default()),
            Err(EvalError::TooShort(_))
        ));
    }

    #[test]
    fn origins_respect_stride_and_bounds() {
        let cfg = EvalConfig {
            history_multiples: vec![2],
            ..EvalConfig::new(10)
        };
        // test segment starts at 160 of 200
        assert_eq!(rolling_origins(200, &cfg).unwrap(), [160, 170, 180, 190]);
        let overlapping = EvalConfig {
            stride: Some(25),
            ..cfg.clone()
        };
        assert_eq!(rolling_origins(200, &overlapping).unwrap(), [160, 185]);
        let too_long = EvalConfig {
            history_multiples: vec![17],
            ..cfg
        };
        assert!(matches!(rolling_origins(200, &too_long), Err(EvalError::TooShort(_))));
    }

    #[test]
    fn last_value_on_constant_series() {
        let g = BinGrid::default();
        let s = vec![4.25; 300];
        let cfg = EvalConfig::new(8);
        for e in evaluate_forecaster(&s, &cfg, &LastValueBackend::new(g), &g).unwrap() {
            assert_eq!(e.mae, 0.0);
        }
    }

    #[test]
    fn seasonal_naive_on_sinusoid() {
        let g = BinGrid::default();
        let s: Vec<f64> = (0..480)
            .map(|t| 5.0 * (std::f64::consts::TAU * t as f64 / 24.0).cos())
            .collect();
        let cfg = EvalConfig {
            history_multiples: vec![2],
            ..EvalConfig::new(24)
        };
        let e = &evaluate_forecaster(&s, &cfg, &SeasonalNaiveBackend::new(g), &g).unwrap()[0];
        // history range of a full cosine cycle is 10
        assert!(e.mae <= 2.0 * 0.0001 * 10.0, "{}", e.mae);
        assert_eq!(e.origins, 4);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_methods(&[vec![1.0], vec![2.0]]).unwrap(), [1.0, 2.0]);
        assert_eq!(rank_methods(&[vec![1.0], vec![1.0]]).unwrap(), [1.5, 1.5]);
        let r = rank_methods(&[vec![0.1, 0.2], vec![0.5, 0.3], vec![0.9, 0.9]]).unwrap();
        assert_eq!(r[0], 1.0);
        assert!(matches!(
            rank_methods(&[vec![1.0, 2.0], vec![1.0]]),
            Err(EvalError::IncompleteTable(_))
        ));
        assert!(matches!(
            rank_methods(&[vec![f64::NAN]]),
            Err(EvalError::IncompleteTable(_))
        ));
    }

    #[test]
    fn summary_from_rows() {
        let row = |method: &str, hist, value| ReportRow {
            dataset: "d".into(),
            hist,
            pred: 4,
            method: method.into(),
            metric: "mae".into(),
            value,
        };
        let rows = [row("a", 8, 1.0), row("b", 8, 2.0), row("a", 12, 3.0), row("b", 12, 3.0)];
        let s = summarize(&rows).unwrap();
        assert_eq!(s[0].method, "a");
        assert_eq!(s[0].avg_mae, 2.0);
        assert_eq!(s[0].avg_rank, 1.25);
        assert_eq!(s[1].avg_rank, 1.75);
        assert!(summarize(&rows[..3]).is_err());
    }

    #[test]
    fn qa_scoring_rules() {
        assert!(qa_correct("The series shows an Upward Trend.", "upward trend"));
        assert!(qa_correct("upward trend or downward trend", "upward trend"));
        assert!(!qa_correct("", "upward trend"));
        let s = crate::qa::generate_sample(Feature::Trend, "upward trend", 64, 1).unwrap();
        let scores = score_qa(&["Upward trend".into(), "no idea".into()], &[s.clone(), s.clone()]).unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!(scores[0].accuracy(), 0.5);
        assert!(matches!(
            score_qa(&[], &[s]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(len in 10usize..5000) {
            let s: Vec<f64> = (0..len).map(|i| i as f64).collect();
            let (a, b, c) = chronological_split(&s, SplitRatio::default()).unwrap();
            prop_assert_eq!(a.len(), len * 6 / 10);
            prop_assert_eq!(a.len() + b.len(), len * 8 / 10);
            prop_assert_eq!([a, b, c].concat(), s);
        }

        #[test]
        fn ranks_are_monotone_invariant(
            table in prop::collection::vec(prop::collection::vec(0u8..6, 3), 2..5),
        ) {
            let raw: Vec<Vec<f64>> = table.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
            let warped: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|v| (v * 0.7).exp() - 3.0).collect()).collect();
            let a = rank_methods(&raw).unwrap();
            prop_assert_eq!(&a, &rank_methods(&warped).unwrap());
            for r in &a {
                prop_assert!(*r >= 1.0 && *r <= raw.len() as f64);
            }
        }

        #[test]
        fn mae_is_translation_invariant(
            pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50),
            c in -1e3f64..1e3,
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let shifted_p: Vec<f64> = p.iter().map(|v| v + c).collect();
            let shifted_t: Vec<f64> = t.iter().map(|v| v + c).collect();
            prop_assert!((mae(&p, &t) - mae(&shifted_p, &shifted_t)).abs() < 1e-9);
        }
    }
}
