#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tslingua::codec::{encode, encode_with, BinGrid, SeriesWindow, WordSeq};
use tslingua::corpus::{
    build_context_records, build_pretrain_records, default_slice_configs, slice_series,
    synth_context_series, CorpusRecord, Slice, SliceConfig, SlicePolicy, Task,
};
use tslingua::evalkit::{rolling_origins, EvalConfig};
use tslingua::inference::{Backend, BackendError, BackendKind, GenerationRequest};
use tslingua::prompt::{render_forecast_prompt, ContextBlock, DayContext};
use tslingua::qa::{generate_dataset, DatasetPlan};

pub fn sinusoid(len: usize, period: f64, amplitude: f64, offset: f64) -> Vec<f64> {
    (0..len)
        .map(|t| offset + amplitude * (TAU * t as f64 / period).sin())
        .collect()
}

/// Named series with their a priori period. Every test target lies inside
/// the codec band of each of its histories.
pub fn dataset_fixtures() -> Vec<(&'static str, Vec<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut level = 50.0;
    let walk: Vec<f64> = (0..960)
        .map(|t| {
            level += rng.random_range(-1.0..1.0);
            level + 8.0 * (TAU * t as f64 / 24.0).sin()
        })
        .collect();
    let weekly: Vec<f64> = (0..420)
        .map(|t| [3.0, 4.5, 4.0, 5.0, 6.5, 1.0, 0.5][t % 7] * 100.0 + rng.random_range(-5.0..5.0))
        .collect();
    vec![
        ("sine24", sinusoid(720, 24.0, 3.0, 10.0), 24),
        ("walk24", walk, 24),
        ("weekly7", weekly, 7),
    ]
}

/// Backend that answers every known prompt with the encoded truth.
pub struct OracleBackend {
    answers: HashMap<String, String>,
}

impl OracleBackend {
    pub fn new(series: &[f64], config: &EvalConfig, grid: &BinGrid) -> Self {
        let mut answers = HashMap::new();
        let h = config.prediction_len;
        for o in rolling_origins(series.len(), config).unwrap() {
            for m in &config.history_multiples {
                let window = SeriesWindow::new(series[o - m * h..o].to_vec(), h).unwrap();
                let (hist, params) = encode(&window, grid).unwrap();
                let truth = encode_with(&series[o..o + h], &params, grid).unwrap();
                answers.insert(render_forecast_prompt(&hist, None).render(), truth.render());
            }
        }
        Self { answers }
    }
}

impl Backend for OracleBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::External
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        self.answers
            .get(&request.prompt)
            .cloned()
            .ok_or_else(|| BackendError::Remote("unknown prompt".into()))
    }
}

/// Rising and falling ramps with small perturbations; ids start with `up` or
/// `dn`.
pub fn two_blob_slices(per_blob: usize) -> Vec<Slice> {
    let config = SliceConfig::new(32, 4, 2).unwrap();
    let mut out = Vec::new();
    for i in 0..per_blob {
        let wobble = 0.02 * i as f64;
        let up = (0..36).map(|t| t as f64 + wobble * ((t * 7) % 5) as f64).collect();
        let down = (0..36).map(|t| 100.0 - 2.0 * t as f64 + wobble * ((t * 3) % 4) as f64).collect();
        for (tag, values) in [("up", up), ("dn", down)] {
            out.push(Slice {
                source_id: format!("{tag}{i:02}"),
                offset: 0,
                config,
                values,
            });
        }
    }
    out
}

fn text_qa_records(n: usize) -> Vec<CorpusRecord> {
    (0..n)
        .map(|i| CorpusRecord {
            instruction: "Answer the question.".into(),
            input: format!("What is {i} plus {}?", 2 * i + 1),
            output: format!("{}", 3 * i + 1),
            task: Task::TextQa,
        })
        .collect()
}

/// One synthetic source per task.
pub fn finetune_sources(grid: &BinGrid) -> BTreeMap<Task, Vec<CorpusRecord>> {
    let series = sinusoid(400, 17.0, 2.0, 1.0);
    let slices = slice_series("s", &series, &default_slice_configs(), SlicePolicy::AllConfigs);
    let forecast = build_pretrain_records(&slices[..60], grid).unwrap();
    let ctx_src = synth_context_series(12, 24, 3);
    let context = build_context_records(&ctx_src, SliceConfig::new(48, 24, 6).unwrap(), grid).unwrap();
    let qa = generate_dataset(&DatasetPlan::per_feature(12, &[64]), 4)
        .unwrap()
        .iter()
        .map(|s| s.to_record(grid).unwrap())
        .collect();
    BTreeMap::from([
        (Task::TextQa, text_qa_records(40)),
        (Task::Forecast, forecast),
        (Task::ContextForecast, context),
        (Task::TsQa, qa),
    ])
}

pub fn golden_words() -> (WordSeq, WordSeq) {
    let history = "###-0.4999### ###-0.1235### ###Nan### ###0.2835### ###0.5001###".parse().unwrap();
    let future = "###0.4001### ###0.3179###".parse().unwrap();
    (history, future)
}

pub fn golden_context() -> ContextBlock {
    let day = |d: u32, weather: &str, holiday: bool| DayContext {
        date: NaiveDate::from_ymd_opt(2023, 5, d).unwrap(),
        weather: weather.into(),
        holiday,
    };
    ContextBlock::new(
        "Hourly power output in kW of a rooftop solar site.",
        vec![
            day(1, "sunny, 12 to 24 C, sunrise 05:48, sunset 20:31", true),
            day(2, "overcast, 10 to 17 C, sunrise 05:46, sunset 20:33", false),
        ],
    )
    .unwrap()
}

/// `(file stem, rendered prompt)` for every frozen golden.
pub fn golden_renderings() -> Vec<(&'static str, String)> {
    use tslingua::prompt::{render_context_prompt, render_qa_prompt, QaPrompt};
    use tslingua::qa::Feature;

    let (history, future) = golden_words();
    let ctx = golden_context();
    let qa = QaPrompt {
        feature: Feature::Season,
        series: history.clone(),
        answer: Some("shifting seasonality".into()),
    };
    let qa_infer = QaPrompt {
        answer: None,
        ..qa.clone()
    };
    vec![
        ("forecast_train", render_forecast_prompt(&history, Some(&future)).render()),
        ("forecast_infer", render_forecast_prompt(&history, None).render()),
        ("context_forecast_train", render_context_prompt(&ctx, &history, Some(&future)).render()),
        ("context_forecast_infer", render_context_prompt(&ctx, &history, None).render()),
        ("ts_qa_train", render_qa_prompt(&qa).unwrap().render()),
        ("ts_qa_infer", render_qa_prompt(&qa_infer).unwrap().render()),
    ]
}

pub fn golden_path(stem: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{stem}.txt"))
}
