mod config;
mod error;
mod io;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use tslingua::codec::{self, BinGrid, ScalingParams, SeriesWindow, DEFAULT_BIN_COUNT, DEFAULT_LOWER, DEFAULT_UPPER, WORD_DECIMALS};
use tslingua::corpus::{self, CorpusRecord, KMeansConfig, Slice, SliceConfig, SlicePolicy, Task, FEATURE_LEN};
use tslingua::evalkit::{self, EvalConfig, ReportRow, SplitRatio};
use tslingua::inference::{self, Backend, BackendKind, Endpoint, ExternalBackend, GenerationRequest};
use tslingua::prompt::{self, ContextBlock, QaPrompt};
use tslingua::qa::{self, DatasetPlan, Feature, QaSample};
use tslingua::Vocabulary;

use crate::error::{CliError, Result};

const BACKEND_CMD_ENV: &str = "TSLINGUA_BACKEND_CMD";
const DEFAULT_WINDOWS: &str = "512:64:32,256:32:16,128:16:8,64:8:4,32:4:2";

/// Time series as words: codec, corpus building, QA synthesis, forecasting
/// and evaluation.
#[derive(Parser, Debug)]
#[command(author, version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Flat `key = value` run config; explicit flags override its entries
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Write this run's effective settings as a config file
    #[arg(long, global = true, value_name = "PATH")]
    save_config: Option<PathBuf>,
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Number of quantization bins
    #[arg(long, global = true, default_value_t = DEFAULT_BIN_COUNT)]
    bins: usize,
    /// Lower edge of the bin range
    #[arg(long, global = true, default_value_t = DEFAULT_LOWER, allow_negative_numbers = true)]
    lower: f64,
    /// Upper edge of the bin range
    #[arg(long, global = true, default_value_t = DEFAULT_UPPER, allow_negative_numbers = true)]
    upper: f64,
    /// Decimal places in a word (fixed)
    #[arg(long, global = true, default_value_t = WORD_DECIMALS as u32,
          value_parser = clap::value_parser!(u32).range(WORD_DECIMALS as i64..=WORD_DECIMALS as i64))]
    precision: u32,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Encode a series into words
    Encode(EncodeArgs),
    /// Decode a words file back to values
    Decode(DecodeArgs),
    /// Write the vocabulary, one word per line
    Vocab(VocabArgs),
    /// Cut sliding windows from series files
    Slice(SliceArgs),
    /// Keep one seeded representative per k-means cluster of slices
    Dedup(DedupArgs),
    /// Turn slices into forecasting records
    BuildPretrain(BuildPretrainArgs),
    /// Sample a fixed number of records per task and shuffle them together
    BuildFinetune(BuildFinetuneArgs),
    /// Generate labeled series questions
    SynthQa(SynthQaArgs),
    /// Render one prompt
    Prompt(PromptArgs),
    /// Forecast the continuation of a series
    Forecast(ForecastArgs),
    /// Rolling-origin forecasting evaluation
    EvalForecast(EvalForecastArgs),
    /// Score answers to series questions
    EvalQa(EvalQaArgs),
}

#[derive(Args, Debug)]
struct EncodeArgs {
    /// `timestamp,value` series file
    #[arg(long)]
    input: PathBuf,
    /// Output file; `-` writes to stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    /// Words file written by `encode`
    #[arg(long)]
    input: PathBuf,
    /// Scaling minimum; overrides the file's scaling line
    #[arg(long, allow_negative_numbers = true, requires = "hi")]
    lo: Option<f64>,
    /// Scaling maximum; overrides the file's scaling line
    #[arg(long, allow_negative_numbers = true, requires = "lo")]
    hi: Option<f64>,
    /// Output file; `-` writes to stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VocabArgs {
    /// Output file; `-` writes to stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SliceArgs {
    /// Series files; each file's stem names its source
    #[arg(long, required = true, value_delimiter = ',')]
    input: Vec<PathBuf>,
    /// Window configs as history:prediction:step
    #[arg(long, value_delimiter = ',', default_value = DEFAULT_WINDOWS, value_parser = parse_window)]
    windows: Vec<SliceConfig>,
    /// largest_only or all_configs
    #[arg(long, default_value = "largest_only")]
    policy: SlicePolicy,
    /// Output file; `-` writes to stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DedupArgs {
    /// Slices file written by `slice`
    #[arg(long)]
    input: PathBuf,
    /// Number of clusters, and of representatives kept
    #[arg(long)]
    k: usize,
    /// Resampled feature length per slice
    #[arg(long, default_value_t = FEATURE_LEN)]
    feature_len: usize,
    #[arg(long, default_value_t = KMeansConfig::default().max_iter)]
    max_iter: usize,
    /// Stop when no centroid moves farther than this
    #[arg(long, default_value_t = KMeansConfig::default().tol)]
    tol: f64,
    /// Output file; `-` writes to stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BuildPretrainArgs {
    /// Slices file written by `slice` or `dedup`
    #[arg(long)]
    input: PathBuf,
    /// Output file; `-` writes to stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BuildFinetuneArgs {
    /// Corpus files; records are grouped by their task field
    #[arg(long, required = true, value_delimiter = ',')]
    source: Vec<PathBuf>,
    /// Records drawn from each of the four tasks
    #[arg(long, default_value_t = 25_000)]
    per_task: usize,
    /// Output file; `-` writes to stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthQaArgs {
    /// Samples per feature, spread over the lengths
    #[arg(long, default_value_t = 12_000)]
    per_feature: usize,
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    lengths: Vec<usize>,
    /// samples (raw series with labels) or records (rendered corpus records)
    #[arg(long, default_value = "samples", value_parser = ["samples", "records"])]
    format: String,
    /// Output file; `-` writes to stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PromptArgs {
    /// forecast, context_forecast or ts_qa
    #[arg(long)]
    task: Task,
    /// `timestamp,value` series file
    #[arg(long)]
    input: PathBuf,
    /// History length taken from the end of the series; default all of it
    #[arg(long)]
    history: Option<usize>,
    /// Trailing values rendered as the response (training prompt); 0 renders
    /// an inference prompt
    #[arg(long, default_value_t = 0)]
    horizon: usize,
    /// JSON context block for context_forecast
    #[arg(long)]
    context: Option<PathBuf>,
    /// Feature asked about for ts_qa
    #[arg(long)]
    feature: Option<Feature>,
    /// Gold category for a ts_qa training prompt
    #[arg(long)]
    answer: Option<String>,
    /// Output file; `-` writes to stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BackendArgs {
    /// last_value, seasonal_naive, ngram or external
    #[arg(long, default_value = "seasonal_naive")]
    backend: BackendKind,
    /// host:port of an external model server; without it the external
    /// backend runs the command in TSLINGUA_BACKEND_CMD
    #[arg(long)]
    endpoint: Option<String>,
    /// Per-request timeout for the external backend
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    /// `timestamp,value` series file
    #[arg(long)]
    input: PathBuf,
    /// Steps to forecast
    #[arg(long)]
    horizon: usize,
    /// History length taken from the end of the series; default all of it
    #[arg(long)]
    history: Option<usize>,
    /// JSON context block; switches to the context-guided prompt
    #[arg(long)]
    context: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Output file; `-` writes to stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalForecastArgs {
    /// Series files; each file's stem names its dataset
    #[arg(long, required = true, value_delimiter = ',')]
    input: Vec<PathBuf>,
    /// Forecast horizon, the datasets' a priori period
    #[arg(long)]
    pred_len: usize,
    /// History lengths as multiples of the horizon
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    multiples: Vec<usize>,
    /// train:valid:test proportions
    #[arg(long, default_value = "6:2:2", value_parser = parse_split)]
    split: SplitRatio,
    /// Steps between rolling origins; default the horizon
    #[arg(long)]
    stride: Option<usize>,
    /// Methods compared
    #[arg(long, value_delimiter = ',', default_value = "last_value,seasonal_naive")]
    backends: Vec<BackendKind>,
    /// host:port of an external model server
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    /// Output file; `-` writes to stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalQaArgs {
    /// Samples file written by `synth-qa --format samples`
    #[arg(long)]
    samples: PathBuf,
    /// One JSON string per line, aligned with the samples; without it the
    /// backend is asked
    #[arg(long)]
    responses: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Token budget per answer
    #[arg(long, default_value_t = 32)]
    max_new_tokens: usize,
    /// Output file; `-` writes to stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

fn parse_window(s: &str) -> std::result::Result<SliceConfig, String> {
    let parts: Vec<usize> = s
        .split(':')
        .map(|p| p.trim().parse().map_err(|_| format!("bad window `{s}`")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [h, p, step] => SliceConfig::new(h, p, step).map_err(|e| e.to_string()),
        _ => Err(format!("window `{s}` is not history:prediction:step")),
    }
}

fn parse_split(s: &str) -> std::result::Result<SplitRatio, String> {
    let parts: Vec<u32> = s
        .split(':')
        .map(|p| p.trim().parse().map_err(|_| format!("bad split `{s}`")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [train, valid, test] if train + valid + test > 0 => Ok(SplitRatio { train, valid, test }),
        _ => Err(format!("split `{s}` is not train:valid:test")),
    }
}

struct Ctx {
    header: String,
    grid: BinGrid,
    seed: u64,
}

fn main() {
    match run(std::env::args_os().collect()) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.category.exit_code());
        }
    }
}

fn run(args: Vec<OsString>) -> Result<()> {
    let mut cmd = Cli::command();
    let args = config::expand_args(&cmd, args)?;
    let matches = match cmd.try_get_matches_from_mut(args) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(clap_error(&e)),
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| clap_error(&e))?;
    cmd.build();
    let (name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub = cmd.find_subcommand(name).expect("parsed subcommand exists");
    let settings = config::effective_settings(sub, sub_matches);
    let header = io::header_text(&config::config_hash(name, &settings));
    if let Some(path) = &cli.global.save_config {
        fs::write(path, config::render_config(&header, &settings))
            .map_err(|e| CliError::from(e).context(path.display()))?;
    }
    if cli.global.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.threads)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    let g = &cli.global;
    let grid = BinGrid::new(g.bins, g.lower, g.upper).map_err(|e| CliError::usage(e.to_string()))?;
    let ctx = Ctx {
        header,
        grid,
        seed: g.seed,
    };
    match cli.command {
        Cmd::Encode(a) => encode(&ctx, a),
        Cmd::Decode(a) => decode(&ctx, a),
        Cmd::Vocab(a) => vocab(&ctx, a),
        Cmd::Slice(a) => slice(&ctx, a),
        Cmd::Dedup(a) => dedup(&ctx, a),
        Cmd::BuildPretrain(a) => build_pretrain(&ctx, a),
        Cmd::BuildFinetune(a) => build_finetune(&ctx, a),
        Cmd::SynthQa(a) => synth_qa(&ctx, a),
        Cmd::Prompt(a) => render_prompt(&ctx, a),
        Cmd::Forecast(a) => forecast(&ctx, a),
        Cmd::EvalForecast(a) => eval_forecast(&ctx, a),
        Cmd::EvalQa(a) => eval_qa(&ctx, a),
    }
}

fn clap_error(e: &clap::Error) -> CliError {
    let rendered = e.render().to_string();
    let first = rendered.lines().next().unwrap_or("invalid arguments");
    CliError::usage(first.strip_prefix("error: ").unwrap_or(first))
}

fn encode(ctx: &Ctx, a: EncodeArgs) -> Result<()> {
    let values = io::read_series(&a.input)?;
    let window = SeriesWindow::new(values, 0)?;
    let (words, params) = codec::encode(&window, &ctx.grid)?;
    let mut w = io::open_output(&a.out)?;
    io::write_words(&mut *w, &ctx.header, &params, &words.render())
}

fn decode(ctx: &Ctx, a: DecodeArgs) -> Result<()> {
    let file = io::read_words(&a.input)?;
    let (lo, hi) = match (a.lo, a.hi) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => file.scaling.ok_or_else(|| {
            CliError::data(format!("{}: no scaling line; pass --lo and --hi", a.input.display()))
        })?,
    };
    let params = ScalingParams::new(lo, hi)?;
    let parsed = codec::parse_words(&file.words, &ctx.grid)?;
    if parsed.consumed != file.words.trim_end().len() {
        let rest = file.words[parsed.consumed..].trim_start();
        return Err(CliError::data(format!(
            "{}: `{}` is not a word",
            a.input.display(),
            rest.split_whitespace().next().unwrap_or(rest)
        )));
    }
    let values = codec::decode(&parsed.words, &params);
    let mut w = io::open_output(&a.out)?;
    io::write_values(&mut *w, &ctx.header, &values)
}

fn vocab(ctx: &Ctx, a: VocabArgs) -> Result<()> {
    let vocab = Vocabulary::build(&ctx.grid);
    let mut w = io::open_output(&a.out)?;
    w.write_all(vocab.to_file_string().as_bytes())?;
    io::finish(w, &a.out)
}

fn slice(ctx: &Ctx, a: SliceArgs) -> Result<()> {
    let mut sources: Vec<(String, Vec<f64>)> = Vec::with_capacity(a.input.len());
    for path in &a.input {
        let id = io::source_id(path);
        if sources.iter().any(|(s, _)| *s == id) {
            return Err(CliError::usage(format!("two inputs share the source id `{id}`")));
        }
        sources.push((id, io::read_series(path)?));
    }
    let slices = corpus::slice_sources(&sources, &a.windows, a.policy);
    let mut w = io::open_output(&a.out)?;
    io::write_jsonl(&mut *w, &ctx.header, &slices)
}

fn dedup(ctx: &Ctx, a: DedupArgs) -> Result<()> {
    let slices: Vec<Slice> = io::read_jsonl(&a.input)?;
    let config = KMeansConfig {
        max_iter: a.max_iter,
        tol: a.tol,
    };
    let reps = corpus::select_representatives_with(&slices, a.k, ctx.seed, a.feature_len, config)?;
    let mut w = io::open_output(&a.out)?;
    io::write_jsonl(&mut *w, &ctx.header, &reps)
}

fn build_pretrain(ctx: &Ctx, a: BuildPretrainArgs) -> Result<()> {
    let slices: Vec<Slice> = io::read_jsonl(&a.input)?;
    let records = corpus::build_pretrain_records(&slices, &ctx.grid)?;
    let w = io::open_output(&a.out)?;
    corpus::write_corpus(w, &records, Some(&ctx.header))?;
    Ok(())
}

fn build_finetune(ctx: &Ctx, a: BuildFinetuneArgs) -> Result<()> {
    let mut by_task: BTreeMap<Task, Vec<CorpusRecord>> = BTreeMap::new();
    for path in &a.source {
        let records = corpus::read_corpus(io::open_input(path)?)
            .map_err(|e| CliError::from(e).context(path.display()))?;
        for r in records {
            by_task.entry(r.task).or_default().push(r);
        }
    }
    let mix = corpus::build_finetune_mix(&by_task, a.per_task, ctx.seed)?;
    let w = io::open_output(&a.out)?;
    corpus::write_corpus(w, &mix, Some(&ctx.header))?;
    Ok(())
}

fn synth_qa(ctx: &Ctx, a: SynthQaArgs) -> Result<()> {
    if a.lengths.is_empty() {
        return Err(CliError::usage("--lengths is empty"));
    }
    let samples = qa::generate_dataset(&DatasetPlan::per_feature(a.per_feature, &a.lengths), ctx.seed)?;
    let mut w = io::open_output(&a.out)?;
    if a.format == "records" {
        let records = samples
            .par_iter()
            .map(|s| s.to_record(&ctx.grid))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        corpus::write_corpus(w, &records, Some(&ctx.header))?;
        Ok(())
    } else {
        io::write_jsonl(&mut *w, &ctx.header, &samples)
    }
}

/// The last `history + horizon` values, split at `history`.
fn tail_window(values: &[f64], history: Option<usize>, horizon: usize) -> Result<(&[f64], &[f64])> {
    let len = values.len();
    let history = history.unwrap_or(len.saturating_sub(horizon));
    if history == 0 || history + horizon > len {
        return Err(CliError::data(format!(
            "series of {len} values cannot hold history {history} plus horizon {horizon}"
        )));
    }
    let seg = &values[len - history - horizon..];
    Ok(seg.split_at(history))
}

fn render_prompt(ctx: &Ctx, a: PromptArgs) -> Result<()> {
    let values = io::read_series(&a.input)?;
    let bundle = match a.task {
        Task::Forecast | Task::ContextForecast => {
            let (hist, fut) = tail_window(&values, a.history, a.horizon)?;
            let window = SeriesWindow::new(hist.to_vec(), a.horizon)?;
            let (history, params) = codec::encode(&window, &ctx.grid)?;
            let future = if a.horizon > 0 {
                Some(codec::encode_with(fut, &params, &ctx.grid)?)
            } else {
                None
            };
            if a.task == Task::ContextForecast {
                let path = a
                    .context
                    .as_ref()
                    .ok_or_else(|| CliError::usage("context_forecast needs --context"))?;
                let block: ContextBlock = io::read_json(path)?;
                prompt::render_context_prompt(&block, &history, future.as_ref())
            } else {
                prompt::render_forecast_prompt(&history, future.as_ref())
            }
        }
        Task::TsQa => {
            let feature = a.feature.ok_or_else(|| CliError::usage("ts_qa needs --feature"))?;
            let (hist, _) = tail_window(&values, a.history, 0)?;
            let (series, _) = codec::encode(&SeriesWindow::new(hist.to_vec(), 0)?, &ctx.grid)?;
            prompt::render_qa_prompt(&QaPrompt {
                feature,
                series,
                answer: a.answer.clone(),
            })?
        }
        Task::TextQa => {
            return Err(CliError::usage("text_qa prompts come from an external corpus"));
        }
    };
    let mut w = io::open_output(&a.out)?;
    w.write_all(bundle.render().as_bytes())?;
    io::finish(w, &a.out)
}

fn make_backend(
    kind: BackendKind,
    endpoint: Option<&str>,
    timeout_ms: u64,
    ctx: &Ctx,
) -> Result<Box<dyn Backend>> {
    if let Some(b) = inference::native_backend(kind, ctx.grid, ctx.seed) {
        return Ok(b);
    }
    let endpoint = match endpoint {
        Some(addr) => Endpoint::Tcp(addr.to_string()),
        None => match std::env::var(BACKEND_CMD_ENV) {
            Ok(cmd) if !cmd.trim().is_empty() => Endpoint::Command(vec!["sh".into(), "-c".into(), cmd]),
            _ => {
                return Err(CliError::usage(format!(
                    "the external backend needs --endpoint or {BACKEND_CMD_ENV}"
                )))
            }
        },
    };
    Ok(Box::new(ExternalBackend::connect(
        &endpoint,
        Duration::from_millis(timeout_ms),
    )?))
}

fn forecast(ctx: &Ctx, a: ForecastArgs) -> Result<()> {
    if a.horizon == 0 {
        return Err(CliError::usage("--horizon must be positive"));
    }
    let values = io::read_series(&a.input)?;
    let (hist, _) = tail_window(&values, a.history.or(Some(values.len())), 0)?;
    let window = SeriesWindow::new(hist.to_vec(), a.horizon)?;
    let block: Option<ContextBlock> = a.context.as_deref().map(io::read_json).transpose()?;
    let b = &a.backend;
    let backend = make_backend(b.backend, b.endpoint.as_deref(), b.timeout_ms, ctx)?;
    let pred = inference::forecast(&window, backend.as_ref(), block.as_ref(), &ctx.grid)?;
    let mut w = io::open_output(&a.out)?;
    io::write_values(&mut *w, &ctx.header, &pred)
}

fn eval_forecast(ctx: &Ctx, a: EvalForecastArgs) -> Result<()> {
    let config = EvalConfig {
        prediction_len: a.pred_len,
        history_multiples: a.multiples.clone(),
        split: a.split,
        stride: a.stride,
    };
    config.validate()?;
    let mut methods = a.backends.clone();
    methods.dedup();
    let backends = methods
        .iter()
        .map(|&k| make_backend(k, a.endpoint.as_deref(), a.timeout_ms, ctx))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for path in &a.input {
        let dataset = io::source_id(path);
        let series = io::read_series(path)?;
        for (kind, backend) in methods.iter().zip(&backends) {
            let entries = evalkit::evaluate_forecaster(&series, &config, backend.as_ref(), &ctx.grid)
                .map_err(|e| CliError::from(e).context(format!("{dataset}/{kind}")))?;
            rows.extend(entries.into_iter().map(|e| ReportRow {
                dataset: dataset.clone(),
                hist: e.history_len,
                pred: e.prediction_len,
                method: kind.to_string(),
                metric: "mae".into(),
                value: e.mae,
            }));
        }
    }
    let summary = evalkit::summarize(&rows)?;
    for s in summary {
        for (metric, value) in [("avg_mae", s.avg_mae), ("avg_rank", s.avg_rank)] {
            rows.push(ReportRow {
                dataset: "all".into(),
                hist: 0,
                pred: a.pred_len,
                method: s.method.clone(),
                metric: metric.into(),
                value,
            });
        }
    }
    write_csv(&a.out, &ctx.header, &rows)
}

#[derive(Serialize)]
struct QaRow {
    feature: String,
    length: String,
    correct: usize,
    total: usize,
    accuracy: f64,
}

impl QaRow {
    fn new(feature: String, length: String, correct: usize, total: usize) -> Self {
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        Self {
            feature,
            length,
            correct,
            total,
            accuracy,
        }
    }
}

fn eval_qa(ctx: &Ctx, a: EvalQaArgs) -> Result<()> {
    let samples: Vec<QaSample> = io::read_jsonl(&a.samples)?;
    let responses: Vec<String> = match &a.responses {
        Some(path) => io::read_jsonl(path)?,
        None => {
            let b = &a.backend;
            let backend = make_backend(b.backend, b.endpoint.as_deref(), b.timeout_ms, ctx)?;
            samples
                .par_iter()
                .map(|s| {
                    let prompt = prompt::render_qa_prompt(&s.to_prompt(&ctx.grid, false)?)?.render();
                    Ok(backend.generate(&GenerationRequest::new(prompt, a.max_new_tokens))?)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let scores = evalkit::score_qa(&responses, &samples)?;
    let mut rows: Vec<QaRow> = scores
        .iter()
        .map(|s| QaRow::new(s.feature.to_string(), s.length.to_string(), s.correct, s.total))
        .collect();
    for feature in Feature::ALL {
        let (c, t) = scores
            .iter()
            .filter(|s| s.feature == feature)
            .fold((0, 0), |(c, t), s| (c + s.correct, t + s.total));
        if t > 0 {
            rows.push(QaRow::new(feature.to_string(), "all".into(), c, t));
        }
    }
    let (c, t) = scores.iter().fold((0, 0), |(c, t), s| (c + s.correct, t + s.total));
    rows.push(QaRow::new("all".into(), "all".into(), c, t));
    write_csv(&a.out, &ctx.header, &rows)
}

fn write_csv<T: Serialize>(path: &Path, header: &str, rows: &[T]) -> Result<()> {
    let mut w = io::open_output(path)?;
    writeln!(w, "# {header}")?;
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
