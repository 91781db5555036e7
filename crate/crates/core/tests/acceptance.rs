//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tslingua::codec::{count_tokens, decode, encode, encode_with, BinGrid, ScalingParams, SeriesWindow, TokenStyle, WordSeq};
use tslingua::corpus::{
    build_finetune_mix, default_slice_configs, select_representatives, slice_series,
    write_corpus, SlicePolicy, Task,
};
use tslingua::evalkit::{evaluate_forecaster, rank_methods, rolling_origins, EvalConfig};
use tslingua::inference::{forecast, LastValueBackend, SeasonalNaiveBackend};
use tslingua::qa::{generate_dataset, oracle_classify, DatasetPlan, Feature};
use tslingua::vocabulary::Vocabulary;

use common::*;

// Pinned tolerances and limits.
const HALF_WIDTH: f64 = 0.0001;
const ABS_SLACK: f64 = 1e-12;
const ROUND_TRIP_WINDOWS: usize = 10_000;
const ROUND_TRIP_LIMIT: Duration = Duration::from_secs(10);
const AFFINE_TRIPLES: usize = 1_000;
const AFFINE_LIMIT: Duration = Duration::from_secs(5);
const TOKEN_COUNT_LIMIT: Duration = Duration::from_secs(1);
const SLICER_LENGTHS: usize = 200;
const DEDUP_RUNS: usize = 5;
const DEDUP_THREADS: [usize; 4] = [1, 2, 4, 8];
const MIX_PER_TASK: usize = 25;
const QA_PER_CELL: usize = 1_000;
const QA_LENGTHS: [usize; 2] = [64, 128];
const QA_MIN_AGREEMENT: f64 = 0.95;
const QA_LIMIT: Duration = Duration::from_secs(60);
const FORECAST_POINT_BOUND: f64 = 2.0 * HALF_WIDTH;
const FORECAST_MIN_GAIN: f64 = 10.0;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg.into()) }
}

fn token_counts() -> Check {
    let start = Instant::now();
    let values = [0.2835, 0.2285, 0.1587, 0.4001];
    let counts = [
        count_tokens(TokenStyle::Words, &values),
        count_tokens(TokenStyle::LlamaBitwise, &values),
        count_tokens(TokenStyle::GptBitwise, &values),
    ];
    ensure(counts == [7, 22, 34], format!("token counts {counts:?}, expected [7, 22, 34]"))?;
    let words = encode_with(&values, &ScalingParams::identity(), &BinGrid::default()).map_err(|e| e.to_string())?;
    let expected = "###0.2835### ###0.2285### ###0.1587### ###0.4001###";
    ensure(words.render() == expected, format!("rendering `{}`", words.render()))?;
    let elapsed = start.elapsed();
    ensure(elapsed < TOKEN_COUNT_LIMIT, format!("took {elapsed:?}"))?;
    Ok(format!("counts 7/22/34, rendering exact, {elapsed:?}"))
}

/// Window with range 10^U(-3, 6), offset up to twice the range below zero,
/// extremes pinned at positions 0 and 1 and a per-window missing rate.
fn random_window(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<f64> {
    let len = rng.random_range(4..=max_len);
    let range = 10f64.powf(rng.random_range(-3.0..6.0));
    let lo = range * rng.random_range(-2.0..1.0);
    let missing = [0.0, 0.05, 0.3][rng.random_range(0..3)];
    let mut xs: Vec<f64> = (0..len)
        .map(|_| {
            if rng.random_bool(missing) {
                f64::NAN
            } else {
                lo + range * rng.random::<f64>()
            }
        })
        .collect();
    xs[0] = lo;
    xs[1] = lo + range;
    xs
}

fn round_trip(vocab_words: &mut Vec<WordSeq>) -> Check {
    let g = BinGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DEC);
    let start = Instant::now();
    let (mut checked, mut violations, mut slack_violations) = (0usize, 0usize, 0usize);
    let mut worst_excess: f64 = 0.0;
    let mut worst_ulps: f64 = 0.0;
    for i in 0..ROUND_TRIP_WINDOWS {
        let xs = random_window(&mut rng, 512);
        let window = SeriesWindow::new(xs.clone(), 1).map_err(|e| e.to_string())?;
        let (words, params) = encode(&window, &g).map_err(|e| e.to_string())?;
        let back = decode(&words, &params);
        let bound = HALF_WIDTH * params.range();
        for (x, y) in xs.iter().zip(&back) {
            if x.is_nan() {
                ensure(y.is_nan(), "missing value decoded as a number")?;
                continue;
            }
            checked += 1;
            let err = (x - y).abs();
            if err > bound + ABS_SLACK {
                violations += 1;
                worst_excess = worst_excess.max(err - bound);
                let mag = x.abs().max(params.lo().abs()).max(params.hi().abs());
                let ulp = mag * f64::EPSILON;
                worst_ulps = worst_ulps.max((err - bound) / ulp);
                // the invariant's floating-point slack: a few ulps of the magnitudes involved
                if err > bound + ABS_SLACK + 4.0 * ulp {
                    slack_violations += 1;
                }
            }
        }
        if i < 1_000 {
            vocab_words.push(words);
        }
    }
    let elapsed = start.elapsed();
    let summary = format!(
        "{checked} values in {ROUND_TRIP_WINDOWS} windows, {violations} beyond 1e-4*range+1e-12 \
         (worst excess {worst_excess:.3e}, {worst_ulps:.2} ulp of magnitude), \
         {slack_violations} beyond the 4-ulp slack, {elapsed:?}"
    );
    ensure(elapsed < ROUND_TRIP_LIMIT && violations == 0, summary.clone())?;
    Ok(summary)
}

fn affine() -> Check {
    let g = BinGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xAFF1);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..AFFINE_TRIPLES {
        let len = rng.random_range(4..=256);
        let range = 10f64.powf(rng.random_range(-1.0..3.0));
        let x: Vec<f64> = (0..len).map(|_| range * rng.random_range(-1.0..1.0)).collect();
        let a = 10f64.powf(rng.random_range(-2.0..2.0));
        let b = rng.random_range(-1e3..1e3);
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let ex = encode(&SeriesWindow::new(x, 1).unwrap(), &g).map_err(|e| e.to_string())?.0;
        let ey = encode(&SeriesWindow::new(y, 1).unwrap(), &g).map_err(|e| e.to_string())?.0;
        mismatches += usize::from(ex != ey);
    }
    let elapsed = start.elapsed();
    let summary = format!("{mismatches}/{AFFINE_TRIPLES} triples differ, {elapsed:?}");
    ensure(mismatches == 0 && elapsed < AFFINE_LIMIT, summary.clone())?;
    Ok(summary)
}

fn vocabulary(sample: &[WordSeq]) -> Check {
    let g = BinGrid::default();
    let v = Vocabulary::build(&g);
    ensure(v.len() == 10_001, format!("{} entries", v.len()))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("vocab.txt");
    v.save(&path).map_err(|e| e.to_string())?;
    let loaded = Vocabulary::load(&path, &g).map_err(|e| e.to_string())?;
    ensure(loaded == v, "loaded vocabulary differs")?;
    let mut n = 0;
    for words in sample {
        for w in words {
            ensure(v.contains(&w.to_string()), format!("{w} not in vocabulary"))?;
            n += 1;
        }
    }
    Ok(format!("10001 entries, save/load identity, {n} codec words all members"))
}

fn slicer() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x511CE);
    let configs = default_slice_configs();
    for cfg in &configs {
        for _ in 0..SLICER_LENGTHS {
            let len = rng.random_range(cfg.window()..cfg.window() * 20);
            let got = slice_series("s", &vec![0.0; len], &[*cfg], SlicePolicy::AllConfigs).len();
            let expected = (len - cfg.window()) / cfg.step() + 1;
            ensure(got == expected, format!("window {} len {len}: {got} != {expected}", cfg.window()))?;
        }
    }
    for len in 0..36 {
        for policy in [SlicePolicy::LargestOnly, SlicePolicy::AllConfigs] {
            ensure(
                slice_series("s", &vec![0.0; len], &configs, policy).is_empty(),
                format!("length {len} produced slices"),
            )?;
        }
    }
    Ok(format!("{} configs x {SLICER_LENGTHS} lengths match the closed form; L<36 gives none", configs.len()))
}

fn dedup() -> Check {
    let slices = two_blob_slices(10);
    let mut outputs = Vec::new();
    for threads in DEDUP_THREADS {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        for _ in 0..DEDUP_RUNS {
            let reps = pool
                .install(|| select_representatives(&slices, 2, 42))
                .map_err(|e| e.to_string())?;
            let ids: Vec<String> = reps.iter().map(|s| s.source_id.clone()).collect();
            outputs.push(ids);
        }
    }
    let first = &outputs[0];
    ensure(outputs.iter().all(|o| o == first), format!("outputs differ: {outputs:?}"))?;
    let mut blobs: Vec<&str> = first.iter().map(|id| &id[..2]).collect();
    blobs.sort_unstable();
    ensure(blobs == ["dn", "up"], format!("representatives {first:?}"))?;
    Ok(format!(
        "representatives {first:?}, identical over {DEDUP_RUNS} runs x threads {DEDUP_THREADS:?}"
    ))
}

fn finetune_mix() -> Check {
    let g = BinGrid::default();
    let sources = finetune_sources(&g);
    let bytes = |seed| -> Result<(Vec<u8>, BTreeMap<Task, usize>), String> {
        let mix = build_finetune_mix(&sources, MIX_PER_TASK, seed).map_err(|e| e.to_string())?;
        let mut counts = BTreeMap::new();
        for r in &mix {
            *counts.entry(r.task).or_insert(0) += 1;
        }
        let mut buf = Vec::new();
        write_corpus(&mut buf, &mix, None).map_err(|e| e.to_string())?;
        ensure(mix.len() == 4 * MIX_PER_TASK, format!("{} records", mix.len()))?;
        Ok((buf, counts))
    };
    let (a, counts) = bytes(9)?;
    let (b, _) = bytes(9)?;
    ensure(counts.values().all(|&c| c == MIX_PER_TASK) && counts.len() == 4, format!("{counts:?}"))?;
    ensure(a == b, "mixes differ under the same seed")?;
    Ok(format!("100 records, 25 per task, {} identical bytes", a.len()))
}

fn qa_fidelity() -> Check {
    let start = Instant::now();
    let cells = Feature::ALL
        .iter()
        .flat_map(|&f| QA_LENGTHS.map(|len| (f, len, QA_PER_CELL)))
        .collect();
    let samples = generate_dataset(&DatasetPlan { cells }, 2024).map_err(|e| e.to_string())?;
    let mut agree: BTreeMap<(Feature, usize), (usize, usize)> = BTreeMap::new();
    for s in &samples {
        let cell = agree.entry((s.feature, s.length())).or_default();
        cell.0 += usize::from(oracle_classify(&s.series, s.feature) == s.category);
        cell.1 += 1;
    }
    let elapsed = start.elapsed();
    let worst = agree
        .iter()
        .map(|(k, (ok, n))| (*ok as f64 / *n as f64, *k))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("cells");
    let summary = format!(
        "{} cells of {QA_PER_CELL}, lowest agreement {:.4} ({} {}), {elapsed:?}",
        agree.len(),
        worst.0,
        worst.1 .0,
        worst.1 .1
    );
    ensure(
        agree.values().all(|(_, n)| *n == QA_PER_CELL) && worst.0 >= QA_MIN_AGREEMENT && elapsed < QA_LIMIT,
        summary.clone(),
    )?;
    Ok(summary)
}

fn end_to_end() -> Check {
    let g = BinGrid::default();
    let series = sinusoid(72, 24.0, 3.0, 10.0);
    let window = SeriesWindow::new(series[..48].to_vec(), 24).unwrap();
    let truth = &series[48..];
    let (_, params) = encode(&window, &g).map_err(|e| e.to_string())?;
    let bound = FORECAST_POINT_BOUND * params.range();
    let seasonal = forecast(&window, &SeasonalNaiveBackend::new(g), None, &g).map_err(|e| e.to_string())?;
    let last = forecast(&window, &LastValueBackend::new(g), None, &g).map_err(|e| e.to_string())?;
    let worst = seasonal.iter().zip(truth).map(|(p, t)| (p - t).abs()).fold(0.0, f64::max);
    let mae = |p: &[f64]| p.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / truth.len() as f64;
    let (m_seasonal, m_last) = (mae(&seasonal), mae(&last));
    let summary = format!(
        "worst point error {worst:.3e} (bound {bound:.3e}), MAE seasonal {m_seasonal:.3e} vs last_value {m_last:.3e}"
    );
    ensure(seasonal.len() == 24 && worst <= bound && m_last >= FORECAST_MIN_GAIN * m_seasonal, summary.clone())?;
    Ok(summary)
}

fn eval_harness() -> Check {
    let g = BinGrid::default();
    let mut notes = Vec::new();
    for (name, series, pred) in dataset_fixtures() {
        let config = EvalConfig::new(pred);
        let oracle = OracleBackend::new(&series, &config, &g);
        let entries = evaluate_forecaster(&series, &config, &oracle, &g).map_err(|e| format!("{name}: {e}"))?;
        let origins = rolling_origins(series.len(), &config).unwrap();
        for e in entries {
            let mut bound: f64 = 0.0;
            for &o in &origins {
                let hist = SeriesWindow::new(series[o - e.history_len..o].to_vec(), pred).unwrap();
                let (_, params) = encode(&hist, &g).map_err(|e| e.to_string())?;
                // the quantization bound only covers targets inside the codec band
                let in_band = series[o..o + pred]
                    .iter()
                    .all(|v| params.scale_value(*v).abs() <= 1.0);
                ensure(in_band, format!("{name}: fixture target outside the codec band at {o}"))?;
                bound = bound.max(HALF_WIDTH * params.range() + ABS_SLACK);
            }
            ensure(e.mae <= bound, format!("{name} hist {}: MAE {} > {bound}", e.history_len, e.mae))?;
        }
        notes.push(name);
    }
    let table = vec![vec![1.0, 2.0, 3.0], vec![2.0, 2.0, 1.0], vec![3.0, 1.0, 2.0]];
    let ranks = rank_methods(&table).map_err(|e| e.to_string())?;
    let expected = [13.0 / 6.0, 11.0 / 6.0, 2.0];
    ensure(
        ranks.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-12),
        format!("ranks {ranks:?}, expected {expected:?}"),
    )?;
    Ok(format!("oracle within bound on {notes:?}; ranks {ranks:?} with one tie"))
}

fn prompt_goldens() -> Check {
    let renderings = golden_renderings();
    for (stem, text) in &renderings {
        let golden = fs::read_to_string(golden_path(stem)).map_err(|e| format!("{stem}: {e}"))?;
        ensure(*text == golden, format!("{stem} differs from golden"))?;
    }
    for pair in renderings.chunks(2) {
        ensure(
            pair[0].1.len() > pair[1].1.len() && pair[0].1.starts_with(pair[1].1.as_str()),
            format!("{} is not a strict prefix", pair[1].0),
        )?;
    }
    Ok(format!("{} goldens byte-exact, inference renderings are strict prefixes", renderings.len()))
}

fn main() {
    let mut vocab_sample = Vec::new();
    let rt = round_trip(&mut vocab_sample);
    let results: Vec<(&str, Check)> = vec![
        ("token-counts", token_counts()),
        ("codec-round-trip", rt),
        ("affine-invariance", affine()),
        ("vocabulary", vocabulary(&vocab_sample)),
        ("slicer-closed-form", slicer()),
        ("dedup-determinism", dedup()),
        ("finetune-mix", finetune_mix()),
        ("qa-label-fidelity", qa_fidelity()),
        ("end-to-end-forecast", end_to_end()),
        ("eval-harness", eval_harness()),
        ("prompt-goldens", prompt_goldens()),
    ];
    let mut failed = 0;
    for (name, result) in &results {
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
