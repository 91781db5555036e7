//! Generation backends and the forecast driver.
//!
//! A backend turns a rendered prompt into text. Native backends read the
//! history words back out of the prompt's input section and extrapolate in
//! word space; the external backend speaks a JSON line protocol to a model
//! server over a child process's stdio or a TCP socket.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{decode, encode, BinGrid, CodecError, SeriesWindow, Word, WordSeq};
use crate::prompt::{input_section, render_context_prompt, render_forecast_prompt, ContextBlock};
use crate::stats::{fill_missing, lagged_correlation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("prompt has no parseable history: {0}")]
    UnparseableHistory(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("backend reported: {0}")]
    Remote(String),
}

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("backend returned {got} usable words, {needed} needed")]
    InsufficientWords { needed: usize, got: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: usize,
    pub stop: Option<String>,
}

impl GenerationRequest {
    pub fn new(prompt: String, max_new_tokens: usize) -> Self {
        Self {
            prompt,
            max_new_tokens,
            stop: None,
        }
    }

    fn validate(&self) -> Result<(), BackendError> {
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }

    /// Words that fit in the token budget when each word is one token and
    /// each separating space another.
    pub fn word_budget(&self) -> usize {
        self.max_new_tokens.div_ceil(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LastValue,
    SeasonalNaive,
    Ngram,
    External,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::LastValue => "last_value",
            BackendKind::SeasonalNaive => "seasonal_naive",
            BackendKind::Ngram => "ngram",
            BackendKind::External => "external",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            BackendKind::LastValue,
            BackendKind::SeasonalNaive,
            BackendKind::Ngram,
            BackendKind::External,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| format!("unknown backend `{s}`"))
    }
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;
}

/// History words from the input section of a rendered prompt. The whole
/// section must be words.
pub fn prompt_history(prompt: &str, grid: &BinGrid) -> Result<WordSeq, BackendError> {
    let input = input_section(prompt)
        .ok_or_else(|| BackendError::UnparseableHistory("no input section".into()))?;
    let words = input
        .split(' ')
        .map(|t| Word::parse(t, grid))
        .collect::<Result<WordSeq, _>>()
        .map_err(|e| BackendError::UnparseableHistory(e.to_string()))?;
    if words.as_slice().iter().all(|w| *w == Word::Nan) {
        return Err(BackendError::UnparseableHistory("history has no valued words".into()));
    }
    Ok(words)
}

fn render_words(words: impl IntoIterator<Item = Word>) -> String {
    words
        .into_iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Repeats the last valued history word.
#[derive(Debug, Clone, Default)]
pub struct LastValueBackend {
    grid: BinGrid,
}

impl LastValueBackend {
    pub fn new(grid: BinGrid) -> Self {
        Self { grid }
    }
}

impl Backend for LastValueBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::LastValue
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        request.validate()?;
        let history = prompt_history(&request.prompt, &self.grid)?;
        let last = *history
            .iter()
            .rev()
            .find(|w| **w != Word::Nan)
            .expect("prompt_history guarantees a valued word");
        Ok(render_words(std::iter::repeat_n(last, request.word_budget())))
    }
}

/// Repeats the last cycle of the history at the lag with the highest
/// autocorrelation.
#[derive(Debug, Clone, Default)]
pub struct SeasonalNaiveBackend {
    grid: BinGrid,
}

impl SeasonalNaiveBackend {
    pub fn new(grid: BinGrid) -> Self {
        Self { grid }
    }
}

/// Lag in `2..=len/2` with the largest lagged Pearson correlation; ties go to
/// the smaller lag. `None` when no lag is testable or the series is flat.
pub fn detect_period(values: &[f64]) -> Option<usize> {
    let filled = fill_missing(values)?;
    let mut best: Option<(usize, f64)> = None;
    for lag in 2..=filled.len() / 2 {
        let r = lagged_correlation(&filled, lag);
        if r.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| r > b + 1e-9) {
            best = Some((lag, r));
        }
    }
    best.map(|(lag, _)| lag)
}

impl Backend for SeasonalNaiveBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::SeasonalNaive
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        request.validate()?;
        let history = prompt_history(&request.prompt, &self.grid)?;
        let words = history.as_slice();
        // word values are an affine image of the raw values, so correlations agree
        let values: Vec<f64> = words
            .iter()
            .map(|w| w.as_bin().map_or(f64::NAN, |b| b.value()))
            .collect();
        let Some(period) = detect_period(&values) else {
            return LastValueBackend::new(self.grid).generate(request);
        };
        let cycle = &words[words.len() - period..];
        Ok(render_words(
            cycle.iter().copied().cycle().take(request.word_budget()),
        ))
    }
}

/// Order-k frequency model over coarse bins, decoded greedily.
#[derive(Debug, Clone)]
pub struct NgramBackend {
    grid: BinGrid,
    coarse_bins: usize,
    order: usize,
    seed: u64,
}

impl NgramBackend {
    pub const DEFAULT_COARSE_BINS: usize = 100;
    pub const DEFAULT_ORDER: usize = 3;

    pub fn new(grid: BinGrid, seed: u64) -> Self {
        Self {
            grid,
            coarse_bins: Self::DEFAULT_COARSE_BINS,
            order: Self::DEFAULT_ORDER,
            seed,
        }
    }

    pub fn with_shape(grid: BinGrid, coarse_bins: usize, order: usize, seed: u64) -> Self {
        assert!(coarse_bins >= 1 && coarse_bins <= grid.count() && order >= 1);
        Self {
            grid,
            coarse_bins,
            order,
            seed,
        }
    }

    fn coarse_of(&self, w: Word) -> Option<usize> {
        let i = self.grid.index_of(w.as_bin()?)?;
        Some(i * self.coarse_bins / self.grid.count())
    }

    /// Fine-grid word holding the center of coarse bin `c`, located exactly
    /// in integer arithmetic.
    fn coarse_word(&self, c: usize) -> Word {
        let i = (2 * c + 1) * self.grid.count() / (2 * self.coarse_bins);
        Word::Bin(self.grid.word(i))
    }
}

impl Backend for NgramBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Ngram
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        request.validate()?;
        let history = prompt_history(&request.prompt, &self.grid)?;
        // Nan words split the history into runs; contexts never span a gap
        let mut runs: Vec<Vec<usize>> = vec![Vec::new()];
        for w in history.iter() {
            match self.coarse_of(*w) {
                Some(c) => runs.last_mut().expect("non-empty").push(c),
                None => runs.push(Vec::new()),
            }
        }
        // counts[j] maps a context of length j to next-symbol counts
        let mut counts: Vec<HashMap<Vec<usize>, HashMap<usize, usize>>> =
            vec![HashMap::new(); self.order + 1];
        for run in &runs {
            for t in 0..run.len() {
                for (j, table) in counts.iter_mut().enumerate() {
                    if j > t {
                        break;
                    }
                    *table
                        .entry(run[t - j..t].to_vec())
                        .or_default()
                        .entry(run[t])
                        .or_default() += 1;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut context: Vec<usize> = runs
            .iter()
            .rev()
            .find(|r| !r.is_empty())
            .expect("history has a valued word")
            .clone();
        let mut out = Vec::with_capacity(request.word_budget());
        for _ in 0..request.word_budget() {
            let next = (0..=self.order.min(context.len()))
                .rev()
                .find_map(|j| {
                    let table = counts[j].get(&context[context.len() - j..])?;
                    // add-one smoothing leaves the argmax unchanged; ties are seeded
                    let top = table.values().max().copied()? + 1;
                    let mut tied: Vec<usize> = table
                        .iter()
                        .filter(|(_, &n)| n + 1 == top)
                        .map(|(&c, _)| c)
                        .collect();
                    tied.sort_unstable();
                    Some(tied[rng.random_range(0..tied.len())])
                })
                .expect("unigram table is non-empty");
            out.push(self.coarse_word(next));
            context.push(next);
        }
        Ok(render_words(out))
    }
}

/// Native backend of `kind`; `External` has no native form.
pub fn native_backend(kind: BackendKind, grid: BinGrid, seed: u64) -> Option<Box<dyn Backend>> {
    match kind {
        BackendKind::LastValue => Some(Box::new(LastValueBackend::new(grid))),
        BackendKind::SeasonalNaive => Some(Box::new(SeasonalNaiveBackend::new(grid))),
        BackendKind::Ngram => Some(Box::new(NgramBackend::new(grid, seed))),
        BackendKind::External => None,
    }
}

/// Where the external model server lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Program and arguments; the protocol runs over its stdin/stdout.
    Command(Vec<String>),
    /// `host:port` of a TCP server.
    Tcp(String),
}

#[derive(Serialize)]
struct WireRequest<'a> {
    id: u64,
    prompt: &'a str,
    max_new_tokens: usize,
    stop: Option<&'a str>,
}

#[derive(Deserialize)]
struct WireResponse {
    id: u64,
    text: Option<String>,
    error: Option<String>,
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    next_id: u64,
    broken: Option<String>,
}

/// Client side of the line protocol. One request is in flight at a time.
pub struct ExternalBackend {
    conn: Mutex<Connection>,
    child: Option<Child>,
    socket: Option<TcpStream>,
    timeout: Duration,
}

fn spawn_line_reader<R: Read + Send + 'static>(reader: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut line = String::new();
            let msg = match reader.read_line(&mut line) {
                Ok(0) => Err(io::Error::new(io::ErrorKind::UnexpectedEof, "stream closed")),
                Ok(_) if !line.ends_with('\n') => Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "stream closed mid-response",
                )),
                Ok(_) => Ok(line),
                Err(e) => Err(e),
            };
            let done = msg.is_err();
            if tx.send(msg).is_err() || done {
                return;
            }
        }
    });
    rx
}

impl ExternalBackend {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, BackendError> {
        let transport = |e: io::Error| BackendError::Transport(e.to_string());
        let mut socket = None;
        let (writer, lines, child): (Box<dyn Write + Send>, _, _) = match endpoint {
            Endpoint::Command(argv) => {
                let (program, args) = argv
                    .split_first()
                    .ok_or_else(|| BackendError::Transport("empty backend command".into()))?;
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(transport)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(stdin), spawn_line_reader(stdout), Some(child))
            }
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(transport)?;
                stream.set_nodelay(true).map_err(transport)?;
                let reader = stream.try_clone().map_err(transport)?;
                socket = Some(stream.try_clone().map_err(transport)?);
                (Box::new(stream), spawn_line_reader(reader), None)
            }
        };
        Ok(Self {
            conn: Mutex::new(Connection {
                writer,
                lines,
                next_id: 0,
                broken: None,
            }),
            child,
            socket,
            timeout,
        })
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        // the reader thread holds a clone of the socket, so close it explicitly
        if let Some(socket) = &self.socket {
            let _ = socket.shutdown(std::net::Shutdown::Both);
        }
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Backend for ExternalBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::External
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        request.validate()?;
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(reason) = &conn.broken {
            return Err(BackendError::Transport(format!("connection unusable: {reason}")));
        }
        let id = conn.next_id;
        conn.next_id += 1;
        let mut line = serde_json::to_string(&WireRequest {
            id,
            prompt: &request.prompt,
            max_new_tokens: request.max_new_tokens,
            stop: request.stop.as_deref(),
        })
        .expect("request serializes");
        line.push('\n');
        let sent = conn
            .writer
            .write_all(line.as_bytes())
            .and_then(|_| conn.writer.flush());
        if let Err(e) = sent {
            conn.broken = Some(e.to_string());
            return Err(BackendError::Transport(e.to_string()));
        }
        let result = match conn.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => parse_reply(&reply, id),
            Ok(Err(e)) => Err(BackendError::Transport(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(BackendError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(BackendError::Transport("stream closed".into()))
            }
        };
        if let Err(e) = &result {
            // a late or out-of-step reply would be mismatched with the next request
            if !matches!(e, BackendError::Remote(_)) {
                conn.broken = Some(e.to_string());
            }
        }
        let mut text = result?;
        if let Some(stop) = request.stop.as_deref().filter(|s| !s.is_empty()) {
            if let Some(at) = text.find(stop) {
                text.truncate(at);
            }
        }
        Ok(text)
    }
}

fn parse_reply(line: &str, expected_id: u64) -> Result<String, BackendError> {
    let reply: WireResponse =
        serde_json::from_str(line.trim_end_matches(['\n', '\r'])).map_err(|e| {
            BackendError::Malformed(format!("{e}: {}", line.trim_end()))
        })?;
    if reply.id != expected_id {
        return Err(BackendError::Malformed(format!(
            "reply id {} does not match request id {expected_id}",
            reply.id
        )));
    }
    match (reply.text, reply.error) {
        (Some(text), None) => Ok(text),
        (None, Some(error)) => Err(BackendError::Remote(error)),
        _ => Err(BackendError::Malformed(
            "reply must carry exactly one of `text` and `error`".into(),
        )),
    }
}

/// Output of [`forecast_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub words: WordSeq,
    pub values: Vec<f64>,
    /// 1, or 2 when the first response was too short.
    pub attempts: usize,
}

/// Leading words of a response, up to the first token that is not a word.
fn leading_words(text: &str, grid: &BinGrid, limit: usize) -> Vec<Word> {
    text.split_whitespace()
        .map_while(|t| Word::parse(t, grid).ok())
        .take(limit)
        .collect()
}

pub fn forecast(
    window: &SeriesWindow,
    backend: &dyn Backend,
    context: Option<&ContextBlock>,
    grid: &BinGrid,
) -> Result<Vec<f64>, ForecastError> {
    Ok(forecast_detailed(window, backend, context, grid)?.values)
}

/// Encodes the history, asks the backend for `2 * horizon` tokens (once more
/// with twice that if too few words arrive), and decodes the first `horizon`
/// words. Nan outputs take the previous prediction, or the last observed
/// value for the first step.
pub fn forecast_detailed(
    window: &SeriesWindow,
    backend: &dyn Backend,
    context: Option<&ContextBlock>,
    grid: &BinGrid,
) -> Result<Forecast, ForecastError> {
    let horizon = window.horizon();
    if horizon == 0 {
        return Err(ForecastError::ZeroHorizon);
    }
    let (history, params) = encode(window, grid)?;
    let bundle = match context {
        Some(ctx) => render_context_prompt(ctx, &history, None),
        None => render_forecast_prompt(&history, None),
    };
    let prompt = bundle.render();
    let mut budget = 2 * horizon;
    let mut got = Vec::new();
    let mut attempts = 0;
    while attempts < 2 {
        attempts += 1;
        let text = backend.generate(&GenerationRequest::new(prompt.clone(), budget))?;
        got = leading_words(&text, grid, horizon);
        if got.len() == horizon {
            break;
        }
        budget *= 2;
    }
    if got.len() < horizon {
        return Err(ForecastError::InsufficientWords {
            needed: horizon,
            got: got.len(),
        });
    }
    let words = WordSeq::new(got);
    let mut values = decode(&words, &params);
    let mut previous = window
        .history()
        .iter()
        .rev()
        .copied()
        .find(|v| v.is_finite())
        .expect("encode rejects all-missing histories");
    for v in &mut values {
        if v.is_nan() {
            *v = previous;
        }
        previous = *v;
    }
    Ok(Forecast {
        words,
        values,
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn prompt_for(history: &[f64]) -> String {
        let g = BinGrid::default();
        let w = SeriesWindow::new(history.to_vec(), 1).unwrap();
        render_forecast_prompt(&encode(&w, &g).unwrap().0, None).render()
    }

    struct Canned(Vec<&'static str>, Mutex<usize>);

    impl Backend for Canned {
        fn kind(&self) -> BackendKind {
            BackendKind::External
        }

        fn generate(&self, _: &GenerationRequest) -> Result<String, BackendError> {
            let mut i = self.1.lock().unwrap();
            let out = self.0[(*i).min(self.0.len() - 1)];
            *i += 1;
            Ok(out.to_string())
        }
    }

    #[test]
    fn last_value_repeats_final_word() {
        let g = BinGrid::default();
        let b = LastValueBackend::new(g);
        let prompt = render_forecast_prompt(&"###-0.4999### ###0.1001###".parse().unwrap(), None)
            .render();
        let out = b.generate(&GenerationRequest::new(prompt, 5)).unwrap();
        assert_eq!(out, "###0.1001### ###0.1001### ###0.1001###");
    }

    #[test]
    fn last_value_forecast_example() {
        let g = BinGrid::default();
        let w = SeriesWindow::new(vec![1.0, 2.0, 3.0], 2).unwrap();
        let f = forecast(&w, &LastValueBackend::new(g), None, &g).unwrap();
        assert_eq!(f.len(), 2);
        for v in f {
            assert!((v - 3.0).abs() <= 0.0001 * 2.0 + 1e-12, "{v}");
        }
    }

    #[test]
    fn history_must_be_words() {
        let b = LastValueBackend::default();
        let req = GenerationRequest::new("no sections here".into(), 4);
        assert!(matches!(b.generate(&req), Err(BackendError::UnparseableHistory(_))));
        let bad = render_forecast_prompt(&"###Nan###".parse().unwrap(), None).render();
        assert!(matches!(
            b.generate(&GenerationRequest::new(bad, 4)),
            Err(BackendError::UnparseableHistory(_))
        ));
        let zero = GenerationRequest::new(prompt_for(&[1.0, 2.0]), 0);
        assert!(matches!(b.generate(&zero), Err(BackendError::InvalidRequest(_))));
    }

    #[test]
    fn period_detection_matches_exhaustive_maximum() {
        for p in 2..=12usize {
            let pattern: Vec<f64> = (0..p).map(|i| ((i * 7919) % 13) as f64 + i as f64).collect();
            let xs: Vec<f64> = (0..4 * p + 3).map(|t| pattern[t % p]).collect();
            let oracle = (2..=xs.len() / 2)
                .filter(|&l| !lagged_correlation(&xs, l).is_nan())
                .fold((0usize, f64::NEG_INFINITY), |best, l| {
                    let r = lagged_correlation(&xs, l);
                    if r > best.1 + 1e-9 { (l, r) } else { best }
                });
            assert_eq!(detect_period(&xs), Some(oracle.0));
            assert_eq!(oracle.0, p, "pattern period {p}");
        }
        assert_eq!(detect_period(&[5.0; 20]), None);
        assert_eq!(detect_period(&[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn seasonal_naive_sinusoid_forecast() {
        let g = BinGrid::default();
        let wave = |t: usize| 10.0 + 3.0 * (TAU * t as f64 / 24.0).sin();
        let hist: Vec<f64> = (0..48).map(wave).collect();
        let w = SeriesWindow::new(hist, 24).unwrap();
        let (_, params) = encode(&w, &g).unwrap();
        let f = forecast(&w, &SeasonalNaiveBackend::new(g), None, &g).unwrap();
        let bound = 2.0 * 0.0001 * params.range();
        for (t, v) in f.iter().enumerate() {
            assert!((v - wave(48 + t)).abs() <= bound, "t={t}");
        }
    }

    #[test]
    fn ngram_is_deterministic_and_emits_coarse_centers() {
        let g = BinGrid::default();
        let hist: Vec<f64> = (0..60).map(|t| ((t * 37) % 11) as f64).collect();
        let req = GenerationRequest::new(prompt_for(&hist), 39);
        let a = NgramBackend::new(g, 7).generate(&req).unwrap();
        assert_eq!(a, NgramBackend::new(g, 7).generate(&req).unwrap());
        let words: Vec<&str> = a.split(' ').collect();
        assert_eq!(words.len(), 20);
        for w in words {
            let Word::Bin(b) = Word::parse(w, &g).unwrap() else {
                panic!("nan word")
            };
            // coarse centers sit 0.0001 above a multiple of 0.02 offset by 0.01
            assert_eq!((b.ticks() - 1 + 10_000 - 100).rem_euclid(200), 0, "{w}");
        }
    }

    #[test]
    fn ngram_follows_a_deterministic_cycle() {
        let g = BinGrid::default();
        let hist: Vec<f64> = (0..40).map(|t| [0.0, 5.0, 10.0, 2.0][t % 4]).collect();
        let out = NgramBackend::new(g, 1)
            .generate(&GenerationRequest::new(prompt_for(&hist), 15))
            .unwrap();
        let w: Vec<&str> = out.split(' ').collect();
        assert_eq!(w.len(), 8);
        assert_eq!(w[0], w[4]);
        assert_eq!(w[1], w[5]);
        assert_ne!(w[0], w[1]);
    }

    #[test]
    fn forecast_retries_once_then_fails() {
        let g = BinGrid::default();
        let w = SeriesWindow::new(vec![1.0, 2.0], 2).unwrap();
        let hello = Canned(vec!["hello"], Mutex::new(0));
        assert!(matches!(
            forecast(&w, &hello, None, &g),
            Err(ForecastError::InsufficientWords { needed: 2, got: 0 })
        ));
        assert_eq!(*hello.1.lock().unwrap(), 2);

        let short_then_ok = Canned(
            vec!["###0.1001###", "###0.1001### ###0.2001### ###0.3001###"],
            Mutex::new(0),
        );
        let f = forecast_detailed(&w, &short_then_ok, None, &g).unwrap();
        assert_eq!(f.attempts, 2);
        assert_eq!(f.words.render(), "###0.1001### ###0.2001###");
    }

    #[test]
    fn nan_outputs_are_filled() {
        let g = BinGrid::default();
        let w = SeriesWindow::new(vec![0.0, 10.0], 3).unwrap();
        let c = Canned(vec!["###Nan### ###0.0001### ###Nan###"], Mutex::new(0));
        let f = forecast(&w, &c, None, &g).unwrap();
        assert_eq!(f[0], 10.0);
        assert!((f[1] - 5.001).abs() < 1e-9);
        assert_eq!(f[2], f[1]);
    }

    #[test]
    fn trailing_prose_is_ignored() {
        let words = leading_words("###0.1001### ###0.2001###\nThat is all.", &BinGrid::default(), 5);
        assert_eq!(words.len(), 2);
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_reply("{\"id\":3,\"text\":\"x\"}\n", 3).unwrap(), "x");
        assert!(matches!(
            parse_reply("{\"id\":3,\"error\":\"oom\"}", 3),
            Err(BackendError::Remote(_))
        ));
        assert!(matches!(parse_reply("{\"id\":2,\"text\":\"x\"}", 3), Err(BackendError::Malformed(_))));
        assert!(matches!(parse_reply("not json", 0), Err(BackendError::Malformed(_))));
        assert!(matches!(parse_reply("{\"id\":0}", 0), Err(BackendError::Malformed(_))));
    }

    proptest! {
        #[test]
        fn native_backends_emit_vocabulary_words(
            hist in prop::collection::vec(-1e3f64..1e3, 2..80),
            budget in 1usize..40,
            seed in any::<u64>(),
        ) {
            let g = BinGrid::default();
            let req = GenerationRequest::new(prompt_for(&hist), budget);
            for kind in [BackendKind::LastValue, BackendKind::SeasonalNaive, BackendKind::Ngram] {
                let out = native_backend(kind, g, seed).unwrap().generate(&req).unwrap();
                let parsed: Vec<&str> = out.split(' ').collect();
                prop_assert_eq!(parsed.len(), budget.div_ceil(2));
                for w in parsed {
                    prop_assert!(Word::parse(w, &g).is_ok(), "{}", w);
                }
            }
        }

        #[test]
        fn last_value_forecast_is_affine_invariant(
            hist in prop::collection::vec(-1e3f64..1e3, 2..40),
            a in 0.01f64..100.0,
            b in -1e3f64..1e3,
            horizon in 1usize..10,
        ) {
            let g = BinGrid::default();
            let backend = LastValueBackend::new(g);
            let w1 = SeriesWindow::new(hist.clone(), horizon).unwrap();
            let w2 = SeriesWindow::new(hist.iter().map(|x| a * x + b).collect(), horizon).unwrap();
            let (e1, _) = encode(&w1, &g).unwrap();
            let (e2, _) = encode(&w2, &g).unwrap();
            prop_assume!(e1 == e2);
            let f1 = forecast_detailed(&w1, &backend, None, &g).unwrap();
            let f2 = forecast_detailed(&w2, &backend, None, &g).unwrap();
            prop_assert_eq!(f1.words, f2.words);
        }
    }
}
