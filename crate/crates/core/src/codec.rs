//! Reversible translation between real-valued series windows and foreign words.
//!
//! A window is min-max scaled on its history into `[-0.5, 0.5]`, leaving the
//! rest of `[-1, 1]` as headroom for values that leave the history range.
//! Scaled values are then binned on a uniform grid and each bin is named by
//! its center, rendered with four fractional digits between `###` marks.
//! Missing observations (NaN) become the `###Nan###` word.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of bins on the default grid.
pub const DEFAULT_BIN_COUNT: usize = 10_000;
/// Lower bound of the default grid.
pub const DEFAULT_LOWER: f64 = -1.0;
/// Upper bound of the default grid.
pub const DEFAULT_UPPER: f64 = 1.0;
/// Fractional digits carried by every numeric word.
pub const WORD_DECIMALS: usize = 4;
/// Delimiter placed on both sides of a word payload.
pub const MARK: &str = "###";
/// Payload of the missing-value word.
pub const NAN_PAYLOAD: &str = "Nan";

const TICKS_PER_UNIT: i64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("history contains no finite value")]
    AllMissing,
    #[error("non-finite value {0} cannot be quantized")]
    NonFinite(f64),
    #[error("malformed word `{0}`")]
    MalformedWord(String),
    #[error("invalid bin grid: {0}")]
    InvalidGrid(String),
    #[error("invalid scaling parameters lo={lo} hi={hi}")]
    InvalidScaling { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, CodecError>;

/// A history segment plus the number of steps to forecast after it.
///
/// Missing observations are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesWindow {
    history: Vec<f64>,
    horizon: usize,
}

impl SeriesWindow {
    pub fn new(history: Vec<f64>, horizon: usize) -> Result<Self> {
        if history.is_empty() {
            return Err(CodecError::EmptyHistory);
        }
        Ok(Self { history, horizon })
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Min and max of the non-missing history values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    lo: f64,
    hi: f64,
}

impl ScalingParams {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || hi < lo {
            return Err(CodecError::InvalidScaling { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Parameters under which a value in `[-0.5, 0.5]` scales to itself.
    pub fn identity() -> Self {
        Self { lo: -0.5, hi: 0.5 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn range(&self) -> f64 {
        self.hi - self.lo
    }

    /// True when every history value was equal.
    pub fn is_degenerate(&self) -> bool {
        self.hi == self.lo
    }

    /// Maps one raw value into scaled space. NaN stays NaN; a degenerate
    /// history sends every other value to 0.0.
    pub fn scale_value(&self, v: f64) -> f64 {
        if v.is_nan() {
            return f64::NAN;
        }
        if self.is_degenerate() {
            return 0.0;
        }
        (v - self.lo) / (self.hi - self.lo) - 0.5
    }

    /// Inverse of [`scale_value`](Self::scale_value) for a word center given
    /// in ten-thousandths.
    fn unscale_ticks(&self, ticks: i32) -> f64 {
        if self.is_degenerate() {
            return self.lo;
        }
        // center + 0.5 has an exact integer numerator in ticks
        let shifted = (i64::from(ticks) + TICKS_PER_UNIT / 2) as f64 / TICKS_PER_UNIT as f64;
        shifted * (self.hi - self.lo) + self.lo
    }
}

/// Uniform partition of `[lower, upper]` into `count` bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    count: usize,
    lower: f64,
    upper: f64,
}

impl Default for BinGrid {
    fn default() -> Self {
        Self {
            count: DEFAULT_BIN_COUNT,
            lower: DEFAULT_LOWER,
            upper: DEFAULT_UPPER,
        }
    }
}

impl BinGrid {
    /// Builds a grid, rejecting any whose centers are not distinct values
    /// with exactly four fractional digits.
    pub fn new(count: usize, lower: f64, upper: f64) -> Result<Self> {
        if count == 0 {
            return Err(CodecError::InvalidGrid("bin count must be positive".into()));
        }
        if !lower.is_finite() || !upper.is_finite() || lower >= upper {
            return Err(CodecError::InvalidGrid(format!(
                "bounds [{lower}, {upper}] are not an increasing finite interval"
            )));
        }
        let grid = Self {
            count,
            lower,
            upper,
        };
        let mut prev: Option<i64> = None;
        for i in 0..count {
            let scaled = grid.center(i) * TICKS_PER_UNIT as f64;
            let ticks = scaled.round();
            if (scaled - ticks).abs() > 1e-6 {
                return Err(CodecError::InvalidGrid(format!(
                    "center {} of bin {i} is not representable with {WORD_DECIMALS} decimals",
                    grid.center(i)
                )));
            }
            if ticks.abs() > i32::MAX as f64 {
                return Err(CodecError::InvalidGrid("centers exceed word range".into()));
            }
            let ticks = ticks as i64;
            if prev.is_some_and(|p| p >= ticks) {
                return Err(CodecError::InvalidGrid(format!(
                    "bins {} and {i} share a {WORD_DECIMALS}-decimal center",
                    i - 1
                )));
            }
            prev = Some(ticks);
        }
        Ok(grid)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        (self.upper - self.lower) / self.count as f64
    }

    /// Center of bin `i`.
    pub fn center(&self, i: usize) -> f64 {
        self.lower + (2 * i + 1) as f64 * (self.upper - self.lower) / (2 * self.count) as f64
    }

    /// Word naming bin `i`. Panics if `i` is out of range.
    pub fn word(&self, i: usize) -> BinWord {
        assert!(i < self.count, "bin index {i} out of range");
        BinWord {
            ticks: (self.center(i) * TICKS_PER_UNIT as f64).round() as i32,
        }
    }

    /// Bin containing a finite scaled value. Edges belong to the upper bin;
    /// values outside the grid clamp to the extreme bins.
    pub fn bin_index(&self, scaled: f64) -> Result<usize> {
        if !scaled.is_finite() {
            return Err(CodecError::NonFinite(scaled));
        }
        let pos = (scaled - self.lower) / (self.upper - self.lower) * self.count as f64;
        let idx = pos.floor();
        if idx < 0.0 {
            Ok(0)
        } else if idx >= self.count as f64 {
            Ok(self.count - 1)
        } else {
            Ok(idx as usize)
        }
    }

    /// Bin whose center is `word`, if any.
    pub fn index_of(&self, word: BinWord) -> Option<usize> {
        let value = word.value();
        let pos = (value - self.lower) / (self.upper - self.lower) * self.count as f64 - 0.5;
        let i = pos.round();
        if i < 0.0 || i >= self.count as f64 {
            return None;
        }
        let i = i as usize;
        (self.word(i) == word).then_some(i)
    }

    pub fn words(&self) -> impl Iterator<Item = BinWord> + '_ {
        (0..self.count).map(|i| self.word(i))
    }
}

/// A numeric foreign word, stored as its center in ten-thousandths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinWord {
    ticks: i32,
}

impl BinWord {
    pub fn ticks(self) -> i32 {
        self.ticks
    }

    pub fn value(self) -> f64 {
        f64::from(self.ticks) / TICKS_PER_UNIT as f64
    }

    fn fmt_payload(self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.ticks < 0 { "-" } else { "" };
        let abs = i64::from(self.ticks).abs();
        write!(
            f,
            "{sign}{}.{:0width$}",
            abs / TICKS_PER_UNIT,
            abs % TICKS_PER_UNIT,
            width = WORD_DECIMALS
        )
    }

    /// Parses a payload of the form `-?D+.DDDD` without going through floats.
    fn parse_payload(payload: &str) -> Option<Self> {
        let (neg, body) = match payload.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, payload),
        };
        let (int_part, frac_part) = body.split_once('.')?;
        if int_part.is_empty()
            || frac_part.len() != WORD_DECIMALS
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return None;
        }
        let int: i64 = int_part.parse().ok()?;
        let frac: i64 = frac_part.parse().ok()?;
        let magnitude = int.checked_mul(TICKS_PER_UNIT)?.checked_add(frac)?;
        let ticks = if neg { -magnitude } else { magnitude };
        if neg && magnitude == 0 {
            return None;
        }
        i32::try_from(ticks).ok().map(|ticks| BinWord { ticks })
    }
}

impl fmt::Display for BinWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(MARK)?;
        self.fmt_payload(f)?;
        f.write_str(MARK)
    }
}

/// One element of a foreign-word sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Word {
    Bin(BinWord),
    Nan,
}

impl Word {
    pub fn as_bin(self) -> Option<BinWord> {
        match self {
            Word::Bin(w) => Some(w),
            Word::Nan => None,
        }
    }

    /// Parses a single word and checks it against `grid`.
    pub fn parse(token: &str, grid: &BinGrid) -> Result<Self> {
        let payload = token
            .strip_prefix(MARK)
            .and_then(|t| t.strip_suffix(MARK))
            .filter(|_| token.len() >= 2 * MARK.len())
            .ok_or_else(|| CodecError::MalformedWord(token.to_string()))?;
        if payload == NAN_PAYLOAD {
            return Ok(Word::Nan);
        }
        BinWord::parse_payload(payload)
            .filter(|w| grid.index_of(*w).is_some())
            .map(Word::Bin)
            .ok_or_else(|| CodecError::MalformedWord(token.to_string()))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Word::Bin(w) => w.fmt(f),
            Word::Nan => write!(f, "{MARK}{NAN_PAYLOAD}{MARK}"),
        }
    }
}

/// Ordered foreign words; renders as the words joined by single spaces.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct WordSeq(Vec<Word>);

impl WordSeq {
    pub fn new(words: Vec<Word>) -> Self {
        Self(words)
    }

    pub fn as_slice(&self) -> &[Word] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Word> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<Word> {
        self.0
    }

    pub fn truncate(&mut self, len: usize) {
        self.0.truncate(len);
    }

    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl From<Vec<Word>> for WordSeq {
    fn from(words: Vec<Word>) -> Self {
        Self(words)
    }
}

impl FromIterator<Word> for WordSeq {
    fn from_iter<I: IntoIterator<Item = Word>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a WordSeq {
    type Item = &'a Word;
    type IntoIter = std::slice::Iter<'a, Word>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for WordSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, w) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            w.fmt(f)?;
        }
        Ok(())
    }
}

/// Result of [`parse_words`]: the words read and the byte length of the
/// prefix they occupied (separators between words included).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedWords {
    pub words: WordSeq,
    pub consumed: usize,
}

pub fn compute_scaling(history: &[f64]) -> Result<ScalingParams> {
    let mut finite = history.iter().copied().filter(|v| v.is_finite());
    let first = finite.next().ok_or(CodecError::AllMissing)?;
    let (lo, hi) = finite.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Ok(ScalingParams { lo, hi })
}

pub fn scale(values: &[f64], params: &ScalingParams) -> Vec<f64> {
    values.iter().map(|&v| params.scale_value(v)).collect()
}

pub fn quantize(scaled: f64, grid: &BinGrid) -> Result<BinWord> {
    grid.bin_index(scaled).map(|i| grid.word(i))
}

/// Encodes raw values under existing parameters. NaN becomes the Nan word.
pub fn encode_with(values: &[f64], params: &ScalingParams, grid: &BinGrid) -> Result<WordSeq> {
    values
        .iter()
        .map(|&v| {
            if v.is_nan() {
                Ok(Word::Nan)
            } else {
                quantize(params.scale_value(v), grid).map(Word::Bin)
            }
        })
        .collect()
}

/// Scales the window on its history and encodes every history value.
pub fn encode(window: &SeriesWindow, grid: &BinGrid) -> Result<(WordSeq, ScalingParams)> {
    let params = compute_scaling(window.history())?;
    let words = encode_with(window.history(), &params, grid)?;
    Ok((words, params))
}

/// Maps words back to raw units; the Nan word decodes to NaN.
pub fn decode(words: &WordSeq, params: &ScalingParams) -> Vec<f64> {
    words
        .iter()
        .map(|w| match w {
            Word::Bin(b) => params.unscale_ticks(b.ticks),
            Word::Nan => f64::NAN,
        })
        .collect()
}

/// Reads space-separated words from the start of `text`.
///
/// Reading stops at the first token that is not `###...###` shaped, so
/// trailing prose from a generator is tolerated. A token that is shaped like
/// a word but carries a bad payload is an error.
pub fn parse_words(text: &str, grid: &BinGrid) -> Result<ParsedWords> {
    let mut words = Vec::new();
    let mut consumed = 0;
    let mut pos = 0;
    loop {
        let rest = &text[pos..];
        let token_len = match word_token_len(rest) {
            Some(n) => n,
            None => break,
        };
        words.push(Word::parse(&rest[..token_len], grid)?);
        consumed = pos + token_len;
        let after = &text[consumed..];
        if after.starts_with(' ') {
            pos = consumed + 1;
        } else {
            break;
        }
    }
    Ok(ParsedWords {
        words: WordSeq(words),
        consumed,
    })
}

/// Length of a `###payload###` token at the start of `s`, provided the token
/// is followed by a space, other whitespace, or the end of input.
fn word_token_len(s: &str) -> Option<usize> {
    let body = s.strip_prefix(MARK)?;
    let close = body.find(MARK)?;
    let payload = &body[..close];
    if payload.chars().any(|c| c.is_whitespace() || c == '#') {
        return None;
    }
    let len = 2 * MARK.len() + close;
    match s[len..].chars().next() {
        None => Some(len),
        Some(c) if c.is_whitespace() => Some(len),
        Some(_) => None,
    }
}

impl FromStr for WordSeq {
    type Err = CodecError;

    /// Strict parse on the default grid: the whole string must be words.
    fn from_str(s: &str) -> Result<Self> {
        let grid = BinGrid::default();
        let parsed = parse_words(s, &grid)?;
        if parsed.consumed != s.len() {
            let rest = s[parsed.consumed..].trim_start();
            let token = rest.split(' ').next().unwrap_or(rest);
            return Err(CodecError::MalformedWord(token.to_string()));
        }
        Ok(parsed.words)
    }
}

/// Tokenization schemes compared by [`count_tokens`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenStyle {
    /// One token per foreign word plus one per separating space.
    Words,
    /// Digits separated by spaces, each digit and each separator a token,
    /// values joined by `" , "` (two tokens).
    GptBitwise,
    /// Each digit a token, values joined by `", "` (two tokens).
    LlamaBitwise,
}

impl FromStr for TokenStyle {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "words" => Ok(TokenStyle::Words),
            "gpt_bitwise" => Ok(TokenStyle::GptBitwise),
            "llama_bitwise" => Ok(TokenStyle::LlamaBitwise),
            other => Err(format!("unknown token style `{other}`")),
        }
    }
}

/// Digit string used by the bitwise schemes: the value in ten-thousandths
/// with the decimal point and leading zeros dropped, `-` kept for negatives.
fn bitwise_digits(v: f64) -> String {
    let ticks = (v * TICKS_PER_UNIT as f64).round() as i64;
    let sign = if ticks < 0 { "-" } else { "" };
    format!("{sign}{}", ticks.unsigned_abs())
}

pub fn count_tokens(style: TokenStyle, values: &[f64]) -> usize {
    if values.is_empty() {
        return 0;
    }
    let joins = values.len() - 1;
    match style {
        TokenStyle::Words => values.len() + joins,
        TokenStyle::GptBitwise => {
            values
                .iter()
                .map(|&v| 2 * bitwise_digits(v).chars().count() - 1)
                .sum::<usize>()
                + 2 * joins
        }
        TokenStyle::LlamaBitwise => {
            values
                .iter()
                .map(|&v| bitwise_digits(v).chars().count())
                .sum::<usize>()
                + 2 * joins
        }
    }
}
