//! File formats read and written by the subcommands.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tslingua::codec::ScalingParams;

use crate::error::{CliError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const SCALING_PREFIX: &str = "# scaling ";

/// Provenance header text; files carry it as a `# ` comment line.
pub fn header_text(config_hash: &str) -> String {
    format!("tslingua {VERSION} config={config_hash}")
}

pub fn open_input(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::from(e).context(path.display()))
}

/// A file, or stdout for `-`.
pub fn open_output(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    let file = File::create(path).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(Box::new(BufWriter::new(file)))
}

pub fn source_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn valid_timestamp(s: &str) -> bool {
    DateTime::parse_from_rfc3339(s).is_ok()
        || NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f").is_ok()
        || NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f").is_ok()
        || NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M").is_ok()
        || NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").is_ok()
        || NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok()
}

/// Reads a `timestamp,value` file. An empty value is missing (NaN).
/// Lines starting with `#` are skipped.
pub fn read_series(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(open_input(path)?);
    let ctx = |e: CliError| e.context(path.display());
    let headers = reader.headers().map_err(|e| ctx(e.into()))?.clone();
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "value" {
        return Err(ctx(CliError::data(format!(
            "expected header `timestamp,value`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        ))));
    }
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ctx(e.into()))?;
        let line = i + 2;
        if !valid_timestamp(&record[0]) {
            return Err(ctx(CliError::data(format!(
                "line {line}: `{}` is not an ISO-8601 timestamp",
                &record[0]
            ))));
        }
        let raw = &record[1];
        let v = if raw.is_empty() {
            f64::NAN
        } else {
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    return Err(ctx(CliError::data(format!(
                        "line {line}: `{raw}` is not a finite number"
                    ))))
                }
            }
        };
        values.push(v);
    }
    if values.is_empty() {
        return Err(ctx(CliError::data("series has no rows")));
    }
    Ok(values)
}

/// Writes `step,value` rows, steps counted from 1. NaN becomes empty.
pub fn write_values(w: &mut dyn Write, header: &str, values: &[f64]) -> Result<()> {
    writeln!(w, "# {header}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "value"])?;
    for (i, v) in values.iter().enumerate() {
        let cell = if v.is_nan() { String::new() } else { v.to_string() };
        out.write_record([(i + 1).to_string(), cell])?;
    }
    out.flush()?;
    Ok(())
}

/// Words file: header, a `# scaling lo=<lo> hi=<hi>` line, then the words
/// on one line.
pub fn write_words(w: &mut dyn Write, header: &str, params: &ScalingParams, words: &str) -> Result<()> {
    writeln!(w, "# {header}")?;
    writeln!(w, "{SCALING_PREFIX}lo={} hi={}", params.lo(), params.hi())?;
    writeln!(w, "{words}")?;
    w.flush()?;
    Ok(())
}

pub struct WordsFile {
    pub scaling: Option<(f64, f64)>,
    pub words: String,
}

pub fn read_words(path: &Path) -> Result<WordsFile> {
    let ctx = |e: CliError| e.context(path.display());
    let mut scaling = None;
    let mut words = Vec::new();
    for line in open_input(path)?.lines() {
        let line = line.map_err(|e| ctx(e.into()))?;
        if let Some(rest) = line.strip_prefix(SCALING_PREFIX) {
            scaling = Some(parse_scaling(rest).map_err(|m| ctx(CliError::data(m)))?);
        } else if !line.starts_with("# ") && !line.trim().is_empty() {
            words.push(line);
        }
    }
    Ok(WordsFile {
        scaling,
        words: words.join(" "),
    })
}

fn parse_scaling(rest: &str) -> std::result::Result<(f64, f64), String> {
    let (mut lo, mut hi) = (None, None);
    for part in rest.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("bad scaling field `{part}`"))?;
        let v: f64 = value.parse().map_err(|_| format!("bad scaling value `{value}`"))?;
        match key {
            "lo" => lo = Some(v),
            "hi" => hi = Some(v),
            _ => return Err(format!("unknown scaling field `{key}`")),
        }
    }
    lo.zip(hi).ok_or_else(|| "scaling line needs lo and hi".to_string())
}

/// One JSON value per line after a header line.
pub fn write_jsonl<T: Serialize>(w: &mut dyn Write, header: &str, items: &[T]) -> Result<()> {
    writeln!(w, "# {header}")?;
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads JSON lines, skipping `#` comment lines and blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in open_input(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::from(e).context(path.display()))?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| CliError::from(e).context(format!("{}:{}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open_input(path)?).map_err(|e| CliError::from(e).context(path.display()))
}

pub fn finish(mut w: Box<dyn Write>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CliError::from(e).context(path.display()))
}
