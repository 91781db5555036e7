//! Four-part prompts (system prompt, introduction, input, response) for the
//! forecasting, context-guided forecasting and series QA tasks.
//!
//! The response section is filled for training records and left empty at
//! inference, so an inference rendering is always a strict prefix of the
//! matching training rendering.

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::WordSeq;
use crate::corpus::{CorpusRecord, Task};
use crate::qa::Feature;

/// Version of the bundled template assets.
pub const TEMPLATE_VERSION: u32 = 1;

const SYSTEM: &str = include_str!("../templates/system.txt");
const FORECAST_INTRO: &str = include_str!("../templates/forecast_intro.txt");
const CONTEXT_INTRO: &str = include_str!("../templates/context_intro.txt");
const QA_INTRO: &str = include_str!("../templates/qa_intro.txt");
const KNOWLEDGE_TREND: &str = include_str!("../templates/knowledge_trend.txt");
const KNOWLEDGE_VOLATILITY: &str = include_str!("../templates/knowledge_volatility.txt");
const KNOWLEDGE_SEASON: &str = include_str!("../templates/knowledge_season.txt");
const KNOWLEDGE_OUTLIER: &str = include_str!("../templates/knowledge_outlier.txt");

pub const INSTRUCTION_HEADER: &str = "### Instruction:\n";
pub const INPUT_HEADER: &str = "### Input:\n";
pub const RESPONSE_HEADER: &str = "### Response:\n";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("`{answer}` is not a {feature} category")]
    InvalidCategory { feature: Feature, answer: String },
    #[error("bundle has no response")]
    MissingResponse,
    #[error("invalid context: {0}")]
    InvalidContext(String),
    #[error("template error: {0}")]
    Template(String),
}

pub type Result<T> = std::result::Result<T, PromptError>;

/// Substitutes `{name}` placeholders. Every placeholder in `template` must be
/// bound and every binding must be used.
pub fn render_template(template: &str, bindings: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut used = vec![false; bindings.len()];
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| PromptError::Template("unclosed `{`".into()))?;
        let name = &after[..close];
        let (i, (_, value)) = bindings
            .iter()
            .enumerate()
            .find(|(_, (k, _))| *k == name)
            .ok_or_else(|| PromptError::Template(format!("unbound placeholder `{name}`")))?;
        used[i] = true;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    if rest.contains('}') {
        return Err(PromptError::Template("stray `}`".into()));
    }
    out.push_str(rest);
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(PromptError::Template(format!(
            "binding `{}` not used",
            bindings[i].0
        )));
    }
    Ok(out)
}

fn fill(template: &str, bindings: &[(&str, &str)]) -> String {
    render_template(template, bindings).expect("bundled template placeholders are bound")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task: Task,
    pub system: String,
    pub introduction: String,
    pub input: String,
    pub response: Option<String>,
}

impl PromptBundle {
    /// Full prompt text. Without a response the text ends right after the
    /// response header, ready for generation.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(
            self.system.len() + self.introduction.len() + self.input.len() + 64,
        );
        out.push_str(&self.system);
        out.push_str("\n\n");
        out.push_str(INSTRUCTION_HEADER);
        out.push_str(&self.introduction);
        out.push_str("\n\n");
        out.push_str(INPUT_HEADER);
        out.push_str(&self.input);
        out.push_str("\n\n");
        out.push_str(RESPONSE_HEADER);
        if let Some(r) = &self.response {
            out.push_str(r);
        }
        out
    }

    /// Same bundle with the response concealed.
    pub fn for_inference(&self) -> Self {
        Self {
            response: None,
            ..self.clone()
        }
    }
}

/// Text of the input section of a rendered prompt.
pub fn input_section(prompt: &str) -> Option<&str> {
    let start = prompt.find(&format!("\n\n{INPUT_HEADER}"))? + 2 + INPUT_HEADER.len();
    let len = prompt[start..].find(&format!("\n\n{RESPONSE_HEADER}"))?;
    Some(&prompt[start..start + len])
}

/// Forecastable side information for one calendar day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayContext {
    pub date: NaiveDate,
    #[serde(default)]
    pub weather: String,
    #[serde(default)]
    pub holiday: bool,
}

/// Textual context for context-guided forecasting: a dataset background and
/// per-day date and weather-forecast notes in chronological order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawContext", into = "RawContext")]
pub struct ContextBlock {
    background: String,
    days: Vec<DayContext>,
}

#[derive(Serialize, Deserialize)]
struct RawContext {
    #[serde(default)]
    background: String,
    #[serde(default)]
    days: Vec<DayContext>,
}

impl TryFrom<RawContext> for ContextBlock {
    type Error = PromptError;

    fn try_from(raw: RawContext) -> Result<Self> {
        ContextBlock::new(raw.background, raw.days)
    }
}

impl From<ContextBlock> for RawContext {
    fn from(c: ContextBlock) -> Self {
        RawContext {
            background: c.background,
            days: c.days,
        }
    }
}

impl ContextBlock {
    /// Sorts days chronologically; two entries for one date are an error.
    pub fn new(background: impl Into<String>, mut days: Vec<DayContext>) -> Result<Self> {
        days.sort_by_key(|d| d.date);
        if let Some(w) = days.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(PromptError::InvalidContext(format!(
                "date {} listed twice",
                w[0].date
            )));
        }
        let background = background.into();
        for text in std::iter::once(&background).chain(days.iter().map(|d| &d.weather)) {
            if text.contains('\n') {
                return Err(PromptError::InvalidContext(
                    "context text must be a single line".into(),
                ));
            }
        }
        Ok(Self { background, days })
    }

    pub fn background(&self) -> &str {
        &self.background
    }

    pub fn days(&self) -> &[DayContext] {
        &self.days
    }

    /// Rejects any day after `last_allowed`, the last date whose metadata is
    /// known when the forecast is issued.
    pub fn check_no_leakage(&self, last_allowed: NaiveDate) -> Result<()> {
        match self.days.last() {
            Some(d) if d.date > last_allowed => Err(PromptError::InvalidContext(format!(
                "context for {} is later than {last_allowed}",
                d.date
            ))),
            _ => Ok(()),
        }
    }

    /// Context text: a background line, then one line per day.
    pub fn render(&self) -> String {
        let mut lines = Vec::with_capacity(self.days.len() + 1);
        if !self.background.trim().is_empty() {
            lines.push(format!("Background: {}", self.background.trim()));
        }
        for day in &self.days {
            let mut line = format!("{} is a {}", day.date, weekday_name(day.date.weekday()));
            if day.holiday {
                line.push_str(" and a public holiday");
            }
            line.push('.');
            if !day.weather.trim().is_empty() {
                line.push_str(" Weather forecast: ");
                line.push_str(day.weather.trim());
            }
            lines.push(line);
        }
        lines.join("\n")
    }
}

fn weekday_name(d: Weekday) -> &'static str {
    match d {
        Weekday::Mon => "Monday",
        Weekday::Tue => "Tuesday",
        Weekday::Wed => "Wednesday",
        Weekday::Thu => "Thursday",
        Weekday::Fri => "Friday",
        Weekday::Sat => "Saturday",
        Weekday::Sun => "Sunday",
    }
}

pub fn render_forecast_prompt(history: &WordSeq, future: Option<&WordSeq>) -> PromptBundle {
    PromptBundle {
        task: Task::Forecast,
        system: SYSTEM.to_string(),
        introduction: FORECAST_INTRO.to_string(),
        input: history.render(),
        response: future.map(WordSeq::render),
    }
}

pub fn render_context_prompt(
    ctx: &ContextBlock,
    history: &WordSeq,
    future: Option<&WordSeq>,
) -> PromptBundle {
    let context = ctx.render();
    PromptBundle {
        task: Task::ContextForecast,
        system: SYSTEM.to_string(),
        introduction: fill(CONTEXT_INTRO, &[("context", &context)]),
        input: history.render(),
        response: future.map(WordSeq::render),
    }
}

/// A series question about one feature, with the gold category at training
/// time.
#[derive(Debug, Clone, PartialEq)]
pub struct QaPrompt {
    pub feature: Feature,
    pub series: WordSeq,
    pub answer: Option<String>,
}

pub fn background_knowledge(feature: Feature) -> &'static str {
    match feature {
        Feature::Trend => KNOWLEDGE_TREND,
        Feature::Volatility => KNOWLEDGE_VOLATILITY,
        Feature::Season => KNOWLEDGE_SEASON,
        Feature::Outlier => KNOWLEDGE_OUTLIER,
    }
}

pub fn render_qa_prompt(q: &QaPrompt) -> Result<PromptBundle> {
    if let Some(answer) = &q.answer {
        if !q.feature.categories().contains(&answer.as_str()) {
            return Err(PromptError::InvalidCategory {
                feature: q.feature,
                answer: answer.clone(),
            });
        }
    }
    let categories = q.feature.categories().join(", ");
    let introduction = fill(
        QA_INTRO,
        &[
            ("feature", q.feature.noun()),
            ("categories", &categories),
            ("knowledge", background_knowledge(q.feature)),
        ],
    );
    Ok(PromptBundle {
        task: Task::TsQa,
        system: SYSTEM.to_string(),
        introduction,
        input: q.series.render(),
        response: q.answer.clone(),
    })
}

pub fn to_corpus_record(bundle: &PromptBundle) -> Result<CorpusRecord> {
    let output = bundle
        .response
        .as_ref()
        .filter(|r| !r.is_empty())
        .ok_or(PromptError::MissingResponse)?;
    Ok(CorpusRecord {
        instruction: format!("{}\n\n{}", bundle.system, bundle.introduction),
        input: bundle.input.clone(),
        output: output.clone(),
        task: bundle.task,
    })
}
