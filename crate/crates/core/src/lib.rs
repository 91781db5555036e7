//! Time series as a foreign language: a discrete value codec, its
//! vocabulary, prompt templates, corpus construction, synthetic series QA,
//! forecasting backends and evaluation.

pub mod codec;
pub mod corpus;
pub mod evalkit;
pub mod inference;
pub mod prompt;
pub mod qa;
pub mod stats;
pub mod vocabulary;

pub use codec::{BinGrid, ScalingParams, SeriesWindow, Word, WordSeq};
pub use corpus::{CorpusRecord, Task};
pub use vocabulary::Vocabulary;
