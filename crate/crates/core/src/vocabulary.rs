//! The foreign-word vocabulary: every bin center of a grid plus the Nan word,
//! with a stable word/index bijection and a line-per-word file format.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::codec::{BinGrid, Word};

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("word `{0}` is not in the vocabulary")]
    UnknownWord(String),
    #[error("index {index} out of range for vocabulary of {len} words")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("corrupt vocabulary: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, VocabError>;

/// Bin-center words in ascending order followed by `###Nan###`.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    grid: BinGrid,
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.entries == other.entries
    }
}

impl Vocabulary {
    pub fn build(grid: &BinGrid) -> Self {
        let entries: Vec<String> = grid
            .words()
            .map(|w| w.to_string())
            .chain(std::iter::once(Word::Nan.to_string()))
            .collect();
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self {
            grid: *grid,
            entries,
            index,
        }
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn word_to_index(&self, word: &str) -> Result<usize> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| VocabError::UnknownWord(word.to_string()))
    }

    pub fn index_to_word(&self, index: usize) -> Result<&str> {
        self.entries
            .get(index)
            .map(String::as_str)
            .ok_or(VocabError::IndexOutOfRange {
                index,
                len: self.entries.len(),
            })
    }

    /// Index of a codec word, if it belongs to this vocabulary's grid.
    pub fn index_of(&self, word: Word) -> Option<usize> {
        match word {
            Word::Bin(b) => self.grid.index_of(b),
            Word::Nan => Some(self.grid.count()),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// One word per line, `\n` terminated, line number = index.
    pub fn to_file_string(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 14);
        for e in &self.entries {
            out.push_str(e);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    /// Parses vocabulary file contents, validating them against `grid`.
    pub fn from_file_str(contents: &str, grid: &BinGrid) -> Result<Self> {
        let body = contents.strip_suffix('\n').unwrap_or(contents);
        let lines: Vec<&str> = if body.is_empty() {
            Vec::new()
        } else {
            body.split('\n').collect()
        };
        let expected = Self::build(grid);
        if lines.len() != expected.len() {
            return Err(VocabError::Corrupt(format!(
                "expected {} words, found {}",
                expected.len(),
                lines.len()
            )));
        }
        let mut seen = HashMap::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            let word = Word::parse(line, grid).map_err(|_| {
                VocabError::Corrupt(format!("line {}: `{line}` is not a word of this grid", i + 1))
            })?;
            if let Some(first) = seen.insert(*line, i) {
                return Err(VocabError::Corrupt(format!(
                    "line {}: `{line}` duplicates line {}",
                    i + 1,
                    first + 1
                )));
            }
            if expected.index_of(word) != Some(i) {
                return Err(VocabError::Corrupt(format!(
                    "line {}: `{line}` is out of order",
                    i + 1
                )));
            }
        }
        Ok(expected)
    }

    pub fn load(path: impl AsRef<Path>, grid: &BinGrid) -> Result<Self> {
        let contents = fs::read_to_string(path)?;
        Self::from_file_str(&contents, grid)
    }
}
