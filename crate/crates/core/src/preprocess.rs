//! Text normalization, whitespace tokenization and stopword/length filtering.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Built-in stopwords: common Indonesian and English function words.
pub const DEFAULT_STOPWORDS: &str = include_str!("stopwords.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub lowercase: bool,
    pub strip_urls: bool,
    pub strip_punct: bool,
    pub min_token_len: usize,
    /// Stopword file; `None` selects [`DEFAULT_STOPWORDS`].
    pub stopword_path: Option<PathBuf>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            lowercase: true,
            strip_urls: true,
            strip_punct: true,
            min_token_len: 2,
            stopword_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub chat_id: String,
    pub tokens: Vec<String>,
}

/// Lowercases, strips URLs and punctuation, and collapses whitespace,
/// according to `config`.
pub fn normalize(text: &str, config: &PreprocessConfig) -> String {
    let mut s = if config.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    if config.strip_urls {
        s = strip_urls(&s);
    }
    if config.strip_punct {
        s = s
            .chars()
            .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
            .collect();
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes every `scheme://non-space` run.
fn strip_urls(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_inclusive(char::is_whitespace) {
        let (body, trailing_ws) = match word.char_indices().last() {
            Some((idx, c)) if c.is_whitespace() => (&word[..idx], &word[idx..]),
            _ => (word, ""),
        };
        match url_start(body) {
            Some(start) => {
                out.push_str(&body[..start]);
                out.push(' ');
            }
            None => out.push_str(body),
        }
        out.push_str(trailing_ws);
    }
    out
}

/// Byte offset where a `scheme://` URL begins inside a whitespace-free word.
fn url_start(word: &str) -> Option<usize> {
    let sep = word.find("://")?;
    let run_start = word[..sep]
        .char_indices()
        .rev()
        .take_while(|(_, c)| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
        .last()
        .map(|(i, _)| i)?;
    // A scheme starts with a letter.
    word[run_start..sep]
        .find(|c: char| c.is_ascii_alphabetic())
        .map(|off| run_start + off)
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Drops tokens shorter than `min_token_len` characters and stopwords.
pub fn filter_tokens(tokens: &[String], stopwords: &Stopwords, config: &PreprocessConfig) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| t.chars().count() >= config.min_token_len && !stopwords.contains(t))
        .cloned()
        .collect()
}

/// Stopword set, normalized with the same rules as the text it filters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stopwords(BTreeSet<String>);

impl Stopwords {
    pub fn empty() -> Self {
        Stopwords::default()
    }

    /// Parses the stopword file format: one entry per line, `#` comments.
    pub fn parse(text: &str, config: &PreprocessConfig) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .flat_map(|l| tokenize(&normalize(l, config)))
            .collect();
        Stopwords(words)
    }

    pub fn load(path: &Path, config: &PreprocessConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read stopword file {}: {e}", path.display()))
        })?;
        Ok(Self::parse(&text, config))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for Stopwords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Stopwords(iter.into_iter().map(Into::into).collect())
    }
}

/// The full normalize → tokenize → filter pipeline with its stopwords resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub config: PreprocessConfig,
    pub stopwords: Stopwords,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig) -> Result<Self> {
        if config.min_token_len == 0 {
            return Err(Error::Config("min_token_len must be at least 1".into()));
        }
        let stopwords = match &config.stopword_path {
            Some(path) => Stopwords::load(path, &config)?,
            None => Stopwords::parse(DEFAULT_STOPWORDS, &config),
        };
        Ok(Preprocessor { config, stopwords })
    }

    pub fn with_stopwords(config: PreprocessConfig, stopwords: Stopwords) -> Self {
        Preprocessor { config, stopwords }
    }

    pub fn tokens(&self, text: &str) -> Vec<String> {
        filter_tokens(&tokenize(&normalize(text, &self.config)), &self.stopwords, &self.config)
    }

    pub fn doc(&self, chat_id: &str, text: &str) -> TokenizedDoc {
        TokenizedDoc {
            chat_id: chat_id.to_string(),
            tokens: self.tokens(text),
        }
    }
}
