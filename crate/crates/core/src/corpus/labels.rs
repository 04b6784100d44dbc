use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Sentiment polarity. Ordinal codes are fixed and used for tie-breaking and
/// joint class encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Positive = 0,
    Neutral = 1,
    Negative = 2,
}

/// Bloom's taxonomy level ("epistemic" class).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BloomLabel {
    Remembering = 0,
    Understanding = 1,
    Applying = 2,
    Analyzing = 3,
    Evaluating = 4,
    Creating = 5,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [
        SentimentLabel::Positive,
        SentimentLabel::Neutral,
        SentimentLabel::Negative,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SentimentLabel::Positive => "positive",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::Negative => "negative",
        }
    }
}

impl BloomLabel {
    pub const ALL: [BloomLabel; 6] = [
        BloomLabel::Remembering,
        BloomLabel::Understanding,
        BloomLabel::Applying,
        BloomLabel::Analyzing,
        BloomLabel::Evaluating,
        BloomLabel::Creating,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BloomLabel::Remembering => "remembering",
            BloomLabel::Understanding => "understanding",
            BloomLabel::Applying => "applying",
            BloomLabel::Analyzing => "analyzing",
            BloomLabel::Evaluating => "evaluating",
            BloomLabel::Creating => "creating",
        }
    }
}

macro_rules! label_text {
    ($ty:ty, $what:literal) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|l| l.name() == s)
                    .ok_or_else(|| format!(concat!("unknown ", $what, " label `{}`"), s))
            }
        }
    };
}

label_text!(SentimentLabel, "sentiment");
label_text!(BloomLabel, "bloom");
