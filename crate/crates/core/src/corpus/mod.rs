//! Forum chats, gold labels and annotations.
//!
//! A dataset is a list of [`Record`]s: a [`Chat`] plus, when the file carries
//! them, its gold sentiment and Bloom labels.

mod agreement;
mod io;
mod labels;
mod stats;
pub mod youtube;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use agreement::{
    compute_fleiss_kappa, load_annotations, merge_gold_labels, Annotation, AnnotationSet,
    AgreementFacet, MergeOutcome, TiePolicy,
};
pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset, DataFormat};
pub use labels::{BloomLabel, SentimentLabel};
pub use stats::{dataset_stats, percentages, DatasetStats};
pub use youtube::{fetch_youtube_comments, FetchSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForumType {
    Main,
    Reply,
}

impl ForumType {
    pub fn as_str(self) -> &'static str {
        match self {
            ForumType::Main => "main",
            ForumType::Reply => "reply",
        }
    }
}

impl std::str::FromStr for ForumType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "main" => Ok(ForumType::Main),
            "reply" => Ok(ForumType::Reply),
            other => Err(format!("unknown forum_type `{other}` (expected main|reply)")),
        }
    }
}

/// One forum message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chat {
    pub id: String,
    pub forum_type: ForumType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl Chat {
    pub fn main(id: impl Into<String>, text: impl Into<String>) -> Self {
        Chat {
            id: id.into(),
            forum_type: ForumType::Main,
            parent_id: None,
            author_id: None,
            subject_id: None,
            text: text.into(),
            timestamp: None,
        }
    }

    pub fn reply(id: impl Into<String>, parent: impl Into<String>, text: impl Into<String>) -> Self {
        Chat {
            forum_type: ForumType::Reply,
            parent_id: Some(parent.into()),
            ..Chat::main(id, text)
        }
    }

    /// Checks the per-chat invariants; cross-chat checks live in [`validate_chats`].
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.id.is_empty() {
            return Err(("id", "id must be non-empty".into()));
        }
        match (self.forum_type, &self.parent_id) {
            (ForumType::Reply, None) => {
                return Err(("parent_id", "reply chat requires parent_id".into()))
            }
            (ForumType::Main, Some(_)) => {
                return Err(("parent_id", "main chat must not carry parent_id".into()))
            }
            _ => {}
        }
        if self.text.trim().is_empty() {
            return Err(("text", "text is empty after trimming".into()));
        }
        Ok(())
    }
}

/// Dataset-level checks: unique ids and replies pointing at main chats.
pub fn validate_chats<'a>(chats: impl IntoIterator<Item = &'a Chat>) -> Result<()> {
    let chats: Vec<&Chat> = chats.into_iter().collect();
    let mut kinds = std::collections::HashMap::with_capacity(chats.len());
    for chat in &chats {
        chat.validate()
            .map_err(|(field, msg)| Error::Data(format!("chat `{}`: {field}: {msg}", chat.id)))?;
        if kinds.insert(chat.id.as_str(), chat.forum_type).is_some() {
            return Err(Error::Data(format!("duplicate chat id `{}`", chat.id)));
        }
    }
    for chat in &chats {
        if let Some(parent) = &chat.parent_id {
            match kinds.get(parent.as_str()) {
                Some(ForumType::Main) => {}
                Some(ForumType::Reply) => {
                    return Err(Error::Data(format!(
                        "reply `{}` points at `{parent}`, which is itself a reply",
                        chat.id
                    )))
                }
                None => {
                    return Err(Error::Data(format!(
                        "reply `{}` points at unknown chat `{parent}`",
                        chat.id
                    )))
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoldLabels {
    pub sentiment: SentimentLabel,
    pub bloom: BloomLabel,
}

/// A chat with its (possibly absent) gold labels, as read from a dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub chat: Chat,
    pub gold: Option<GoldLabels>,
}

impl Record {
    pub fn labeled(&self) -> Option<LabeledChat> {
        self.gold.map(|g| LabeledChat {
            chat: self.chat.clone(),
            sentiment: g.sentiment,
            bloom: g.bloom,
        })
    }
}

impl From<LabeledChat> for Record {
    fn from(lc: LabeledChat) -> Self {
        Record {
            gold: Some(GoldLabels {
                sentiment: lc.sentiment,
                bloom: lc.bloom,
            }),
            chat: lc.chat,
        }
    }
}

impl From<Chat> for Record {
    fn from(chat: Chat) -> Self {
        Record { chat, gold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledChat {
    pub chat: Chat,
    pub sentiment: SentimentLabel,
    pub bloom: BloomLabel,
}

impl LabeledChat {
    pub fn new(chat: Chat, sentiment: SentimentLabel, bloom: BloomLabel) -> Self {
        LabeledChat {
            chat,
            sentiment,
            bloom,
        }
    }
}

/// The labeled subset of `records`, in order.
pub fn labeled_chats(records: &[Record]) -> Vec<LabeledChat> {
    records.iter().filter_map(Record::labeled).collect()
}
