use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{BloomLabel, ForumType, LabeledChat, Record, SentimentLabel};

/// Corpus counts in the shape of a dataset-statistics table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Distinct `subject_id`s, when every chat carries one.
    pub n_videos: Option<usize>,
    pub n_main: usize,
    pub n_reply: usize,
    pub n_chats: usize,
    /// Whitespace tokens of the raw text.
    pub n_words: usize,
    pub sentiment_counts: BTreeMap<SentimentLabel, usize>,
    pub bloom_counts: BTreeMap<BloomLabel, usize>,
}

impl DatasetStats {
    /// Counts over all records; label counts over the labeled ones only.
    pub fn from_records(records: &[Record]) -> Self {
        let mut stats = DatasetStats::empty();
        let mut subjects = BTreeSet::new();
        let mut all_have_subject = !records.is_empty();
        for r in records {
            stats.count_chat(r.chat.forum_type, &r.chat.text);
            match &r.chat.subject_id {
                Some(s) => {
                    subjects.insert(s.as_str());
                }
                None => all_have_subject = false,
            }
            if let Some(g) = r.gold {
                *stats.sentiment_counts.get_mut(&g.sentiment).unwrap() += 1;
                *stats.bloom_counts.get_mut(&g.bloom).unwrap() += 1;
            }
        }
        stats.n_videos = all_have_subject.then_some(subjects.len());
        stats
    }

    fn empty() -> Self {
        DatasetStats {
            n_videos: None,
            n_main: 0,
            n_reply: 0,
            n_chats: 0,
            n_words: 0,
            sentiment_counts: SentimentLabel::ALL.iter().map(|&l| (l, 0)).collect(),
            bloom_counts: BloomLabel::ALL.iter().map(|&l| (l, 0)).collect(),
        }
    }

    fn count_chat(&mut self, kind: ForumType, text: &str) {
        match kind {
            ForumType::Main => self.n_main += 1,
            ForumType::Reply => self.n_reply += 1,
        }
        self.n_chats += 1;
        self.n_words += text.split_whitespace().count();
    }

    pub fn n_labeled(&self) -> usize {
        self.sentiment_counts.values().sum()
    }

    /// Sentiment percentages in label-code order, rounded to 2 decimals.
    pub fn sentiment_percentages(&self) -> Vec<f64> {
        percentages(&self.sentiment_counts.values().copied().collect::<Vec<_>>())
    }

    /// Bloom percentages in label-code order, rounded to 2 decimals.
    pub fn bloom_percentages(&self) -> Vec<f64> {
        percentages(&self.bloom_counts.values().copied().collect::<Vec<_>>())
    }
}

pub fn dataset_stats(chats: &[LabeledChat]) -> DatasetStats {
    let records: Vec<Record> = chats.iter().cloned().map(Record::from).collect();
    DatasetStats::from_records(&records)
}

/// Shares of `counts` in percent, rounded to 2 decimals. All zeros for an
/// empty total.
pub fn percentages(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&c| {
            if total == 0 {
                0.0
            } else {
                (c as f64 * 10_000.0 / total as f64).round() / 100.0
            }
        })
        .collect()
}
