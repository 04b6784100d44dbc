//! Annotations, inter-annotator agreement (Fleiss' kappa) and gold-label
//! construction by majority vote.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BloomLabel, Chat, DataFormat, LabeledChat, SentimentLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub chat_id: String,
    pub annotator_id: String,
    pub sentiment: SentimentLabel,
    pub bloom: BloomLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    annotations: Vec<Annotation>,
    annotator_ids: Vec<String>,
}

impl AnnotationSet {
    /// Builds a set, ordering annotators by first appearance.
    pub fn new(annotations: Vec<Annotation>) -> Result<Self> {
        let mut order = Vec::new();
        for a in &annotations {
            if !order.contains(&a.annotator_id) {
                order.push(a.annotator_id.clone());
            }
        }
        Self::with_annotators(annotations, order)
    }

    /// Builds a set with an explicit annotator order (used for tie resolution).
    pub fn with_annotators(annotations: Vec<Annotation>, annotator_ids: Vec<String>) -> Result<Self> {
        let known: HashSet<&str> = annotator_ids.iter().map(String::as_str).collect();
        if known.len() != annotator_ids.len() {
            return Err(Error::Data("annotator ids must be distinct".into()));
        }
        let mut seen = HashSet::new();
        for a in &annotations {
            if !known.contains(a.annotator_id.as_str()) {
                return Err(Error::Data(format!(
                    "annotation for `{}` by unknown annotator `{}`",
                    a.chat_id, a.annotator_id
                )));
            }
            if !seen.insert((a.chat_id.as_str(), a.annotator_id.as_str())) {
                return Err(Error::Data(format!(
                    "annotator `{}` rated chat `{}` twice",
                    a.annotator_id, a.chat_id
                )));
            }
        }
        Ok(AnnotationSet {
            annotations,
            annotator_ids,
        })
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn annotator_ids(&self) -> &[String] {
        &self.annotator_ids
    }

    /// Every annotated chat must exist in the companion dataset.
    pub fn validate_against(&self, chats: &[Chat]) -> Result<()> {
        let ids: HashSet<&str> = chats.iter().map(|c| c.id.as_str()).collect();
        let mut missing: Vec<&str> = self
            .annotations
            .iter()
            .map(|a| a.chat_id.as_str())
            .filter(|id| !ids.contains(id))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "annotations reference unknown chats: {}",
                missing.join(", ")
            )))
        }
    }

    fn by_chat(&self) -> BTreeMap<&str, Vec<&Annotation>> {
        let mut map: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
        for a in &self.annotations {
            map.entry(a.chat_id.as_str()).or_default().push(a);
        }
        map
    }
}

/// Reads annotations from JSONL or CSV with fields
/// `chat_id, annotator_id, sentiment, bloom`.
pub fn load_annotations(path: &Path, format: DataFormat) -> Result<AnnotationSet> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    let mut out = Vec::new();
    match format {
        DataFormat::Jsonl => {
            for (i, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let a: Annotation = serde_json::from_str(line)
                    .map_err(|e| Error::format(&source, i + 1, "<record>", e.to_string()))?;
                out.push(a);
            }
        }
        DataFormat::Csv => {
            let mut reader = csv::Reader::from_reader(content.as_bytes());
            for row in reader.deserialize::<Annotation>() {
                let a = row.map_err(|e| {
                    let line = e.position().map_or(0, |p| p.line() as usize);
                    Error::format(&source, line, "<record>", e.to_string())
                })?;
                out.push(a);
            }
        }
    }
    AnnotationSet::new(out)
}

/// Which label (or label pair) the agreement is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgreementFacet {
    Sentiment,
    Bloom,
    /// Each (sentiment, bloom) combination is one category.
    Pair,
}

impl AgreementFacet {
    fn category(self, a: &Annotation) -> usize {
        match self {
            AgreementFacet::Sentiment => a.sentiment.code(),
            AgreementFacet::Bloom => a.bloom.code(),
            AgreementFacet::Pair => a.sentiment.code() * BloomLabel::ALL.len() + a.bloom.code(),
        }
    }
}

/// Fleiss' kappa over all chats in `set`. Every chat must be rated by every
/// annotator.
pub fn compute_fleiss_kappa(set: &AnnotationSet, facet: AgreementFacet) -> Result<f64> {
    let raters = set.annotator_ids.len();
    if raters < 2 {
        return Err(Error::Data("agreement needs at least 2 annotators".into()));
    }
    let items = set.by_chat();
    if items.len() < 2 {
        return Err(Error::Data("agreement needs at least 2 rated chats".into()));
    }
    let incomplete: Vec<&str> = items
        .iter()
        .filter(|(_, anns)| anns.len() != raters)
        .map(|(id, _)| *id)
        .collect();
    if !incomplete.is_empty() {
        return Err(Error::Data(format!(
            "chats not rated by every annotator: {}",
            incomplete.join(", ")
        )));
    }

    let n = raters as f64;
    let n_items = items.len() as f64;
    let mut category_totals: HashMap<usize, f64> = HashMap::new();
    let mut p_sum = 0.0;
    for anns in items.values() {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for a in anns {
            *counts.entry(facet.category(a)).or_default() += 1.0;
        }
        let sq: f64 = counts.values().map(|c| c * c).sum();
        p_sum += (sq - n) / (n * (n - 1.0));
        for (cat, c) in counts {
            *category_totals.entry(cat).or_default() += c;
        }
    }
    let p_bar = p_sum / n_items;
    let mut totals: Vec<f64> = category_totals.into_values().collect();
    // Fixed summation order keeps the result independent of hash order.
    totals.sort_by(f64::total_cmp);
    let p_e: f64 = totals
        .iter()
        .map(|t| {
            let p = t / (n_items * n);
            p * p
        })
        .sum();
    if p_e >= 1.0 {
        // Single category used by everyone: agreement is perfect.
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Chats without a strict majority on either facet are left unresolved.
    Drop,
    /// Ties fall back to the earliest annotator (in set order) who rated the chat.
    FirstAnnotator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeOutcome {
    pub labeled: Vec<LabeledChat>,
    pub unresolved: Vec<String>,
}

/// Majority vote per facet over the annotations of each chat.
pub fn merge_gold_labels(
    chats: &[Chat],
    set: &AnnotationSet,
    tie_policy: TiePolicy,
) -> Result<MergeOutcome> {
    let by_chat = set.by_chat();
    let rank: HashMap<&str, usize> = set
        .annotator_ids
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect();

    let mut labeled = Vec::new();
    let mut unresolved = Vec::new();
    for chat in chats {
        let Some(anns) = by_chat.get(chat.id.as_str()) else {
            return Err(Error::Data(format!("chat `{}` has no annotations", chat.id)));
        };
        let first = anns
            .iter()
            .min_by_key(|a| rank[a.annotator_id.as_str()])
            .expect("non-empty annotation list");
        let sentiment = strict_majority(anns.iter().map(|a| a.sentiment));
        let bloom = strict_majority(anns.iter().map(|a| a.bloom));
        match (sentiment, bloom, tie_policy) {
            (Some(s), Some(b), _) => labeled.push(LabeledChat::new(chat.clone(), s, b)),
            (_, _, TiePolicy::Drop) => unresolved.push(chat.id.clone()),
            (s, b, TiePolicy::FirstAnnotator) => labeled.push(LabeledChat::new(
                chat.clone(),
                s.unwrap_or(first.sentiment),
                b.unwrap_or(first.bloom),
            )),
        }
    }
    Ok(MergeOutcome {
        labeled,
        unresolved,
    })
}

/// The label held by more than half of the votes, if any.
fn strict_majority<L: Ord + Copy>(votes: impl Iterator<Item = L>) -> Option<L> {
    let mut counts: BTreeMap<L, usize> = BTreeMap::new();
    let mut total = 0;
    for v in votes {
        *counts.entry(v).or_default() += 1;
        total += 1;
    }
    counts
        .into_iter()
        .find(|&(_, c)| 2 * c > total)
        .map(|(l, _)| l)
}
