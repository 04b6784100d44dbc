//! Stratified hold-out splits and k-fold partitions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledChat;
use crate::error::{Error, Result};
use crate::hierarchy::joint_id;
use crate::rng::seeded;

/// Label used to stratify splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facet {
    Sentiment,
    Bloom,
    /// The (sentiment, Bloom) pair as a joint class.
    Pair,
}

impl Facet {
    pub fn key(self, chat: &LabeledChat) -> usize {
        match self {
            Facet::Sentiment => chat.sentiment.code(),
            Facet::Bloom => chat.bloom.code(),
            Facet::Pair => joint_id(chat.sentiment, chat.bloom),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Sentiment => "sentiment",
            Facet::Bloom => "bloom",
            Facet::Pair => "pair",
        }
    }
}

impl std::str::FromStr for Facet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentiment" => Ok(Facet::Sentiment),
            "bloom" | "epistemic" => Ok(Facet::Bloom),
            "pair" | "joint" => Ok(Facet::Pair),
            other => Err(Error::Config(format!("unknown facet `{other}`"))),
        }
    }
}

/// Indices of a train/validation split plus any warnings raised.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Members of each stratum in index order, then shuffled.
fn shuffled_strata(keys: &[usize], seed: u64) -> BTreeMap<usize, Vec<usize>> {
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &k) in keys.iter().enumerate() {
        strata.entry(k).or_default().push(i);
    }
    let mut rng = seeded(seed);
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
    }
    strata
}

/// Per stratum, `floor(ratio * n)` items (at least one when `n >= 2`) go to
/// training and the rest to validation. A stratum of one goes to training.
pub fn holdout_indices(keys: &[usize], train_ratio: f64, seed: u64) -> Result<Split> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::Config(format!("train_ratio must be in (0, 1), got {train_ratio}")));
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        warnings: Vec::new(),
    };
    for (key, members) in shuffled_strata(keys, seed) {
        let n = members.len();
        let n_train = if n == 1 {
            split
                .warnings
                .push(format!("class {key} has a single member; it goes to training"));
            1
        } else {
            ((train_ratio * n as f64).floor() as usize).max(1)
        };
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    Ok(split)
}

pub fn stratified_holdout(
    data: &[LabeledChat],
    train_ratio: f64,
    facet: Facet,
    seed: u64,
) -> Result<(Vec<LabeledChat>, Vec<LabeledChat>, Vec<String>)> {
    let keys: Vec<usize> = data.iter().map(|c| facet.key(c)).collect();
    let split = holdout_indices(&keys, train_ratio, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect();
    Ok((pick(&split.train), pick(&split.val), split.warnings))
}

/// Stratified folds: strata are shuffled, concatenated in class order, and
/// dealt round-robin, so fold sizes differ by at most one and each class is
/// spread as evenly as possible.
pub fn kfold_indices(keys: &[usize], k: usize, seed: u64) -> Result<(Vec<Vec<usize>>, Vec<String>)> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if keys.len() < k {
        return Err(Error::Data(format!("{} items cannot fill {k} folds", keys.len())));
    }
    let mut warnings = Vec::new();
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0;
    for (key, members) in shuffled_strata(keys, seed) {
        if members.len() < k {
            warnings.push(format!(
                "class {key} has {} members, fewer than {k} folds",
                members.len()
            ));
        }
        for m in members {
            folds[pos % k].push(m);
            pos += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok((folds, warnings))
}

/// Training indices for fold `i`: everything outside it, ascending.
pub fn complement(folds: &[Vec<usize>], i: usize) -> Vec<usize> {
    let mut train: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    train.sort_unstable();
    train
}
