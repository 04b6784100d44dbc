//! Class rebalancing for training sets: SMOTE on feature vectors and random
//! duplication on token sequences. Originals always come first in the output,
//! synthetic rows after them.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, TokenSequence};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetCount {
    /// Top every class up to the size of the largest one.
    MatchMajority,
    Explicit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResamplePlan {
    pub k_neighbors: usize,
    pub target_count: TargetCount,
    pub seed: u64,
}

impl Default for ResamplePlan {
    fn default() -> Self {
        ResamplePlan {
            k_neighbors: 5,
            target_count: TargetCount::MatchMajority,
            seed: 0,
        }
    }
}

impl ResamplePlan {
    fn target(&self, counts: &BTreeMap<usize, Vec<usize>>) -> usize {
        match self.target_count {
            TargetCount::MatchMajority => counts.values().map(Vec::len).max().unwrap_or(0),
            TargetCount::Explicit(n) => n,
        }
    }
}

/// Where a synthetic SMOTE row came from: `base + t * (neighbor - base)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOrigin {
    pub base: usize,
    pub neighbor: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutput {
    pub x: Vec<FeatureVector>,
    pub y: Vec<usize>,
    /// One entry per synthetic row (index `n_original + i` in `x`).
    pub origins: Vec<SyntheticOrigin>,
}

fn group_by_class(y: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in y.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    groups
}

pub fn smote(x: &[FeatureVector], y: &[usize], plan: &ResamplePlan) -> Result<SmoteOutput> {
    if x.is_empty() {
        return Err(Error::Data("SMOTE on an empty training set".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vectors but {} labels", x.len(), y.len())));
    }
    if plan.k_neighbors == 0 {
        return Err(Error::Config("k_neighbors must be at least 1".into()));
    }
    let dim = x[0].dim();
    if let Some(v) = x.iter().find(|v| v.dim() != dim) {
        return Err(Error::Shape(format!("mixed dimensions {dim} and {}", v.dim())));
    }

    let groups = group_by_class(y);
    let target = plan.target(&groups);
    let mut rng = seeded(plan.seed);
    let mut out_x = x.to_vec();
    let mut out_y = y.to_vec();
    let mut origins = Vec::new();

    for (&class, members) in &groups {
        let n = members.len();
        if n >= target {
            continue;
        }
        let k = plan.k_neighbors.min(n - 1);
        let mut neighbors: Vec<Option<Vec<usize>>> = vec![None; n];
        for _ in n..target {
            let pick = rng.random_range(0..n);
            let base = members[pick];
            if k == 0 {
                // Lone sample: duplicate it.
                out_x.push(x[base].clone());
                origins.push(SyntheticOrigin { base, neighbor: base, t: 0.0 });
            } else {
                let nn = neighbors[pick]
                    .get_or_insert_with(|| nearest(x, members, pick, k))
                    .clone();
                let neighbor = nn[rng.random_range(0..nn.len())];
                let t: f64 = rng.random();
                out_x.push(x[base].lerp(&x[neighbor], t));
                origins.push(SyntheticOrigin { base, neighbor, t });
            }
            out_y.push(class);
        }
    }
    Ok(SmoteOutput {
        x: out_x,
        y: out_y,
        origins,
    })
}

/// The `k` same-class members closest to `members[pick]` (ties by index).
fn nearest(x: &[FeatureVector], members: &[usize], pick: usize, k: usize) -> Vec<usize> {
    let base = &x[members[pick]];
    let mut dists: Vec<(f64, usize)> = members
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != pick)
        .map(|(_, &m)| (base.squared_distance(&x[m]), m))
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dists.truncate(k);
    dists.into_iter().map(|(_, m)| m).collect()
}

/// Tops minority classes up by sampling their members with replacement.
pub fn random_oversample(
    seqs: &[TokenSequence],
    y: &[usize],
    plan: &ResamplePlan,
) -> Result<(Vec<TokenSequence>, Vec<usize>)> {
    let idx = oversample_indices(y, plan)?;
    if seqs.len() != y.len() {
        return Err(Error::Shape(format!("{} sequences but {} labels", seqs.len(), y.len())));
    }
    Ok((
        idx.iter().map(|&i| seqs[i].clone()).collect(),
        idx.iter().map(|&i| y[i]).collect(),
    ))
}

/// Row indices of a randomly oversampled training set: `0..n` followed by
/// the duplicated rows.
pub fn oversample_indices(y: &[usize], plan: &ResamplePlan) -> Result<Vec<usize>> {
    if y.is_empty() {
        return Err(Error::Data("oversampling an empty training set".into()));
    }
    let groups = group_by_class(y);
    let target = plan.target(&groups);
    let mut rng = seeded(plan.seed);
    let mut idx: Vec<usize> = (0..y.len()).collect();
    for members in groups.values() {
        for _ in members.len()..target {
            idx.push(members[rng.random_range(0..members.len())]);
        }
    }
    Ok(idx)
}
