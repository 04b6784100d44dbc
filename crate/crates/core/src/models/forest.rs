//! Bagged Gini trees with plurality voting.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, TreeNode};
use super::FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per node; `None` means `floor(sqrt(F))`.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 32,
            min_samples_leaf: 1,
            mtry: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn mtry_for(&self, n_features: usize) -> Result<usize> {
        let m = self
            .mtry
            .unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1));
        if m == 0 || m > n_features {
            return Err(Error::Config(format!(
                "mtry must be in 1..={n_features}, got {m}"
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub classes: Vec<usize>,
    pub vocab_fingerprint: String,
    pub dim: usize,
    pub params: ForestParams,
    pub trees: Vec<TreeNode>,
}

impl ForestModel {
    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.vocab_fingerprint = fingerprint.into();
        self
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<usize> {
        forest_predict(self, x).map(|(c, _)| c)
    }
}

pub fn fit_random_forest(x: &[FeatureVector], y: &[usize], params: &ForestParams) -> Result<ForestModel> {
    fit_random_forest_jobs(x, y, params, 1)
}

/// Like [`fit_random_forest`], growing trees on up to `jobs` threads. Each
/// tree draws from its own RNG stream `(seed, tree index)`, so the result does
/// not depend on `jobs`.
pub fn fit_random_forest_jobs(
    x: &[FeatureVector],
    y: &[usize],
    params: &ForestParams,
    jobs: usize,
) -> Result<ForestModel> {
    if x.is_empty() {
        return Err(Error::Data("cannot fit a forest on empty data".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.len(), y.len())));
    }
    if params.n_trees == 0 {
        return Err(Error::Config("n_trees must be at least 1".into()));
    }
    let dim = x[0].dim();
    params.mtry_for(dim)?;
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let grow = |t: usize| -> Result<TreeNode> {
        let mut rng = stream(params.seed, t as u64);
        let rows: Vec<usize> = if params.bootstrap {
            (0..x.len()).map(|_| rng.random_range(0..x.len())).collect()
        } else {
            (0..x.len()).collect()
        };
        grow_tree(x, y, rows, &classes, params, &mut rng)
    };
    let trees: Vec<TreeNode> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..params.n_trees).into_par_iter().map(grow).collect::<Result<_>>())?
    } else {
        (0..params.n_trees).map(grow).collect::<Result<_>>()?
    };
    Ok(ForestModel {
        format_version: FORMAT_VERSION,
        classes,
        vocab_fingerprint: String::new(),
        dim,
        params: params.clone(),
        trees,
    })
}

/// Plurality vote over trees; ties go to the smallest class id.
pub fn forest_predict(model: &ForestModel, x: &FeatureVector) -> Result<(usize, BTreeMap<usize, usize>)> {
    if x.dim() != model.dim {
        return Err(Error::Shape(format!(
            "forest expects dimension {}, got {}",
            model.dim,
            x.dim()
        )));
    }
    let votes = tally(model.trees.iter().map(|t| t.predict(x)));
    let winner = plurality(&votes);
    Ok((winner, votes))
}

pub(crate) fn tally(preds: impl Iterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut votes = BTreeMap::new();
    for p in preds {
        *votes.entry(p).or_insert(0) += 1;
    }
    votes
}

/// Class with the most votes; ascending iteration keeps the smallest id on ties.
pub(crate) fn plurality(votes: &BTreeMap<usize, usize>) -> usize {
    let mut best = (usize::MAX, 0);
    for (&c, &n) in votes {
        if n > best.1 {
            best = (c, n);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(c: usize) -> TreeNode {
        TreeNode::Leaf {
            class_counts: vec![(c, 1)],
            prediction: c,
        }
    }

    fn forest_of(trees: Vec<TreeNode>) -> ForestModel {
        ForestModel {
            format_version: FORMAT_VERSION,
            classes: vec![0, 1],
            vocab_fingerprint: String::new(),
            dim: 1,
            params: ForestParams::default(),
            trees,
        }
    }

    #[test]
    fn plurality_and_ties() {
        let x = FeatureVector::from_dense(&[0.0]);
        let (c, v) = forest_predict(&forest_of(vec![leaf(0), leaf(0), leaf(1)]), &x).unwrap();
        assert_eq!(c, 0);
        assert_eq!(v, BTreeMap::from([(0, 2), (1, 1)]));
        let (c, _) = forest_predict(&forest_of(vec![leaf(1), leaf(0)]), &x).unwrap();
        assert_eq!(c, 0);
        let (c, _) = forest_predict(&forest_of(vec![leaf(1)]), &x).unwrap();
        assert_eq!(c, 1);
    }

    #[test]
    fn dimension_mismatch() {
        let f = forest_of(vec![leaf(0)]);
        assert!(forest_predict(&f, &FeatureVector::from_dense(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn mtry_bounds() {
        let p = ForestParams::default();
        assert_eq!(p.mtry_for(10).unwrap(), 3);
        assert_eq!(p.mtry_for(1).unwrap(), 1);
        assert!(ForestParams { mtry: Some(11), ..p.clone() }.mtry_for(10).is_err());
        assert!(ForestParams { mtry: Some(0), ..p }.mtry_for(10).is_err());
    }

    #[test]
    fn separable_points_are_fit_exactly() {
        let x: Vec<FeatureVector> = (0..20)
            .map(|i| {
                let i = i as f64;
                FeatureVector::from_dense(&[i, 20.0 - i * 0.5])
            })
            .collect();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let params = ForestParams { seed: 3, ..Default::default() };
        let model = fit_random_forest(&x, &y, &params).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(model.predict(xi).unwrap(), *yi);
        }
        let par = fit_random_forest_jobs(&x, &y, &params, 4).unwrap();
        assert_eq!(par, model);
    }
}
