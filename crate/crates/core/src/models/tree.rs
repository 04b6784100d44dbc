//! CART-style classification trees split on Gini decrease.

use std::fmt;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::forest::ForestParams;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, Vocabulary};
use crate::rng::Rng;

/// Gains at or below this are treated as zero and ties within it go to the
/// smaller (feature, threshold).
const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        feature_id: u32,
        /// Samples with `x[feature_id] <= threshold` go left.
        threshold: f64,
        gini: f64,
        /// Gini decrease achieved by this split.
        gain: f64,
        n_samples: usize,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        /// `(class, count)` pairs with non-zero counts, ascending by class.
        class_counts: Vec<(usize, usize)>,
        prediction: usize,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &FeatureVector) -> usize {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { prediction, .. } => return *prediction,
                TreeNode::Internal {
                    feature_id,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x.get(*feature_id) <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn gini(&self) -> f64 {
        match self {
            TreeNode::Internal { gini, .. } => *gini,
            TreeNode::Leaf { class_counts, .. } => {
                gini_of(class_counts.iter().map(|c| c.1)).unwrap_or(0.0)
            }
        }
    }

    pub fn n_samples(&self) -> usize {
        match self {
            TreeNode::Internal { n_samples, .. } => *n_samples,
            TreeNode::Leaf { class_counts, .. } => class_counts.iter().map(|c| c.1).sum(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Every class any leaf can predict.
    pub fn leaf_predictions(&self, out: &mut Vec<usize>) {
        match self {
            TreeNode::Leaf { prediction, .. } => out.push(*prediction),
            TreeNode::Internal { left, right, .. } => {
                left.leaf_predictions(out);
                right.leaf_predictions(out);
            }
        }
    }
}

/// `1 - Σ p_c²` over class counts.
pub fn gini_impurity<I: IntoIterator<Item = usize>>(class_counts: I) -> Result<f64> {
    gini_of(class_counts).ok_or_else(|| Error::Data("Gini impurity of an empty node".into()))
}

fn gini_of<I: IntoIterator<Item = usize>>(counts: I) -> Option<f64> {
    let counts: Vec<usize> = counts.into_iter().collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let t = total as f64;
    Some(1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>())
}

fn gini_dense(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    let mut s = 0.0;
    for &c in counts {
        let p = c as f64 / t;
        s += p * p;
    }
    1.0 - s
}

/// Argmax with the smallest class winning ties.
pub(crate) fn majority(class_counts: &[(usize, usize)]) -> usize {
    let mut best = class_counts[0];
    for &cc in &class_counts[1..] {
        if cc.1 > best.1 || (cc.1 == best.1 && cc.0 < best.0) {
            best = cc;
        }
    }
    best.0
}

struct Grower<'a> {
    x: &'a [FeatureVector],
    /// Class position (index into `classes`) for each row.
    y: Vec<usize>,
    classes: Vec<usize>,
    dim: usize,
    mtry: usize,
    max_depth: usize,
    min_leaf: usize,
}

#[derive(Clone, Copy)]
struct Split {
    feature: u32,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.classes.len()];
        for &r in rows {
            c[self.y[r]] += 1;
        }
        c
    }

    fn leaf(&self, counts: &[usize]) -> TreeNode {
        let class_counts: Vec<(usize, usize)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (self.classes[i], c))
            .collect();
        let prediction = majority(&class_counts);
        TreeNode::Leaf {
            class_counts,
            prediction,
        }
    }

    fn grow(&self, rows: Vec<usize>, depth: usize, rng: &mut Rng) -> TreeNode {
        let counts = self.counts(&rows);
        let n = rows.len();
        let gini = gini_dense(&counts, n);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.max_depth || pure || n < 2 * self.min_leaf {
            return self.leaf(&counts);
        }
        let mut features: Vec<usize> = sample(rng, self.dim, self.mtry).into_vec();
        features.sort_unstable();

        let mut best: Option<Split> = None;
        for f in features {
            if let Some(s) = self.best_split_on(f as u32, &rows, &counts, gini) {
                if best.is_none_or(|b| s.gain > b.gain + GAIN_EPS) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best.filter(|s| s.gain > GAIN_EPS) else {
            return self.leaf(&counts);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| self.x[r].get(split.feature) <= split.threshold);
        TreeNode::Internal {
            feature_id: split.feature,
            threshold: split.threshold,
            gini,
            gain: split.gain,
            n_samples: n,
            left: Box::new(self.grow(left, depth + 1, rng)),
            right: Box::new(self.grow(right, depth + 1, rng)),
        }
    }

    /// Best midpoint threshold on one feature. Values are sparse, so the zero
    /// block is handled as a single group between negatives and positives.
    fn best_split_on(&self, f: u32, rows: &[usize], counts: &[usize], gini: f64) -> Option<Split> {
        let mut nonzero: Vec<(f64, usize)> = rows
            .iter()
            .filter_map(|&r| {
                let v = self.x[r].get(f);
                (v != 0.0).then_some((v, self.y[r]))
            })
            .collect();
        let n = rows.len();
        let zeros = n - nonzero.len();
        if nonzero.is_empty() {
            return None;
        }
        nonzero.sort_by(|a, b| a.0.total_cmp(&b.0));

        // Distinct-value groups in ascending order.
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        let mut zero_counts = counts.to_vec();
        for &(_, c) in &nonzero {
            zero_counts[c] -= 1;
        }
        let mut zero_pushed = zeros == 0;
        for &(v, c) in &nonzero {
            if !zero_pushed && v > 0.0 {
                groups.push((0.0, zero_counts.clone()));
                zero_pushed = true;
            }
            match groups.last_mut() {
                Some((gv, gc)) if *gv == v => gc[c] += 1,
                _ => {
                    let mut gc = vec![0; counts.len()];
                    gc[c] += 1;
                    groups.push((v, gc));
                }
            }
        }
        if !zero_pushed {
            groups.push((0.0, zero_counts));
        }
        if groups.len() < 2 {
            return None;
        }

        let mut left = vec![0; counts.len()];
        let mut n_left = 0;
        let mut best: Option<Split> = None;
        for w in 0..groups.len() - 1 {
            for (l, g) in left.iter_mut().zip(&groups[w].1) {
                *l += g;
            }
            n_left += groups[w].1.iter().sum::<usize>();
            let n_right = n - n_left;
            if n_left < self.min_leaf || n_right < self.min_leaf {
                continue;
            }
            let right: Vec<usize> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
            let weighted = (n_left as f64 / n as f64) * gini_dense(&left, n_left)
                + (n_right as f64 / n as f64) * gini_dense(&right, n_right);
            let gain = gini - weighted;
            if best.is_none_or(|b| gain > b.gain + GAIN_EPS) {
                best = Some(Split {
                    feature: f,
                    threshold: 0.5 * (groups[w].0 + groups[w + 1].0),
                    gain,
                });
            }
        }
        best
    }
}

/// Grows one tree on `rows` of `x` (repeats allowed, as in a bootstrap
/// sample). `classes` must contain every label in `y`, ascending.
pub(crate) fn grow_tree(
    x: &[FeatureVector],
    y: &[usize],
    rows: Vec<usize>,
    classes: &[usize],
    params: &ForestParams,
    rng: &mut Rng,
) -> Result<TreeNode> {
    if rows.is_empty() {
        return Err(Error::Data("cannot fit a tree on empty data".into()));
    }
    let dim = x[0].dim();
    if dim == 0 {
        return Err(Error::Shape("feature vectors have dimension 0".into()));
    }
    if let Some(v) = x.iter().find(|v| v.dim() != dim) {
        return Err(Error::Shape(format!("mixed dimensions {dim} and {}", v.dim())));
    }
    let mtry = params.mtry_for(dim)?;
    let pos: Vec<usize> = y
        .iter()
        .map(|c| classes.binary_search(c).expect("label in class list"))
        .collect();
    let grower = Grower {
        x,
        y: pos,
        classes: classes.to_vec(),
        dim,
        mtry,
        max_depth: params.max_depth,
        min_leaf: params.min_samples_leaf.max(1),
    };
    Ok(grower.grow(rows, 0, rng))
}

/// Fits a single tree on all rows of `(x, y)`, drawing `mtry` candidate
/// features per node from `rng`.
pub fn fit_decision_tree(
    x: &[FeatureVector],
    y: &[usize],
    params: &ForestParams,
    rng: &mut Rng,
) -> Result<TreeNode> {
    if x.is_empty() {
        return Err(Error::Data("cannot fit a tree on empty data".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    grow_tree(x, y, (0..x.len()).collect(), &classes, params, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    Root,
    Left,
    Right,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Root => "Root",
            Branch::Left => "Left",
            Branch::Right => "Right",
        })
    }
}

/// One row of a tree listing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchLine {
    pub level: usize,
    pub branch: Branch,
    /// Split term for internal nodes.
    pub term: Option<String>,
    pub threshold: Option<f64>,
    /// Node Gini impurity rounded to 3 decimals.
    pub gini: f64,
    pub n_samples: usize,
    /// Predicted class for leaves.
    pub prediction: Option<usize>,
}

impl fmt::Display for BranchLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t", self.level, self.branch)?;
        match (&self.term, self.threshold, self.prediction) {
            (Some(t), Some(th), _) => write!(f, "{t} <= {th:.4}")?,
            (_, _, Some(p)) => write!(f, "leaf -> {p}")?,
            _ => f.write_str("-")?,
        }
        write!(f, "\t{:.3}", self.gini)
    }
}

/// Pre-order listing down to `max_depth` (0 lists the root only).
pub fn tree_lines(tree: &TreeNode, vocab: &Vocabulary, max_depth: usize) -> Vec<BranchLine> {
    let mut out = Vec::new();
    walk(tree, vocab, 0, Branch::Root, max_depth, &mut out);
    out
}

fn walk(node: &TreeNode, vocab: &Vocabulary, level: usize, branch: Branch, max: usize, out: &mut Vec<BranchLine>) {
    let gini = (node.gini() * 1000.0).round() / 1000.0;
    match node {
        TreeNode::Leaf { prediction, .. } => out.push(BranchLine {
            level,
            branch,
            term: None,
            threshold: None,
            gini,
            n_samples: node.n_samples(),
            prediction: Some(*prediction),
        }),
        TreeNode::Internal {
            feature_id,
            threshold,
            n_samples,
            left,
            right,
            ..
        } => {
            out.push(BranchLine {
                level,
                branch,
                term: Some(
                    vocab
                        .term(*feature_id)
                        .map_or_else(|| format!("#{feature_id}"), str::to_string),
                ),
                threshold: Some(*threshold),
                gini,
                n_samples: *n_samples,
                prediction: None,
            });
            if level < max {
                walk(left, vocab, level + 1, Branch::Left, max, out);
                walk(right, vocab, level + 1, Branch::Right, max, out);
            }
        }
    }
}
