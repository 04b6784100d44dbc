//! Confusion matrices, fold summaries and the paired t-test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Rows are gold classes, columns predicted classes, both in `classes` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<usize>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: Vec<usize>, counts: Vec<Vec<usize>>) -> Result<Self> {
        if counts.len() != classes.len() || counts.iter().any(|r| r.len() != classes.len()) {
            return Err(Error::Shape(format!(
                "confusion counts must be {0}x{0}",
                classes.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    /// Matrix over a fixed label space; pairs outside it are an error.
    pub fn tally(classes: &[usize], gold: &[usize], pred: &[usize]) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::Shape(format!(
                "{} gold labels but {} predictions",
                gold.len(),
                pred.len()
            )));
        }
        let n = classes.len();
        let pos = |c: usize| {
            classes
                .iter()
                .position(|&k| k == c)
                .ok_or_else(|| Error::Data(format!("class {c} outside the label space")))
        };
        let mut counts = vec![vec![0; n]; n];
        for (&g, &p) in gold.iter().zip(pred) {
            counts[pos(g)?][pos(p)?] += 1;
        }
        Ok(ConfusionMatrix {
            classes: classes.to_vec(),
            counts,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    /// Per-class gold support (row sums).
    pub fn support(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Confusion matrix over the classes seen in `gold` or `pred`, and accuracy.
pub fn confusion_and_accuracy(gold: &[usize], pred: &[usize]) -> Result<(ConfusionMatrix, f64)> {
    if gold.is_empty() {
        return Err(Error::Data("no predictions to score".into()));
    }
    let mut classes: Vec<usize> = gold.iter().chain(pred).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let cm = ConfusionMatrix::tally(&classes, gold, pred)?;
    let acc = cm.accuracy();
    Ok((cm, acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl FoldResult {
    pub fn new(fold_index: usize, confusion: ConfusionMatrix) -> Self {
        FoldResult {
            fold_index,
            accuracy: confusion.accuracy(),
            confusion,
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation with the `n - 1` denominator.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub test: String,
    pub t_stat: f64,
    pub p_value: f64,
    pub df: usize,
    pub alpha: f64,
    pub significant: bool,
}

/// Two-tailed paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<SignificanceResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} paired values", a.len(), b.len())));
    }
    let k = a.len();
    if k < 2 {
        return Err(Error::Data("paired test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let sd = sample_std(&d);
    if sd == 0.0 || !sd.is_finite() {
        return Err(Error::Data("degenerate paired test: differences have zero variance".into()));
    }
    let t = mean(&d) / (sd / (k as f64).sqrt());
    let df = k - 1;
    let nu = df as f64;
    let p = beta_reg(nu / 2.0, 0.5, nu / (nu + t * t)).clamp(0.0, 1.0);
    Ok(SignificanceResult {
        test: "paired two-tailed t-test".into(),
        t_stat: t,
        p_value: p,
        df,
        alpha,
        significant: p < alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn percent_matrices() {
        let rf = ConfusionMatrix::from_counts(vec![0, 1], vec![vec![36, 22], vec![33, 9]]).unwrap();
        assert_eq!(rf.accuracy(), 0.45);
        let lstm = ConfusionMatrix::from_counts(vec![0, 1], vec![vec![32, 26], vec![19, 23]]).unwrap();
        assert_eq!(lstm.accuracy(), 0.55);
    }

    #[test]
    fn identity_is_diagonal() {
        let y = [0, 2, 1, 2, 2];
        let (cm, acc) = confusion_and_accuracy(&y, &y).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 3]]);
        assert_eq!(cm.support(), vec![1, 1, 3]);
        assert!(confusion_and_accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn std_forms() {
        let xs = [85.9, 83.0, 82.9, 84.0, 84.6];
        assert!((mean(&xs) - 84.08).abs() < 1e-9);
        // sum of squared deviations 6.148 over 4
        assert!((sample_std(&xs) - (6.148f64 / 4.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn t_test_against_hand_computation() {
        let a = [85.9, 83.0, 82.9, 84.0, 84.6];
        let b = [84.7, 82.9, 81.7, 81.9, 82.3];
        let r = paired_t_test(&a, &b, 0.05).unwrap();
        // d = (1.2, 0.1, 1.2, 2.1, 2.3): mean 1.38, sd sqrt(3.068/4)
        let t = 1.38 / ((3.068f64 / 4.0).sqrt() / 5f64.sqrt());
        assert!((r.t_stat - t).abs() < 1e-9);
        assert_eq!(r.df, 4);
        assert!((r.p_value - 0.0244).abs() < 0.0005, "{}", r.p_value);
        assert!(r.significant);
    }

    #[test]
    fn t_test_p_matches_table_values() {
        // Two-tailed critical values of t at df = 4: 2.776 (p = .05), 4.604 (p = .01).
        let p = |t: f64| beta_reg(2.0, 0.5, 4.0 / (4.0 + t * t));
        assert!((p(2.776) - 0.05).abs() < 1e-3);
        assert!((p(4.604) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn t_test_sign_and_degenerate() {
        let a = [1.0, 2.0, 3.0];
        assert!(paired_t_test(&a, &a, 0.05).is_err());
        let b = [1.0, 2.0, 2.0];
        let c = [1.0, 2.5, 2.2];
        assert!(paired_t_test(&c, &b, 0.05).unwrap().t_stat > 0.0);
    }

    proptest! {
        #[test]
        fn t_is_antisymmetric(a in proptest::collection::vec(0.0f64..100.0, 3..8), shift in proptest::collection::vec(-5.0f64..5.0, 8)) {
            let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
            if let (Ok(ab), Ok(ba)) = (paired_t_test(&a, &b, 0.05), paired_t_test(&b, &a, 0.05)) {
                prop_assert_eq!(ab.t_stat, -ba.t_stat);
                prop_assert_eq!(ab.p_value, ba.p_value);
            }
        }

        #[test]
        fn accuracy_is_trace_over_total(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let gold: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let (cm, acc) = confusion_and_accuracy(&gold, &pred).unwrap();
            let hits = pairs.iter().filter(|p| p.0 == p.1).count();
            prop_assert_eq!(acc, hits as f64 / pairs.len() as f64);
            prop_assert_eq!(cm.total(), pairs.len());
        }
    }
}
