//! Splits, cross-validation, metrics, significance tests and reports.

pub mod metrics;
pub mod report;
pub mod split;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledChat;
use crate::error::{Error, Result};
use crate::hierarchy::{joint_id, prepare_training, FeatureParams, FitContext, Mode, ModelSpec, Predictor, StageConfig};
use crate::preprocess::Preprocessor;
use crate::rng::{derive_seed, tag};

pub use metrics::{
    confusion_and_accuracy, mean, paired_t_test, sample_std, ConfusionMatrix, FoldResult, SignificanceResult,
};
pub use report::{
    class_name, emit_report, label_map, write_report, EvalReport, LabelStyle, MethodResult, ReportFormat,
    SignificanceEntry, REPORT_VERSION,
};
pub use split::{complement, holdout_indices, kfold_indices, stratified_holdout, Facet, Split};

/// One fold handed to a trainer.
#[derive(Debug, Clone, Copy)]
pub struct FoldTask<'a> {
    pub index: usize,
    pub train: &'a [usize],
    pub val: &'a [usize],
    /// Seed derived from the run seed and the fold index.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRun<R> {
    pub folds: Vec<Vec<usize>>,
    pub results: Vec<R>,
    pub warnings: Vec<String>,
}

/// Stratified k-fold cross-validation over items with stratum `keys`.
/// `trainer` sees each fold's index lists; results come back in fold order
/// whether folds run on one thread or `jobs` threads.
pub fn kfold_cv<R, F>(keys: &[usize], k: usize, seed: u64, jobs: usize, trainer: F) -> Result<CvRun<R>>
where
    R: Send,
    F: Fn(FoldTask<'_>) -> Result<R> + Sync,
{
    let (folds, warnings) = kfold_indices(keys, k, derive_seed(seed, tag("folds")))?;
    let run = |i: usize| {
        let train = complement(&folds, i);
        trainer(FoldTask {
            index: i,
            train: &train,
            val: &folds[i],
            seed: derive_seed(seed, tag(&format!("fold-{i}"))),
        })
    };
    let results: Vec<R> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..k).into_par_iter().map(run).collect::<Result<_>>())?
    } else {
        (0..k).map(run).collect::<Result<_>>()?
    };
    Ok(CvRun {
        folds,
        results,
        warnings,
    })
}

/// Scores of one trained predictor on one validation set. Facets the mode
/// does not predict are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold_index: usize,
    pub sentiment: Option<FoldResult>,
    pub bloom: Option<FoldResult>,
    pub pair: Option<FoldResult>,
}

/// Settings for evaluating one model specification.
#[derive(Debug, Clone)]
pub struct EvalSetup<'a> {
    pub preprocessor: &'a Preprocessor,
    pub features: &'a FeatureParams,
    pub spec: ModelSpec,
    pub stages: &'a StageConfig,
}

impl EvalSetup<'_> {
    /// Facet that folds are stratified on for this mode.
    pub fn facet(&self) -> Facet {
        match self.spec.mode {
            Mode::SentimentOnly => Facet::Sentiment,
            Mode::EpistemicOnly => Facet::Bloom,
            Mode::Multilabel | Mode::TwoStep => Facet::Pair,
        }
    }
}

/// Trains on `train` and scores on `val`, building the vocabulary from the
/// training side only.
pub fn evaluate_split(
    data: &[LabeledChat],
    train: &[usize],
    val: &[usize],
    fold_index: usize,
    seed: u64,
    setup: &EvalSetup<'_>,
) -> Result<FoldOutcome> {
    if val.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    let train_chats: Vec<LabeledChat> = train.iter().map(|&i| data[i].clone()).collect();
    let stages = StageConfig {
        seed,
        ..setup.stages.clone()
    };
    let embed_dim = stages.lstm_sentiment.embed_dim;
    let (featurizer, embeddings, rows) =
        prepare_training(&train_chats, setup.preprocessor, setup.features, embed_dim, seed)?;
    let ctx = FitContext {
        featurizer: &featurizer,
        embeddings: embeddings.as_ref(),
        config: &stages,
    };
    let predictor = Predictor::fit(&rows, &setup.spec, &ctx)?;
    let fp = featurizer.fingerprint();

    let mut gold_s = Vec::new();
    let mut gold_b = Vec::new();
    let mut pred_s = Vec::new();
    let mut pred_b = Vec::new();
    for &i in val {
        let chat = &data[i];
        let doc = featurizer.encode_with(&setup.preprocessor.doc(&chat.chat.id, &chat.chat.text), &fp);
        let p = predictor.predict(&doc)?;
        gold_s.push(chat.sentiment);
        gold_b.push(chat.bloom);
        pred_s.push(p.sentiment);
        pred_b.push(p.bloom);
    }
    let mode = setup.spec.mode;
    let score = |gold: Vec<usize>, pred: Vec<usize>, n: usize| -> Result<FoldResult> {
        let classes: Vec<usize> = (0..n).collect();
        Ok(FoldResult::new(fold_index, ConfusionMatrix::tally(&classes, &gold, &pred)?))
    };
    let sentiment = if mode.predicts_sentiment() {
        Some(score(
            gold_s.iter().map(|s| s.code()).collect(),
            pred_s.iter().map(|s| s.expect("mode predicts sentiment").code()).collect(),
            3,
        )?)
    } else {
        None
    };
    let bloom = if mode.predicts_bloom() {
        Some(score(
            gold_b.iter().map(|b| b.code()).collect(),
            pred_b.iter().map(|b| b.expect("mode predicts bloom").code()).collect(),
            6,
        )?)
    } else {
        None
    };
    let pair = if mode.predicts_sentiment() && mode.predicts_bloom() {
        Some(score(
            gold_s.iter().zip(&gold_b).map(|(s, b)| joint_id(*s, *b)).collect(),
            pred_s
                .iter()
                .zip(&pred_b)
                .map(|(s, b)| joint_id(s.expect("sentiment"), b.expect("bloom")))
                .collect(),
            18,
        )?)
    } else {
        None
    };
    Ok(FoldOutcome {
        fold_index,
        sentiment,
        bloom,
        pair,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeEvaluation {
    pub mode: Mode,
    pub outcomes: Vec<FoldOutcome>,
    pub warnings: Vec<String>,
}

impl ModeEvaluation {
    /// One [`MethodResult`] per facet the mode predicts.
    pub fn method_results(&self, method: &str) -> Vec<MethodResult> {
        let mut out = Vec::new();
        let mut push = |facet: Facet, get: fn(&FoldOutcome) -> &Option<FoldResult>| {
            let folds: Option<Vec<FoldResult>> = self.outcomes.iter().map(|o| get(o).clone()).collect();
            if let Some(folds) = folds.filter(|f| !f.is_empty()) {
                out.push(MethodResult::new(method, self.mode, facet, folds));
            }
        };
        push(Facet::Sentiment, |o| &o.sentiment);
        push(Facet::Bloom, |o| &o.bloom);
        push(Facet::Pair, |o| &o.pair);
        if self.mode == Mode::TwoStep {
            let stage: Vec<f64> = self
                .outcomes
                .iter()
                .filter_map(|o| Some(0.5 * (o.sentiment.as_ref()?.accuracy + o.bloom.as_ref()?.accuracy)))
                .collect();
            if let Some(pair) = out.iter_mut().find(|m| m.facet == Facet::Pair) {
                pair.stage_mean = Some(mean(&stage));
            }
        }
        out
    }
}

/// Stratified k-fold CV of one model specification.
pub fn evaluate_cv(data: &[LabeledChat], k: usize, seed: u64, jobs: usize, setup: &EvalSetup<'_>) -> Result<ModeEvaluation> {
    let keys: Vec<usize> = data.iter().map(|c| setup.facet().key(c)).collect();
    let run = kfold_cv(&keys, k, seed, jobs, |task| {
        evaluate_split(data, task.train, task.val, task.index, task.seed, setup)
    })?;
    Ok(ModeEvaluation {
        mode: setup.spec.mode,
        outcomes: run.results,
        warnings: run.warnings,
    })
}

/// Single stratified hold-out evaluation, reported as one fold.
pub fn evaluate_holdout(
    data: &[LabeledChat],
    train_ratio: f64,
    seed: u64,
    setup: &EvalSetup<'_>,
) -> Result<ModeEvaluation> {
    let keys: Vec<usize> = data.iter().map(|c| setup.facet().key(c)).collect();
    let split = holdout_indices(&keys, train_ratio, derive_seed(seed, tag("holdout")))?;
    let outcome = evaluate_split(data, &split.train, &split.val, 0, derive_seed(seed, tag("fold-0")), setup)?;
    Ok(ModeEvaluation {
        mode: setup.spec.mode,
        outcomes: vec![outcome],
        warnings: split.warnings,
    })
}
