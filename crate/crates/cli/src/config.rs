//! Run configuration: a JSON file with every field defaulted, overridden by
//! command-line flags.

use std::path::{Path, PathBuf};

use besent_core::features::sha256_hex;
use besent_core::hierarchy::{FeatureParams, Mode, ModelSpec, StageConfig};
use besent_core::models::{ForestParams, LstmHyper, ModelKind};
use besent_core::preprocess::{PreprocessConfig, Preprocessor};
use besent_core::resample::ResamplePlan;
use besent_core::{Error, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub k: usize,
    pub train_ratio: f64,
    pub alpha: f64,
    /// Use a single stratified hold-out split instead of k-fold CV.
    pub holdout: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            k: 5,
            train_ratio: 0.7,
            alpha: 0.05,
            holdout: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub preprocess: PreprocessConfig,
    pub features: FeatureParams,
    /// `null` disables rebalancing.
    pub resample: Option<ResamplePlan>,
    pub forest: ForestParams,
    pub lstm_sentiment: LstmHyper,
    pub lstm_bloom: LstmHyper,
    pub eval: EvalParams,
    pub mode: Mode,
    pub stage1: ModelKind,
    pub stage2: ModelKind,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = ModelSpec::default();
        RunConfig {
            paths: Paths::default(),
            preprocess: PreprocessConfig::default(),
            features: FeatureParams::default(),
            resample: Some(ResamplePlan::default()),
            forest: ForestParams::default(),
            lstm_sentiment: LstmHyper::sentiment_preset(),
            lstm_bloom: LstmHyper::epistemic_preset(),
            eval: EvalParams::default(),
            mode: spec.mode,
            stage1: spec.stage1,
            stage2: spec.stage2,
            seed: 0,
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            mode: self.mode,
            stage1: self.stage1,
            stage2: self.stage2,
        }
    }

    pub fn stages(&self) -> StageConfig {
        StageConfig {
            forest: self.forest.clone(),
            lstm_sentiment: self.lstm_sentiment.clone(),
            lstm_bloom: self.lstm_bloom.clone(),
            resample: self.resample,
            jobs: self.jobs.max(1),
            seed: self.seed,
        }
    }

    pub fn preprocessor(&self) -> Result<Preprocessor> {
        Preprocessor::new(self.preprocess.clone())
    }

    fn lstm_both(&mut self, f: impl Fn(&mut LstmHyper)) {
        f(&mut self.lstm_sentiment);
        f(&mut self.lstm_bloom);
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for forest growth and CV folds.
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Flags for commands that train models.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// Labeled dataset (.jsonl or .csv).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// sentiment_only | epistemic_only | multilabel | two_step
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Classifier for single-stage modes and the sentiment stage: forest | lstm
    #[arg(long)]
    pub stage1: Option<ModelKind>,
    /// Classifier for the Bloom stages of two_step: forest | lstm
    #[arg(long)]
    pub stage2: Option<ModelKind>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub train_ratio: Option<f64>,
    /// Evaluate on one stratified hold-out split instead of k folds.
    #[arg(long)]
    pub holdout: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub mtry: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
    /// LSTM epochs for every stage (overrides the per-task presets).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub min_df: Option<usize>,
    #[arg(long)]
    pub max_size: Option<usize>,
    #[arg(long)]
    pub k_neighbors: Option<usize>,
    /// Train on the data as is, without SMOTE or oversampling.
    #[arg(long)]
    pub no_resample: bool,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Word vectors in GloVe text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

/// Resolves the effective configuration: file (or defaults), then flags.
pub fn resolve(common: &CommonArgs, pipeline: Option<&PipelineArgs>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    let Some(p) = pipeline else {
        return Ok(cfg);
    };
    if let Some(d) = &p.data {
        cfg.paths.dataset = Some(d.clone());
    }
    if let Some(m) = p.mode {
        cfg.mode = m;
    }
    if let Some(k) = p.stage1 {
        cfg.stage1 = k;
    }
    if let Some(k) = p.stage2 {
        cfg.stage2 = k;
    }
    if let Some(k) = p.k {
        cfg.eval.k = k;
    }
    if let Some(r) = p.train_ratio {
        cfg.eval.train_ratio = r;
    }
    if p.holdout {
        cfg.eval.holdout = true;
    }
    if let Some(a) = p.alpha {
        cfg.eval.alpha = a;
    }
    if let Some(n) = p.n_trees {
        cfg.forest.n_trees = n;
    }
    if let Some(d) = p.max_depth {
        cfg.forest.max_depth = d;
    }
    if let Some(m) = p.mtry {
        cfg.forest.mtry = Some(m);
    }
    if let Some(m) = p.min_samples_leaf {
        cfg.forest.min_samples_leaf = m;
    }
    if let Some(v) = p.epochs {
        cfg.lstm_both(|h| h.epochs = v);
    }
    if let Some(v) = p.hidden {
        cfg.lstm_both(|h| h.hidden = v);
    }
    if let Some(v) = p.layers {
        cfg.lstm_both(|h| h.layers = v);
    }
    if let Some(v) = p.embed_dim {
        cfg.lstm_both(|h| h.embed_dim = v);
    }
    if let Some(v) = p.batch_size {
        cfg.lstm_both(|h| h.batch_size = v);
    }
    if let Some(v) = p.learning_rate {
        cfg.lstm_both(|h| h.learning_rate = v);
    }
    if let Some(v) = p.clip_norm {
        cfg.lstm_both(|h| h.clip_norm = Some(v));
    }
    if let Some(v) = p.seq_len {
        cfg.features.seq_len = v;
    }
    if let Some(v) = p.min_df {
        cfg.features.min_df = v;
    }
    if let Some(v) = p.max_size {
        cfg.features.max_size = v;
    }
    if let Some(v) = p.k_neighbors {
        if let Some(plan) = cfg.resample.as_mut() {
            plan.k_neighbors = v;
        }
    }
    if p.no_resample {
        cfg.resample = None;
    }
    if let Some(s) = &p.stopwords {
        cfg.preprocess.stopword_path = Some(s.clone());
    }
    if let Some(e) = &p.embeddings {
        cfg.features.embeddings_path = Some(e.clone());
    }
    Ok(cfg)
}
