//! Task-level classifiers: sentiment only, Bloom only, the joint 18-class
//! baseline, and the two-step model that routes each chat to a Bloom
//! classifier chosen by its predicted sentiment.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{BloomLabel, LabeledChat, SentimentLabel};
use crate::error::{Error, Result};
use crate::features::{build_vocabulary, load_embeddings, EmbeddingMatrix, EncodedDoc, Featurizer, TokenSequence, UNK};
use crate::models::{
    check_format_version, fit_random_forest_jobs, forest_predict, lstm_fit, ForestParams, LstmHyper, LstmSetup,
    Model, ModelKind, TrainingCurve, FORMAT_VERSION,
};
use crate::preprocess::Preprocessor;
use crate::resample::{random_oversample, smote, ResamplePlan};
use crate::rng::{derive_seed, seeded, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Sentiment,
    Bloom,
    Joint,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Sentiment => SentimentLabel::ALL.len(),
            Task::Bloom => BloomLabel::ALL.len(),
            Task::Joint => SentimentLabel::ALL.len() * BloomLabel::ALL.len(),
        }
    }

    /// Class id of a labeled pair in this task's label space.
    pub fn class_of(self, sentiment: SentimentLabel, bloom: BloomLabel) -> usize {
        match self {
            Task::Sentiment => sentiment.code(),
            Task::Bloom => bloom.code(),
            Task::Joint => joint_id(sentiment, bloom),
        }
    }
}

pub fn joint_id(sentiment: SentimentLabel, bloom: BloomLabel) -> usize {
    sentiment.code() * BloomLabel::ALL.len() + bloom.code()
}

pub fn decode_joint(id: usize) -> Result<(SentimentLabel, BloomLabel)> {
    let n = BloomLabel::ALL.len();
    match (SentimentLabel::from_code(id / n), BloomLabel::from_code(id % n)) {
        (Some(s), Some(b)) => Ok((s, b)),
        _ => Err(Error::Data(format!("joint class id {id} out of range"))),
    }
}

/// A chat encoded against the shared vocabulary, with its gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedChat {
    pub doc: EncodedDoc,
    pub sentiment: SentimentLabel,
    pub bloom: BloomLabel,
}

/// Training settings shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub forest: ForestParams,
    /// LSTM settings for the sentiment stage.
    pub lstm_sentiment: LstmHyper,
    /// LSTM settings for Bloom and joint stages.
    pub lstm_bloom: LstmHyper,
    /// Rebalancing inside every training subset; `None` disables it.
    pub resample: Option<ResamplePlan>,
    /// Threads for forest growth.
    pub jobs: usize,
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            forest: ForestParams::default(),
            lstm_sentiment: LstmHyper::sentiment_preset(),
            lstm_bloom: LstmHyper::epistemic_preset(),
            resample: Some(ResamplePlan::default()),
            jobs: 1,
            seed: 0,
        }
    }
}

/// What a stage needs beyond its training rows.
#[derive(Debug, Clone, Copy)]
pub struct FitContext<'a> {
    pub featurizer: &'a Featurizer,
    pub embeddings: Option<&'a EmbeddingMatrix>,
    pub config: &'a StageConfig,
}

/// One trained stage. `model.classes()` is the subset of the task's label
/// space seen in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHandle {
    pub task: Task,
    pub model: Model,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<TrainingCurve>,
}

/// Output of one stage: the class and a per-class score (vote share for
/// forests, sigmoid output for LSTMs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutput {
    pub task: Task,
    pub class: usize,
    pub scores: BTreeMap<usize, f64>,
}

/// LSTM input for a chat that may have lost every token in preprocessing:
/// an empty sequence becomes a single UNK.
pub fn lstm_input(seq: &TokenSequence) -> TokenSequence {
    if seq.true_len > 0 {
        return seq.clone();
    }
    let mut ids = seq.ids.clone();
    if ids.is_empty() {
        ids.push(UNK);
    } else {
        ids[0] = UNK;
    }
    TokenSequence { ids, true_len: 1 }
}

impl ClassifierHandle {
    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn classes(&self) -> &[usize] {
        self.model.classes()
    }

    pub fn predict(&self, doc: &EncodedDoc) -> Result<StageOutput> {
        let expected = self.model.vocab_fingerprint();
        if doc.vocab_fingerprint != expected {
            return Err(Error::Fingerprint {
                expected: expected.to_string(),
                found: doc.vocab_fingerprint.clone(),
            });
        }
        let (class, scores) = match &self.model {
            Model::Forest(m) => {
                let (class, votes) = forest_predict(m, &doc.tfidf)?;
                let n = m.trees.len() as f64;
                (class, votes.into_iter().map(|(c, v)| (c, v as f64 / n)).collect())
            }
            Model::Lstm(m) => {
                let (class, scores) = m.predict(&lstm_input(&doc.seq))?;
                (class, m.classes.iter().copied().zip(scores).collect())
            }
        };
        Ok(StageOutput {
            task: self.task,
            class,
            scores,
        })
    }
}

/// Trains one classifier on `rows` with labels in `task`'s space.
fn fit_classifier(
    rows: &[&EncodedChat],
    task: Task,
    kind: ModelKind,
    ctx: &FitContext<'_>,
    seed: u64,
) -> Result<ClassifierHandle> {
    if rows.is_empty() {
        return Err(Error::Data(format!("no training chats for the {task:?} stage")));
    }
    let fingerprint = ctx.featurizer.fingerprint();
    if let Some(r) = rows.iter().find(|r| r.doc.vocab_fingerprint != fingerprint) {
        return Err(Error::Fingerprint {
            expected: fingerprint,
            found: r.doc.vocab_fingerprint.clone(),
        });
    }
    let y: Vec<usize> = rows.iter().map(|r| task.class_of(r.sentiment, r.bloom)).collect();
    let plan = ctx.config.resample.map(|p| ResamplePlan {
        seed: derive_seed(seed, tag("resample")),
        ..p
    });
    match kind {
        ModelKind::Forest => {
            let x: Vec<_> = rows.iter().map(|r| r.doc.tfidf.clone()).collect();
            let (x, y) = match plan {
                Some(p) => {
                    let out = smote(&x, &y, &p)?;
                    (out.x, out.y)
                }
                None => (x, y),
            };
            let params = ForestParams {
                seed: derive_seed(seed, tag("forest")),
                ..ctx.config.forest.clone()
            };
            let model = fit_random_forest_jobs(&x, &y, &params, ctx.config.jobs.max(1))?.with_fingerprint(fingerprint);
            Ok(ClassifierHandle {
                task,
                model: Model::Forest(model),
                curve: None,
            })
        }
        ModelKind::Lstm => {
            let seqs: Vec<TokenSequence> = rows.iter().map(|r| lstm_input(&r.doc.seq)).collect();
            let (seqs, y) = match plan {
                Some(p) => random_oversample(&seqs, &y, &p)?,
                None => (seqs, y),
            };
            let base = if task == Task::Sentiment {
                &ctx.config.lstm_sentiment
            } else {
                &ctx.config.lstm_bloom
            };
            let hyper = LstmHyper {
                seed: derive_seed(seed, tag("lstm")),
                ..base.clone()
            };
            let mut classes = y.clone();
            classes.sort_unstable();
            classes.dedup();
            let setup = LstmSetup {
                vocab_size: ctx.featurizer.vocab.size(),
                classes,
                embeddings: ctx.embeddings.cloned(),
                vocab_fingerprint: fingerprint,
            };
            let train: Vec<(TokenSequence, usize)> = seqs.into_iter().zip(y).collect();
            let (model, curve) = lstm_fit(&train, &[], &setup, &hyper)?;
            Ok(ClassifierHandle {
                task,
                model: Model::Lstm(model),
                curve: Some(curve),
            })
        }
    }
}

/// Sentiment-only or Bloom-only classifier.
pub fn fit_single(train: &[EncodedChat], task: Task, kind: ModelKind, ctx: &FitContext<'_>) -> Result<ClassifierHandle> {
    if task == Task::Joint {
        return Err(Error::Config("use fit_multilabel for the joint task".into()));
    }
    let rows: Vec<&EncodedChat> = train.iter().collect();
    let seed = derive_seed(ctx.config.seed, tag(&format!("single-{task:?}")));
    fit_classifier(&rows, task, kind, ctx, seed)
}

/// One classifier over the 18 joint (sentiment, Bloom) classes.
pub fn fit_multilabel(train: &[EncodedChat], kind: ModelKind, ctx: &FitContext<'_>) -> Result<ClassifierHandle> {
    let rows: Vec<&EncodedChat> = train.iter().collect();
    fit_classifier(&rows, Task::Joint, kind, ctx, derive_seed(ctx.config.seed, tag("joint")))
}

pub fn predict_multilabel(handle: &ClassifierHandle, doc: &EncodedDoc) -> Result<(SentimentLabel, BloomLabel)> {
    if handle.task != Task::Joint {
        return Err(Error::Config("predict_multilabel needs a joint classifier".into()));
    }
    decode_joint(handle.predict(doc)?.class)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BESentModel {
    pub sentiment_stage: ClassifierHandle,
    /// Bloom classifier per sentiment, trained on chats with that gold sentiment.
    pub epistemic_stages: BTreeMap<SentimentLabel, ClassifierHandle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepPrediction {
    pub sentiment: SentimentLabel,
    pub bloom: BloomLabel,
    pub stage1: StageOutput,
    pub stage2: StageOutput,
}

pub fn fit_two_step(
    train: &[EncodedChat],
    stage1: ModelKind,
    stage2: ModelKind,
    ctx: &FitContext<'_>,
) -> Result<BESentModel> {
    let mut branches: BTreeMap<SentimentLabel, Vec<&EncodedChat>> = BTreeMap::new();
    for row in train {
        branches.entry(row.sentiment).or_default().push(row);
    }
    if let Some(s) = SentimentLabel::ALL.iter().find(|s| !branches.contains_key(s)) {
        return Err(Error::Data(format!("no training chats with sentiment {s}")));
    }
    let all: Vec<&EncodedChat> = train.iter().collect();
    let sentiment_stage = fit_classifier(
        &all,
        Task::Sentiment,
        stage1,
        ctx,
        derive_seed(ctx.config.seed, tag("stage1")),
    )?;
    let mut epistemic_stages = BTreeMap::new();
    for (s, rows) in branches {
        let seed = derive_seed(ctx.config.seed, tag(&format!("stage2-{s}")));
        epistemic_stages.insert(s, fit_classifier(&rows, Task::Bloom, stage2, ctx, seed)?);
    }
    Ok(BESentModel {
        sentiment_stage,
        epistemic_stages,
    })
}

pub fn predict_two_step(model: &BESentModel, doc: &EncodedDoc) -> Result<TwoStepPrediction> {
    let stage1 = model.sentiment_stage.predict(doc)?;
    let sentiment = SentimentLabel::from_code(stage1.class)
        .ok_or_else(|| Error::Data(format!("stage one emitted unknown class {}", stage1.class)))?;
    let branch = model
        .epistemic_stages
        .get(&sentiment)
        .ok_or_else(|| Error::Data(format!("no epistemic stage for {sentiment}")))?;
    let stage2 = branch.predict(doc)?;
    let bloom = BloomLabel::from_code(stage2.class)
        .ok_or_else(|| Error::Data(format!("stage two emitted unknown class {}", stage2.class)))?;
    Ok(TwoStepPrediction {
        sentiment,
        bloom,
        stage1,
        stage2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SentimentOnly,
    EpistemicOnly,
    Multilabel,
    TwoStep,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SentimentOnly => "sentiment_only",
            Mode::EpistemicOnly => "epistemic_only",
            Mode::Multilabel => "multilabel",
            Mode::TwoStep => "two_step",
        }
    }

    pub fn predicts_sentiment(self) -> bool {
        self != Mode::EpistemicOnly
    }

    pub fn predicts_bloom(self) -> bool {
        self != Mode::SentimentOnly
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentiment_only" | "sentiment" => Ok(Mode::SentimentOnly),
            "epistemic_only" | "epistemic" | "bloom" => Ok(Mode::EpistemicOnly),
            "multilabel" | "joint" => Ok(Mode::Multilabel),
            "two_step" | "hierarchical" => Ok(Mode::TwoStep),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Which classifiers to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub mode: Mode,
    /// Kind for single-stage modes and the sentiment stage.
    pub stage1: ModelKind,
    /// Kind for the Bloom stages of the two-step model.
    pub stage2: ModelKind,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            mode: Mode::TwoStep,
            stage1: ModelKind::Forest,
            stage2: ModelKind::Forest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Predictor {
    SentimentOnly { handle: ClassifierHandle },
    EpistemicOnly { handle: ClassifierHandle },
    Multilabel { handle: ClassifierHandle },
    TwoStep { model: BESentModel },
}

/// Labels predicted for one chat plus the stage outputs behind them. Facets
/// a mode does not predict are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sentiment: Option<SentimentLabel>,
    pub bloom: Option<BloomLabel>,
    pub stages: Vec<StageOutput>,
}

impl Predictor {
    pub fn fit(train: &[EncodedChat], spec: &ModelSpec, ctx: &FitContext<'_>) -> Result<Self> {
        Ok(match spec.mode {
            Mode::SentimentOnly => Predictor::SentimentOnly {
                handle: fit_single(train, Task::Sentiment, spec.stage1, ctx)?,
            },
            Mode::EpistemicOnly => Predictor::EpistemicOnly {
                handle: fit_single(train, Task::Bloom, spec.stage1, ctx)?,
            },
            Mode::Multilabel => Predictor::Multilabel {
                handle: fit_multilabel(train, spec.stage1, ctx)?,
            },
            Mode::TwoStep => Predictor::TwoStep {
                model: fit_two_step(train, spec.stage1, spec.stage2, ctx)?,
            },
        })
    }

    pub fn mode(&self) -> Mode {
        match self {
            Predictor::SentimentOnly { .. } => Mode::SentimentOnly,
            Predictor::EpistemicOnly { .. } => Mode::EpistemicOnly,
            Predictor::Multilabel { .. } => Mode::Multilabel,
            Predictor::TwoStep { .. } => Mode::TwoStep,
        }
    }

    pub fn predict(&self, doc: &EncodedDoc) -> Result<Prediction> {
        let unknown = |c: usize| Error::Data(format!("classifier emitted unknown class {c}"));
        Ok(match self {
            Predictor::SentimentOnly { handle } => {
                let out = handle.predict(doc)?;
                Prediction {
                    sentiment: Some(SentimentLabel::from_code(out.class).ok_or_else(|| unknown(out.class))?),
                    bloom: None,
                    stages: vec![out],
                }
            }
            Predictor::EpistemicOnly { handle } => {
                let out = handle.predict(doc)?;
                Prediction {
                    sentiment: None,
                    bloom: Some(BloomLabel::from_code(out.class).ok_or_else(|| unknown(out.class))?),
                    stages: vec![out],
                }
            }
            Predictor::Multilabel { handle } => {
                let out = handle.predict(doc)?;
                let (s, b) = decode_joint(out.class)?;
                Prediction {
                    sentiment: Some(s),
                    bloom: Some(b),
                    stages: vec![out],
                }
            }
            Predictor::TwoStep { model } => {
                let p = predict_two_step(model, doc)?;
                Prediction {
                    sentiment: Some(p.sentiment),
                    bloom: Some(p.bloom),
                    stages: vec![p.stage1, p.stage2],
                }
            }
        })
    }

    /// Every stage, for inspection (e.g. tree export).
    pub fn handles(&self) -> Vec<&ClassifierHandle> {
        match self {
            Predictor::SentimentOnly { handle }
            | Predictor::EpistemicOnly { handle }
            | Predictor::Multilabel { handle } => vec![handle],
            Predictor::TwoStep { model } => {
                let mut v = vec![&model.sentiment_stage];
                v.extend(model.epistemic_stages.values());
                v
            }
        }
    }
}

/// Vocabulary and sequence settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureParams {
    pub min_df: usize,
    pub max_size: usize,
    /// Sequence length for the LSTM input.
    pub seq_len: usize,
    /// Pretrained word vectors (GloVe-style text) to warm-start embeddings.
    pub embeddings_path: Option<PathBuf>,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            min_df: 1,
            max_size: 20_000,
            seq_len: 50,
            embeddings_path: None,
        }
    }
}

/// Preprocesses and encodes labeled chats against a vocabulary built from
/// them. Returns the featurizer, optional warm-start embeddings, and the
/// encoded rows.
pub fn prepare_training(
    chats: &[LabeledChat],
    preprocessor: &Preprocessor,
    features: &FeatureParams,
    embed_dim: usize,
    seed: u64,
) -> Result<(Featurizer, Option<EmbeddingMatrix>, Vec<EncodedChat>)> {
    let docs: Vec<_> = chats
        .iter()
        .map(|c| preprocessor.doc(&c.chat.id, &c.chat.text))
        .collect();
    let vocab = build_vocabulary(&docs, features.min_df, features.max_size)?;
    let featurizer = Featurizer::new(vocab, features.seq_len)?;
    let embeddings = match &features.embeddings_path {
        Some(path) => {
            let mut rng = seeded(derive_seed(seed, tag("embeddings")));
            Some(load_embeddings(path, &featurizer.vocab, embed_dim, &mut rng)?)
        }
        None => None,
    };
    let fp = featurizer.fingerprint();
    let rows = docs
        .iter()
        .zip(chats)
        .map(|(d, c)| EncodedChat {
            doc: featurizer.encode_with(d, &fp),
            sentiment: c.sentiment,
            bloom: c.bloom,
        })
        .collect();
    Ok((featurizer, embeddings, rows))
}

/// Everything needed to go from raw text to labels, as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub format_version: u32,
    pub seed: u64,
    pub config_digest: String,
    pub preprocessor: Preprocessor,
    pub featurizer: Featurizer,
    pub predictor: Predictor,
}

impl Pipeline {
    pub fn fit(
        chats: &[LabeledChat],
        preprocessor: Preprocessor,
        features: &FeatureParams,
        spec: &ModelSpec,
        config: &StageConfig,
    ) -> Result<Self> {
        let embed_dim = config.lstm_sentiment.embed_dim;
        if spec.stage1 == ModelKind::Lstm
            && spec.stage2 == ModelKind::Lstm
            && config.lstm_bloom.embed_dim != embed_dim
        {
            return Err(Error::Config("LSTM stages must share embed_dim".into()));
        }
        let (featurizer, embeddings, rows) = prepare_training(chats, &preprocessor, features, embed_dim, config.seed)?;
        let ctx = FitContext {
            featurizer: &featurizer,
            embeddings: embeddings.as_ref(),
            config,
        };
        let predictor = Predictor::fit(&rows, spec, &ctx)?;
        Ok(Pipeline {
            format_version: FORMAT_VERSION,
            seed: config.seed,
            config_digest: String::new(),
            preprocessor,
            featurizer,
            predictor,
        })
    }

    pub fn encode(&self, chat_id: &str, text: &str) -> EncodedDoc {
        self.featurizer.encode(&self.preprocessor.doc(chat_id, text))
    }

    pub fn predict_text(&self, text: &str) -> Result<Prediction> {
        self.predictor.predict(&self.encode("", text))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_format_version(&value)?;
        Ok(serde_json::from_value(value)?)
    }
}
