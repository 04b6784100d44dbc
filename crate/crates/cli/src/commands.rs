use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use besent_core::corpus::youtube::{chats_from_pages, fetch_live};
use besent_core::corpus::{
    compute_fleiss_kappa, labeled_chats, load_annotations, load_dataset, merge_gold_labels, save_dataset,
    AgreementFacet, Chat, DataFormat, DatasetStats, FetchSource, LabeledChat, Record, TiePolicy,
};
use besent_core::eval::{
    class_name, evaluate_cv, evaluate_holdout, write_report, EvalReport, EvalSetup, Facet, LabelStyle, MethodResult,
    ReportFormat,
};
use besent_core::hierarchy::{Mode, ModelSpec, Pipeline, Prediction, Task};
use besent_core::models::{export_tree, gradcheck, Model, ModelKind};
use besent_core::rng::{derive_seed, tag};
use besent_core::{Error, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{resolve, CommonArgs, PipelineArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "besent", version, about = "Two-step sentiment and Bloom-level classification of course chats")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate raw chats, optionally merge annotator labels, write a dataset.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Per-annotator labels (chat_id, annotator_id, sentiment, bloom).
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// What to do without a strict majority: drop | first_annotator
        #[arg(long, default_value = "drop")]
        tie_policy: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Download comment threads (or read a stored API fixture) as chats.
    Fetch {
        #[arg(long = "video", required = true)]
        videos: Vec<String>,
        /// Read API pages from this JSON file instead of the network.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Store the raw pages of a live fetch for later replay.
        #[arg(long)]
        save_fixture: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Dataset counts and label distributions.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
    },
    /// Fleiss' kappa of an annotation file.
    Agreement {
        #[arg(long)]
        annotations: PathBuf,
        /// Check that every annotated chat exists in this dataset.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Fit a model on the whole dataset and save it.
    Train {
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Random search over LSTM epochs in MIN-MAX on a hold-out split.
        #[arg(long)]
        search_epochs: Option<String>,
        #[arg(long, default_value_t = 4)]
        search_trials: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Cross-validate (or hold-out validate) one or more methods and write a report.
    Evaluate {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Method to compare, e.g. `forest`, `lstm`, `forest+lstm` (stage1+stage2).
        /// Repeat to compare several; the first is tested against the rest.
        #[arg(long = "method")]
        methods: Vec<String>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        #[arg(long, default_value = "english")]
        labels: LabelStyle,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Label text with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "text", required = true)]
        texts: Vec<String>,
        /// english | id (Indonesian short codes)
        #[arg(long, default_value = "english")]
        labels: LabelStyle,
    },
    /// Print the top of one tree of a saved forest stage.
    ExportTree {
        #[arg(long)]
        model: PathBuf,
        /// Stage index: 0 is the first stage; two-step Bloom branches follow
        /// in positive, neutral, negative order.
        #[arg(long, default_value_t = 0)]
        stage: usize,
        #[arg(long, default_value_t = 0)]
        tree: usize,
        #[arg(long, default_value_t = 3)]
        max_depth: usize,
    },
    /// Compare backpropagated LSTM gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        hidden: usize,
        #[arg(long, default_value_t = 4)]
        embed_dim: usize,
        #[arg(long, default_value_t = 3)]
        seq_len: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 50)]
        subset: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// `<out>.meta.json` next to a data file, recording how it was made.
fn write_meta(out: &Path, cfg: &RunConfig, extra: Value) -> Result<()> {
    let mut meta = json!({ "config_digest": cfg.digest(), "seed": cfg.seed });
    if let (Some(m), Value::Object(e)) = (meta.as_object_mut(), extra) {
        m.extend(e);
    }
    let mut path = out.as_os_str().to_owned();
    path.push(".meta.json");
    write_file(Path::new(&path), &pretty(&meta)?)
}

fn load_labeled(path: &Path) -> Result<Vec<LabeledChat>> {
    let records = load_dataset(path, DataFormat::from_path(path))?;
    let labeled = labeled_chats(&records);
    if labeled.is_empty() {
        return Err(Error::Data(format!("{} has no labeled chats", path.display())));
    }
    Ok(labeled)
}

fn dataset_path(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.paths
        .dataset
        .clone()
        .ok_or_else(|| Error::Config("no dataset given (--data or paths.dataset)".into()))
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Ingest {
            input,
            annotations,
            tie_policy,
            out,
            common,
        } => ingest(&input, annotations.as_deref(), &tie_policy, &out, &common),
        Command::Fetch {
            videos,
            fixture,
            save_fixture,
            out,
            common,
        } => fetch(&videos, fixture.as_deref(), save_fixture.as_deref(), &out, &common),
        Command::Stats { data, format } => stats(&data, format),
        Command::Agreement { annotations, data } => agreement(&annotations, data.as_deref()),
        Command::Train {
            pipeline,
            model,
            search_epochs,
            search_trials,
            common,
        } => train(&pipeline, model, search_epochs.as_deref(), search_trials, &common),
        Command::Evaluate {
            pipeline,
            methods,
            report,
            format,
            labels,
            common,
        } => evaluate(&pipeline, &methods, report, format, labels, &common),
        Command::Predict { model, texts, labels } => predict(&model, &texts, labels),
        Command::ExportTree {
            model,
            stage,
            tree,
            max_depth,
        } => export(&model, stage, tree, max_depth),
        Command::Gradcheck {
            hidden,
            embed_dim,
            seq_len,
            classes,
            h,
            subset,
            tolerance,
            seed,
        } => grad(hidden, embed_dim, seq_len, classes, h, subset, tolerance, seed),
    }
}

fn ingest(input: &Path, annotations: Option<&Path>, tie_policy: &str, out: &Path, common: &CommonArgs) -> Result<String> {
    let cfg = resolve(common, None)?;
    let policy = match tie_policy {
        "drop" => TiePolicy::Drop,
        "first_annotator" | "first" => TiePolicy::FirstAnnotator,
        other => return Err(Error::Config(format!("unknown tie policy `{other}`"))),
    };
    let mut records = load_dataset(input, DataFormat::from_path(input))?;
    let mut unresolved = Vec::new();
    if let Some(path) = annotations {
        let set = load_annotations(path, DataFormat::from_path(path))?;
        let chats: Vec<Chat> = records.iter().map(|r| r.chat.clone()).collect();
        set.validate_against(&chats)?;
        let merged = merge_gold_labels(&chats, &set, policy)?;
        let gold: BTreeMap<String, LabeledChat> =
            merged.labeled.into_iter().map(|l| (l.chat.id.clone(), l)).collect();
        for r in &mut records {
            if let Some(l) = gold.get(&r.chat.id) {
                *r = Record::from(l.clone());
            }
        }
        unresolved = merged.unresolved;
    }
    save_dataset(out, DataFormat::from_path(out), &records)?;
    let n_labeled = records.iter().filter(|r| r.gold.is_some()).count();
    let summary = json!({
        "records": records.len(),
        "labeled": n_labeled,
        "unresolved": unresolved,
        "out": out.display().to_string(),
    });
    write_meta(out, &cfg, json!({ "command": "ingest", "records": records.len() }))?;
    pretty(&summary)
}

fn fetch(
    videos: &[String],
    fixture: Option<&Path>,
    save_fixture: Option<&Path>,
    out: &Path,
    common: &CommonArgs,
) -> Result<String> {
    let cfg = resolve(common, None)?;
    let (chats, source) = match fixture {
        Some(path) => {
            let chats = besent_core::corpus::fetch_youtube_comments(videos, FetchSource::Fixture, Some(path))?;
            (chats, "fixture")
        }
        None => {
            let (pages, chats) = fetch_live(videos)?;
            if let Some(p) = save_fixture {
                write_file(p, &pretty(&pages)?)?;
                // Replaying the saved pages must give the same chats.
                debug_assert_eq!(chats_from_pages(&pages, videos)?, chats);
            }
            (chats, "live")
        }
    };
    let records: Vec<Record> = chats.into_iter().map(Record::from).collect();
    save_dataset(out, DataFormat::from_path(out), &records)?;
    write_meta(out, &cfg, json!({ "command": "fetch", "source": source, "videos": videos }))?;
    pretty(&json!({ "chats": records.len(), "source": source, "out": out.display().to_string() }))
}

fn stats(data: &Path, format: ReportFormat) -> Result<String> {
    let records = load_dataset(data, DataFormat::from_path(data))?;
    let s = DatasetStats::from_records(&records);
    match format {
        ReportFormat::Json => pretty(&json!({
            "stats": s,
            "labeled": s.n_labeled(),
            "sentiment_percent": s.sentiment_percentages(),
            "bloom_percent": s.bloom_percentages(),
        })),
        ReportFormat::Markdown => {
            let mut out = String::from("| Item | Count |\n|---|---|\n");
            if let Some(v) = s.n_videos {
                out += &format!("| Videos | {v} |\n");
            }
            out += &format!(
                "| Main chats | {} |\n| Reply chats | {} |\n| Chats | {} |\n| Words | {} |\n\n",
                s.n_main, s.n_reply, s.n_chats, s.n_words
            );
            out += "| Label | Count | % |\n|---|---|---|\n";
            let sp = s.sentiment_percentages();
            for ((label, n), p) in s.sentiment_counts.iter().zip(sp) {
                out += &format!("| {label} | {n} | {p:.2} |\n");
            }
            let bp = s.bloom_percentages();
            for ((label, n), p) in s.bloom_counts.iter().zip(bp) {
                out += &format!("| {label} | {n} | {p:.2} |\n");
            }
            Ok(out)
        }
    }
}

fn agreement(annotations: &Path, data: Option<&Path>) -> Result<String> {
    let set = load_annotations(annotations, DataFormat::from_path(annotations))?;
    if let Some(d) = data {
        let chats: Vec<Chat> = load_dataset(d, DataFormat::from_path(d))?.into_iter().map(|r| r.chat).collect();
        set.validate_against(&chats)?;
    }
    pretty(&json!({
        "annotators": set.annotator_ids(),
        "fleiss_kappa": {
            "sentiment": compute_fleiss_kappa(&set, AgreementFacet::Sentiment)?,
            "bloom": compute_fleiss_kappa(&set, AgreementFacet::Bloom)?,
            "pair": compute_fleiss_kappa(&set, AgreementFacet::Pair)?,
        }
    }))
}

fn uses_lstm(cfg: &RunConfig) -> bool {
    cfg.stage1 == ModelKind::Lstm || (cfg.mode == Mode::TwoStep && cfg.stage2 == ModelKind::Lstm)
}

/// Mean hold-out accuracy over the facets a mode predicts.
fn holdout_score(data: &[LabeledChat], cfg: &RunConfig) -> Result<f64> {
    let preprocessor = cfg.preprocessor()?;
    let stages = cfg.stages();
    let setup = EvalSetup {
        preprocessor: &preprocessor,
        features: &cfg.features,
        spec: cfg.spec(),
        stages: &stages,
    };
    let ev = evaluate_holdout(data, cfg.eval.train_ratio, cfg.seed, &setup)?;
    let o = &ev.outcomes[0];
    let accs: Vec<f64> = [&o.sentiment, &o.bloom]
        .into_iter()
        .flatten()
        .map(|f| f.accuracy)
        .collect();
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("expected MIN-MAX, got `{s}`"));
    let (a, b) = s.split_once('-').ok_or_else(bad)?;
    let lo: usize = a.trim().parse().map_err(|_| bad())?;
    let hi: usize = b.trim().parse().map_err(|_| bad())?;
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn train(
    pipeline: &PipelineArgs,
    model: Option<PathBuf>,
    search_epochs: Option<&str>,
    trials: usize,
    common: &CommonArgs,
) -> Result<String> {
    let mut cfg = resolve(common, Some(pipeline))?;
    if let Some(m) = model {
        cfg.paths.model = Some(m);
    }
    let out = cfg
        .paths
        .model
        .clone()
        .ok_or_else(|| Error::Config("no model path given (--model or paths.model)".into()))?;
    let data = load_labeled(&dataset_path(&cfg)?)?;

    let mut search = Vec::new();
    if let Some(range) = search_epochs {
        if !uses_lstm(&cfg) {
            return Err(Error::Config("--search-epochs needs an LSTM stage".into()));
        }
        let (lo, hi) = parse_range(range)?;
        let mut best: Option<(f64, usize)> = None;
        for t in 0..trials.max(1) {
            let epochs = lo + (derive_seed(cfg.seed, tag(&format!("epoch-search-{t}"))) % (hi - lo + 1) as u64) as usize;
            let mut trial = cfg.clone();
            trial.lstm_sentiment.epochs = epochs;
            trial.lstm_bloom.epochs = epochs;
            let score = holdout_score(&data, &trial)?;
            search.push(json!({ "epochs": epochs, "holdout_accuracy": score }));
            if best.is_none_or(|(s, e)| score > s || (score == s && epochs < e)) {
                best = Some((score, epochs));
            }
        }
        let (_, epochs) = best.expect("at least one trial");
        cfg.lstm_sentiment.epochs = epochs;
        cfg.lstm_bloom.epochs = epochs;
    }

    let digest = cfg.digest();
    let mut p = Pipeline::fit(&data, cfg.preprocessor()?, &cfg.features, &cfg.spec(), &cfg.stages())?;
    p.config_digest = digest.clone();
    write_file(&out, &p.to_json()?)?;
    let mut warnings = Vec::new();
    for h in p.predictor.handles() {
        if let Some(c) = &h.curve {
            warnings.extend(c.warnings.iter().cloned());
        }
    }
    pretty(&json!({
        "model": out.display().to_string(),
        "mode": cfg.mode,
        "train_chats": data.len(),
        "vocabulary": p.featurizer.vocab.size(),
        "config_digest": digest,
        "seed": cfg.seed,
        "epoch_search": search,
        "warnings": warnings,
    }))
}

fn method_spec(name: &str, mode: Mode) -> Result<(String, ModelSpec)> {
    let parse = |s: &str| s.parse::<ModelKind>();
    let (s1, s2) = match name.split_once('+') {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let k = parse(name)?;
            (k, k)
        }
    };
    let label = |k: ModelKind| match k {
        ModelKind::Forest => "RF",
        ModelKind::Lstm => "LSTM",
    };
    let display = if mode == Mode::TwoStep && s1 != s2 {
        format!("{}+{}", label(s1), label(s2))
    } else {
        label(s1).to_string()
    };
    Ok((
        display,
        ModelSpec {
            mode,
            stage1: s1,
            stage2: s2,
        },
    ))
}

fn evaluate(
    pipeline: &PipelineArgs,
    methods: &[String],
    report_path: Option<PathBuf>,
    format: ReportFormat,
    labels: LabelStyle,
    common: &CommonArgs,
) -> Result<String> {
    let mut cfg = resolve(common, Some(pipeline))?;
    if let Some(r) = report_path {
        cfg.paths.report = Some(r);
    }
    let data = load_labeled(&dataset_path(&cfg)?)?;
    let preprocessor = cfg.preprocessor()?;
    let stages = cfg.stages();
    let names: Vec<String> = if methods.is_empty() {
        vec![format!("{}+{}", cfg.stage1.as_str(), cfg.stage2.as_str())]
    } else {
        methods.to_vec()
    };
    let protocol = if cfg.eval.holdout {
        format!(
            "stratified hold-out, {:.0}% train",
            100.0 * cfg.eval.train_ratio
        )
    } else {
        format!("stratified {}-fold cross-validation", cfg.eval.k)
    };
    let mut report = EvalReport::new(cfg.seed, cfg.digest(), protocol);
    let mut method_names = Vec::new();
    for name in &names {
        let (display, spec) = method_spec(name, cfg.mode)?;
        let setup = EvalSetup {
            preprocessor: &preprocessor,
            features: &cfg.features,
            spec,
            stages: &stages,
        };
        let ev = if cfg.eval.holdout {
            evaluate_holdout(&data, cfg.eval.train_ratio, cfg.seed, &setup)?
        } else {
            evaluate_cv(&data, cfg.eval.k, cfg.seed, cfg.jobs, &setup)?
        };
        for w in &ev.warnings {
            let note = format!("{display}: {w}");
            if !report.notes.contains(&note) {
                report.notes.push(note);
            }
        }
        report.notes.push(format!(
            "{display}: folds stratified on {}",
            setup.facet().as_str()
        ));
        report.methods.extend(ev.method_results(&display));
        method_names.push(display);
    }
    if !cfg.eval.holdout {
        for other in method_names.iter().skip(1) {
            for facet in [Facet::Sentiment, Facet::Bloom, Facet::Pair] {
                let has = |m: &str| report.methods.iter().any(|r: &MethodResult| r.method == m && r.facet == facet);
                if has(&method_names[0]) && has(other) {
                    if let Err(e) = report.compare(facet, &method_names[0], other, cfg.eval.alpha) {
                        report.notes.push(format!("{} vs {other} ({}): {e}", method_names[0], facet.as_str()));
                    }
                }
            }
        }
    }
    match &cfg.paths.report {
        Some(path) => {
            write_report(path, &report, format, labels)?;
            let summary: Vec<Value> = report
                .methods
                .iter()
                .map(|m| json!({ "method": m.method, "facet": m.facet, "mean": m.mean, "std_dev": m.std_dev }))
                .collect();
            pretty(&json!({ "report": path.display().to_string(), "results": summary }))
        }
        None => besent_core::eval::emit_report(&report, format, labels),
    }
}

fn render_prediction(p: &Prediction, labels: LabelStyle) -> Value {
    let stages: Vec<Value> = p
        .stages
        .iter()
        .map(|s| {
            let facet = match s.task {
                Task::Sentiment => Facet::Sentiment,
                Task::Bloom => Facet::Bloom,
                Task::Joint => Facet::Pair,
            };
            let scores: BTreeMap<String, f64> =
                s.scores.iter().map(|(&c, &v)| (class_name(facet, c, labels), v)).collect();
            json!({ "task": s.task, "class": class_name(facet, s.class, labels), "scores": scores })
        })
        .collect();
    json!({
        "sentiment": p.sentiment.map(|s| labels.render(s.name())),
        "bloom": p.bloom.map(|b| labels.render(b.name())),
        "stages": stages,
    })
}

fn load_pipeline(path: &Path) -> Result<Pipeline> {
    Pipeline::from_json(&read_file(path)?)
}

fn predict(model: &Path, texts: &[String], labels: LabelStyle) -> Result<String> {
    let p = load_pipeline(model)?;
    let mut out = Vec::new();
    for t in texts {
        let mut v = render_prediction(&p.predictor.predict(&p.encode("", t))?, labels);
        v["text"] = json!(t);
        out.push(v);
    }
    let body = if out.len() == 1 { out.pop().expect("one") } else { Value::Array(out) };
    pretty(&json!({
        "mode": p.predictor.mode(),
        "config_digest": p.config_digest,
        "seed": p.seed,
        "prediction": body,
    }))
}

fn export(model: &Path, stage: usize, tree: usize, max_depth: usize) -> Result<String> {
    let p = load_pipeline(model)?;
    let handles = p.predictor.handles();
    let h = handles
        .get(stage)
        .ok_or_else(|| Error::Config(format!("stage {stage} out of range ({} stages)", handles.len())))?;
    let Model::Forest(forest) = &h.model else {
        return Err(Error::Config(format!("stage {stage} is not a forest")));
    };
    let lines = export_tree(forest, tree, &p.featurizer.vocab, max_depth)?;
    let mut out = String::from("level\tbranch\tsplit\tgini\n");
    for l in lines {
        out += &format!("{l}\n");
    }
    Ok(out.trim_end().to_string())
}

#[allow(clippy::too_many_arguments)]
fn grad(
    hidden: usize,
    embed_dim: usize,
    seq_len: usize,
    classes: usize,
    h: f64,
    subset: usize,
    tolerance: f64,
    seed: u64,
) -> Result<String> {
    if seq_len == 0 || classes == 0 || hidden == 0 || embed_dim == 0 || h <= 0.0 {
        return Err(Error::Config("sizes and h must be positive".into()));
    }
    let vocab = seq_len + 4;
    let model = gradcheck::probe_model(vocab, classes, hidden, embed_dim, seed)?;
    let ids: Vec<u32> = (0..seq_len).map(|t| 2 + (t % (vocab - 2)) as u32).collect();
    let seq = besent_core::features::TokenSequence { ids, true_len: seq_len };
    let label = (seed as usize) % classes;
    let err = gradcheck::gradient_check(&model, &seq, label, h, subset, seed)?;
    let pass = err < tolerance;
    let out = pretty(&json!({
        "parameters": model.params.n_params(),
        "checked": subset.min(model.params.n_params()),
        "h": h,
        "max_relative_error": err,
        "tolerance": tolerance,
        "pass": pass,
    }))?;
    if pass {
        Ok(out)
    } else {
        Err(Error::Data(format!("gradient check failed: {out}")))
    }
}
