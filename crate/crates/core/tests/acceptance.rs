//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints a PASS/FAIL line even when the others succeed.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use besent_core::corpus::{
    compute_fleiss_kappa, parse_dataset, write_dataset, AgreementFacet, Annotation, AnnotationSet, BloomLabel, Chat,
    DataFormat, LabeledChat, Record, SentimentLabel,
};
use besent_core::eval::{
    confusion_and_accuracy, emit_report, evaluate_cv, kfold_indices, mean, paired_t_test, sample_std, EvalReport,
    EvalSetup, LabelStyle, ReportFormat,
};
use besent_core::features::{FeatureVector, TokenSequence};
use besent_core::hierarchy::{FeatureParams, Mode, ModelSpec, Pipeline, StageConfig};
use besent_core::models::gradcheck::probe_model;
use besent_core::models::{
    check_gradient_at, fit_decision_tree, fit_random_forest, ForestParams, LstmHyper, ModelKind, TreeNode,
    sample_parameter_indices,
};
use besent_core::preprocess::{PreprocessConfig, Preprocessor, Stopwords};
use besent_core::resample::{smote, ResamplePlan, TargetCount};
use besent_core::rng::seeded;
use rand::Rng as _;

type Outcome = Result<String, String>;

/// Name, check and time budget in seconds.
type Criterion = (&'static str, fn() -> Outcome, u64);

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(x: f64, want: f64, tol: f64) -> bool {
    (x - want).abs() <= tol
}

// Fold accuracies of the reference 5-fold baseline.
const RF_SENT: [f64; 5] = [85.9, 83.0, 82.9, 84.0, 84.6];
const LSTM_SENT: [f64; 5] = [84.7, 82.9, 81.7, 81.9, 82.3];
const RF_EPI: [f64; 5] = [81.7, 80.4, 82.4, 83.4, 81.4];
const LSTM_EPI: [f64; 5] = [81.2, 76.9, 79.7, 81.7, 78.2];

/// Expands a percent-count matrix into (gold, pred) pairs.
fn pairs_from_matrix(m: &[[usize; 2]; 2]) -> (Vec<usize>, Vec<usize>) {
    let (mut g, mut p) = (Vec::new(), Vec::new());
    for (i, row) in m.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            g.extend(std::iter::repeat_n(i, n));
            p.extend(std::iter::repeat_n(j, n));
        }
    }
    (g, p)
}

fn criterion_1() -> Outcome {
    let mut parts = Vec::new();
    for (name, m, want) in [("RF", [[36, 22], [33, 9]], 45), ("LSTM", [[32, 26], [19, 23]], 55)] {
        let (g, p) = pairs_from_matrix(&m);
        let (cm, acc) = confusion_and_accuracy(&g, &p).map_err(|e| e.to_string())?;
        check(cm.counts == vec![m[0].to_vec(), m[1].to_vec()], format!("{name}: matrix not reproduced"))?;
        check(cm.trace() * 100 == want * cm.total(), format!("{name}: trace {} of {}", cm.trace(), cm.total()))?;
        check(acc == cm.trace() as f64 / cm.total() as f64, format!("{name}: accuracy field {acc}"))?;
        parts.push(format!("{name} {:.0}%", acc * 100.0));
    }
    Ok(parts.join(", "))
}

fn criterion_2() -> Outcome {
    let cols = [
        ("RF sentiment", RF_SENT, 84.1, 1.3, 0.1),
        ("LSTM sentiment", LSTM_SENT, 82.7, 1.2, 0.05),
        ("RF epistemic", RF_EPI, 81.9, 1.1, 0.05),
        ("LSTM epistemic", LSTM_EPI, 79.5, 2.0, 0.05),
    ];
    let mut parts = Vec::new();
    for (name, xs, want_mean, want_sd, sd_tol) in cols {
        let (m, s) = (mean(&xs), sample_std(&xs));
        check(close(m, want_mean, 0.05), format!("{name}: mean {m:.3} vs {want_mean}"))?;
        check(close(s, want_sd, sd_tol), format!("{name}: std {s:.3} vs {want_sd}"))?;
        parts.push(format!("{name} {m:.2}/{s:.2}"));
    }
    Ok(parts.join(", "))
}

fn criterion_3() -> Outcome {
    let r = paired_t_test(&RF_SENT, &LSTM_SENT, 0.05).map_err(|e| e.to_string())?;
    check(close(r.t_stat, 3.52, 0.01), format!("t = {}", r.t_stat))?;
    check(r.df == 4, format!("df = {}", r.df))?;
    check(close(r.p_value, 0.024, 0.002), format!("p = {}", r.p_value))?;
    check(r.significant, "not significant at 0.05")?;
    Ok(format!("t = {:.3}, df = {}, p = {:.4}", r.t_stat, r.df, r.p_value))
}

/// Clustered 6-d points, `counts[c]` of class `c`.
fn cluster_fixture(counts: &[usize], seed: u64) -> (Vec<FeatureVector>, Vec<usize>) {
    let mut rng = seeded(seed);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let v: Vec<f64> = (0..6).map(|d| (c * 3 + d) as f64 + rng.random_range(-1.0..1.0)).collect();
            x.push(FeatureVector::from_dense(&v));
            y.push(c);
        }
    }
    (x, y)
}

fn criterion_4() -> Outcome {
    let mut parts = Vec::new();
    for (name, counts, want) in [
        ("sentiment", vec![1742, 2332, 322], 2332),
        ("bloom", vec![36, 2688, 1599, 24, 24, 25], 2688),
    ] {
        let (x, y) = cluster_fixture(&counts, 4);
        let plan = ResamplePlan {
            target_count: TargetCount::MatchMajority,
            seed: 11,
            ..ResamplePlan::default()
        };
        let out = smote(&x, &y, &plan).map_err(|e| e.to_string())?;
        let mut got = BTreeMap::new();
        for &c in &out.y {
            *got.entry(c).or_insert(0usize) += 1;
        }
        check(got.values().all(|&n| n == want), format!("{name}: counts {got:?}"))?;
        check(out.x[..x.len()] == x[..], format!("{name}: originals changed"))?;
        let n = x.len();
        let mut worst: f64 = 0.0;
        for (i, o) in out.origins.iter().enumerate() {
            check(o.base < n && o.neighbor < n, "synthetic built from a synthetic")?;
            check(y[o.base] == y[o.neighbor] && y[o.base] == out.y[n + i], "cross-class segment")?;
            check((0.0..=1.0).contains(&o.t), "t outside [0, 1]")?;
            let (a, b, s) = (x[o.base].to_dense(), x[o.neighbor].to_dense(), out.x[n + i].to_dense());
            for d in 0..a.len() {
                worst = worst.max((s[d] - (a[d] + o.t * (b[d] - a[d]))).abs());
            }
        }
        check(worst < 1e-9, format!("{name}: residual {worst:e}"))?;
        parts.push(format!("{name} -> {want} each, {} synthetic, residual {worst:.1e}", out.origins.len()));
    }
    Ok(parts.join("; "))
}

fn criterion_5() -> Outcome {
    let model = probe_model(8, 3, 4, 4, 5).map_err(|e| e.to_string())?;
    let seq = TokenSequence {
        ids: vec![3, 6, 2],
        true_len: 3,
    };
    let (_, grad) = model.loss_and_grad(&seq, 1).map_err(|e| e.to_string())?;
    let idx = sample_parameter_indices(&model.params, 50, 5);
    check(idx.len() == 50, "fewer than 50 parameters sampled")?;
    let err = check_gradient_at(&model, &seq, 1, &grad, 1e-5, &idx).map_err(|e| e.to_string())?;
    check(err < 1e-4, format!("max relative error {err:e}"))?;

    // Mutation control: flip the largest sampled component.
    let &flip = idx
        .iter()
        .max_by(|&&a, &&b| grad.get_flat(a).abs().total_cmp(&grad.get_flat(b).abs()))
        .expect("non-empty");
    let mut bad = grad.clone();
    bad.set_flat(flip, -grad.get_flat(flip));
    let bad_err = check_gradient_at(&model, &seq, 1, &bad, 1e-5, &idx).map_err(|e| e.to_string())?;
    check(bad_err >= 1e-4, format!("mutated gradient passed ({bad_err:e})"))?;
    Ok(format!("max rel err {err:.1e}; mutated {bad_err:.1e} rejected"))
}

/// Exhaustive best root split: midpoint thresholds, first best wins.
fn brute_root(x: &[Vec<f64>], y: &[usize]) -> Option<(u32, f64)> {
    let gini = |idx: &[usize]| {
        let m = idx.len() as f64;
        let mut c = BTreeMap::new();
        for &i in idx {
            *c.entry(y[i]).or_insert(0.0) += 1.0;
        }
        1.0 - c.values().map(|v: &f64| (v / m) * (v / m)).sum::<f64>()
    };
    let all: Vec<usize> = (0..y.len()).collect();
    let n = y.len() as f64;
    let root = gini(&all);
    let mut best: Option<(u32, f64, f64)> = None;
    for f in 0..x[0].len() {
        let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[i][f] <= t);
            let gain = root - l.len() as f64 / n * gini(&l) - r.len() as f64 / n * gini(&r);
            if gain > 1e-12 && best.is_none_or(|b| gain > b.2 + 1e-12) {
                best = Some((f as u32, t, gain));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}

fn criterion_6() -> Outcome {
    // (a) single unbagged tree with all features vs a lone tree.
    let mut rng = seeded(21);
    let train: Vec<[f64; 2]> = (0..60).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]).collect();
    let label = |p: &[f64; 2]| usize::from(p[0] + 0.5 * p[1] > 7.0) + usize::from(p[1] > 8.0);
    let x: Vec<FeatureVector> = train.iter().map(|p| FeatureVector::from_dense(p)).collect();
    let y: Vec<usize> = train.iter().map(label).collect();
    let params = ForestParams {
        n_trees: 1,
        bootstrap: false,
        mtry: Some(2),
        seed: 3,
        ..ForestParams::default()
    };
    let forest = fit_random_forest(&x, &y, &params).map_err(|e| e.to_string())?;
    let tree = fit_decision_tree(&x, &y, &params, &mut seeded(99)).map_err(|e| e.to_string())?;
    let mut mismatches = 0;
    for i in 0..10 {
        for j in 0..10 {
            let q = FeatureVector::from_dense(&[i as f64 + 0.25, j as f64 + 0.75]);
            if forest.predict(&q).map_err(|e| e.to_string())? != tree.predict(&q) {
                mismatches += 1;
            }
        }
    }
    check(mismatches == 0, format!("(a) {mismatches} of 100 grid points differ"))?;

    // (b) root split on 4-sample toys.
    let mut rng = seeded(22);
    let full = ForestParams {
        mtry: Some(2),
        ..ForestParams::default()
    };
    for case in 0..300 {
        let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..2).map(|_| rng.random_range(-2..3) as f64).collect()).collect();
        let y: Vec<usize> = (0..4).map(|_| rng.random_range(0..2)).collect();
        let x: Vec<FeatureVector> = rows.iter().map(|r| FeatureVector::from_dense(r)).collect();
        let tree = fit_decision_tree(&x, &y, &full, &mut seeded(case)).map_err(|e| e.to_string())?;
        let found = match &tree {
            TreeNode::Internal { feature_id, threshold, .. } => Some((*feature_id, *threshold)),
            TreeNode::Leaf { .. } => None,
        };
        check(found == brute_root(&rows, &y), format!("(b) toy {case}: {found:?} vs {:?}", brute_root(&rows, &y)))?;
    }

    // (c) Fleiss' kappa.
    let ann = |chat: usize, who: &str, s: SentimentLabel, b: BloomLabel| Annotation {
        chat_id: format!("c{chat}"),
        annotator_id: who.into(),
        sentiment: s,
        bloom: b,
    };
    let mut unanimous = Vec::new();
    for i in 0..10 {
        for who in ["a1", "a2", "a3"] {
            unanimous.push(ann(i, who, SentimentLabel::ALL[i % 3], BloomLabel::ALL[i % 6]));
        }
    }
    let set = AnnotationSet::new(unanimous).map_err(|e| e.to_string())?;
    for facet in [AgreementFacet::Sentiment, AgreementFacet::Bloom, AgreementFacet::Pair] {
        let k = compute_fleiss_kappa(&set, facet).map_err(|e| e.to_string())?;
        check(k == 1.0, format!("(c) unanimous kappa {k}"))?;
    }
    use SentimentLabel::{Neutral as Neu, Positive as Pos};
    let table = [(Pos, Pos), (Neu, Neu), (Pos, Neu), (Neu, Pos)];
    let mut two = Vec::new();
    for (i, (a, b)) in table.into_iter().enumerate() {
        two.push(ann(i, "a", a, BloomLabel::Applying));
        two.push(ann(i, "b", b, BloomLabel::Applying));
    }
    // By hand: P_i = 1, 1, 0, 0 so P-bar = 0.5; p_pos = p_neu = 0.5 so
    // P-bar_e = 0.5; kappa = (0.5 - 0.5) / (1 - 0.5) = 0.
    let k = compute_fleiss_kappa(&AnnotationSet::new(two).map_err(|e| e.to_string())?, AgreementFacet::Sentiment)
        .map_err(|e| e.to_string())?;
    check(close(k, 0.0, 1e-12), format!("(c) 4-item kappa {k}"))?;
    Ok(format!("(a) 100/100 grid points agree; (b) 300 toys match; (c) kappa 1.0 and {k:.3}"))
}

const SENT_CUES: [[&str; 3]; 3] = [
    ["mantap", "keren", "hebat"],
    ["oke", "sip", "baiklah"],
    ["kecewa", "buruk", "payah"],
];
const BLOOM_CUES: [[&str; 3]; 6] = [
    ["hafal", "ingat", "sebut"],
    ["paham", "mengerti", "jelas"],
    ["coba", "praktik", "terapkan"],
    ["bandingkan", "uraikan", "telusuri"],
    ["nilai", "kritik", "timbang"],
    ["rancang", "buat", "ciptakan"],
];
const FILLER: [&str; 8] = ["materi", "video", "kak", "tutorial", "kode", "program", "bang", "kelas"];

/// Chats whose sentiment and Bloom level are each carried by one planted
/// cue word, the two cue sets being disjoint.
fn planted_corpus(n: usize, seed: u64) -> Vec<LabeledChat> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| {
            let s = i % 3;
            let b = (i / 3) % 6;
            let mut words = [
                SENT_CUES[s][rng.random_range(0..3)],
                BLOOM_CUES[b][rng.random_range(0..3)],
                FILLER[rng.random_range(0..8)],
                FILLER[rng.random_range(0..8)],
            ];
            let j = rng.random_range(0..words.len());
            words.swap(0, j);
            LabeledChat::new(
                Chat::main(format!("s{i}"), words.join(" ")),
                SentimentLabel::ALL[s],
                BloomLabel::ALL[b],
            )
        })
        .collect()
}

fn plain_preprocessor() -> Preprocessor {
    Preprocessor::with_stopwords(PreprocessConfig::default(), Stopwords::empty())
}

fn small_stages(seed: u64) -> StageConfig {
    StageConfig {
        forest: ForestParams {
            n_trees: 30,
            ..ForestParams::default()
        },
        lstm_sentiment: LstmHyper {
            hidden: 6,
            embed_dim: 6,
            epochs: 2,
            ..LstmHyper::default()
        },
        lstm_bloom: LstmHyper {
            hidden: 6,
            embed_dim: 6,
            epochs: 2,
            ..LstmHyper::default()
        },
        resample: Some(ResamplePlan::default()),
        jobs: 1,
        seed,
    }
}

fn criterion_7() -> Outcome {
    let data = planted_corpus(600, 70);
    let prep = plain_preprocessor();
    let features = FeatureParams::default();
    let stages = small_stages(7);
    let setup = EvalSetup {
        preprocessor: &prep,
        features: &features,
        spec: ModelSpec {
            mode: Mode::TwoStep,
            stage1: ModelKind::Forest,
            stage2: ModelKind::Forest,
        },
        stages: &stages,
    };
    let ev = evaluate_cv(&data, 5, 7, 1, &setup).map_err(|e| e.to_string())?;
    check(ev.outcomes.len() == 5, "expected 5 folds")?;
    let (mut s_acc, mut b_acc) = (Vec::new(), Vec::new());
    for o in &ev.outcomes {
        let (s, b, p) = match (&o.sentiment, &o.bloom, &o.pair) {
            (Some(s), Some(b), Some(p)) => (s.accuracy, b.accuracy, p.accuracy),
            _ => return Err(format!("fold {} is missing a facet", o.fold_index)),
        };
        check(p <= s, format!("fold {}: pair {p} > sentiment {s}", o.fold_index))?;
        s_acc.push(s);
        b_acc.push(b);
    }
    let (ms, mb) = (mean(&s_acc), mean(&b_acc));
    let worst = s_acc.iter().chain(&b_acc).copied().fold(f64::INFINITY, f64::min);
    check(worst >= 0.9, format!("a fold fell to {:.1}%", 100.0 * worst))?;
    Ok(format!(
        "sentiment {:.1}%, bloom {:.1}% (worst fold {:.1}%); pair <= sentiment on all folds",
        100.0 * ms,
        100.0 * mb,
        100.0 * worst
    ))
}

fn criterion_8() -> Outcome {
    let data = planted_corpus(120, 80);
    let features = FeatureParams::default();
    let stages = small_stages(8);
    let spec = ModelSpec {
        mode: Mode::TwoStep,
        stage1: ModelKind::Lstm,
        stage2: ModelKind::Forest,
    };
    let fit = || -> Result<String, String> {
        let p = Pipeline::fit(&data, plain_preprocessor(), &features, &spec, &stages).map_err(|e| e.to_string())?;
        p.to_json().map_err(|e| e.to_string())
    };
    let (a, b) = (fit()?, fit()?);
    check(a == b, "two fits with one seed differ")?;
    let back = Pipeline::from_json(&a).map_err(|e| e.to_string())?;
    check(back.to_json().map_err(|e| e.to_string())? == a, "model JSON round trip changed bytes")?;

    let prep = plain_preprocessor();
    let report = || -> Result<String, String> {
        let setup = EvalSetup {
            preprocessor: &prep,
            features: &features,
            spec: ModelSpec::default(),
            stages: &stages,
        };
        let ev = evaluate_cv(&data, 3, 8, 1, &setup).map_err(|e| e.to_string())?;
        let mut r = EvalReport::new(8, "digest", "3-fold");
        r.methods = ev.method_results("RF");
        emit_report(&r, ReportFormat::Json, LabelStyle::English).map_err(|e| e.to_string())
    };
    let r1 = report()?;
    check(r1 == report()?, "two reports with one seed differ")?;
    let reloaded = EvalReport::from_json(&r1).map_err(|e| e.to_string())?;
    let r2 = emit_report(&reloaded, ReportFormat::Json, LabelStyle::English).map_err(|e| e.to_string())?;
    check(r1 == r2, "report JSON round trip changed bytes")?;

    let mut records: Vec<Record> = data.iter().cloned().map(Record::from).collect();
    records.push(Record::from(Chat::reply("r1", "s0", "balas \"kutip\" ünïcode ✓")));
    let text = write_dataset(&records, DataFormat::Jsonl).map_err(|e| e.to_string())?;
    let parsed = parse_dataset(&text, DataFormat::Jsonl, "mem").map_err(|e| e.to_string())?;
    check(parsed == records, "dataset JSONL round trip lost data")?;

    let keys: Vec<usize> = (0..4396).map(|i| (i * 7) % 18).collect();
    let (folds, _) = kfold_indices(&keys, 5, 8).map_err(|e| e.to_string())?;
    let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    check(sizes == [880, 879, 879, 879, 879], format!("fold sizes {sizes:?}"))?;
    let mut all: Vec<usize> = folds.concat();
    all.sort_unstable();
    check(all == (0..4396).collect::<Vec<_>>(), "folds are not a partition")?;
    Ok(format!(
        "model {} bytes and report {} bytes reproduced; JSONL round trip ok; folds {sizes:?}",
        a.len(),
        r1.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("confusion matrices give 45% and 55%", criterion_1, 1),
        ("fold summary means and deviations", criterion_2, 1),
        ("paired t-test on sentiment folds", criterion_3, 1),
        ("match-majority rebalancing", criterion_4, 5),
        ("BPTT vs central differences", criterion_5, 10),
        ("forest, split and kappa oracles", criterion_6, 5),
        ("planted corpus 5-fold CV", criterion_7, 120),
        ("determinism and round trips", criterion_8, 30),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let took = start.elapsed();
        let over = took > Duration::from_secs(*budget);
        match result {
            Ok(detail) if !over => println!("PASS {}: {name} ({detail}) [{:.2}s]", i + 1, took.as_secs_f64()),
            Ok(detail) => {
                failed += 1;
                println!("FAIL {}: {name} ({detail}) [{:.2}s > {budget}s]", i + 1, took.as_secs_f64());
            }
            Err(why) => {
                failed += 1;
                println!("FAIL {}: {name}: {why} [{:.2}s]", i + 1, took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
