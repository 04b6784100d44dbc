use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn besent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_besent"))
        .args(args)
        .env_remove("BESENT_YOUTUBE_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

const SENT: [(&str, [&str; 2]); 3] = [
    ("positive", ["mantap", "keren"]),
    ("neutral", ["oke", "sip"]),
    ("negative", ["kecewa", "payah"]),
];
const BLOOM: [(&str, [&str; 2]); 3] = [
    ("remembering", ["hafal", "ingat"]),
    ("understanding", ["paham", "jelas"]),
    ("applying", ["coba", "praktik"]),
];

fn write_dataset(dir: &Path) -> PathBuf {
    let mut lines = String::new();
    for i in 0..90 {
        let (s, sw) = SENT[i % 3];
        let (b, bw) = BLOOM[(i / 3) % 3];
        let text = format!("{} {} materi video", sw[i % 2], bw[(i / 9) % 2]);
        let row = json!({ "id": format!("c{i}"), "forum_type": "main", "text": text, "sentiment": s, "bloom": b });
        lines += &format!("{row}\n");
    }
    let path = dir.join("d.jsonl");
    std::fs::write(&path, lines).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn evaluate_writes_report_with_digest_and_seed() {
    let dir = TempDir::new().unwrap();
    let data = write_dataset(dir.path());
    let report = dir.path().join("out.json");
    let out = besent(&[
        "evaluate", "--data", s(&data), "--mode", "two_step", "--stage1", "forest", "--stage2", "forest", "--k", "5",
        "--seed", "7", "--n-trees", "10", "--report", s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["report_version"], 1);
    assert_eq!(r["seed"], 7);
    assert_eq!(r["config_digest"].as_str().unwrap().len(), 64);
    let facets: Vec<&str> = r["methods"].as_array().unwrap().iter().map(|m| m["facet"].as_str().unwrap()).collect();
    assert_eq!(facets, ["sentiment", "bloom", "pair"]);
    assert_eq!(r["methods"][0]["folds"].as_array().unwrap().len(), 5);
}

#[test]
fn two_methods_get_a_significance_entry_or_note() {
    let dir = TempDir::new().unwrap();
    let data = write_dataset(dir.path());
    let out = besent(&[
        "evaluate", "--data", s(&data), "--mode", "sentiment_only", "--method", "forest", "--method", "lstm",
        "--k", "3", "--epochs", "1", "--hidden", "4", "--embed-dim", "4", "--n-trees", "5",
    ]);
    let r = stdout_json(&out);
    let methods: Vec<&str> = r["methods"].as_array().unwrap().iter().map(|m| m["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["RF", "LSTM"]);
    let tested = !r["significance"].as_array().unwrap().is_empty();
    let noted = r["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().contains("RF vs LSTM"));
    assert!(tested || noted);
}

#[test]
fn predict_output_shape() {
    let dir = TempDir::new().unwrap();
    let data = write_dataset(dir.path());
    let model = dir.path().join("m.json");
    let t = besent(&["train", "--data", s(&data), "--model", s(&model), "--n-trees", "10", "--seed", "3"]);
    let summary = stdout_json(&t);
    assert_eq!(summary["mode"], "two_step");

    let p = stdout_json(&besent(&["predict", "--model", s(&model), "--text", "Terima kasih tutornya"]));
    assert_eq!(p["seed"], 3);
    assert_eq!(p["config_digest"], summary["config_digest"]);
    let pred = &p["prediction"];
    assert!(["positive", "neutral", "negative"].contains(&pred["sentiment"].as_str().unwrap()));
    assert!(pred["bloom"].is_string());
    let stages = pred["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 2);
    let total: f64 = stages[0]["scores"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let id = stdout_json(&besent(&["predict", "--model", s(&model), "--text", "mantap paham", "--labels", "id"]));
    assert!(["positif", "netral", "negatif"].contains(&id["prediction"]["sentiment"].as_str().unwrap()));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let data = write_dataset(dir.path());
    let model = dir.path().join("m.json");
    let report = dir.path().join("report.json");
    let run = || {
        let t = besent(&[
            "train", "--data", s(&data), "--model", s(&model), "--stage1", "lstm", "--epochs", "1", "--hidden", "4",
            "--embed-dim", "4", "--n-trees", "5",
        ]);
        assert!(t.status.success());
        let e = besent(&["evaluate", "--data", s(&data), "--k", "3", "--n-trees", "5", "--report", s(&report)]);
        assert!(e.status.success());
        (std::fs::read(&model).unwrap(), std::fs::read(&report).unwrap())
    };
    let first = run();
    assert!(first == run(), "outputs differ between runs");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = besent(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(besent(&["evaluate", "--bogus"]).status.code(), Some(1));
    assert_eq!(besent(&["--help"]).status.code(), Some(0));
}

#[test]
fn exit_codes_for_data_and_io_errors() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("none.jsonl");
    assert_eq!(besent(&["stats", "--data", s(&missing)]).status.code(), Some(3));
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": \"c1\", \"forum_type\": \"main\", \"text\": \"\"}\n").unwrap();
    assert_eq!(besent(&["stats", "--data", s(&bad)]).status.code(), Some(2));
    let data = write_dataset(dir.path());
    let out = besent(&["evaluate", "--data", s(&data), "--k", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let data = write_dataset(dir.path());
    let cfg = dir.path().join("cfg.json");
    let body = json!({ "paths": { "dataset": data }, "seed": 5, "mode": "sentiment_only", "eval": { "k": 3 } });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let r = stdout_json(&besent(&["evaluate", "--config", s(&cfg), "--seed", "9", "--n-trees", "5"]));
    assert_eq!(r["seed"], 9);
    assert_eq!(r["methods"].as_array().unwrap().len(), 1);
    assert_eq!(r["methods"][0]["folds"].as_array().unwrap().len(), 3);

    std::fs::write(&cfg, "{\"sed\": 1}").unwrap();
    assert_eq!(besent(&["evaluate", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn ingest_agreement_and_stats() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.jsonl");
    std::fs::write(
        &raw,
        "{\"id\":\"c1\",\"forum_type\":\"main\",\"text\":\"mantap paham\"}\n\
         {\"id\":\"c2\",\"forum_type\":\"reply\",\"parent_id\":\"c1\",\"text\":\"oke coba\"}\n",
    )
    .unwrap();
    let ann = dir.path().join("ann.jsonl");
    let mut lines = String::new();
    for (chat, votes) in [("c1", ["positive", "positive", "neutral"]), ("c2", ["neutral", "neutral", "neutral"])] {
        for (who, v) in ["a1", "a2", "a3"].iter().zip(votes) {
            let a = json!({ "chat_id": chat, "annotator_id": who, "sentiment": v, "bloom": "applying" });
            lines += &format!("{a}\n");
        }
    }
    std::fs::write(&ann, lines).unwrap();
    let out = dir.path().join("gold.jsonl");
    let summary = stdout_json(&besent(&[
        "ingest", "--input", s(&raw), "--annotations", s(&ann), "--out", s(&out), "--seed", "4",
    ]));
    assert_eq!(summary["labeled"], 2);
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gold.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 4);
    assert!(meta["config_digest"].is_string());

    let k = stdout_json(&besent(&["agreement", "--annotations", s(&ann), "--data", s(&out)]));
    assert_eq!(k["fleiss_kappa"]["bloom"], 1.0);
    assert!(k["fleiss_kappa"]["sentiment"].as_f64().unwrap() < 1.0);

    let st = stdout_json(&besent(&["stats", "--data", s(&out)]));
    assert_eq!(st["stats"]["n_reply"], 1);
    assert_eq!(st["labeled"], 2);
}

#[test]
fn fetch_from_fixture() {
    let dir = TempDir::new().unwrap();
    let fixture = dir.path().join("pages.json");
    let comment = |id: &str, text: &str| json!({ "id": id, "snippet": { "textOriginal": text } });
    let pages = json!([{
        "items": [{
            "id": "t1",
            "snippet": { "videoId": "v1", "topLevelComment": comment("m1", "Terima kasih tutornya") },
            "replies": { "comments": [comment("r1", "Sama sama")] }
        }]
    }]);
    std::fs::write(&fixture, pages.to_string()).unwrap();
    let out = dir.path().join("chats.jsonl");
    let r = stdout_json(&besent(&["fetch", "--video", "v1", "--fixture", s(&fixture), "--out", s(&out)]));
    assert_eq!(r["chats"], 2);
    assert_eq!(r["source"], "fixture");
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 2);
    // Live fetch without a key is a configuration error.
    let live = besent(&["fetch", "--video", "v1", "--out", s(&out)]);
    assert_eq!(live.status.code(), Some(2));
}

#[test]
fn export_tree_and_gradcheck() {
    let dir = TempDir::new().unwrap();
    let data = write_dataset(dir.path());
    let model = dir.path().join("m.json");
    assert!(besent(&["train", "--data", s(&data), "--model", s(&model), "--n-trees", "3"]).status.success());
    let out = besent(&["export-tree", "--model", s(&model), "--stage", "1", "--max-depth", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("level\tbranch\tsplit\tgini\n0\tRoot"));
    assert_eq!(besent(&["export-tree", "--model", s(&model), "--stage", "9"]).status.code(), Some(2));

    let g = stdout_json(&besent(&["gradcheck", "--seed", "2"]));
    assert_eq!(g["pass"], true);
    assert_eq!(g["checked"], 50);
}
