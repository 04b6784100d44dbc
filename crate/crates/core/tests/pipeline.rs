use besent_core::corpus::{load_dataset, save_dataset, BloomLabel, Chat, DataFormat, LabeledChat, Record, SentimentLabel};
use besent_core::eval::{evaluate_cv, evaluate_holdout, EvalSetup};
use besent_core::hierarchy::{FeatureParams, Mode, ModelSpec, Pipeline, StageConfig};
use besent_core::models::{ForestParams, ModelKind};
use besent_core::preprocess::{PreprocessConfig, Preprocessor, Stopwords};
use besent_core::resample::ResamplePlan;

fn corpus() -> Vec<LabeledChat> {
    let sent = [
        (SentimentLabel::Positive, "mantap"),
        (SentimentLabel::Neutral, "oke"),
        (SentimentLabel::Negative, "kecewa"),
    ];
    let bloom = [
        (BloomLabel::Understanding, "paham"),
        (BloomLabel::Applying, "coba"),
    ];
    (0..60)
        .map(|i| {
            let (s, sw) = sent[i % 3];
            let (b, bw) = bloom[(i / 3) % 2];
            LabeledChat::new(Chat::main(format!("c{i}"), format!("{sw} {bw} materi")), s, b)
        })
        .collect()
}

fn prep() -> Preprocessor {
    Preprocessor::with_stopwords(PreprocessConfig::default(), Stopwords::empty())
}

fn stages() -> StageConfig {
    StageConfig {
        forest: ForestParams {
            n_trees: 10,
            ..ForestParams::default()
        },
        resample: Some(ResamplePlan::default()),
        seed: 1,
        ..StageConfig::default()
    }
}

#[test]
fn every_mode_fits_and_predicts_after_reload() {
    for mode in [Mode::SentimentOnly, Mode::EpistemicOnly, Mode::Multilabel, Mode::TwoStep] {
        let spec = ModelSpec {
            mode,
            stage1: ModelKind::Forest,
            stage2: ModelKind::Forest,
        };
        let p = Pipeline::fit(&corpus(), prep(), &FeatureParams::default(), &spec, &stages()).unwrap();
        let back = Pipeline::from_json(&p.to_json().unwrap()).unwrap();
        let a = p.predict_text("mantap sekali paham").unwrap();
        assert_eq!(a, back.predict_text("mantap sekali paham").unwrap());
        assert_eq!(a.sentiment.is_some(), mode.predicts_sentiment());
        assert_eq!(a.bloom.is_some(), mode.predicts_bloom());
        if mode.predicts_sentiment() {
            assert_eq!(a.sentiment, Some(SentimentLabel::Positive));
        }
    }
}

#[test]
fn dataset_files_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let mut records: Vec<Record> = corpus().into_iter().map(Record::from).collect();
    records.push(Record::from(Chat::reply("r1", "c0", "setuju, \"mantap\"")));
    for name in ["d.jsonl", "d.csv"] {
        let path = dir.path().join(name);
        save_dataset(&path, DataFormat::from_path(&path), &records).unwrap();
        assert_eq!(load_dataset(&path, DataFormat::from_path(&path)).unwrap(), records);
    }
}

#[test]
fn holdout_and_cv_cover_the_data() {
    let data = corpus();
    let p = prep();
    let features = FeatureParams::default();
    let st = stages();
    let setup = EvalSetup {
        preprocessor: &p,
        features: &features,
        spec: ModelSpec::default(),
        stages: &st,
    };
    let h = evaluate_holdout(&data, 0.7, 3, &setup).unwrap();
    assert_eq!(h.outcomes.len(), 1);
    let val = h.outcomes[0].sentiment.as_ref().unwrap().confusion.total();
    assert_eq!(val, 18);

    let cv = evaluate_cv(&data, 4, 3, 1, &setup).unwrap();
    let total: usize = cv.outcomes.iter().map(|o| o.pair.as_ref().unwrap().confusion.total()).sum();
    assert_eq!(total, data.len());
    assert_eq!(cv, evaluate_cv(&data, 4, 3, 3, &setup).unwrap());
}
