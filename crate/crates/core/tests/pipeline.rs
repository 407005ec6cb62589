use std::path::{Path, PathBuf};
use std::sync::Arc;

use viewpoint::index::FeatureIndex;
use viewpoint::pipeline::{export_report, read_report, report_json, run_pipeline, Pipeline, PipelineConfig, PipelineError};
use viewpoint::sentiment::TextTransform;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic")
}

fn config() -> PipelineConfig {
    PipelineConfig::load(&fixture_dir().join("pipeline.toml")).unwrap()
}

#[test]
fn fixture_counts() {
    let r = run_pipeline(&config(), "img_q").unwrap();
    // Seven images fall inside the radius; img_old has no post in range and
    // img_a1/img_a2 belong to one gallery.
    assert_eq!(r.retrieved.len(), 7);
    assert_eq!(r.retrieved_count, 6);
    assert_eq!(r.target_subset_count, 3);
    assert_eq!(r.mention.coverage, 0.5);
    assert_eq!((r.mention.in_title, r.mention.in_description, r.mention.in_hashtags), (2, 2, 2));
    assert_eq!(r.text_only_missed, 3);
    assert_eq!(r.message_hist.total(), r.retrieved_count);
    assert_eq!(r.target_hist.total(), r.target_subset_count);
}

#[test]
fn retrieved_is_the_radius_query_verbatim() {
    let c = config();
    let r = run_pipeline(&c, "img_q").unwrap();
    let index = FeatureIndex::load(&c.features).unwrap();
    assert_eq!(r.retrieved, index.query_radius_by_id("img_q", c.radius).unwrap());
    // Distance exactly 1.0 is outside a radius of 1.0.
    assert!(r.retrieved.iter().all(|h| h.image_id != "img_f"));
}

#[test]
fn tiny_radius_keeps_only_the_query() {
    let p = Pipeline::load(config()).unwrap();
    let r = p.run_with_radius("img_q", 1e-6).unwrap();
    assert_eq!(r.retrieved.len(), 1);
    assert_eq!(r.retrieved_count, 1);
}

#[test]
fn reports_are_byte_identical_and_round_trip() {
    let a = run_pipeline(&config(), "img_q").unwrap();
    let b = run_pipeline(&config(), "img_q").unwrap();
    assert_eq!(report_json(&a), report_json(&b));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    export_report(&a, &path).unwrap();
    assert_eq!(read_report(&path).unwrap(), a);
}

#[test]
fn unknown_query_and_missing_model() {
    assert!(matches!(run_pipeline(&config(), "nope"), Err(PipelineError::UnknownQuery(_))));
    let mut c = config();
    c.target_model = fixture_dir().join("absent.snt");
    assert!(matches!(run_pipeline(&c, "img_q"), Err(PipelineError::MissingModel(_))));
    let mut c = config();
    c.target_model = c.message_model.clone();
    assert!(matches!(run_pipeline(&c, "img_q"), Err(PipelineError::WrongHead { .. })));
}

#[test]
fn no_mentions_leave_the_target_histogram_empty() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let lines: Vec<String> = std::fs::read_to_string(fixture_dir().join("corpus.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["title"] = "Harbour".into();
            v["description"] = "A sunny day.".into();
            v["hashtags"] = serde_json::json!(["hamburg"]);
            v.to_string()
        })
        .collect();
    std::fs::write(&corpus, lines.join("\n")).unwrap();
    let mut c = config();
    c.corpus = corpus;
    let r = run_pipeline(&c, "img_q").unwrap();
    // Identical texts now merge posts by the same author and time only.
    assert!(r.retrieved_count > 0);
    assert_eq!(r.mention.any_mention, 0);
    assert_eq!(r.target_subset_count, 0);
    assert_eq!(r.target_hist.total(), 0);
    assert_eq!(r.text_only_missed, r.retrieved_count);
}

#[test]
fn examples_are_capped_per_class() {
    let mut c = config();
    c.max_examples = 1;
    let r = run_pipeline(&c, "img_q").unwrap();
    for list in [&r.examples.message.negative, &r.examples.message.neutral, &r.examples.message.positive] {
        assert!(list.len() <= 1);
    }
    let listed = r.examples.message.negative.len() + r.examples.message.neutral.len() + r.examples.message.positive.len();
    assert!(listed >= 1);
}

struct Shout;

impl TextTransform for Shout {
    fn apply(&self, text: &str) -> String {
        format!("[{text}]")
    }
}

#[test]
fn text_transform_runs_before_classification() {
    let p = Pipeline::load(config()).unwrap().with_transform(Arc::new(Shout));
    let r = p.run("img_q").unwrap();
    let all = r.examples.message.negative.iter().chain(&r.examples.message.neutral).chain(&r.examples.message.positive);
    for e in all {
        assert!(e.text.starts_with('[') && e.text.ends_with(']'), "{}", e.text);
    }
}
