//! End-to-end study: retrieve by image, report mentions and sentiment.

mod server;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, merge_galleries, search_mentions, GalleryPost, MentionReport, TermMatcher, YearRange};
use crate::index::{FeatureIndex, QueryResult, DEFAULT_RADIUS};
use crate::sentiment::{AspectSpan, Head, Identity, Prediction, SentimentLabel, SentimentModel, TextTransform};

pub use self::server::{router, serve, AppState};

pub const DEFAULT_MAX_EXAMPLES: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("model file {0} not found")]
    MissingModel(PathBuf),
    #[error("{path} holds a {found} model, expected {expected}")]
    WrongHead { path: PathBuf, expected: Head, found: Head },
    #[error("query image {0:?} has no feature vector")]
    UnknownQuery(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] crate::CorpusError),
    #[error(transparent)]
    Feature(#[from] crate::FeatureError),
    #[error(transparent)]
    Index(#[from] crate::IndexError),
    #[error(transparent)]
    Sentiment(#[from] crate::SentimentError),
}

fn default_radius() -> f64 {
    DEFAULT_RADIUS
}

fn default_terms() -> Vec<String> {
    ["elbphilharmonie", "elphi", "philharmonie"].map(String::from).to_vec()
}

fn default_aspects() -> Vec<String> {
    ["\"Elbphilharmonie\"", "Elbphilharmonie in Hamburg"].map(String::from).to_vec()
}

fn default_max_examples() -> usize {
    DEFAULT_MAX_EXAMPLES
}

/// Contents of `pipeline.toml`. Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_terms")]
    pub terms: Vec<String>,
    /// Aspect phrases for target-level prediction on unannotated posts.
    #[serde(default = "default_aspects")]
    pub aspects: Vec<String>,
    #[serde(default)]
    pub years: YearRange,
    #[serde(default = "default_max_examples")]
    pub max_examples: usize,
    pub corpus: PathBuf,
    pub features: PathBuf,
    pub message_model: PathBuf,
    pub target_model: PathBuf,
    /// Directory of source images served by `/images/{id}`.
    #[serde(default)]
    pub images: Option<PathBuf>,
    /// `image_id<TAB>class` file used to colour the projection.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Query used by `/report` when the request names none.
    #[serde(default)]
    pub query_image: Option<String>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Config { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.features);
        fix(&mut self.message_model);
        fix(&mut self.target_model);
        if let Some(p) = self.images.as_mut() {
            fix(p);
        }
        if let Some(p) = self.labels.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(PipelineError::Invalid(format!("radius must be positive, got {}", self.radius)));
        }
        if self.terms.iter().all(|t| t.trim().is_empty()) {
            return Err(PipelineError::Invalid("terms must not be empty".into()));
        }
        if self.aspects.iter().all(|a| a.trim().is_empty()) {
            return Err(PipelineError::Invalid("aspects must not be empty".into()));
        }
        Ok(())
    }
}

/// Counts per sentiment class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub negative: usize,
    pub neutral: usize,
    pub positive: usize,
}

impl ClassCounts {
    pub fn add(&mut self, label: SentimentLabel) {
        match label {
            SentimentLabel::Negative => self.negative += 1,
            SentimentLabel::Neutral => self.neutral += 1,
            SentimentLabel::Positive => self.positive += 1,
        }
    }

    pub fn get(&self, label: SentimentLabel) -> usize {
        match label {
            SentimentLabel::Negative => self.negative,
            SentimentLabel::Neutral => self.neutral,
            SentimentLabel::Positive => self.positive,
        }
    }

    pub fn total(&self) -> usize {
        self.negative + self.neutral + self.positive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePost {
    pub gallery_id: String,
    pub image_ids: Vec<String>,
    pub text: String,
    /// Probability of the class the post is listed under.
    pub probability: f64,
    pub probabilities: [f64; 3],
}

/// Highest-confidence posts per predicted class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassExamples {
    pub negative: Vec<ExamplePost>,
    pub neutral: Vec<ExamplePost>,
    pub positive: Vec<ExamplePost>,
}

impl ClassExamples {
    pub fn get(&self, label: SentimentLabel) -> &[ExamplePost] {
        match label {
            SentimentLabel::Negative => &self.negative,
            SentimentLabel::Neutral => &self.neutral,
            SentimentLabel::Positive => &self.positive,
        }
    }

    fn get_mut(&mut self, label: SentimentLabel) -> &mut Vec<ExamplePost> {
        match label {
            SentimentLabel::Negative => &mut self.negative,
            SentimentLabel::Neutral => &mut self.neutral,
            SentimentLabel::Positive => &mut self.positive,
        }
    }

    /// Keeps the `max` most probable posts per class, ties broken by id.
    fn from_scored(scored: Vec<(SentimentLabel, ExamplePost)>, max: usize) -> Self {
        let mut out = Self::default();
        for (label, post) in scored {
            out.get_mut(label).push(post);
        }
        for label in SentimentLabel::ALL {
            let list = out.get_mut(label);
            list.sort_by(|a, b| b.probability.total_cmp(&a.probability).then_with(|| a.gallery_id.cmp(&b.gallery_id)));
            list.truncate(max);
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Examples {
    pub message: ClassExamples,
    pub target: ClassExamples,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub query_image_id: String,
    pub radius: f64,
    /// Radius hits in ascending distance, exactly as the index returns them.
    pub retrieved: Vec<QueryResult>,
    /// Number of gallery posts with at least one retrieved image.
    pub retrieved_count: usize,
    pub mention: MentionReport,
    pub text_only_missed: usize,
    pub text_only_missed_fraction: f64,
    pub message_hist: ClassCounts,
    pub target_hist: ClassCounts,
    pub target_subset_count: usize,
    pub examples: Examples,
}

/// Loaded assets for repeated pipeline runs.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub galleries: Vec<GalleryPost>,
    pub index: FeatureIndex,
    pub message_model: SentimentModel,
    pub target_model: SentimentModel,
    transform: Arc<dyn TextTransform>,
}

fn load_model(path: &Path, expected: Head) -> Result<SentimentModel, PipelineError> {
    if !path.is_file() {
        return Err(PipelineError::MissingModel(path.to_path_buf()));
    }
    let model = SentimentModel::load(path)?;
    if model.head != expected {
        return Err(PipelineError::WrongHead { path: path.to_path_buf(), expected, found: model.head });
    }
    Ok(model)
}

impl Pipeline {
    pub fn load(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let message_model = load_model(&config.message_model, Head::Message)?;
        let target_model = load_model(&config.target_model, Head::Target)?;
        let posts = load_corpus(&config.corpus, config.years)?;
        let galleries = merge_galleries(&posts);
        let records = crate::imagefeat::import_embeddings(&config.features)?;
        let index = FeatureIndex::from_vectors(records.iter().map(|r| (r.image_id.as_str(), r.vector.as_slice())))?;
        tracing::info!(galleries = galleries.len(), images = index.len(), "pipeline assets loaded");
        Ok(Self { config, galleries, index, message_model, target_model, transform: Arc::new(Identity) })
    }

    /// Replaces the text rewriting applied before classification.
    pub fn with_transform(mut self, transform: Arc<dyn TextTransform>) -> Self {
        self.transform = transform;
        self
    }

    pub fn transform(&self) -> &dyn TextTransform {
        self.transform.as_ref()
    }

    pub fn run(&self, query_image_id: &str) -> Result<PipelineReport, PipelineError> {
        self.run_with_radius(query_image_id, self.config.radius)
    }

    /// Target-level distribution averaged over the configured aspects.
    pub fn predict_target(&self, text: &str) -> Result<Prediction, PipelineError> {
        let tokens = crate::sentiment::preprocess(text, &self.target_model.vocab);
        let mut sum = [0.0; 3];
        let mut used = 0usize;
        for aspect in self.config.aspects.iter().filter(|a| !a.trim().is_empty()) {
            let span = AspectSpan::new(aspect, &self.target_model.vocab)?;
            let p = crate::sentiment::forward_target(&self.target_model, &tokens, &span)?;
            sum.iter_mut().zip(p).for_each(|(s, x)| *s += x);
            used += 1;
        }
        Ok(Prediction::from_probabilities(sum.map(|s| s / used as f64)))
    }

    pub fn run_with_radius(&self, query_image_id: &str, radius: f64) -> Result<PipelineReport, PipelineError> {
        if !self.index.contains(query_image_id) {
            return Err(PipelineError::UnknownQuery(query_image_id.to_string()));
        }
        let retrieved = self.index.query_radius_by_id(query_image_id, radius)?;
        let hit_ids: HashSet<&str> = retrieved.iter().map(|r| r.image_id.as_str()).collect();
        let hits: Vec<GalleryPost> = self
            .galleries
            .iter()
            .filter(|g| g.image_ids.iter().any(|id| hit_ids.contains(id.as_str())))
            .cloned()
            .collect();

        let mention = search_mentions(&hits, &self.config.terms)?;
        let matcher = TermMatcher::new(&self.config.terms)?;

        let mut message_hist = ClassCounts::default();
        let mut message_scored = Vec::with_capacity(hits.len());
        let mut target_hist = ClassCounts::default();
        let mut target_scored = Vec::new();
        for g in &hits {
            let text = self.transform.apply(&g.full_text());
            let p = self.message_model.predict(&text, None)?;
            message_hist.add(p.label);
            message_scored.push((p.label, example(g, text, p)));

            if matcher.in_sentences(g) {
                let text = self.transform.apply(&g.sentence_text());
                let p = self.predict_target(&text)?;
                target_hist.add(p.label);
                target_scored.push((p.label, example(g, text, p)));
            }
        }
        let target_subset_count = target_scored.len();
        let max = self.config.max_examples;
        Ok(PipelineReport {
            query_image_id: query_image_id.to_string(),
            radius,
            retrieved,
            retrieved_count: hits.len(),
            text_only_missed: mention.text_only_missed(),
            text_only_missed_fraction: mention.text_only_missed_fraction(),
            mention,
            message_hist,
            target_hist,
            target_subset_count,
            examples: Examples {
                message: ClassExamples::from_scored(message_scored, max),
                target: ClassExamples::from_scored(target_scored, max),
            },
        })
    }

    /// Gallery post by gallery id, or else the post containing an image id.
    pub fn find_post(&self, id: &str) -> Option<&GalleryPost> {
        self.galleries
            .iter()
            .find(|g| g.gallery_id == id)
            .or_else(|| self.galleries.iter().find(|g| g.image_ids.iter().any(|i| i == id)))
    }
}

fn example(g: &GalleryPost, text: String, p: Prediction) -> ExamplePost {
    ExamplePost {
        gallery_id: g.gallery_id.clone(),
        image_ids: g.image_ids.clone(),
        text,
        probability: p.probabilities[p.label.index()],
        probabilities: p.probabilities,
    }
}

pub fn run_pipeline(config: &PipelineConfig, query_image_id: &str) -> Result<PipelineReport, PipelineError> {
    Pipeline::load(config.clone())?.run(query_image_id)
}

/// Serialises a report as pretty JSON. Identical reports give identical bytes.
pub fn report_json(report: &PipelineReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports always serialize");
    s.push('\n');
    s
}

pub fn export_report(report: &PipelineReport, path: &Path) -> Result<(), PipelineError> {
    std::fs::write(path, report_json(report)).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

pub fn read_report(path: &Path) -> Result<PipelineReport, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config { path: path.to_path_buf(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pipeline.toml");
        std::fs::write(
            &p,
            "corpus = \"c.jsonl\"\nfeatures = \"/abs/f.emb\"\nmessage_model = \"m.snt\"\ntarget_model = \"t.snt\"\n",
        )
        .unwrap();
        let c = PipelineConfig::load(&p).unwrap();
        assert_eq!(c.radius, 1.0);
        assert_eq!(c.terms, ["elbphilharmonie", "elphi", "philharmonie"]);
        assert_eq!(c.aspects.len(), 2);
        assert_eq!(c.years, YearRange::default());
        assert_eq!(c.max_examples, 20);
        assert_eq!(c.corpus, dir.path().join("c.jsonl"));
        assert_eq!(c.features, PathBuf::from("/abs/f.emb"));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pipeline.toml");
        let base = "corpus = \"c\"\nfeatures = \"f\"\nmessage_model = \"m\"\ntarget_model = \"t\"\n";
        for extra in ["radius = 0.0\n", "radius = -1.0\n", "terms = []\n", "aspects = [\" \"]\n", "colour = 1\n"] {
            std::fs::write(&p, format!("{base}{extra}")).unwrap();
            assert!(PipelineConfig::load(&p).is_err(), "{extra}");
        }
    }

    #[test]
    fn empty_report_has_zero_counts_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("report.json");
        let r = PipelineReport::default();
        export_report(&r, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"retrieved_count\": 0"));
        assert!(text.contains("\"negative\": 0"));
        assert_eq!(read_report(&p).unwrap(), r);
    }

    fn post(id: &str, p: f64) -> (SentimentLabel, ExamplePost) {
        let ex = ExamplePost {
            gallery_id: id.into(),
            image_ids: vec![id.into()],
            text: String::new(),
            probability: p,
            probabilities: [0.0, 1.0 - p, p],
        };
        (SentimentLabel::Positive, ex)
    }

    #[test]
    fn examples_truncate_by_probability_then_id() {
        let scored: Vec<_> = (0..25).map(|i| post(&format!("g{i:02}"), if i < 5 { 0.9 } else { 0.5 + i as f64 / 100.0 })).collect();
        let ex = ClassExamples::from_scored(scored, DEFAULT_MAX_EXAMPLES);
        assert_eq!(ex.positive.len(), 20);
        let ids: Vec<&str> = ex.positive.iter().take(6).map(|p| p.gallery_id.as_str()).collect();
        assert_eq!(ids, ["g00", "g01", "g02", "g03", "g04", "g24"]);
        assert!(ex.negative.is_empty());
    }

    #[test]
    fn report_round_trips_floats_exactly() {
        let r = PipelineReport {
            query_image_id: "q".into(),
            radius: 0.1 + 0.2,
            retrieved: vec![QueryResult { image_id: "q".into(), distance: 1.0 / 3.0 }],
            text_only_missed_fraction: 2.0 / 3.0,
            ..Default::default()
        };
        let back: PipelineReport = serde_json::from_str(&report_json(&r)).unwrap();
        assert_eq!(back, r);
    }
}
