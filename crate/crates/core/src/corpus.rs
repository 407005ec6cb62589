//! Post corpus ingestion: JSON-lines loading, year filtering, gallery merging
//! and text mention statistics.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Terms used to find posts that mention the landmark by name.
pub const DEFAULT_TERMS: [&str; 3] = ["elbphilharmonie", "elphi", "philharmonie"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate post_id {0:?}")]
    DuplicatePostId(String),
    #[error("invalid year range {0}..={1}")]
    InvalidYearRange(i32, i32),
    #[error("mention search needs at least one term")]
    EmptyTerms,
}

/// One upload: a single image with its text body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Post {
    pub post_id: String,
    pub author_id: String,
    /// UTC seconds since the epoch.
    pub timestamp: i64,
    pub title: String,
    pub description: String,
    pub hashtags: Vec<String>,
    pub image_id: String,
}

/// Posts uploaded together with an identical text body, merged into one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GalleryPost {
    pub gallery_id: String,
    pub author_id: String,
    pub timestamp: i64,
    pub title: String,
    pub description: String,
    pub hashtags: Vec<String>,
    pub image_ids: Vec<String>,
}

impl GalleryPost {
    /// Title, description and hashtags joined by single spaces.
    pub fn full_text(&self) -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(2 + self.hashtags.len());
        parts.push(&self.title);
        parts.push(&self.description);
        parts.extend(self.hashtags.iter().map(String::as_str));
        join_nonempty(&parts)
    }

    /// Title and description only.
    pub fn sentence_text(&self) -> String {
        join_nonempty(&[&self.title, &self.description])
    }
}

fn join_nonempty(parts: &[&str]) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MentionReport {
    pub total: usize,
    pub any_mention: usize,
    pub in_hashtags: usize,
    pub in_description: usize,
    pub in_title: usize,
    pub coverage: f64,
}

impl MentionReport {
    /// Posts that a purely text-based selection would have missed.
    pub fn text_only_missed(&self) -> usize {
        self.total - self.any_mention
    }

    pub fn text_only_missed_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.text_only_missed() as f64 / self.total as f64
        }
    }
}

/// Inclusive range of calendar years (UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub first: i32,
    pub last: i32,
}

impl YearRange {
    pub fn new(first: i32, last: i32) -> Result<Self, CorpusError> {
        if first > last {
            return Err(CorpusError::InvalidYearRange(first, last));
        }
        Ok(Self { first, last })
    }

    pub fn contains_timestamp(&self, timestamp: i64) -> bool {
        match year_of(timestamp) {
            Some(year) => (self.first..=self.last).contains(&year),
            None => false,
        }
    }
}

impl Default for YearRange {
    fn default() -> Self {
        Self { first: 2016, last: 2019 }
    }
}

impl std::str::FromStr for YearRange {
    type Err = String;

    /// Parses `2016:2019`; a single year selects just that year.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once(':').unwrap_or((s, s));
        let first = a.trim().parse::<i32>().map_err(|e| format!("bad year {a:?}: {e}"))?;
        let last = b.trim().parse::<i32>().map_err(|e| format!("bad year {b:?}: {e}"))?;
        YearRange::new(first, last).map_err(|e| e.to_string())
    }
}

/// UTC calendar year of a timestamp in seconds.
pub fn year_of(timestamp: i64) -> Option<i32> {
    DateTime::from_timestamp(timestamp, 0).map(|dt| dt.year())
}

/// Reads a JSON-lines corpus and keeps posts whose UTC year lies in `years`.
///
/// Blank lines are skipped. Duplicate `post_id`s are rejected across the whole
/// file, including records that the year filter drops.
pub fn load_corpus(path: &Path, years: YearRange) -> Result<Vec<Post>, CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut seen = HashSet::new();
    let mut posts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let post: Post = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: i + 1, message: e.to_string() })?;
        if let Some(tag) = post.hashtags.iter().find(|t| t.chars().any(char::is_whitespace)) {
            return Err(CorpusError::Malformed {
                line: i + 1,
                message: format!("hashtag {tag:?} contains whitespace"),
            });
        }
        if !seen.insert(post.post_id.clone()) {
            return Err(CorpusError::DuplicatePostId(post.post_id));
        }
        if years.contains_timestamp(post.timestamp) {
            posts.push(post);
        }
    }
    Ok(posts)
}

type MergeKey<'a> = (&'a str, i64, &'a str, &'a str, &'a [String]);

/// Collapses gallery uploads: posts sharing author, timestamp, title,
/// description and hashtag sequence become one [`GalleryPost`].
///
/// Groups appear in order of their first member; the gallery id is the
/// first member's `post_id`.
pub fn merge_galleries(posts: &[Post]) -> Vec<GalleryPost> {
    let mut groups: HashMap<MergeKey<'_>, usize> = HashMap::new();
    let mut out: Vec<GalleryPost> = Vec::new();
    for post in posts {
        let key = (
            post.author_id.as_str(),
            post.timestamp,
            post.title.as_str(),
            post.description.as_str(),
            post.hashtags.as_slice(),
        );
        match groups.get(&key) {
            Some(&idx) => {
                let gallery = &mut out[idx];
                if !gallery.image_ids.contains(&post.image_id) {
                    gallery.image_ids.push(post.image_id.clone());
                }
            }
            None => {
                groups.insert(key, out.len());
                out.push(GalleryPost {
                    gallery_id: post.post_id.clone(),
                    author_id: post.author_id.clone(),
                    timestamp: post.timestamp,
                    title: post.title.clone(),
                    description: post.description.clone(),
                    hashtags: post.hashtags.clone(),
                    image_ids: vec![post.image_id.clone()],
                });
            }
        }
    }
    out
}

/// Re-merges already merged galleries. Used to check idempotence and to
/// combine gallery files from several ingestion runs.
pub fn merge_gallery_posts(galleries: &[GalleryPost]) -> Vec<GalleryPost> {
    let mut groups: HashMap<MergeKey<'_>, usize> = HashMap::new();
    let mut out: Vec<GalleryPost> = Vec::new();
    for g in galleries {
        let key = (
            g.author_id.as_str(),
            g.timestamp,
            g.title.as_str(),
            g.description.as_str(),
            g.hashtags.as_slice(),
        );
        match groups.get(&key) {
            Some(&idx) => {
                for id in &g.image_ids {
                    if !out[idx].image_ids.contains(id) {
                        out[idx].image_ids.push(id.clone());
                    }
                }
            }
            None => {
                groups.insert(key, out.len());
                out.push(g.clone());
            }
        }
    }
    out
}

/// Case-insensitive raw substring matcher over a fixed term list.
#[derive(Debug, Clone)]
pub struct TermMatcher {
    terms: Vec<String>,
}

impl TermMatcher {
    pub fn new<S: AsRef<str>>(terms: &[S]) -> Result<Self, CorpusError> {
        let terms: Vec<String> = terms
            .iter()
            .map(|t| t.as_ref().trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        if terms.is_empty() {
            return Err(CorpusError::EmptyTerms);
        }
        Ok(Self { terms })
    }

    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.terms.iter().any(|t| lower.contains(t.as_str()))
    }

    pub fn in_title(&self, post: &GalleryPost) -> bool {
        self.matches(&post.title)
    }

    pub fn in_description(&self, post: &GalleryPost) -> bool {
        self.matches(&post.description)
    }

    pub fn in_hashtags(&self, post: &GalleryPost) -> bool {
        post.hashtags.iter().any(|h| self.matches(h))
    }

    /// Title or description; the fields a target-level analysis can use.
    pub fn in_sentences(&self, post: &GalleryPost) -> bool {
        self.in_title(post) || self.in_description(post)
    }
}

/// Counts posts mentioning any of `terms`, per field and overall.
pub fn search_mentions<S: AsRef<str>>(
    posts: &[GalleryPost],
    terms: &[S],
) -> Result<MentionReport, CorpusError> {
    let matcher = TermMatcher::new(terms)?;
    let mut report = MentionReport { total: posts.len(), ..Default::default() };
    for post in posts {
        let title = matcher.in_title(post);
        let description = matcher.in_description(post);
        let hashtags = matcher.in_hashtags(post);
        report.in_title += usize::from(title);
        report.in_description += usize::from(description);
        report.in_hashtags += usize::from(hashtags);
        report.any_mention += usize::from(title || description || hashtags);
    }
    report.coverage = if report.total == 0 {
        0.0
    } else {
        report.any_mention as f64 / report.total as f64
    };
    Ok(report)
}

pub fn write_galleries(path: &Path, galleries: &[GalleryPost]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for g in galleries {
        let line = serde_json::to_string(g).expect("gallery posts always serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_galleries(path: &Path) -> Result<Vec<GalleryPost>, CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GalleryPost = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: i + 1, message: e.to_string() })?;
        if g.image_ids.is_empty() {
            return Err(CorpusError::Malformed { line: i + 1, message: "empty image_ids".into() });
        }
        out.push(g);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // 2015-06-01, 2017-06-01, 2019-12-31T23:59:59 UTC
    const T2015: i64 = 1_433_116_800;
    const T2017: i64 = 1_496_275_200;
    const T2019_END: i64 = 1_577_836_799;

    fn post(id: &str, ts: i64, title: &str, desc: &str, tags: &[&str], image: &str) -> Post {
        Post {
            post_id: id.into(),
            author_id: "alice".into(),
            timestamp: ts,
            title: title.into(),
            description: desc.into(),
            hashtags: tags.iter().map(|s| s.to_string()).collect(),
            image_id: image.into(),
        }
    }

    fn write_jsonl(posts: &[Post]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for p in posts {
            writeln!(f, "{}", serde_json::to_string(p).unwrap()).unwrap();
        }
        f
    }

    #[test]
    fn year_filter_keeps_boundaries() {
        let f = write_jsonl(&[
            post("a", T2015, "", "", &[], "i1"),
            post("b", T2017, "", "", &[], "i2"),
            post("c", T2019_END, "", "", &[], "i3"),
        ]);
        let posts = load_corpus(f.path(), YearRange::new(2016, 2019).unwrap()).unwrap();
        let ids: Vec<_> = posts.iter().map(|p| p.post_id.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
        assert_eq!(year_of(T2019_END + 1), Some(2020));
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(load_corpus(f.path(), YearRange::default()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_post_id_is_named() {
        let f = write_jsonl(&[post("dup", T2017, "", "", &[], "i1"), post("dup", T2017, "x", "", &[], "i2")]);
        let err = load_corpus(f.path(), YearRange::default()).unwrap_err();
        assert!(matches!(&err, CorpusError::DuplicatePostId(id) if id == "dup"));
        assert!(err.to_string().contains("dup"));
    }

    #[test]
    fn malformed_record_reports_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{}", serde_json::to_string(&post("a", T2017, "", "", &[], "i")).unwrap()).unwrap();
        writeln!(f, "{{\"post_id\": \"b\"}}").unwrap();
        match load_corpus(f.path(), YearRange::default()) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hashtag_with_whitespace_is_rejected() {
        let f = write_jsonl(&[post("a", T2017, "", "", &["two words"], "i")]);
        assert!(matches!(
            load_corpus(f.path(), YearRange::default()),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_corpus(Path::new("/nonexistent/corpus.jsonl"), YearRange::default()).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn year_range_parses() {
        assert_eq!("2016:2019".parse::<YearRange>().unwrap(), YearRange::new(2016, 2019).unwrap());
        assert_eq!("2018".parse::<YearRange>().unwrap(), YearRange::new(2018, 2018).unwrap());
        assert!("2019:2016".parse::<YearRange>().is_err());
    }

    #[test]
    fn gallery_upload_merges_in_order() {
        let posts = [post("p1", T2017, "t", "d", &["x"], "a"), post("p2", T2017, "t", "d", &["x"], "b")];
        let g = merge_galleries(&posts);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].image_ids, ["a", "b"]);
        assert_eq!(g[0].gallery_id, "p1");
    }

    #[test]
    fn single_post_is_its_own_gallery() {
        let g = merge_galleries(&[post("p1", T2017, "t", "d", &[], "a")]);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].image_ids, ["a"]);
    }

    #[test]
    fn differing_description_is_not_merged() {
        let posts = [post("p1", T2017, "t", "d1", &[], "a"), post("p2", T2017, "t", "d2", &[], "b")];
        assert_eq!(merge_galleries(&posts).len(), 2);
    }

    #[test]
    fn mention_fields_are_counted_independently() {
        let galleries = merge_galleries(&[
            post("1", T2017, "Visiting the Elphi today", "", &[], "a"),
            post("2", T2017 + 1, "", "", &["ELBPHILHARMONIE"], "b"),
            post("3", T2017 + 2, "Hamburg harbor at dusk", "", &[], "c"),
            post("4", T2017 + 3, "", "the new Philharmonie hall", &["elphi"], "d"),
        ]);
        let r = search_mentions(&galleries, &DEFAULT_TERMS).unwrap();
        assert_eq!(
            r,
            MentionReport {
                total: 4,
                any_mention: 3,
                in_hashtags: 2,
                in_description: 1,
                in_title: 1,
                coverage: 0.75,
            }
        );
        assert_eq!(r.text_only_missed(), 1);
    }

    #[test]
    fn empty_terms_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(search_mentions(&[], &empty), Err(CorpusError::EmptyTerms)));
        assert!(matches!(search_mentions(&[], &["  "]), Err(CorpusError::EmptyTerms)));
    }

    #[test]
    fn empty_post_list_has_zero_coverage() {
        let r = search_mentions(&[], &DEFAULT_TERMS).unwrap();
        assert_eq!(r.coverage, 0.0);
    }

    #[test]
    fn gallery_file_round_trip() {
        let galleries = merge_galleries(&[post("1", T2017, "a", "b", &["c"], "x"), post("2", T2017, "a", "b", &["c"], "y")]);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_galleries(f.path(), &galleries).unwrap();
        assert_eq!(read_galleries(f.path()).unwrap(), galleries);
    }

    fn arb_posts() -> impl Strategy<Value = Vec<Post>> {
        // Small alphabets so that merge keys collide often.
        prop::collection::vec(
            (0..3u8, 0..3i64, 0..2u8, 0..2u8, prop::collection::vec(0..3u8, 0..3)),
            0..24,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (a, t, ti, de, tags))| Post {
                    post_id: format!("p{i}"),
                    author_id: format!("u{a}"),
                    timestamp: T2017 + t,
                    title: ["", "Elphi at night"][ti as usize].into(),
                    description: ["", "harbour"][de as usize].into(),
                    hashtags: tags.iter().map(|x| ["hamburg", "elbphilharmonie", "elbe"][*x as usize].to_string()).collect(),
                    image_id: format!("img{i}"),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn merge_is_idempotent_and_conserves_members(posts in arb_posts()) {
            let merged = merge_galleries(&posts);
            prop_assert!(merged.len() <= posts.len());
            let members: usize = merged.iter().map(|g| g.image_ids.len()).sum();
            prop_assert_eq!(members, posts.len());
            prop_assert_eq!(merge_gallery_posts(&merged), merged);
        }

        #[test]
        fn adding_terms_never_lowers_counts(posts in arb_posts()) {
            let merged = merge_galleries(&posts);
            let small = search_mentions(&merged, &["elphi"]).unwrap();
            let large = search_mentions(&merged, &DEFAULT_TERMS).unwrap();
            prop_assert!(small.any_mention <= large.any_mention);
            prop_assert!(small.in_title <= large.in_title);
            prop_assert!(small.in_hashtags <= large.in_hashtags);
            prop_assert!(large.any_mention <= large.total);
        }

        #[test]
        fn full_year_range_keeps_every_record(posts in arb_posts()) {
            let f = write_jsonl(&posts);
            let loaded = load_corpus(f.path(), YearRange::new(i32::MIN / 2, i32::MAX / 2).unwrap()).unwrap();
            prop_assert_eq!(loaded, posts);
        }
    }
}
