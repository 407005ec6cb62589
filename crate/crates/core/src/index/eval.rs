use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{pca_fit, FeatureIndex, IndexError, PcaModel};

/// Feature space a retrieval evaluation ran in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Space {
    Original,
    Pca { dims: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEvalReport {
    /// Mean per-query fraction of the top `n` that share the query's class.
    pub per_n: BTreeMap<usize, f64>,
    pub space: Space,
    pub queries: usize,
}

/// Top-n landmark accuracy averaged over queries.
///
/// Each query retrieves its `n` nearest neighbours other than itself; its
/// score is the fraction of those carrying the query's label (unlabelled
/// neighbours count as misses).
pub fn evaluate_retrieval<S: AsRef<str>>(
    index: &FeatureIndex,
    labels: &HashMap<String, String>,
    query_ids: &[S],
    n_values: &[usize],
) -> Result<RetrievalEvalReport, IndexError> {
    let mut totals: BTreeMap<usize, f64> = n_values.iter().map(|&n| (n, 0.0)).collect();
    if n_values.contains(&0) {
        return Err(IndexError::ZeroN);
    }
    let max_n = n_values.iter().copied().max().unwrap_or(1);
    for q in query_ids {
        let q = q.as_ref();
        let class = labels.get(q).ok_or_else(|| IndexError::Unlabeled(q.to_string()))?;
        let neighbours = index.query_knn_by_id(q, max_n)?;
        for (&n, total) in totals.iter_mut() {
            let top = &neighbours[..n.min(neighbours.len())];
            if top.is_empty() {
                continue;
            }
            let hits = top.iter().filter(|r| labels.get(&r.image_id) == Some(class)).count();
            *total += hits as f64 / top.len() as f64;
        }
    }
    let count = query_ids.len();
    let per_n = totals
        .into_iter()
        .map(|(n, t)| (n, if count == 0 { 0.0 } else { t / count as f64 }))
        .collect();
    Ok(RetrievalEvalReport { per_n, space: Space::Original, queries: count })
}

/// Same evaluation after projecting every indexed vector onto `dims`
/// principal components fitted on the whole index.
pub fn evaluate_retrieval_pca<S: AsRef<str>>(
    index: &FeatureIndex,
    labels: &HashMap<String, String>,
    query_ids: &[S],
    n_values: &[usize],
    dims: usize,
) -> Result<(RetrievalEvalReport, PcaModel), IndexError> {
    let model = fit_on_index(index, dims)?;
    let projected = index.project(&model)?;
    let mut report = evaluate_retrieval(&projected, labels, query_ids, n_values)?;
    report.space = Space::Pca { dims };
    Ok((report, model))
}

pub fn fit_on_index(index: &FeatureIndex, dims: usize) -> Result<PcaModel, IndexError> {
    let rows: Vec<Vec<f64>> = index.iter().map(|(_, v)| v.iter().map(|&x| f64::from(x)).collect()).collect();
    pca_fit(&rows, dims)
}

/// Labelled ids to use as queries: everything except `skip_class`
/// (case-insensitive), sorted by id.
pub fn default_queries(labels: &HashMap<String, String>, skip_class: &str) -> Vec<String> {
    let mut ids: Vec<String> = labels
        .iter()
        .filter(|(_, c)| !c.eq_ignore_ascii_case(skip_class))
        .map(|(id, _)| id.clone())
        .collect();
    ids.sort();
    ids
}

/// Reads `image_id<TAB>class` lines. Blank lines and `#` comments are skipped.
pub fn read_labels(path: &Path) -> Result<HashMap<String, String>, IndexError> {
    let f = File::open(path).map_err(|source| IndexError::Io { path: path.to_path_buf(), source })?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| IndexError::Io { path: path.to_path_buf(), source })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |message: &str| IndexError::Parse { path: path.to_path_buf(), line: i + 1, message: message.into() };
        let (id, class) = line.split_once('\t').ok_or_else(|| parse("expected image_id<TAB>class"))?;
        if out.insert(id.trim().to_string(), class.trim().to_string()).is_some() {
            return Err(parse("duplicate image id"));
        }
    }
    Ok(out)
}

/// One row of the 2-D projection export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub image_id: String,
    pub x: f64,
    pub y: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class: Option<String>,
}

/// Projects every indexed vector to 2-D, attaching labels where known.
pub fn project_points(
    index: &FeatureIndex,
    model: &PcaModel,
    labels: &HashMap<String, String>,
) -> Result<Vec<ProjectedPoint>, IndexError> {
    if model.n_components() != 2 {
        return Err(IndexError::DimensionMismatch { id: "<projection>".into(), expected: 2, found: model.n_components() });
    }
    index
        .iter()
        .map(|(id, v)| {
            let v64: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
            let p = super::pca_project(model, &v64)?;
            Ok(ProjectedPoint { image_id: id.to_string(), x: p[0], y: p[1], class: labels.get(id).cloned() })
        })
        .collect()
}

pub fn projection_jsonl(points: &[ProjectedPoint]) -> String {
    let mut out = String::new();
    for p in points {
        out.push_str(&serde_json::to_string(p).expect("projection rows serialize"));
        out.push('\n');
    }
    out
}

pub fn write_projection(path: &Path, points: &[ProjectedPoint]) -> Result<(), IndexError> {
    let io = |source| IndexError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(projection_jsonl(points).as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}
