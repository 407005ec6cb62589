//! Exact L2 nearest-neighbour index over global image features.

mod eval;
mod pca;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vlad::GlobalFeature;

pub use self::eval::{
    default_queries, evaluate_retrieval, evaluate_retrieval_pca, fit_on_index, project_points, projection_jsonl,
    read_labels, write_projection, ProjectedPoint, RetrievalEvalReport, Space,
};
pub use self::pca::{pca_fit, pca_project, PcaModel};

/// Default radius for landmark retrieval.
pub const DEFAULT_RADIUS: f64 = 1.0;
/// Below this many entries a scan runs on the calling thread.
const PARALLEL_THRESHOLD: usize = 4096;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from zero features")]
    Empty,
    #[error("vector for {id:?} has dimension {found}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, found: usize },
    #[error("vector for {0:?} contains non-finite values")]
    NonFinite(String),
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("image id {0:?} is not indexed")]
    UnknownId(String),
    #[error("query id {0:?} has no label")]
    Unlabeled(String),
    #[error("n must be at least 1")]
    ZeroN,
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("need at least {needed} vectors for {p} components, got {got}")]
    TooFewVectors { needed: usize, p: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub image_id: String,
    pub distance: f64,
}

/// Ranking order: distance ascending, then image id ascending.
fn rank(a: &QueryResult, b: &QueryResult) -> Ordering {
    a.distance.total_cmp(&b.distance).then_with(|| a.image_id.cmp(&b.image_id))
}

/// Immutable brute-force index. Vectors are stored as `f32`; distances are
/// accumulated in `f64`.
#[derive(Debug, Clone)]
pub struct FeatureIndex {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    positions: HashMap<String, usize>,
}

/// Euclidean distance with `f64` accumulation.
pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn build_index(features: &[GlobalFeature]) -> Result<FeatureIndex, IndexError> {
    FeatureIndex::from_vectors(features.iter().map(|f| (f.image_id.as_str(), f.vector.as_slice())))
}

impl FeatureIndex {
    pub fn from_vectors<'a>(entries: impl IntoIterator<Item = (&'a str, &'a [f32])>) -> Result<Self, IndexError> {
        let mut dim = None;
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut positions = HashMap::new();
        for (id, v) in entries {
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected {
                return Err(IndexError::DimensionMismatch { id: id.to_string(), expected, found: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(IndexError::NonFinite(id.to_string()));
            }
            if positions.insert(id.to_string(), ids.len()).is_some() {
                return Err(IndexError::DuplicateId(id.to_string()));
            }
            ids.push(id.to_string());
            data.extend_from_slice(v);
        }
        let dim = dim.ok_or(IndexError::Empty)?;
        Ok(Self { dim, ids, data, positions })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.positions.get(id).map(|&i| self.row(i))
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), self.row(i)))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn check_query(&self, query: &[f32]) -> Result<(), IndexError> {
        if query.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                id: "<query>".into(),
                expected: self.dim,
                found: query.len(),
            });
        }
        Ok(())
    }

    fn distances(&self, query: &[f32]) -> Vec<f64> {
        if self.len() >= PARALLEL_THRESHOLD {
            (0..self.len()).into_par_iter().map(|i| l2_distance(query, self.row(i))).collect()
        } else {
            (0..self.len()).map(|i| l2_distance(query, self.row(i))).collect()
        }
    }

    /// The `n` closest entries, optionally skipping one id.
    pub fn query_knn(&self, query: &[f32], n: usize, exclude: Option<&str>) -> Result<Vec<QueryResult>, IndexError> {
        if n == 0 {
            return Err(IndexError::ZeroN);
        }
        self.check_query(query)?;
        let mut all: Vec<QueryResult> = self
            .distances(query)
            .into_iter()
            .zip(&self.ids)
            .filter(|(_, id)| Some(id.as_str()) != exclude)
            .map(|(distance, id)| QueryResult { image_id: id.clone(), distance })
            .collect();
        if n < all.len() {
            all.select_nth_unstable_by(n - 1, rank);
            all.truncate(n);
        }
        all.sort_by(rank);
        Ok(all)
    }

    /// Every entry strictly closer than `radius`.
    pub fn query_radius(&self, query: &[f32], radius: f64) -> Result<Vec<QueryResult>, IndexError> {
        if !(radius > 0.0) {
            return Err(IndexError::BadRadius(radius));
        }
        self.check_query(query)?;
        let mut hits: Vec<QueryResult> = self
            .distances(query)
            .into_iter()
            .zip(&self.ids)
            .filter(|(d, _)| *d < radius)
            .map(|(distance, id)| QueryResult { image_id: id.clone(), distance })
            .collect();
        hits.sort_by(rank);
        Ok(hits)
    }

    /// kNN around an indexed image, leaving the image itself out.
    pub fn query_knn_by_id(&self, id: &str, n: usize) -> Result<Vec<QueryResult>, IndexError> {
        let q = self.vector(id).ok_or_else(|| IndexError::UnknownId(id.to_string()))?;
        self.query_knn(q, n, Some(id))
    }

    pub fn query_radius_by_id(&self, id: &str, radius: f64) -> Result<Vec<QueryResult>, IndexError> {
        let q = self.vector(id).ok_or_else(|| IndexError::UnknownId(id.to_string()))?;
        self.query_radius(q, radius)
    }

    /// Index over the PCA projection of every entry.
    pub fn project(&self, model: &PcaModel) -> Result<FeatureIndex, IndexError> {
        let projected: Vec<(String, Vec<f32>)> = self
            .iter()
            .map(|(id, v)| {
                let v64: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
                pca_project(model, &v64).map(|p| (id.to_string(), p.into_iter().map(|x| x as f32).collect()))
            })
            .collect::<Result<_, _>>()?;
        FeatureIndex::from_vectors(projected.iter().map(|(id, v)| (id.as_str(), v.as_slice())))
    }

    pub fn load(path: &Path) -> Result<Self, crate::Error> {
        let records = crate::imagefeat::import_embeddings(path)?;
        Ok(FeatureIndex::from_vectors(records.iter().map(|r| (r.image_id.as_str(), r.vector.as_slice())))?)
    }
}
