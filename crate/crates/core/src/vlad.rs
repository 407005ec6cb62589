//! Visual vocabularies (k-means) and VLAD aggregation of local descriptors
//! into one global vector per image.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagefeat::{put_f32s, EmbeddingRecord, ImageDescriptors, Reader};

/// Default word count; 16 words of 128-d SIFT give a 2048-d VLAD.
pub const DEFAULT_K: usize = 16;
const VOCAB_MAGIC: &[u8; 4] = b"VOC1";

#[derive(Debug, Error)]
pub enum VladError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("need at least {k} distinct descriptors, found {distinct}")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("descriptor {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    /// Independent k-means++ initialisations; the lowest SSE wins.
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop once no centroid moves farther than this.
    pub tolerance: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, seed, restarts: 1, max_iterations: 100, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances of the returned solution.
    pub sse: f64,
    pub iterations: usize,
    /// SSE after every Lloyd step of the winning restart.
    pub sse_history: Vec<f64>,
}

/// `k` visual words in descriptor space.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    centroids: Vec<Vec<f64>>,
    dim: usize,
    seed: u64,
}

impl Vocabulary {
    pub fn new(centroids: Vec<Vec<f64>>, seed: u64) -> Result<Self, VladError> {
        let dim = centroids.first().ok_or(VladError::ZeroK)?.len();
        for (index, c) in centroids.iter().enumerate() {
            if c.len() != dim {
                return Err(VladError::DimensionMismatch { index, expected: dim, found: c.len() });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(VladError::Format(format!("centroid {index} is not finite")));
            }
        }
        Ok(Self { centroids, dim, seed })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// Index of the closest word; ties go to the lower index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x).0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.k() * self.dim * 4);
        out.extend_from_slice(VOCAB_MAGIC);
        out.extend_from_slice(&(self.k() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for c in &self.centroids {
            let as_f32: Vec<f32> = c.iter().map(|&v| v as f32).collect();
            put_f32s(&mut out, &as_f32);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), VladError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| VladError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, VladError> {
        let f = File::open(path).map_err(|source| VladError::Io { path: path.to_path_buf(), source })?;
        let mut r = Reader::new(BufReader::new(f));
        let fmt = |e: crate::imagefeat::FeatureError| VladError::Format(e.to_string());
        if &r.bytes::<4>().map_err(fmt)? != VOCAB_MAGIC {
            return Err(VladError::Format("missing VOC1 magic".into()));
        }
        let k = r.u32().map_err(fmt)? as usize;
        let d = r.u32().map_err(fmt)? as usize;
        let seed = r.u64().map_err(fmt)?;
        let mut centroids = Vec::with_capacity(k);
        for _ in 0..k {
            centroids.push(r.f32_vec(d).map_err(fmt)?.into_iter().map(f64::from).collect());
        }
        if !r.at_eof() {
            return Err(VladError::Format("trailing bytes".into()));
        }
        Self::new(centroids, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Vlad,
    Imported,
}

/// One fixed-length vector per image, ready for indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature {
    pub image_id: String,
    pub vector: Vec<f32>,
    pub source: FeatureSource,
}

impl GlobalFeature {
    pub fn imported(record: EmbeddingRecord) -> Self {
        Self { image_id: record.image_id, vector: record.vector, source: FeatureSource::Imported }
    }

    pub fn to_record(&self) -> EmbeddingRecord {
        EmbeddingRecord { image_id: self.image_id.clone(), vector: self.vector.clone() }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn check_dims<D: AsRef<[f64]>>(points: &[D], expected: usize) -> Result<(), VladError> {
    for (index, p) in points.iter().enumerate() {
        let found = p.as_ref().len();
        if found != expected {
            return Err(VladError::DimensionMismatch { index, expected, found });
        }
    }
    Ok(())
}

fn count_distinct<D: AsRef<[f64]>>(points: &[D]) -> usize {
    points
        .iter()
        .map(|p| p.as_ref().iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

/// k-means with k-means++ seeding and Lloyd refinement.
///
/// Deterministic for a given point order and config. A cluster that ends up
/// empty is reseeded with the point farthest from its current centroid.
pub fn kmeans<D: AsRef<[f64]>>(points: &[D], config: &KMeansConfig) -> Result<KMeansFit, VladError> {
    if config.k == 0 {
        return Err(VladError::ZeroK);
    }
    let dim = points.first().map_or(0, |p| p.as_ref().len());
    check_dims(points, dim)?;
    let distinct = count_distinct(points);
    if distinct < config.k {
        return Err(VladError::TooFewDistinct { k: config.k, distinct });
    }
    let points: Vec<&[f64]> = points.iter().map(AsRef::as_ref).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..config.restarts.max(1) {
        let init = kmeans_plus_plus(&points, config.k, &mut rng);
        let fit = lloyd(&points, init, config);
        if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn kmeans_plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.gen::<f64>() * total;
        // Fall back to the last positive-weight point if rounding overshoots.
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("distinct points remain");
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick].to_vec();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[&[f64]], mut centroids: Vec<Vec<f64>>, config: &KMeansConfig) -> KMeansFit {
    let k = centroids.len();
    let dim = centroids[0].len();
    let mut assignments = vec![0usize; points.len()];
    let mut dists = vec![0f64; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..config.max_iterations {
        iterations += 1;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(&centroids, p);
            assignments[i] = j;
            dists[i] = d;
        }
        reseed_empty(&mut assignments, &mut dists, &mut centroids, points);

        let mut sums = vec![vec![0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignments) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut movement = 0f64;
        for j in 0..k {
            let n = counts[j] as f64;
            let new: Vec<f64> = sums[j].iter().map(|s| s / n).collect();
            movement = movement.max(sq_dist(&new, &centroids[j]).sqrt());
            centroids[j] = new;
        }
        let sse: f64 = points.iter().zip(&assignments).map(|(p, &j)| sq_dist(p, &centroids[j])).sum();
        history.push(sse);
        if movement < config.tolerance {
            break;
        }
    }

    let sse = points.iter().zip(&assignments).map(|(p, &j)| sq_dist(p, &centroids[j])).sum();
    KMeansFit { centroids, assignments, sse, iterations, sse_history: history }
}

fn reseed_empty(assignments: &mut [usize], dists: &mut [f64], centroids: &mut [Vec<f64>], points: &[&[f64]]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &j in assignments.iter() {
        counts[j] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let far = (0..points.len())
            .filter(|&i| counts[assignments[i]] > 1 && dists[i] > 0.0)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            });
        let Some(i) = far else { continue };
        counts[assignments[i]] -= 1;
        counts[j] = 1;
        assignments[i] = j;
        dists[i] = 0.0;
        centroids[j] = points[i].to_vec();
    }
}

/// Trains a vocabulary with default k-means settings (one restart).
pub fn train_vocabulary<D: AsRef<[f64]>>(descriptors: &[D], k: usize, seed: u64) -> Result<Vocabulary, VladError> {
    train_vocabulary_with(descriptors, &KMeansConfig::new(k, seed))
}

pub fn train_vocabulary_with<D: AsRef<[f64]>>(descriptors: &[D], config: &KMeansConfig) -> Result<Vocabulary, VladError> {
    let fit = kmeans(descriptors, config)?;
    Vocabulary::new(fit.centroids, config.seed)
}

/// VLAD: per-word residual sums, intra-normalised per word block, then
/// globally L2-normalised. No descriptors gives the zero vector.
pub fn aggregate<D: AsRef<[f64]>>(descriptors: &[D], vocab: &Vocabulary) -> Result<Vec<f64>, VladError> {
    check_dims(descriptors, vocab.dim())?;
    let d = vocab.dim();
    let mut out = vec![0f64; vocab.k() * d];
    for x in descriptors {
        let x = x.as_ref();
        let j = vocab.nearest(x);
        let block = &mut out[j * d..(j + 1) * d];
        for ((acc, xi), ci) in block.iter_mut().zip(x).zip(&vocab.centroids[j]) {
            *acc += xi - ci;
        }
    }
    for block in out.chunks_mut(d.max(1)) {
        l2_normalize(block);
    }
    l2_normalize(&mut out);
    Ok(out)
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Aggregates every image in parallel; order follows the input.
pub fn aggregate_images(images: &[ImageDescriptors], vocab: &Vocabulary) -> Result<Vec<GlobalFeature>, VladError> {
    images
        .par_iter()
        .map(|img| {
            let descs: Vec<Vec<f64>> = img
                .descriptors
                .iter()
                .map(|d| d.vector.iter().map(|&v| f64::from(v)).collect())
                .collect();
            let v = aggregate(&descs, vocab)?;
            Ok(GlobalFeature {
                image_id: img.image_id.clone(),
                vector: v.into_iter().map(|x| x as f32).collect(),
                source: FeatureSource::Vlad,
            })
        })
        .collect()
}
