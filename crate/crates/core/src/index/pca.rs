use serde::{Deserialize, Serialize};

use super::IndexError;

const TOLERANCE: f64 = 1e-9;
const MAX_ITERATIONS: usize = 1000;
/// Eigenvalues below this fraction of the total variance count as zero.
const ZERO_VARIANCE: f64 = 1e-12;

/// Principal axes of a point set, strongest first.
///
/// Covariances use the `n - 1` normalisation. When `p` exceeds the rank of
/// the data the surplus components have zero variance and are an arbitrary
/// orthonormal completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // Two passes keep the result orthogonal to working precision.
    for _ in 0..2 {
        for b in basis {
            let proj = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, bi)| *x -= proj * bi);
        }
    }
}

/// Covariance-vector product `Xᵀ(X v) / (n - 1)` without forming the matrix.
fn cov_times(centered: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for row in centered {
        let s = dot(row, v);
        out.iter_mut().zip(row).for_each(|(o, r)| *o += s * r);
    }
    let scale = 1.0 / (centered.len() as f64 - 1.0);
    out.iter_mut().for_each(|o| *o *= scale);
    out
}

/// Small fixed pseudo-random offsets so that a start vector is never exactly
/// orthogonal to the dominant eigenvector.
fn jitter(dim: usize, component: usize) -> Vec<f64> {
    let mut state = 0x9E37_79B9_7F4A_7C15u64 ^ (component as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    (0..dim)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

fn start_vector(centered: &[Vec<f64>], found: &[Vec<f64>], component: usize) -> Vec<f64> {
    let dim = centered[0].len();
    let widest = centered
        .iter()
        .max_by(|a, b| dot(a, a).total_cmp(&dot(b, b)))
        .expect("non-empty");
    let mut v = widest.clone();
    let scale = normalize(&mut v);
    let noise = jitter(dim, component);
    if scale > 0.0 {
        v.iter_mut().zip(&noise).for_each(|(x, n)| *x += 1e-3 * n);
    } else {
        v = noise;
    }
    orthogonalize(&mut v, found);
    if normalize(&mut v) > 1e-8 {
        return v;
    }
    for axis in 0..dim {
        let mut e = vec![0.0; dim];
        e[axis] = 1.0;
        orthogonalize(&mut e, found);
        if normalize(&mut e) > 1e-8 {
            return e;
        }
    }
    unreachable!("p <= dim was checked")
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Fits `p` principal components by power iteration with deflation.
pub fn pca_fit<V: AsRef<[f64]>>(vectors: &[V], p: usize) -> Result<PcaModel, IndexError> {
    let n = vectors.len();
    if p == 0 || n < p + 1 {
        return Err(IndexError::TooFewVectors { needed: p + 1, p, got: n });
    }
    let dim = vectors[0].as_ref().len();
    for v in vectors {
        if v.as_ref().len() != dim {
            return Err(IndexError::DimensionMismatch { id: "<pca input>".into(), expected: dim, found: v.as_ref().len() });
        }
    }
    if p > dim {
        return Err(IndexError::DimensionMismatch { id: "<pca components>".into(), expected: dim, found: p });
    }
    let mut mean = vec![0.0; dim];
    for v in vectors {
        mean.iter_mut().zip(v.as_ref()).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> =
        vectors.iter().map(|v| v.as_ref().iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let total_variance: f64 = centered.iter().map(|r| dot(r, r)).sum::<f64>() / (n as f64 - 1.0);
    let zero_level = ZERO_VARIANCE * total_variance;

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut variances = Vec::with_capacity(p);
    for c in 0..p {
        let mut v = start_vector(&centered, &components, c);
        for _ in 0..MAX_ITERATIONS {
            let mut w = cov_times(&centered, &v);
            orthogonalize(&mut w, &components);
            if normalize(&mut w) <= zero_level {
                break;
            }
            let step = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            v = w;
            if step < TOLERANCE {
                break;
            }
        }
        orthogonalize(&mut v, &components);
        normalize(&mut v);
        let variance = dot(&v, &cov_times(&centered, &v));
        variances.push(if variance <= zero_level { 0.0 } else { variance });
        fix_sign(&mut v);
        components.push(v);
    }

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]));
    Ok(PcaModel {
        mean,
        components: order.iter().map(|&i| components[i].clone()).collect(),
        explained_variance: order.iter().map(|&i| variances[i]).collect(),
    })
}

/// Coordinates of `vector` along each component.
pub fn pca_project(model: &PcaModel, vector: &[f64]) -> Result<Vec<f64>, IndexError> {
    if vector.len() != model.dim() {
        return Err(IndexError::DimensionMismatch { id: "<projection>".into(), expected: model.dim(), found: vector.len() });
    }
    let centered: Vec<f64> = vector.iter().zip(&model.mean).map(|(x, m)| x - m).collect();
    Ok(model.components.iter().map(|c| dot(c, &centered)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn collinear_points_have_one_direction() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        let m = pca_fit(&pts, 2).unwrap();
        assert!((m.components[0][0] - FRAC_1_SQRT_2).abs() < 1e-9);
        assert!((m.components[0][1] - FRAC_1_SQRT_2).abs() < 1e-9);
        assert!((m.explained_variance[0] - 2.0).abs() < 1e-12);
        assert_eq!(m.explained_variance[1], 0.0);
        assert!(dot(&m.components[0], &m.components[1]).abs() < 1e-9);
        assert!((dot(&m.components[1], &m.components[1]) - 1.0).abs() < 1e-12);

        // (2,2) sits sqrt(2) past the mean (1,1) along the first axis.
        let proj = pca_project(&m, &[2.0, 2.0]).unwrap();
        assert!((proj[0] - 2.0 * FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(proj[1].abs() < 1e-9);
    }

    #[test]
    fn axis_aligned_data_gives_unit_axes() {
        // var_x = 8/3 > var_y = 2/3 (sample covariance), no covariance.
        let pts = vec![vec![-2.0, 0.0], vec![2.0, 0.0], vec![0.0, -1.0], vec![0.0, 1.0]];
        let m = pca_fit(&pts, 2).unwrap();
        assert!((m.components[0][0] - 1.0).abs() < 1e-9 && m.components[0][1].abs() < 1e-9);
        assert!((m.components[1][1] - 1.0).abs() < 1e-9 && m.components[1][0].abs() < 1e-9);
        assert!((m.explained_variance[0] - 8.0 / 3.0).abs() < 1e-9);
        assert!((m.explained_variance[1] - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn mean_projects_to_zero_and_fit_is_repeatable() {
        let pts: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 * 0.1]).collect();
        let a = pca_fit(&pts, 2).unwrap();
        let b = pca_fit(&pts, 2).unwrap();
        assert_eq!(a, b);
        let z = pca_project(&a, &a.mean).unwrap();
        assert!(z.iter().all(|x| x.abs() < 1e-15));
        assert!(pca_project(&a, &[1.0]).is_err());
    }

    #[test]
    fn full_rank_projection_is_an_isometry() {
        let pts: Vec<Vec<f64>> =
            (0..10).map(|i| vec![(i as f64 * 1.3).sin() * 3.0, (i as f64 * 0.4).cos(), (i * i % 7) as f64 * 0.5]).collect();
        let m = pca_fit(&pts, 3).unwrap();
        let proj: Vec<Vec<f64>> = pts.iter().map(|p| pca_project(&m, p).unwrap()).collect();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let d0: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let d1: f64 = proj[i].iter().zip(&proj[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!((d0 - d1).abs() < 1e-8, "{d0} vs {d1}");
            }
        }
    }

    #[test]
    fn rejects_too_few_vectors() {
        assert!(matches!(pca_fit(&[vec![1.0, 2.0], vec![2.0, 1.0]], 2), Err(IndexError::TooFewVectors { .. })));
        assert!(matches!(pca_fit(&[vec![1.0], vec![2.0]], 0), Err(IndexError::TooFewVectors { .. })));
    }

    proptest! {
        #[test]
        fn components_orthonormal_and_variances_descending(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 6..20),
            p in 1usize..4,
        ) {
            let m = pca_fit(&pts, p).unwrap();
            for w in m.explained_variance.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            for (i, a) in m.components.iter().enumerate() {
                for (j, b) in m.components.iter().enumerate() {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot(a, b) - expected).abs() < 1e-6);
                }
            }
        }
    }
}
