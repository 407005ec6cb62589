//! Difference-of-Gaussians keypoint detection with 4x4x8 gradient histogram
//! descriptors.
//!
//! Extrema are taken at integer scale-space positions; there is no sub-pixel
//! refinement. Each keypoint gets a single dominant orientation.

use std::f32::consts::TAU;

use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use super::FeatureError;

pub const DESCRIPTOR_LEN: usize = 128;
const DESCR_CELLS: usize = 4;
const DESCR_BINS: usize = 8;
const DESCR_CLAMP: f64 = 0.2;
const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f32 = 1.5;
const MIN_IMAGE_SIDE: usize = 16;
/// Octaves stop once the shorter side drops below this.
const MIN_OCTAVE_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub octaves: usize,
    pub scales_per_octave: usize,
    /// Blur of the first level of every octave.
    pub sigma0: f64,
    /// Blur assumed to be already present in the input.
    pub input_sigma: f64,
    /// Minimum absolute DoG value for an extremum.
    pub contrast_threshold: f32,
    /// Principal curvature ratio above which an extremum is treated as an edge.
    pub edge_ratio: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            octaves: 3,
            scales_per_octave: 3,
            sigma0: 1.6,
            input_sigma: 0.5,
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    /// Gaussian sigma in input-image pixels.
    pub scale: f32,
    /// Radians in `[0, 2π)`.
    pub orientation: f32,
    /// Absolute DoG value at the extremum.
    pub response: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDescriptor {
    pub keypoint: Keypoint,
    /// Unit L2 norm, or all zeros for a flat patch.
    pub vector: Vec<f32>,
}

/// Detects DoG extrema and describes each one.
///
/// The result is ordered by response, highest first; equal responses keep
/// scan order (octave, level, row, column).
pub fn detect_and_describe(
    image: &GrayImage,
    config: &DetectorConfig,
) -> Result<Vec<LocalDescriptor>, FeatureError> {
    if image.width() < MIN_IMAGE_SIDE || image.height() < MIN_IMAGE_SIDE {
        return Err(FeatureError::ImageTooSmall {
            width: image.width(),
            height: image.height(),
            min: MIN_IMAGE_SIDE,
        });
    }
    if image.pixels().iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite);
    }
    let s = config.scales_per_octave.max(1);
    let k = 2f64.powf(1.0 / s as f64);
    let pre = (config.sigma0.powi(2) - config.input_sigma.powi(2)).max(0.01).sqrt();
    let mut base = gaussian_blur(image, pre);
    let mut out = Vec::new();

    for octave in 0..config.octaves {
        if base.width() < MIN_OCTAVE_SIDE || base.height() < MIN_OCTAVE_SIDE {
            break;
        }
        let mut gaussians = Vec::with_capacity(s + 3);
        gaussians.push(base.clone());
        for i in 1..s + 3 {
            let prev = config.sigma0 * k.powi(i as i32 - 1);
            let total = prev * k;
            let inc = (total * total - prev * prev).sqrt();
            let next = gaussian_blur(&gaussians[i - 1], inc);
            gaussians.push(next);
        }
        let dogs: Vec<GrayImage> = gaussians.windows(2).map(|w| difference(&w[1], &w[0])).collect();
        let factor = (1usize << octave) as f32;

        for level in 1..=s {
            for (x, y, value) in find_extrema(&dogs, level, config) {
                let local_sigma = (config.sigma0 * k.powi(level as i32)) as f32;
                let g = &gaussians[level];
                let orientation = dominant_orientation(g, x, y, local_sigma);
                let vector = describe(g, x, y, local_sigma, orientation);
                out.push(LocalDescriptor {
                    keypoint: Keypoint {
                        x: x as f32 * factor,
                        y: y as f32 * factor,
                        scale: local_sigma * factor,
                        orientation,
                        response: value.abs(),
                    },
                    vector,
                });
            }
        }
        base = downsample(&gaussians[s]);
    }

    out.sort_by(|a, b| b.keypoint.response.total_cmp(&a.keypoint.response));
    Ok(out)
}

/// Keeps the `m` highest-response descriptors. Ties keep their input order.
pub fn select_top(descriptors: &[LocalDescriptor], m: usize) -> Result<Vec<LocalDescriptor>, FeatureError> {
    if m == 0 {
        return Err(FeatureError::ZeroSelection);
    }
    let mut sorted = descriptors.to_vec();
    sorted.sort_by(|a, b| b.keypoint.response.total_cmp(&a.keypoint.response));
    sorted.truncate(m);
    Ok(sorted)
}

fn find_extrema(dogs: &[GrayImage], level: usize, config: &DetectorConfig) -> Vec<(usize, usize, f32)> {
    let cur = &dogs[level];
    let (w, h) = (cur.width(), cur.height());
    let threshold = config.contrast_threshold;
    let r = config.edge_ratio;
    let edge_limit = (r + 1.0) * (r + 1.0) / r;
    let mut found = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let v = cur.get(x, y);
            if v.abs() <= threshold {
                continue;
            }
            if !is_strict_extremum(dogs, level, x, y, v) {
                continue;
            }
            let dxx = cur.get(x + 1, y) + cur.get(x - 1, y) - 2.0 * v;
            let dyy = cur.get(x, y + 1) + cur.get(x, y - 1) - 2.0 * v;
            let dxy = (cur.get(x + 1, y + 1) - cur.get(x + 1, y - 1) - cur.get(x - 1, y + 1)
                + cur.get(x - 1, y - 1))
                * 0.25;
            let tr = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            if det <= 0.0 || tr * tr / det >= edge_limit {
                continue;
            }
            found.push((x, y, v));
        }
    }
    found
}

fn is_strict_extremum(dogs: &[GrayImage], level: usize, x: usize, y: usize, v: f32) -> bool {
    let is_max = v > 0.0;
    for img in &dogs[level - 1..=level + 1] {
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if std::ptr::eq(img, &dogs[level]) && nx == x && ny == y {
                    continue;
                }
                let n = img.get(nx, ny);
                if (is_max && n >= v) || (!is_max && n <= v) {
                    return false;
                }
            }
        }
    }
    true
}

fn gradient(img: &GrayImage, x: usize, y: usize) -> (f32, f32) {
    let gx = img.get(x + 1, y) - img.get(x - 1, y);
    let gy = img.get(x, y + 1) - img.get(x, y - 1);
    (gx, gy)
}

fn dominant_orientation(img: &GrayImage, x: usize, y: usize, sigma: f32) -> f32 {
    let weight_sigma = ORI_SIGMA_FACTOR * sigma;
    let radius = (3.0 * weight_sigma).round() as isize;
    let denom = 2.0 * weight_sigma * weight_sigma;
    let mut hist = [0f32; ORI_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let px = x as isize + dx;
            let py = y as isize + dy;
            if px < 1 || py < 1 || px >= img.width() as isize - 1 || py >= img.height() as isize - 1 {
                continue;
            }
            let (gx, gy) = gradient(img, px as usize, py as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).rem_euclid(TAU);
            let bin = ((angle / TAU * ORI_BINS as f32) as usize).min(ORI_BINS - 1);
            hist[bin] += mag * (-((dx * dx + dy * dy) as f32) / denom).exp();
        }
    }
    for _ in 0..2 {
        let prev = hist;
        for i in 0..ORI_BINS {
            let l = prev[(i + ORI_BINS - 1) % ORI_BINS];
            let r = prev[(i + 1) % ORI_BINS];
            hist[i] = 0.25 * l + 0.5 * prev[i] + 0.25 * r;
        }
    }
    let (peak, &peak_val) = hist
        .iter()
        .enumerate()
        .fold((0, &hist[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
    if peak_val <= 0.0 {
        return 0.0;
    }
    let l = hist[(peak + ORI_BINS - 1) % ORI_BINS];
    let r = hist[(peak + 1) % ORI_BINS];
    let curvature = l - 2.0 * peak_val + r;
    let offset = if curvature < 0.0 { 0.5 * (l - r) / curvature } else { 0.0 };
    let angle = (peak as f32 + 0.5 + offset) * TAU / ORI_BINS as f32;
    let angle = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if angle >= TAU {
        0.0
    } else {
        angle
    }
}

fn describe(img: &GrayImage, x: usize, y: usize, sigma: f32, orientation: f32) -> Vec<f32> {
    let bin_width = 3.0 * sigma;
    let half = DESCR_CELLS as f32 / 2.0;
    let radius = (bin_width * std::f32::consts::SQRT_2 * (DESCR_CELLS as f32 + 1.0) * 0.5).round() as isize;
    let (sin_o, cos_o) = orientation.sin_cos();
    let weight_denom = 2.0 * half * half;
    let mut hist = [0f64; DESCRIPTOR_LEN];

    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let px = x as isize + dx;
            let py = y as isize + dy;
            if px < 1 || py < 1 || px >= img.width() as isize - 1 || py >= img.height() as isize - 1 {
                continue;
            }
            let c_rot = (dx as f32 * cos_o + dy as f32 * sin_o) / bin_width;
            let r_rot = (-(dx as f32) * sin_o + dy as f32 * cos_o) / bin_width;
            let rbin = r_rot + half - 0.5;
            let cbin = c_rot + half - 0.5;
            if rbin <= -1.0 || cbin <= -1.0 || rbin >= DESCR_CELLS as f32 || cbin >= DESCR_CELLS as f32 {
                continue;
            }
            let (gx, gy) = gradient(img, px as usize, py as usize);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let theta = (gy.atan2(gx) - orientation).rem_euclid(TAU);
            let obin = theta / TAU * DESCR_BINS as f32;
            let weight = (-(c_rot * c_rot + r_rot * r_rot) / weight_denom).exp();
            accumulate(&mut hist, rbin, cbin, obin, f64::from(mag * weight));
        }
    }

    normalize_clamped(&mut hist);
    hist.iter().map(|&v| v as f32).collect()
}

/// Trilinear distribution of `value` into the 4x4x8 histogram.
fn accumulate(hist: &mut [f64; DESCRIPTOR_LEN], rbin: f32, cbin: f32, obin: f32, value: f64) {
    let r0 = rbin.floor();
    let c0 = cbin.floor();
    let o0 = obin.floor();
    let dr = f64::from(rbin - r0);
    let dc = f64::from(cbin - c0);
    let d_o = f64::from(obin - o0);
    let (r0, c0, o0) = (r0 as isize, c0 as isize, o0 as isize);
    for (ri, wr) in [(r0, 1.0 - dr), (r0 + 1, dr)] {
        if ri < 0 || ri >= DESCR_CELLS as isize {
            continue;
        }
        for (ci, wc) in [(c0, 1.0 - dc), (c0 + 1, dc)] {
            if ci < 0 || ci >= DESCR_CELLS as isize {
                continue;
            }
            for (oi, wo) in [(o0, 1.0 - d_o), (o0 + 1, d_o)] {
                let oi = oi.rem_euclid(DESCR_BINS as isize) as usize;
                let idx = (ri as usize * DESCR_CELLS + ci as usize) * DESCR_BINS + oi;
                hist[idx] += value * wr * wc * wo;
            }
        }
    }
}

fn normalize_clamped(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    for x in v.iter_mut() {
        *x = (*x / norm).min(DESCR_CLAMP);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / sum) as f32).collect()
}

/// Separable Gaussian blur with replicated borders.
pub(crate) fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let mut tmp = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * img.get_clamped(x as isize + i as isize - radius, y as isize);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * tmp.get_clamped(x as isize, y as isize + i as isize - radius);
            }
            out.set(x, y, acc);
        }
    }
    out
}

fn difference(a: &GrayImage, b: &GrayImage) -> GrayImage {
    let pixels = a.pixels().iter().zip(b.pixels()).map(|(x, y)| x - y).collect();
    GrayImage::new(a.width(), a.height(), pixels).expect("same dimensions")
}

fn downsample(img: &GrayImage) -> GrayImage {
    let w = img.width() / 2;
    let h = img.height() / 2;
    GrayImage::from_fn(w, h, |x, y| img.get(2 * x, 2 * y))
}
