//! Synthetic scenes through detection, vocabulary, VLAD, index and evaluation.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewpoint::imagefeat::{detect_and_describe, select_top, DetectorConfig, GrayImage, ImageDescriptors, DEFAULT_TOP};
use viewpoint::index::{build_index, default_queries, evaluate_retrieval, evaluate_retrieval_pca};
use viewpoint::vlad::{aggregate_images, train_vocabulary};

/// A scene is a fixed set of blobs and bars; views shift it, change the
/// exposure and add noise.
struct Scene {
    blobs: Vec<(f32, f32, f32, f32)>,
    bars: Vec<(f32, f32, f32, f32)>,
}

fn scene(rng: &mut ChaCha8Rng) -> Scene {
    let blobs = (0..6)
        .map(|_| (rng.gen_range(14.0..82.0), rng.gen_range(14.0..82.0), rng.gen_range(1.8..4.0), rng.gen_range(0.4..0.9)))
        .collect();
    let bars = (0..3)
        .map(|_| (rng.gen_range(10.0..70.0), rng.gen_range(10.0..70.0), rng.gen_range(8.0..20.0), rng.gen_range(3.0..6.0)))
        .collect();
    Scene { blobs, bars }
}

fn view(s: &Scene, rng: &mut ChaCha8Rng) -> GrayImage {
    let (dx, dy) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    let gain = rng.gen_range(0.85..1.15);
    let noise: Vec<f32> = (0..96 * 96).map(|_| rng.gen_range(-0.02..0.02)).collect();
    GrayImage::from_fn(96, 96, |x, y| {
        let (x, y) = (x as f32 - dx, y as f32 - dy);
        let mut v = 0.1;
        for &(cx, cy, r, a) in &s.blobs {
            v += a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp();
        }
        for &(bx, by, w, h) in &s.bars {
            if x >= bx && x < bx + w && y >= by && y < by + h {
                v += 0.35;
            }
        }
        gain * v + noise[y.clamp(0.0, 95.0) as usize * 96 + x.clamp(0.0, 95.0) as usize]
    })
}

#[test]
fn views_of_the_same_scene_retrieve_each_other() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scenes: Vec<Scene> = (0..3).map(|_| scene(&mut rng)).collect();
    let mut images = Vec::new();
    let mut labels = HashMap::new();
    for (c, s) in scenes.iter().enumerate() {
        for v in 0..4 {
            let id = format!("s{c}_v{v}");
            let descs = detect_and_describe(&view(s, &mut rng), &DetectorConfig::default()).unwrap();
            images.push(ImageDescriptors { image_id: id.clone(), descriptors: select_top(&descs, DEFAULT_TOP).unwrap() });
            labels.insert(id, format!("scene{c}"));
        }
    }
    assert!(images.iter().all(|i| !i.descriptors.is_empty()));

    let pool: Vec<Vec<f64>> = images
        .iter()
        .flat_map(|i| i.descriptors.iter().map(|d| d.vector.iter().map(|&x| f64::from(x)).collect()))
        .collect();
    let vocab = train_vocabulary(&pool, 8, 42).unwrap();
    let features = aggregate_images(&images, &vocab).unwrap();
    for f in &features {
        let norm: f64 = f.vector.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }
    let index = build_index(&features).unwrap();
    let queries = default_queries(&labels, "random");
    let report = evaluate_retrieval(&index, &labels, &queries, &[1, 3]).unwrap();
    // Chance level is 3/11 for any n.
    assert!(report.per_n[&1] >= 0.75, "{report:?}");
    assert!(report.per_n[&3] >= 0.6, "{report:?}");

    let (pca_report, model) = evaluate_retrieval_pca(&index, &labels, &queries, &[1, 3], 2).unwrap();
    assert_eq!(model.n_components(), 2);
    assert!(pca_report.per_n[&1] > 3.0 / 11.0, "{pca_report:?}");
}
