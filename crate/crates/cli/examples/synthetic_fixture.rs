//! Regenerates the binary assets of `fixtures/synthetic`.
//!
//! ```text
//! cargo run -p viewpoint-cli --example synthetic_fixture -- fixtures/synthetic
//! ```
//!
//! Outputs: `features.emb`, `message.snt`, `target.snt` and `images/*.pgm`.
//! The text inputs (`corpus.jsonl`, `train_*.tsv`) are edited by hand.

use std::error::Error;
use std::path::Path;

use viewpoint::imagefeat::{write_embeddings, EmbeddingRecord, GrayImage};
use viewpoint::sentiment::{read_training_tsv, train_from_texts, Head, TrainConfig};

pub const SEED: u64 = 42;

/// Feature vectors placed so that distances from `img_q` are exact:
/// a1 0.5, b 0.3, c 0.7, d 0.9, e 0.99, f 1.0 (excluded by the strict
/// radius), old 0.1, a2 1.5, g 2, h 3, i 5.
pub fn features() -> Vec<EmbeddingRecord> {
    let rows: [(&str, [f32; 4]); 12] = [
        ("img_q", [0.0, 0.0, 0.0, 0.0]),
        ("img_a1", [0.5, 0.0, 0.0, 0.0]),
        ("img_a2", [1.5, 0.0, 0.0, 0.0]),
        ("img_b", [0.0, 0.3, 0.0, 0.0]),
        ("img_c", [0.0, 0.0, 0.7, 0.0]),
        ("img_d", [0.0, 0.0, 0.0, 0.9]),
        ("img_e", [0.99, 0.0, 0.0, 0.0]),
        ("img_f", [0.0, 1.0, 0.0, 0.0]),
        ("img_g", [2.0, 0.0, 0.0, 0.0]),
        ("img_h", [0.0, 3.0, 0.0, 0.0]),
        ("img_i", [0.0, 0.0, 5.0, 0.0]),
        ("img_old", [0.0, 0.0, 0.0, 0.1]),
    ];
    rows.iter().map(|(id, v)| EmbeddingRecord { image_id: id.to_string(), vector: v.to_vec() }).collect()
}

/// A small grey image with a bright disc whose position depends on `k`.
fn thumbnail(k: usize) -> GrayImage {
    let cx = 8.0 + (k * 5 % 16) as f32;
    let cy = 8.0 + (k * 3 % 16) as f32;
    GrayImage::from_fn(32, 32, |x, y| {
        let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
        0.2 + 0.7 * (-d2 / 18.0).exp()
    })
}

pub fn generate(dir: &Path) -> Result<(), Box<dyn Error>> {
    let feats = features();
    write_embeddings(&dir.join("features.emb"), &feats)?;

    let images = dir.join("images");
    std::fs::create_dir_all(&images)?;
    for (k, rec) in feats.iter().enumerate() {
        thumbnail(k).write_pgm(&images.join(format!("{}.pgm", rec.image_id)))?;
    }

    let config = TrainConfig::default();
    for (head, data, out) in
        [(Head::Message, "train_message.tsv", "message.snt"), (Head::Target, "train_target.tsv", "target.snt")]
    {
        let rows = read_training_tsv(&dir.join(data))?;
        let outcome = train_from_texts(&rows, head, &config, SEED)?;
        outcome.model.save(&dir.join(out))?;
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures/synthetic".into());
    generate(Path::new(&dir))
}
