//! Local feature extraction from grayscale rasters and import of externally
//! computed global embeddings.

mod image;
mod io;
mod sift;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

pub use self::image::GrayImage;
pub use self::io::{
    decode_embeddings, encode_embeddings, encode_local_descriptors, import_embeddings, read_local_descriptors,
    write_embeddings, write_local_descriptors, EmbeddingRecord, ImageDescriptors,
};
pub(crate) use self::io::{put_f32s, put_string, Reader};
pub use self::sift::{detect_and_describe, select_top, DetectorConfig, Keypoint, LocalDescriptor, DESCRIPTOR_LEN};

/// Number of descriptors kept per image before aggregation.
pub const DEFAULT_TOP: usize = 64;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed data: {0}")]
    Format(String),
    #[error("image is {width}x{height}, needs at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("image contains non-finite pixel values")]
    NonFinite,
    #[error("record {0} contains non-finite values")]
    NonFiniteRecord(usize),
    #[error("record {record}: dimension {found}, expected {expected}")]
    DimensionMismatch { record: usize, expected: usize, found: usize },
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("cannot select zero descriptors")]
    ZeroSelection,
}

impl FeatureError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Extracts the `top` strongest descriptors from every `.pgm` file in `dir`.
///
/// Images are processed in parallel; output is ordered by file name and the
/// image id is the file stem.
pub fn extract_directory(dir: &Path, config: &DetectorConfig, top: usize) -> Result<Vec<ImageDescriptors>, FeatureError> {
    if top == 0 {
        return Err(FeatureError::ZeroSelection);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| FeatureError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    files
        .par_iter()
        .map(|path| {
            let image = GrayImage::read_pgm(path)?;
            let all = detect_and_describe(&image, config)?;
            let image_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(ImageDescriptors { image_id, descriptors: select_top(&all, top)? })
        })
        .collect()
}
