//! Binary containers for global embeddings (`EMB1`) and per-image local
//! descriptor sets (`LDS1`). All integers and floats are little-endian.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::sift::{Keypoint, LocalDescriptor, DESCRIPTOR_LEN};
use super::FeatureError;

const EMB_MAGIC: &[u8; 4] = b"EMB1";
const LDS_MAGIC: &[u8; 4] = b"LDS1";

/// An externally or natively computed global vector for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub image_id: String,
    pub vector: Vec<f32>,
}

/// All local descriptors kept for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDescriptors {
    pub image_id: String,
    pub descriptors: Vec<LocalDescriptor>,
}

pub(crate) struct Reader<R> {
    inner: R,
    record: usize,
}

impl<R: Read> Reader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, record: 0 }
    }

    fn fail(&self, what: &str) -> FeatureError {
        FeatureError::Format(format!("record {}: {what}", self.record))
    }

    pub(crate) fn bytes<const N: usize>(&mut self) -> Result<[u8; N], FeatureError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|_| self.fail("unexpected end of file"))?;
        Ok(buf)
    }

    pub(crate) fn u16(&mut self) -> Result<u16, FeatureError> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FeatureError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, FeatureError> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>, FeatureError> {
        let mut raw = vec![0u8; n * 4];
        self.inner.read_exact(&mut raw).map_err(|_| self.fail("unexpected end of file"))?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    pub(crate) fn string(&mut self) -> Result<String, FeatureError> {
        let len = self.u16()? as usize;
        let mut raw = vec![0u8; len];
        self.inner.read_exact(&mut raw).map_err(|_| self.fail("unexpected end of file"))?;
        String::from_utf8(raw).map_err(|_| self.fail("id is not UTF-8"))
    }

    pub(crate) fn at_eof(&mut self) -> bool {
        let mut probe = [0u8; 1];
        matches!(self.inner.read(&mut probe), Ok(0))
    }
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) -> Result<(), FeatureError> {
    let len = u16::try_from(s.len()).map_err(|_| FeatureError::Format(format!("id too long: {} bytes", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes embeddings. All vectors must share one dimension.
pub fn encode_embeddings(records: &[EmbeddingRecord]) -> Result<Vec<u8>, FeatureError> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    let mut out = Vec::with_capacity(12 + records.len() * (dim * 4 + 18));
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (i, rec) in records.iter().enumerate() {
        if rec.vector.len() != dim {
            return Err(FeatureError::DimensionMismatch { record: i, expected: dim, found: rec.vector.len() });
        }
        put_string(&mut out, &rec.image_id)?;
        put_f32s(&mut out, &rec.vector);
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Vec<EmbeddingRecord>, FeatureError> {
    read_embeddings_from(bytes)
}

fn read_embeddings_from<R: Read>(input: R) -> Result<Vec<EmbeddingRecord>, FeatureError> {
    let mut r = Reader::new(input);
    if &r.bytes::<4>()? != EMB_MAGIC {
        return Err(FeatureError::Format("missing EMB1 magic".into()));
    }
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        r.record = i;
        let image_id = r.string()?;
        let vector = r.f32_vec(dim)?;
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFiniteRecord(i));
        }
        if !seen.insert(image_id.clone()) {
            return Err(FeatureError::DuplicateId(image_id));
        }
        out.push(EmbeddingRecord { image_id, vector });
    }
    if !r.at_eof() {
        return Err(FeatureError::Format(format!("trailing bytes after {count} records")));
    }
    Ok(out)
}

/// Reads an `EMB1` file, checking ids are unique and values finite.
pub fn import_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>, FeatureError> {
    let f = File::open(path).map_err(|e| FeatureError::io(path, e))?;
    read_embeddings_from(BufReader::new(f))
}

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<(), FeatureError> {
    let bytes = encode_embeddings(records)?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| FeatureError::io(path, e))?);
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| FeatureError::io(path, e))
}

/// `LDS1`: magic, u32 descriptor length, u32 image count; per image a
/// u16-prefixed id, u32 descriptor count, then per descriptor five f32
/// keypoint fields (x, y, scale, orientation, response) and the vector.
pub fn encode_local_descriptors(images: &[ImageDescriptors]) -> Result<Vec<u8>, FeatureError> {
    let mut out = Vec::new();
    out.extend_from_slice(LDS_MAGIC);
    out.extend_from_slice(&(DESCRIPTOR_LEN as u32).to_le_bytes());
    out.extend_from_slice(&(images.len() as u32).to_le_bytes());
    for (i, img) in images.iter().enumerate() {
        put_string(&mut out, &img.image_id)?;
        out.extend_from_slice(&(img.descriptors.len() as u32).to_le_bytes());
        for d in &img.descriptors {
            if d.vector.len() != DESCRIPTOR_LEN {
                return Err(FeatureError::DimensionMismatch {
                    record: i,
                    expected: DESCRIPTOR_LEN,
                    found: d.vector.len(),
                });
            }
            let k = d.keypoint;
            put_f32s(&mut out, &[k.x, k.y, k.scale, k.orientation, k.response]);
            put_f32s(&mut out, &d.vector);
        }
    }
    Ok(out)
}

pub fn read_local_descriptors(path: &Path) -> Result<Vec<ImageDescriptors>, FeatureError> {
    let f = File::open(path).map_err(|e| FeatureError::io(path, e))?;
    let mut r = Reader::new(BufReader::new(f));
    if &r.bytes::<4>()? != LDS_MAGIC {
        return Err(FeatureError::Format("missing LDS1 magic".into()));
    }
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        r.record = i;
        let image_id = r.string()?;
        let n = r.u32()? as usize;
        let mut descriptors = Vec::with_capacity(n);
        for _ in 0..n {
            let keypoint = Keypoint {
                x: r.f32()?,
                y: r.f32()?,
                scale: r.f32()?,
                orientation: r.f32()?,
                response: r.f32()?,
            };
            let vector = r.f32_vec(dim)?;
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(FeatureError::NonFiniteRecord(i));
            }
            descriptors.push(LocalDescriptor { keypoint, vector });
        }
        if !seen.insert(image_id.clone()) {
            return Err(FeatureError::DuplicateId(image_id));
        }
        out.push(ImageDescriptors { image_id, descriptors });
    }
    if !r.at_eof() {
        return Err(FeatureError::Format(format!("trailing bytes after {count} images")));
    }
    Ok(out)
}

pub fn write_local_descriptors(path: &Path, images: &[ImageDescriptors]) -> Result<(), FeatureError> {
    let bytes = encode_local_descriptors(images)?;
    std::fs::write(path, bytes).map_err(|e| FeatureError::io(path, e))
}
