use std::path::Path;

use super::FeatureError;

/// Single-channel raster with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, FeatureError> {
        if pixels.len() != width * height {
            return Err(FeatureError::Format(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    /// Pixel lookup with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Decodes an 8-bit binary PGM (`P5`). Header comments are allowed.
    pub fn decode_pgm(bytes: &[u8]) -> Result<Self, FeatureError> {
        let mut pos = 0usize;
        let mut fields = [0usize; 3];
        let magic = next_token(bytes, &mut pos).ok_or_else(|| bad("missing magic"))?;
        if magic != b"P5" {
            return Err(bad("not a binary PGM (P5)"));
        }
        for field in fields.iter_mut() {
            let tok = next_token(bytes, &mut pos).ok_or_else(|| bad("truncated header"))?;
            *field = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("non-numeric header field"))?;
        }
        let [width, height, maxval] = fields;
        if maxval == 0 || maxval > 255 {
            return Err(bad("only 8-bit PGM is supported"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let n = width * height;
        let raster = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated raster"))?;
        let scale = 1.0 / maxval as f32;
        let pixels = raster.iter().map(|&b| (f32::from(b) * scale).min(1.0)).collect();
        Self::new(width, height, pixels)
    }

    /// Encodes as 8-bit binary PGM, rounding to the nearest level.
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn read_pgm(path: &Path) -> Result<Self, FeatureError> {
        let bytes = std::fs::read(path).map_err(|e| FeatureError::io(path, e))?;
        Self::decode_pgm(&bytes)
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), FeatureError> {
        std::fs::write(path, self.encode_pgm()).map_err(|e| FeatureError::io(path, e))
    }
}

fn bad(msg: &str) -> FeatureError {
    FeatureError::Format(format!("PGM: {msg}"))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}
