//! Image files: portable anymaps and PNG.
//!
//! Decoded samples are scaled to `[0, 1]` by the source maximum and the
//! channel count is normalized to 1 or 3 (alpha is dropped). Encoding
//! clamps to `[0, 1]` and rounds half up to the target depth.

mod png_codec;
pub mod pnm;

use std::path::{Path, PathBuf};

use crate::error::{Error, FormatError, Result};
use crate::image::Image;

/// A decoded image plus the maximum sample value of its source.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub image: Image,
    /// 255 for 8-bit sources, 65535 for 16-bit ones, 1 for bitmaps.
    pub maxval: u16,
}

impl ImageBuffer {
    pub fn new(image: Image, maxval: u16) -> Self {
        ImageBuffer { image, maxval }
    }

    /// Bits per sample needed for `maxval`.
    pub fn bit_depth(&self) -> u8 {
        (16 - self.maxval.leading_zeros()) as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Codec {
    Pnm,
    Png,
}

impl Codec {
    /// Chooses a codec from the file extension.
    pub fn from_path(path: &Path) -> Result<Codec> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("pbm" | "pgm" | "ppm" | "pnm") => Ok(Codec::Pnm),
            Some("png") => Ok(Codec::Png),
            other => Err(FormatError::Unsupported(other.map(|e| format!(".{e}"))).into()),
        }
    }
}

/// `floor(clamp(v)·maxval + 0.5)`.
pub fn quantize(v: f32, maxval: u16) -> u16 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (f64::from(v) * f64::from(maxval) + 0.5).floor() as u16
}

pub fn decode(bytes: &[u8], codec: Codec) -> Result<ImageBuffer> {
    match codec {
        Codec::Pnm => pnm::decode(bytes),
        Codec::Png => png_codec::decode(bytes),
    }
}

pub fn encode(img: &Image, codec: Codec, maxval: u16) -> Result<Vec<u8>> {
    match codec {
        Codec::Pnm => pnm::encode(img, maxval),
        Codec::Png => png_codec::encode(img, maxval),
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let codec = Codec::from_path(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, codec).map_err(|e| with_path(e, path))
}

/// Saves at 8 bits per sample.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    save_image_with_maxval(img, path, 255)
}

/// Saves with the given maximum sample value (255 or 65535 for PNG).
pub fn save_image_with_maxval(img: &Image, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(img, Codec::from_path(path)?, maxval).map_err(|e| with_path(e, path))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_buffer(buf: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    save_image_with_maxval(&buf.image, path, buf.maxval)
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(FormatError::Malformed(m)) => {
            FormatError::Malformed(format!("{}: {m}", path.display())).into()
        }
        Error::Format(FormatError::Truncated(m)) => {
            FormatError::Truncated(format!("{}: {m}", path.display())).into()
        }
        Error::Format(FormatError::BadMagic(m)) => {
            FormatError::BadMagic(format!("{}: {m}", path.display())).into()
        }
        other => other,
    }
}

/// Supported image files directly inside `dir`, sorted by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && Codec::from_path(&path).is_ok() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
