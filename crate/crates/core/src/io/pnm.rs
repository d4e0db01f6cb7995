//! Portable anymap codec (P1 to P6, maxval up to 65535).

use crate::error::{FormatError, Result};
use crate::image::Image;

use super::ImageBuffer;

struct Header {
    kind: u8,
    width: usize,
    height: usize,
    maxval: u16,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize, FormatError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.bytes.len() {
                FormatError::Truncated("anymap header".into())
            } else {
                FormatError::Malformed(format!("expected a number at byte {start}"))
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FormatError::Malformed("number out of range".into()))
    }

    /// A single `0`/`1` digit of a plain bitmap, which needs no separators.
    fn bit(&mut self) -> Result<u8, FormatError> {
        self.skip_space_and_comments();
        match self.bytes.get(self.pos) {
            Some(b'0') => {
                self.pos += 1;
                Ok(0)
            }
            Some(b'1') => {
                self.pos += 1;
                Ok(1)
            }
            Some(_) => Err(FormatError::Malformed(format!("bad bitmap digit at byte {}", self.pos))),
            None => Err(FormatError::Truncated("anymap raster".into())),
        }
    }
}

fn parse_header(cur: &mut Cursor<'_>) -> Result<Header, FormatError> {
    if cur.bytes.len() < 2 {
        return Err(FormatError::Truncated("anymap header".into()));
    }
    if cur.bytes[0] != b'P' || !(b'1'..=b'6').contains(&cur.bytes[1]) {
        return Err(FormatError::BadMagic("expected P1..P6".into()));
    }
    let kind = cur.bytes[1] - b'0';
    cur.pos = 2;
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = if matches!(kind, 1 | 4) { 1 } else { cur.number()? };
    if width == 0 || height == 0 {
        return Err(FormatError::Malformed(format!("empty {width}x{height} image")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(FormatError::Malformed(format!("maxval {maxval} outside 1..=65535")));
    }
    if kind >= 4 {
        // exactly one whitespace byte separates the header from the raster
        match cur.bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            Some(_) => return Err(FormatError::Malformed("missing raster separator".into())),
            None => return Err(FormatError::Truncated("anymap header".into())),
        }
    }
    Ok(Header {
        kind,
        width,
        height,
        maxval: maxval as u16,
    })
}

pub fn decode(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut cur = Cursor { bytes, pos: 0 };
    let h = parse_header(&mut cur)?;
    let channels = if matches!(h.kind, 3 | 6) { 3 } else { 1 };
    let n = h.width * h.height * channels;
    let maxval = f32::from(h.maxval);
    let mut hwc = Vec::with_capacity(n);
    match h.kind {
        // bitmaps store 1 for black
        1 => {
            for _ in 0..n {
                hwc.push(f32::from(1 - cur.bit()?));
            }
        }
        2 | 3 => {
            for _ in 0..n {
                let v = cur.number()?;
                if v > usize::from(h.maxval) {
                    return Err(FormatError::Malformed(format!("sample {v} above maxval")).into());
                }
                hwc.push(v as f32 / maxval);
            }
        }
        4 => {
            let row_bytes = h.width.div_ceil(8);
            let raster = bytes.get(cur.pos..cur.pos + row_bytes * h.height).ok_or_else(|| FormatError::Truncated("anymap raster".into()))?;
            for y in 0..h.height {
                for x in 0..h.width {
                    let bit = (raster[y * row_bytes + x / 8] >> (7 - x % 8)) & 1;
                    hwc.push(f32::from(1 - bit));
                }
            }
        }
        _ => {
            let wide = h.maxval > 255;
            let need = n * if wide { 2 } else { 1 };
            let raster = bytes.get(cur.pos..cur.pos + need).ok_or_else(|| FormatError::Truncated("anymap raster".into()))?;
            if wide {
                for pair in raster.chunks_exact(2) {
                    let v = u16::from_be_bytes([pair[0], pair[1]]);
                    if v > h.maxval {
                        return Err(FormatError::Malformed(format!("sample {v} above maxval")).into());
                    }
                    hwc.push(f32::from(v) / maxval);
                }
            } else {
                for &v in raster {
                    if u16::from(v) > h.maxval {
                        return Err(FormatError::Malformed(format!("sample {v} above maxval")).into());
                    }
                    hwc.push(f32::from(v) / maxval);
                }
            }
        }
    }
    Ok(ImageBuffer {
        image: Image::from_interleaved(channels, h.height, h.width, &hwc)?,
        maxval: h.maxval,
    })
}

/// Binary greymap (1 channel) or pixmap (3 channels) at the given maxval.
pub fn encode(img: &Image, maxval: u16) -> Result<Vec<u8>> {
    let (c, h, w) = img.dims();
    let kind = match c {
        1 => 5,
        3 => 6,
        _ => return Err(FormatError::Unsupported(Some(format!("{c}-channel anymap"))).into()),
    };
    if maxval == 0 {
        return Err(FormatError::Malformed("maxval 0".into()).into());
    }
    let mut out = format!("P{kind}\n{w} {h}\n{maxval}\n").into_bytes();
    let wide = maxval > 255;
    out.reserve(c * h * w * if wide { 2 } else { 1 });
    for v in img.to_interleaved() {
        let q = super::quantize(v, maxval);
        if wide {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn plain_pixmap_fixture() {
        let bytes = b"P3\n# tiny\n2 2\n255\n255 0 0  0 255 0\n0 0 255  51 102 153\n";
        let buf = decode(bytes).unwrap();
        assert_eq!(buf.image.dims(), (3, 2, 2));
        assert_eq!(buf.maxval, 255);
        assert_eq!(buf.image.get(0, 0, 0), 1.0);
        assert_eq!(buf.image.get(1, 0, 1), 1.0);
        assert_eq!(buf.image.get(2, 1, 0), 1.0);
        assert_eq!(buf.image.get(0, 1, 1), 51.0 / 255.0);
        assert_eq!(buf.image.get(1, 1, 1), 102.0 / 255.0);
        assert_eq!(buf.image.get(2, 1, 1), 0.6);
    }

    #[test]
    fn raw_greymap_fixture() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 64]);
        let img = decode(&bytes).unwrap().image;
        assert_eq!(img.data(), &[0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
    }

    #[test]
    fn sixteen_bit_scaling() {
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x80, 0x00]);
        let buf = decode(&bytes).unwrap();
        assert_eq!(buf.image.data(), &[1.0, 32768.0 / 65535.0]);
        assert_eq!(buf.bit_depth(), 16);
        assert_eq!(encode(&buf.image, 65535).unwrap(), bytes);
    }

    #[test]
    fn bitmaps() {
        let img = decode(b"P1\n3 2\n0 1 0\n1 1 0").unwrap().image;
        assert_eq!(img.data(), &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let packed = decode(&[b'P', b'4', b' ', b'3', b' ', b'1', b'\n', 0b0100_0000]).unwrap();
        assert_eq!(packed.image.data(), &[1.0, 0.0, 1.0]);
        let compact = decode(b"P1 3 1 010").unwrap().image;
        assert_eq!(compact.data(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn raw_round_trip_is_byte_identical() {
        let mut bytes = b"P6\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 1, 2, 127, 128, 129, 253, 254, 255]);
        let buf = decode(&bytes).unwrap();
        assert_eq!(encode(&buf.image, buf.maxval).unwrap(), bytes);
    }

    #[test]
    fn errors_are_distinct() {
        assert!(matches!(decode(b"Q6 1 1 255\n"), Err(Error::Format(FormatError::BadMagic(_)))));
        assert!(matches!(decode(b"P6 2 2 255\n\x00\x00"), Err(Error::Format(FormatError::Truncated(_)))));
        assert!(matches!(decode(b"P2 1 1 10 11"), Err(Error::Format(FormatError::Malformed(_)))));
        assert!(matches!(decode(b"P5 1 1 70000\n"), Err(Error::Format(FormatError::Malformed(_)))));
        assert!(matches!(decode(b"P"), Err(Error::Format(FormatError::Truncated(_)))));
    }
}
