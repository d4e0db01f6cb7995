use std::io::Cursor;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{FormatError, Result};
use crate::image::Image;

use super::ImageBuffer;

fn decode_error(e: png::DecodingError) -> FormatError {
    match e {
        png::DecodingError::IoError(ref io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            FormatError::Truncated("png stream".into())
        }
        png::DecodingError::Format(f) => {
            let msg = f.to_string();
            if msg.contains("signature") {
                FormatError::BadMagic(msg)
            } else if msg.contains("nexpected end") || msg.contains("EOF") {
                FormatError::Truncated(msg)
            } else {
                FormatError::Malformed(msg)
            }
        }
        other => FormatError::Malformed(other.to_string()),
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<ImageBuffer> {
    if bytes.len() < 8 {
        return Err(FormatError::Truncated("png signature".into()).into());
    }
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(decode_error)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| FormatError::Malformed("png too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(decode_error)?;
    let (width, height) = (info.width as usize, info.height as usize);
    let src_channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => {
            return Err(FormatError::Unsupported(Some("unexpanded palette".into())).into())
        }
    };
    let (maxval, wide) = match info.bit_depth {
        BitDepth::Sixteen => (65535u16, true),
        BitDepth::Eight => (255, false),
        other => return Err(FormatError::Unsupported(Some(format!("png depth {other:?}"))).into()),
    };
    let channels = if src_channels >= 3 { 3 } else { 1 };
    let scale = f32::from(maxval);
    let mut hwc = Vec::with_capacity(width * height * channels);
    let row_bytes = info.line_size;
    for y in 0..height {
        let row = &buf[y * row_bytes..];
        for x in 0..width {
            for c in 0..channels {
                let i = x * src_channels + c;
                let v = if wide {
                    u16::from_be_bytes([row[2 * i], row[2 * i + 1]])
                } else {
                    u16::from(row[i])
                };
                hwc.push(f32::from(v) / scale);
            }
        }
    }
    Ok(ImageBuffer {
        image: Image::from_interleaved(channels, height, width, &hwc)?,
        maxval,
    })
}

pub(super) fn encode(img: &Image, maxval: u16) -> Result<Vec<u8>> {
    let (c, h, w) = img.dims();
    let color = match c {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        _ => return Err(FormatError::Unsupported(Some(format!("{c}-channel png"))).into()),
    };
    let depth = match maxval {
        255 => BitDepth::Eight,
        65535 => BitDepth::Sixteen,
        _ => return Err(FormatError::Unsupported(Some(format!("png with maxval {maxval}"))).into()),
    };
    let mut raw = Vec::with_capacity(c * h * w * if maxval > 255 { 2 } else { 1 });
    for v in img.to_interleaved() {
        let q = super::quantize(v, maxval);
        if maxval > 255 {
            raw.extend_from_slice(&q.to_be_bytes());
        } else {
            raw.push(q as u8);
        }
    }
    let mut out = Vec::new();
    let encode_error = |e: png::EncodingError| FormatError::Malformed(e.to_string());
    let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(encode_error)?;
    writer.write_image_data(&raw).map_err(encode_error)?;
    writer.finish().map_err(encode_error)?;
    Ok(out)
}
