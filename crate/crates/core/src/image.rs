//! The image payload shared by every stage.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `C×H×W` image of unit-interval intensities.
///
/// Samples are stored channel-planar (`data[(c·H + y)·W + x]`) so that an
/// image maps onto one `[1, C, H, W]` tensor without reshuffling. Values
/// are not clamped: noise synthesis and the network may leave `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{}x{})", self.height, self.width, self.channels)
    }
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "empty image {height}x{width}x{channels}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} samples, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Builds an image from interleaved `H×W×C` samples.
    pub fn from_interleaved(channels: usize, height: usize, width: usize, hwc: &[f32]) -> Result<Self> {
        if hwc.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} samples, got {}",
                channels * height * width,
                hwc.len()
            )));
        }
        let mut data = vec![0.0; hwc.len()];
        for (i, px) in hwc.chunks(channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                data[c * height * width + i] = v;
            }
        }
        Image::new(channels, height, width, data)
    }

    /// Samples in interleaved `H×W×C` order.
    pub fn to_interleaved(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..plane {
            for c in 0..self.channels {
                out.push(self.data[c * plane + i]);
            }
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn check_same_dims(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Top-left `h×w` window starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Image> {
        if h == 0 || w == 0 || top + h > self.height || left + w > self.width {
            return Err(Error::Contract(format!(
                "crop {h}x{w} at ({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in top..top + h {
                data.extend_from_slice(&plane[y * self.width + left..y * self.width + left + w]);
            }
        }
        Image::new(self.channels, h, w, data)
    }

    /// Extends the bottom and right borders by mirror reflection (edge pixel
    /// not repeated) to `new_h × new_w`.
    pub fn reflect_pad(&self, new_h: usize, new_w: usize) -> Result<Image> {
        if new_h < self.height || new_w < self.width {
            return Err(Error::Contract(format!(
                "cannot pad {}x{} down to {new_h}x{new_w}",
                self.height, self.width
            )));
        }
        if new_h == self.height && new_w == self.width {
            return Ok(self.clone());
        }
        let mut out = Image::filled(self.channels, new_h, new_w, 0.0);
        for c in 0..self.channels {
            for y in 0..new_h {
                let sy = reflect_index(y, self.height);
                for x in 0..new_w {
                    out.set(c, y, x, self.get(c, sy, reflect_index(x, self.width)));
                }
            }
        }
        Ok(out)
    }

    /// Replicates a single-channel image or averages RGB to reach `channels`.
    pub fn with_channels(&self, channels: usize) -> Result<Image> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (1, n) => {
                let mut data = Vec::with_capacity(n * self.data.len());
                for _ in 0..n {
                    data.extend_from_slice(&self.data);
                }
                Image::new(n, self.height, self.width, data)
            }
            (n, 1) => {
                let plane = self.height * self.width;
                let data = (0..plane)
                    .map(|i| (0..n).map(|c| self.data[c * plane + i]).sum::<f32>() / n as f32)
                    .collect();
                Image::new(1, self.height, self.width, data)
            }
            (a, b) => Err(Error::Shape(format!(
                "cannot convert {a} channels to {b}"
            ))),
        }
    }

    /// Stacks equally sized images into one `[N, C, H, W]` tensor.
    pub fn stack(images: &[Image]) -> Result<Tensor<f32>> {
        let first = images
            .first()
            .ok_or_else(|| Error::Contract("stack of zero images".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.len());
        for img in images {
            first.check_same_dims(img, "stack")?;
            data.extend_from_slice(&img.data);
        }
        Tensor::from_vec(
            &[images.len(), first.channels, first.height, first.width],
            data,
        )
    }

    /// Splits a `[N, C, H, W]` tensor into `N` images.
    pub fn unstack(t: &Tensor<f32>) -> Result<Vec<Image>> {
        let [n, c, h, w] = t.dims4()?;
        let sz = c * h * w;
        (0..n)
            .map(|i| Image::new(c, h, w, t.data()[i * sz..(i + 1) * sz].to_vec()))
            .collect()
    }
}

/// Mirror index for positions past the end (`len=4`: 4→2, 5→1).
fn reflect_index(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = i % period;
    if m < len {
        m
    } else {
        period - m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaved_round_trip() {
        let hwc: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let img = Image::from_interleaved(3, 2, 2, &hwc).unwrap();
        assert_eq!(img.get(0, 0, 1), 3.0);
        assert_eq!(img.get(2, 1, 1), 11.0);
        assert_eq!(img.to_interleaved(), hwc);
    }

    #[test]
    fn reflect_pad_mirrors_without_repeating_edge() {
        let img = Image::new(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let p = img.reflect_pad(2, 5).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 2.0, 1.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
        assert_eq!(p.crop(0, 0, 1, 3).unwrap(), img);
    }

    #[test]
    fn gray_to_rgb_replicates() {
        let img = Image::new(1, 1, 2, vec![0.25, 0.75]).unwrap();
        let rgb = img.with_channels(3).unwrap();
        assert_eq!(rgb.plane(2), &[0.25, 0.75]);
        assert_eq!(rgb.with_channels(1).unwrap(), img);
    }

    #[test]
    fn stack_and_unstack() {
        let a = Image::filled(2, 3, 3, 0.1);
        let b = Image::filled(2, 3, 3, 0.9);
        let t = Image::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(t.shape(), &[2, 2, 3, 3]);
        assert_eq!(Image::unstack(&t).unwrap(), vec![a, b]);
        assert!(Image::stack(&[Image::filled(1, 2, 2, 0.0), Image::filled(1, 3, 2, 0.0)]).is_err());
    }
}
