//! Bernoulli pixel masks and the masked reconstruction loss.
//!
//! A mask value of 0 hides a site (it is replaced by the mask token, the
//! intensity 0) and 1 leaves it visible. The loss is computed on the
//! negated mask, i.e. on the hidden sites only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// How masks are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    /// Probability that a site is hidden.
    pub ratio: f64,
    /// Draw one `H×W` plane and share it across channels.
    pub shared_channels: bool,
}

impl MaskSpec {
    pub fn new(ratio: f64, shared_channels: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Config(format!("mask ratio {ratio} outside [0, 1]")));
        }
        Ok(MaskSpec {
            ratio,
            shared_channels,
        })
    }
}

/// Binary mask congruent to an [`Image`]; 0 = hidden, 1 = visible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn ones(channels: usize, height: usize, width: usize) -> Self {
        Mask {
            channels,
            height,
            width,
            data: vec![1; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} mask needs {} sites, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Contract("mask values must be 0 or 1".into()));
        }
        Ok(Mask {
            channels,
            height,
            width,
            data,
        })
    }

    /// `(C, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn is_visible(&self, i: usize) -> bool {
        self.data[i] != 0
    }

    /// Elementwise logical negation.
    pub fn negate(&self) -> Mask {
        Mask {
            data: self.data.iter().map(|&v| 1 - v).collect(),
            ..*self
        }
    }

    /// Fraction of hidden sites.
    pub fn zero_fraction(&self) -> f64 {
        self.data.iter().filter(|&&v| v == 0).count() as f64 / self.data.len() as f64
    }

    pub fn hidden_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0).count()
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    fn check_congruent(&self, img: &Image) -> Result<()> {
        if self.dims() != img.dims() {
            return Err(Error::Shape(format!(
                "mask {:?} vs image {:?}",
                self.dims(),
                img.dims()
            )));
        }
        Ok(())
    }
}

/// Draws a mask of shape `(channels, height, width)`; each site (or each
/// pixel, with shared channels) is hidden independently with probability
/// `spec.ratio`.
pub fn sample_mask<R: Rng + ?Sized>(
    channels: usize,
    height: usize,
    width: usize,
    spec: &MaskSpec,
    rng: &mut R,
) -> Mask {
    let plane = height * width;
    let mut draw = |n: usize| -> Vec<u8> {
        (0..n)
            .map(|_| u8::from(rng.random::<f64>() >= spec.ratio))
            .collect()
    };
    let data = if spec.shared_channels {
        let p = draw(plane);
        let mut data = Vec::with_capacity(channels * plane);
        for _ in 0..channels {
            data.extend_from_slice(&p);
        }
        data
    } else {
        draw(channels * plane)
    };
    Mask {
        channels,
        height,
        width,
        data,
    }
}

/// `M ⊙ img`: hidden sites become the mask token 0.
pub fn apply_mask(mask: &Mask, img: &Image) -> Result<Image> {
    mask.check_congruent(img)?;
    let mut out = img.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask.data) {
        if m == 0 {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Mean squared error over the sites where `mask_neg` is 1; 0 when there
/// are none.
pub fn masked_mse(pred: &Image, target: &Image, mask_neg: &Mask) -> Result<f64> {
    pred.check_same_dims(target, "masked_mse")?;
    mask_neg.check_congruent(pred)?;
    let mut acc = 0.0f64;
    let mut n = 0usize;
    for ((&p, &t), &m) in pred.data().iter().zip(target.data()).zip(&mask_neg.data) {
        if m != 0 {
            let d = f64::from(p - t);
            acc += d * d;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { acc / n as f64 })
}

/// Concatenated site flags of several masks, matching [`Image::stack`].
pub(crate) fn stack_masks<'a>(masks: impl IntoIterator<Item = &'a Mask>) -> Vec<u8> {
    masks.into_iter().flat_map(|m| m.data.iter().copied()).collect()
}
