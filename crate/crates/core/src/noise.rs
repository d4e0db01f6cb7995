//! Synthetic noise for building noisy/clean test pairs.
//!
//! None of the synthesizers clip their output; clamping happens only when
//! an image is encoded.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// A noise model and its strength. Intensities are on the `[0, 1]` scale,
/// so a Gaussian "σ = 25" on 8-bit data is `sigma = 25/255`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    Poisson { lambda: f64 },
    /// Heteroscedastic Gaussian with variance `σ_r + σ_s·I`.
    Nlf { sigma_s: f64 },
    /// Multiplicative `I + I·U`, `U` zero-mean uniform with std `v`.
    Speckle { v: f64 },
    /// Each pixel turns white with probability `d` and black with
    /// probability `d`.
    SaltPepper { d: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseSpec::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
            NoiseSpec::Poisson { lambda } => lambda > 0.0 && lambda.is_finite(),
            NoiseSpec::Nlf { sigma_s } => sigma_s >= 0.0 && sigma_s.is_finite(),
            NoiseSpec::Speckle { v } => v >= 0.0 && v.is_finite(),
            NoiseSpec::SaltPepper { d } => (0.0..=0.5).contains(&d),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid noise parameters {self:?}")))
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NoiseSpec::Gaussian { .. } => "gaussian",
            NoiseSpec::Poisson { .. } => "poisson",
            NoiseSpec::Nlf { .. } => "nlf",
            NoiseSpec::Speckle { .. } => "speckle",
            NoiseSpec::SaltPepper { .. } => "salt_pepper",
        }
    }

    /// The single strength parameter.
    pub fn param(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian { sigma } => sigma,
            NoiseSpec::Poisson { lambda } => lambda,
            NoiseSpec::Nlf { sigma_s } => sigma_s,
            NoiseSpec::Speckle { v } => v,
            NoiseSpec::SaltPepper { d } => d,
        }
    }

    /// Builds a spec from a kind name and its parameter.
    pub fn from_kind(kind: &str, param: f64) -> Result<Self> {
        let spec = match kind {
            "gaussian" | "gauss" => NoiseSpec::Gaussian { sigma: param },
            "poisson" => NoiseSpec::Poisson { lambda: param },
            "nlf" => NoiseSpec::Nlf { sigma_s: param },
            "speckle" => NoiseSpec::Speckle { v: param },
            "salt_pepper" | "salt-pepper" | "s&p" => NoiseSpec::SaltPepper { d: param },
            other => return Err(Error::Config(format!("unknown noise kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Draws a parameter uniformly from the generalization-suite range of
    /// `kind`: Gaussian σ, Speckle v ∈ [10, 50]/255, Poisson λ ∈ [10, 50],
    /// S&P d ∈ [0.02, 0.05], NLF σ_s ∈ [0.01, 0.012].
    pub fn sample_suite<R: Rng + ?Sized>(kind: &str, rng: &mut R) -> Result<Self> {
        let (lo, hi) = match kind {
            "gaussian" | "speckle" => (10.0 / 255.0, 50.0 / 255.0),
            "poisson" => (10.0, 50.0),
            "salt_pepper" => (0.02, 0.05),
            "nlf" => (0.01, 0.012),
            other => return Err(Error::Config(format!("unknown noise kind {other:?}"))),
        };
        Self::from_kind(kind, rng.random_range(lo..=hi))
    }

    pub fn apply<R: Rng + ?Sized>(&self, img: &Image, rng: &mut R) -> Result<Image> {
        self.validate()?;
        Ok(match *self {
            NoiseSpec::Gaussian { sigma } => add_gaussian(img, sigma, rng),
            NoiseSpec::Poisson { lambda } => add_poisson(img, lambda, rng),
            NoiseSpec::Nlf { sigma_s } => add_nlf(img, sigma_s, rng),
            NoiseSpec::Speckle { v } => add_speckle(img, v, rng),
            NoiseSpec::SaltPepper { d } => add_salt_pepper(img, d, rng),
        })
    }
}

/// `I + σ·N(0, 1)` per sample.
pub fn add_gaussian<R: Rng + ?Sized>(img: &Image, sigma: f64, rng: &mut R) -> Image {
    if sigma == 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    img.map_with(|v| v + normal.sample(rng) as f32)
}

/// `P(I·λ)/λ` per sample; non-positive intensities map to 0.
pub fn add_poisson<R: Rng + ?Sized>(img: &Image, lambda: f64, rng: &mut R) -> Image {
    img.map_with(|v| {
        let mu = f64::from(v) * lambda;
        if mu <= 0.0 {
            return 0.0;
        }
        let k: f64 = Poisson::new(mu).expect("positive finite rate").sample(rng);
        (k / lambda) as f32
    })
}

/// Signal-independent variance of the noise level function,
/// `ln σ_r = 2.18·ln σ_s + 1.2`.
pub fn nlf_sigma_r(sigma_s: f64) -> f64 {
    (2.18 * sigma_s.ln() + 1.2).exp()
}

/// `N(I, σ_r + σ_s·I)` per sample.
pub fn add_nlf<R: Rng + ?Sized>(img: &Image, sigma_s: f64, rng: &mut R) -> Image {
    if sigma_s == 0.0 {
        return img.clone();
    }
    let sigma_r = nlf_sigma_r(sigma_s);
    img.map_with(|v| {
        let var = (sigma_r + sigma_s * f64::from(v)).max(0.0);
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        v + (z * var.sqrt()) as f32
    })
}

/// `I + I·U`, `U ~ Uniform(−v√3, v√3)` so that `std(U) = v`.
pub fn add_speckle<R: Rng + ?Sized>(img: &Image, v: f64, rng: &mut R) -> Image {
    if v == 0.0 {
        return img.clone();
    }
    let half = v * 3f64.sqrt();
    let u = Uniform::new_inclusive(-half, half).expect("finite bounds");
    img.map_with(|x| x + x * u.sample(rng) as f32)
}

/// Replaces whole pixels (all channels) by white with probability `d` and
/// by black with probability `d`.
pub fn add_salt_pepper<R: Rng + ?Sized>(img: &Image, d: f64, rng: &mut R) -> Image {
    if d == 0.0 {
        return img.clone();
    }
    let (c, h, w) = img.dims();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let u: f64 = rng.random();
            let value = if u < d {
                1.0
            } else if u < 2.0 * d {
                0.0
            } else {
                continue;
            };
            for ch in 0..c {
                out.set(ch, y, x, value);
            }
        }
    }
    out
}

impl Image {
    /// Maps samples in storage order with a stateful closure.
    pub(crate) fn map_with(&self, mut f: impl FnMut(f32) -> f32) -> Image {
        let mut out = self.clone();
        for v in out.data_mut() {
            *v = f(*v);
        }
        out
    }
}
