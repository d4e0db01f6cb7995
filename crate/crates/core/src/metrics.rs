//! PSNR and SSIM on unit-range float images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean squared error over every sample, accumulated in f64.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b, "mse")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_with_peak(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    psnr_with_peak(a, b, 1.0)
}

/// PSNR over a set of equally weighted images, as if they were one.
pub fn psnr_stack(a: &[Image], b: &[Image]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("{} vs {} images", a.len(), b.len())));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in a.iter().zip(b) {
        sum += mse(x, y)? * x.len() as f64;
        n += x.len();
    }
    let m = sum / n as f64;
    Ok(if m == 0.0 {
        PSNR_CAP_DB
    } else {
        (-10.0 * m.log10()).min(PSNR_CAP_DB)
    })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03 and peak 1, over valid window positions, averaged across
/// channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b, "ssim")?;
    let (c, h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let k = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = a.plane(ch).iter().map(|&v| f64::from(v)).collect();
        let pb: Vec<f64> = b.plane(ch).iter().map(|&v| f64::from(v)).collect();
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(&pa, h, w, &k);
        let mu_b = filter_valid(&pb, h, w, &k);
        let e_aa = filter_valid(&aa, h, w, &k);
        let e_bb = filter_valid(&bb, h, w, &k);
        let e_ab = filter_valid(&ab, h, w, &k);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
            sum += num / den;
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

/// Rounds samples to the nearest 8-bit level after clamping, for
/// metrics on quantized outputs.
pub fn quantize8(img: &Image) -> Image {
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() / 255.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub path: String,
    pub noise_kind: String,
    pub param: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image rows plus their mean.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub rows: Vec<ReportRow>,
}

impl QualityReport {
    pub fn mean_psnr(&self) -> Option<f64> {
        (!self.rows.is_empty())
            .then(|| self.rows.iter().map(|r| r.psnr).sum::<f64>() / self.rows.len() as f64)
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        (!self.rows.is_empty())
            .then(|| self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len() as f64)
    }

    /// `path,noise_kind,param,psnr,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,noise_kind,param,psnr,ssim\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.6}\n",
                csv_field(&r.path),
                csv_field(&r.noise_kind),
                r.param.map(|p| format!("{p}")).unwrap_or_default(),
                r.psnr,
                r.ssim
            ));
        }
        if let (Some(p), Some(s)) = (self.mean_psnr(), self.mean_ssim()) {
            out.push_str(&format!("mean,,,{p:.4},{s:.6}\n"));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::add_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(c: usize, h: usize, w: usize) -> Image {
        let data = (0..c * h * w)
            .map(|i| ((i * 7919) % 1000) as f32 / 1000.0)
            .collect();
        Image::new(c, h, w, data).unwrap()
    }

    #[test]
    fn psnr_anchors() {
        let a = Image::filled(3, 8, 8, 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = Image::filled(3, 8, 8, 0.1);
        // 0.1 is not representable in f32; the error is below 1e-6 dB
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-6);
        assert!(psnr(&a, &Image::filled(3, 8, 9, 0.0)).is_err());
    }

    #[test]
    fn psnr_of_gaussian_pair() {
        let clean = ramp(3, 256, 256).map(|v| 0.25 + 0.5 * v);
        let noisy = add_gaussian(&clean, 0.1, &mut ChaCha8Rng::seed_from_u64(1));
        assert!((psnr(&clean, &noisy).unwrap() - 20.0).abs() < 0.1);
    }

    #[test]
    fn psnr_decreases_with_error() {
        let a = Image::filled(1, 4, 4, 0.5);
        let mut last = f64::INFINITY;
        for d in [0.01f32, 0.05, 0.1, 0.2] {
            let p = psnr(&a, &a.map(|v| v + d)).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = ramp(3, 32, 32);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let x = Image::filled(1, 16, 16, 0.2);
        let y = Image::filled(1, 16, 16, 0.8);
        let c1 = 1e-4;
        let (mx, my) = (f64::from(0.2f32), f64::from(0.8f32));
        let expected = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        let got = ssim(&x, &y).unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        assert!((got - 0.4707).abs() < 1e-4);
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let a = ramp(2, 24, 20);
        let b = add_gaussian(&a, 0.2, &mut ChaCha8Rng::seed_from_u64(4));
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!((ab - ba).abs() < 1e-9);
        assert!((-1.0..1.0).contains(&ab));
        assert!((psnr(&a, &b).unwrap() - psnr(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_falls_as_noise_grows() {
        let clean = ramp(1, 64, 64).map(|v| 0.2 + 0.6 * v);
        let mut last = 1.0;
        for sigma in [0.02, 0.05, 0.1] {
            let noisy = add_gaussian(&clean, sigma, &mut ChaCha8Rng::seed_from_u64(9));
            let s = ssim(&clean, &noisy).unwrap();
            assert!(s < last, "sigma {sigma}: {s}");
            last = s;
        }
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::filled(1, 10, 40, 0.5);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn quantize_rounds_half_up() {
        let img = Image::new(1, 1, 3, vec![0.5, 1.5, -0.2]).unwrap();
        let q = quantize8(&img);
        assert_eq!(q.data(), &[128.0 / 255.0, 1.0, 0.0]);
    }
}
