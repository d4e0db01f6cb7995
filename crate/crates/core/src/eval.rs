//! Directory-level quality evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{list_images, load_image};
use crate::metrics::{psnr, quantize8, ssim, QualityReport, ReportRow};
use crate::noise::NoiseSpec;

/// Per-file noise parameters written next to synthesized noisy images.
pub const NOISE_SIDECAR: &str = "noise.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSidecar {
    /// Keyed by output file name.
    pub files: BTreeMap<String, NoiseSpec>,
}

impl NoiseSidecar {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(NOISE_SIDECAR);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(NOISE_SIDECAR);
        let text = serde_json::to_string_pretty(self).expect("sidecar serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: QualityReport,
    /// Files present on only one side.
    pub unmatched: Vec<PathBuf>,
}

fn by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for p in list_images(dir)? {
        if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
            out.entry(stem.to_string()).or_insert(p);
        }
    }
    Ok(out)
}

/// Compares every image in `other_dir` with the clean image of the same
/// file stem in `clean_dir`. Rows are ordered by stem. With `quantize`
/// both sides are rounded to 8 bits first.
pub fn run_eval(clean_dir: impl AsRef<Path>, other_dir: impl AsRef<Path>, quantize: bool) -> Result<EvalOutcome> {
    let (clean_dir, other_dir) = (clean_dir.as_ref(), other_dir.as_ref());
    let clean = by_stem(clean_dir)?;
    let other = by_stem(other_dir)?;
    let sidecar = NoiseSidecar::load(other_dir)?.unwrap_or_default();
    let mut report = QualityReport::default();
    let mut unmatched = Vec::new();
    for (stem, path) in &other {
        let Some(clean_path) = clean.get(stem) else {
            unmatched.push(path.clone());
            continue;
        };
        let mut a = load_image(clean_path)?.image;
        let mut b = load_image(path)?.image;
        if a.channels() != b.channels() {
            b = b.with_channels(a.channels())?;
        }
        if quantize {
            a = quantize8(&a);
            b = quantize8(&b);
        }
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or(stem)
            .to_string();
        let noise = sidecar.files.get(&name);
        report.rows.push(ReportRow {
            psnr: psnr(&a, &b)?,
            ssim: ssim(&a, &b)?,
            noise_kind: noise.map(|n| n.kind().to_string()).unwrap_or_default(),
            param: noise.map(NoiseSpec::param),
            path: name,
        });
    }
    unmatched.extend(
        clean
            .iter()
            .filter(|(stem, _)| !other.contains_key(*stem))
            .map(|(_, p)| p.clone()),
    );
    unmatched.sort();
    Ok(EvalOutcome { report, unmatched })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::io::{save_image, save_image_with_maxval};
    use crate::metrics::PSNR_CAP_DB;

    #[test]
    fn identical_and_offset_pairs() {
        let clean = tempfile::tempdir().unwrap();
        let other = tempfile::tempdir().unwrap();
        let a = Image::filled(1, 16, 16, 100.0 / 255.0);
        let b = Image::filled(1, 16, 16, 125.5 / 255.0);
        save_image(&a, clean.path().join("x.pgm")).unwrap();
        save_image(&a, clean.path().join("y.pgm")).unwrap();
        save_image(&a, other.path().join("x.pgm")).unwrap();
        save_image(&b, other.path().join("y.png")).unwrap();
        save_image(&b, other.path().join("z.png")).unwrap();
        NoiseSidecar {
            files: BTreeMap::from([("y.png".to_string(), NoiseSpec::Gaussian { sigma: 0.1 })]),
        }
        .save(other.path())
        .unwrap();
        let out = run_eval(clean.path(), other.path(), false).unwrap();
        assert_eq!(out.report.rows.len(), 2);
        assert_eq!(out.report.rows[0].path, "x.pgm");
        assert_eq!(out.report.rows[0].psnr, PSNR_CAP_DB);
        assert_eq!(out.report.rows[0].ssim, 1.0);
        let y = &out.report.rows[1];
        assert_eq!((y.noise_kind.as_str(), y.param), ("gaussian", Some(0.1)));
        let expected = -20.0 * (26.0f64 / 255.0).log10();
        assert!((y.psnr - expected).abs() < 1e-4, "{}", y.psnr);
        assert_eq!(out.unmatched, vec![other.path().join("z.png")]);
    }

    #[test]
    fn uniform_tenth_difference_is_twenty_db() {
        let clean = tempfile::tempdir().unwrap();
        let other = tempfile::tempdir().unwrap();
        // maxval 10 makes 0.1 an exact sample step
        save_image_with_maxval(&Image::filled(3, 16, 16, 0.3), clean.path().join("p.ppm"), 10).unwrap();
        save_image_with_maxval(&Image::filled(3, 16, 16, 0.4), other.path().join("p.ppm"), 10).unwrap();
        let out = run_eval(clean.path(), other.path(), false).unwrap();
        assert!((out.report.rows[0].psnr - 20.0).abs() < 1e-5);
    }

    #[test]
    fn empty_intersection() {
        let clean = tempfile::tempdir().unwrap();
        let other = tempfile::tempdir().unwrap();
        save_image(&Image::filled(1, 12, 12, 0.5), clean.path().join("a.png")).unwrap();
        let out = run_eval(clean.path(), other.path(), false).unwrap();
        assert!(out.report.rows.is_empty());
        assert_eq!(out.unmatched.len(), 1);
        assert!(out.report.mean_psnr().is_none());
    }
}
