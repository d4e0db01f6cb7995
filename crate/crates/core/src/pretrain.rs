//! Masked pre-training on a corpus of clean images.
//!
//! Each step draws random crops, hides a Bernoulli fraction of their sites,
//! and trains the network to reconstruct the hidden sites. The learning
//! rate follows a cosine decay from `lr0` to `lr_min`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;
use crate::masking::{apply_mask, sample_mask, stack_masks, Mask, MaskSpec};
use crate::model::{Hourglass, HourglassConfig};
use crate::tensor::{AdamConfig, AdamState, Tape};

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64, lr_min: f64) -> f64 {
    let frac = if total == 0 { 1.0 } else { step.min(total) as f64 / total as f64 };
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (PI * frac).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub corpus_dir: PathBuf,
    pub crop_size: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub mask_ratio: f64,
    pub shared_channels: bool,
    pub seed: u64,
    pub model: HourglassConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            corpus_dir: PathBuf::from("corpus"),
            crop_size: 64,
            batch_size: 8,
            total_steps: 2000,
            lr0: 2e-3,
            lr_min: 1e-5,
            mask_ratio: 0.3,
            shared_channels: false,
            seed: 0,
            model: HourglassConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.mask_spec()?;
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.crop_size < self.model.size_multiple() {
            return Err(Error::Config(format!(
                "crop_size {} is smaller than the network's size multiple {}",
                self.crop_size,
                self.model.size_multiple()
            )));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return Err(Error::Config(format!(
                "need 0 <= lr_min <= lr0, got lr_min {} and lr0 {}",
                self.lr_min, self.lr0
            )));
        }
        Ok(())
    }

    pub fn mask_spec(&self) -> Result<MaskSpec> {
        MaskSpec::new(self.mask_ratio, self.shared_channels)
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        cosine_lr(step, self.total_steps, self.lr0, self.lr_min)
    }
}

/// Draws uniformly placed square crops from a set of images.
pub struct CorpusSampler {
    images: Vec<Image>,
    sources: Vec<PathBuf>,
    crop: usize,
    rng: ChaCha8Rng,
}

/// Where a crop came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropOrigin {
    pub source: usize,
    pub top: usize,
    pub left: usize,
}

impl CorpusSampler {
    /// Loads every supported image in `dir`, converted to `channels`.
    /// Images smaller than `crop` on either side are skipped.
    pub fn from_dir(dir: impl AsRef<Path>, crop: usize, channels: usize, rng: ChaCha8Rng) -> Result<Self> {
        let dir = dir.as_ref();
        let mut images = Vec::new();
        let mut sources = Vec::new();
        for path in io::list_images(dir)? {
            let img = io::load_image(&path)?.image;
            if img.height() >= crop && img.width() >= crop {
                images.push(img.with_channels(channels)?);
                sources.push(path);
            }
        }
        if images.is_empty() {
            return Err(Error::Config(format!(
                "corpus {} has no image of at least {crop}x{crop}",
                dir.display()
            )));
        }
        Ok(CorpusSampler {
            images,
            sources,
            crop,
            rng,
        })
    }

    pub fn from_images(images: Vec<Image>, crop: usize, rng: ChaCha8Rng) -> Result<Self> {
        let images: Vec<Image> = images
            .into_iter()
            .filter(|i| i.height() >= crop && i.width() >= crop)
            .collect();
        if images.is_empty() {
            return Err(Error::Config(format!("no corpus image of at least {crop}x{crop}")));
        }
        Ok(CorpusSampler {
            images,
            sources: Vec::new(),
            crop,
            rng,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Paths of the usable images, when loaded from a directory.
    pub fn sources(&self) -> &[PathBuf] {
        &self.sources
    }

    pub fn crop_size(&self) -> usize {
        self.crop
    }

    pub fn sample_origin(&mut self) -> CropOrigin {
        let source = self.rng.random_range(0..self.images.len());
        let img = &self.images[source];
        let top = self.rng.random_range(0..=img.height() - self.crop);
        let left = self.rng.random_range(0..=img.width() - self.crop);
        CropOrigin { source, top, left }
    }

    pub fn sample_crop_with_origin(&mut self) -> (Image, CropOrigin) {
        let o = self.sample_origin();
        let crop = self.images[o.source]
            .crop(o.top, o.left, self.crop, self.crop)
            .expect("origin lies inside the source");
        (crop, o)
    }

    pub fn sample_crop(&mut self) -> Image {
        self.sample_crop_with_origin().0
    }

    pub fn sample_batch(&mut self, n: usize) -> Vec<Image> {
        (0..n).map(|_| self.sample_crop()).collect()
    }
}

/// One optimizer step with the given masks (0 = hidden); returns the
/// masked reconstruction loss before the update.
pub fn pretrain_step_with_masks(
    model: &mut Hourglass,
    adam: &mut AdamState,
    batch: &[Image],
    masks: &[Mask],
    lr: f64,
) -> Result<f64> {
    if batch.is_empty() || batch.len() != masks.len() {
        return Err(Error::Contract(format!(
            "{} images with {} masks",
            batch.len(),
            masks.len()
        )));
    }
    let masked: Vec<Image> = masks
        .iter()
        .zip(batch)
        .map(|(m, x)| apply_mask(m, x))
        .collect::<Result<_>>()?;
    let input = Image::stack(&masked)?;
    let target = Image::stack(batch)?;
    let supervised = stack_masks(masks.iter().map(Mask::negate).collect::<Vec<_>>().iter());
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, true);
    let out = model.forward(&mut tape, &params, &input)?;
    let loss = tape.masked_mse(out, &target, Some(&supervised))?;
    let value = f64::from(tape.value(loss).item()?);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("pre-training loss is {value}")));
    }
    let mut grads = tape.backward(loss)?;
    let grads = model.collect_grads(&mut grads, &params)?;
    model.apply_adam(adam, &grads, lr)?;
    Ok(value)
}

/// Draws one independent mask per batch element from `rng`, then steps.
pub fn pretrain_step<R: Rng + ?Sized>(
    model: &mut Hourglass,
    adam: &mut AdamState,
    batch: &[Image],
    spec: &MaskSpec,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let masks: Vec<Mask> = batch
        .iter()
        .map(|x| {
            let (c, h, w) = x.dims();
            sample_mask(c, h, w, spec, rng)
        })
        .collect();
    pretrain_step_with_masks(model, adam, batch, &masks, lr)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: Hourglass,
    pub log: Vec<StepRecord>,
    pub corpus_size: usize,
}

/// Trains from the configured corpus. `on_step` sees every record as it
/// is produced.
pub fn pretrain(cfg: &PretrainConfig, mut on_step: impl FnMut(&StepRecord)) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let sampler = CorpusSampler::from_dir(
        &cfg.corpus_dir,
        cfg.crop_size,
        cfg.model.in_channels,
        crate::stream_rng(cfg.seed, 1),
    )?;
    pretrain_with_sampler(cfg, sampler, &mut on_step)
}

pub fn pretrain_with_sampler(
    cfg: &PretrainConfig,
    mut sampler: CorpusSampler,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let spec = cfg.mask_spec()?;
    let mut model = Hourglass::new(cfg.model, &mut crate::stream_rng(cfg.seed, 0))?;
    let mut adam = model.adam(AdamConfig::default());
    let mut mask_rng = crate::stream_rng(cfg.seed, 2);
    let mut log = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let lr = cfg.lr_at(step);
        let batch = sampler.sample_batch(cfg.batch_size);
        let loss = pretrain_step(&mut model, &mut adam, &batch, &spec, lr, &mut mask_rng)?;
        let rec = StepRecord { step, lr, loss };
        on_step(&rec);
        log.push(rec);
    }
    Ok(PretrainOutcome {
        model,
        log,
        corpus_size: sampler.len(),
    })
}

/// Writes `step,lr,loss` rows.
pub fn write_log(path: impl AsRef<Path>, log: &[StepRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "step,lr,loss")?;
        for r in log {
            writeln!(w, "{},{:e},{:e}", r.step, r.lr, r.loss)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Trains, then writes the weights and the step log.
pub fn run_pretrain(
    cfg: &PretrainConfig,
    weights_out: impl AsRef<Path>,
    log_out: Option<&Path>,
    on_step: impl FnMut(&StepRecord),
) -> Result<PretrainOutcome> {
    let outcome = pretrain(cfg, on_step)?;
    outcome.model.save_weights(weights_out)?;
    if let Some(p) = log_out {
        write_log(p, &outcome.log)?;
    }
    Ok(outcome)
}
