//! Zero-shot denoising of a single image by iterative filling.
//!
//! Every iteration hides a random subset of the noisy image `x`, lets the
//! network predict the whole image, takes one Adam step on the error at the
//! hidden sites, and folds the predictions at those sites into a running
//! ensemble `ȳ`. Predictions at visible sites never enter `ȳ`: the network
//! saw those pixels and tends to copy their noise.
//!
//! `ȳ` starts as `x`, so a pixel that is never hidden comes back unchanged.
//!
//! For spatially correlated noise the image can first be split into `d²`
//! pixel-shuffled sub-images ([`pd_down`]) that are filled jointly as one
//! batch and reassembled afterwards ([`pd_up`]).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::masking::{apply_mask, sample_mask, stack_masks, Mask, MaskSpec};
use crate::metrics;
use crate::model::{Hourglass, HourglassConfig};
use crate::tensor::{AdamConfig, Tape};

/// Splits `img` into `d²` sub-images; sub-image `i·d + j` holds the pixels
/// at rows `≡ i` and columns `≡ j (mod d)`.
pub fn pd_down(img: &Image, d: usize) -> Result<Vec<Image>> {
    let (c, h, w) = img.dims();
    if d == 0 || h % d != 0 || w % d != 0 {
        return Err(Error::Contract(format!(
            "pixel-shuffle factor {d} does not divide {h}x{w}"
        )));
    }
    let (sh, sw) = (h / d, w / d);
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let mut data = Vec::with_capacity(c * sh * sw);
            for ch in 0..c {
                let plane = img.plane(ch);
                for y in 0..sh {
                    let row = &plane[(y * d + i) * w..];
                    data.extend((0..sw).map(|x| row[x * d + j]));
                }
            }
            out.push(Image::new(c, sh, sw, data)?);
        }
    }
    Ok(out)
}

/// Inverse of [`pd_down`].
pub fn pd_up(stack: &[Image], d: usize) -> Result<Image> {
    if d == 0 || stack.len() != d * d {
        return Err(Error::Contract(format!(
            "{} sub-images cannot be reassembled with factor {d}",
            stack.len()
        )));
    }
    let (c, sh, sw) = stack[0].dims();
    if stack.iter().any(|s| s.dims() != (c, sh, sw)) {
        return Err(Error::Shape("sub-images differ in shape".into()));
    }
    let (h, w) = (sh * d, sw * d);
    let mut out = Image::filled(c, h, w, 0.0);
    let data = out.data_mut();
    for (k, sub) in stack.iter().enumerate() {
        let (i, j) = (k / d, k % d);
        for ch in 0..c {
            let src = sub.plane(ch);
            for y in 0..sh {
                let base = ch * h * w + (y * d + i) * w + j;
                for x in 0..sw {
                    data[base + x * d] = src[y * sw + x];
                }
            }
        }
    }
    Ok(out)
}

/// Reflect-pads `img` on the bottom and right so both sides divide by `d`.
pub fn pad_to_multiple(img: &Image, d: usize) -> Result<Image> {
    let (_, h, w) = img.dims();
    let (ph, pw) = (h.div_ceil(d) * d, w.div_ceil(d) * d);
    if (ph, pw) == (h, w) {
        Ok(img.clone())
    } else {
        img.reflect_pad(ph, pw)
    }
}

/// How masked predictions are combined across iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EnsembleMode {
    /// `ȳ ← β·ȳ + (1−β)·y_t` at hidden sites.
    Ema,
    /// Running mean of every prediction made while the site was hidden.
    Average,
    /// Running mean restricted to iterations `t ≥ k`.
    AvgAfter(usize),
    /// The prediction from the last iteration that hid the site.
    Last,
}

impl fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnsembleMode::Ema => f.write_str("ema"),
            EnsembleMode::Average => f.write_str("average"),
            EnsembleMode::AvgAfter(k) => write!(f, "avg-after={k}"),
            EnsembleMode::Last => f.write_str("last"),
        }
    }
}

impl FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "ema" => return Ok(EnsembleMode::Ema),
            "average" | "avg" => return Ok(EnsembleMode::Average),
            "last" => return Ok(EnsembleMode::Last),
            _ => {}
        }
        let k = s
            .strip_prefix("avg-after=")
            .or_else(|| s.strip_prefix("avg_after="))
            .and_then(|k| k.parse().ok())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ensemble mode {s:?} (expected ema, average, last or avg-after=K)"
                ))
            })?;
        Ok(EnsembleMode::AvgAfter(k))
    }
}

impl TryFrom<String> for EnsembleMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EnsembleMode> for String {
    fn from(m: EnsembleMode) -> String {
        m.to_string()
    }
}

/// Stop once the mean loss over the last `window` iterations improves on
/// the window before it by less than `rel_threshold` (relative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauStop {
    pub window: usize,
    pub rel_threshold: f64,
}

impl PlateauStop {
    fn should_stop(&self, losses: &[f64]) -> bool {
        let w = self.window;
        if w == 0 || losses.len() < 2 * w {
            return false;
        }
        let n = losses.len();
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let prev = mean(&losses[n - 2 * w..n - w]);
        let cur = mean(&losses[n - w..]);
        prev - cur < self.rel_threshold * prev.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    pub mask_ratio: f64,
    pub shared_channels: bool,
    pub beta: f64,
    pub iterations: usize,
    pub lr: f64,
    pub pd_factor: usize,
    pub ensemble: EnsembleMode,
    /// Supervise only hidden sites. Without it the loss covers every pixel
    /// and the ensemble averages every pixel too.
    pub mask_loss: bool,
    pub seed: u64,
    pub plateau: Option<PlateauStop>,
    /// Pre-trained weights; `None` starts from a fresh initialization.
    pub init_weights: Option<PathBuf>,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Preset::SyntheticDefault.config()
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        self.mask_spec()?;
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.ensemble == EnsembleMode::Ema && !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("EMA weight {} outside (0, 1)", self.beta)));
        }
        if self.pd_factor == 0 {
            return Err(Error::Config("pd_factor must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if let Some(p) = self.plateau {
            if p.window == 0 {
                return Err(Error::Config("plateau window must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn mask_spec(&self) -> Result<MaskSpec> {
        MaskSpec::new(self.mask_ratio, self.shared_channels)
    }
}

/// Named hyperparameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    SyntheticDefault,
    SyntheticFaster,
    RealDefault,
    RealSidd,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::SyntheticDefault,
        Preset::SyntheticFaster,
        Preset::RealDefault,
        Preset::RealSidd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::SyntheticDefault => "synthetic-default",
            Preset::SyntheticFaster => "synthetic-faster",
            Preset::RealDefault => "real-default",
            Preset::RealSidd => "real-sidd",
        }
    }

    pub fn config(self) -> DenoiseConfig {
        let synthetic = DenoiseConfig {
            mask_ratio: 0.3,
            shared_channels: false,
            beta: 0.99,
            iterations: 1000,
            lr: 2e-3,
            pd_factor: 1,
            ensemble: EnsembleMode::Ema,
            mask_loss: true,
            seed: 0,
            plateau: None,
            init_weights: None,
        };
        match self {
            Preset::SyntheticDefault => synthetic,
            Preset::SyntheticFaster => DenoiseConfig {
                beta: 0.9,
                iterations: 200,
                ..synthetic
            },
            Preset::RealDefault => DenoiseConfig {
                mask_ratio: 0.85,
                shared_channels: true,
                pd_factor: 2,
                ..synthetic
            },
            Preset::RealSidd => DenoiseConfig {
                mask_ratio: 0.9,
                shared_channels: true,
                pd_factor: 2,
                iterations: 800,
                ..synthetic
            },
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!("unknown preset {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

/// `ȳ ← β·ȳ + (1−β)·y` wherever `mask` hides the site; `hits` counts the
/// updates.
pub fn ema_update(ybar: &mut Image, hits: &mut [u32], y: &Image, mask: &Mask, beta: f32) -> Result<()> {
    ybar.check_same_dims(y, "ema_update")?;
    if mask.dims() != ybar.dims() || hits.len() != ybar.len() {
        return Err(Error::Shape(format!(
            "ema_update: image {:?}, mask {:?}, {} counters",
            ybar.dims(),
            mask.dims(),
            hits.len()
        )));
    }
    let yd = y.data();
    for (i, (v, &m)) in ybar.data_mut().iter_mut().zip(mask.data()).enumerate() {
        if m == 0 {
            *v = beta * *v + (1.0 - beta) * yd[i];
            hits[i] += 1;
        }
    }
    Ok(())
}

/// Running per-site combination of predictions for a stack of images.
///
/// Values are accumulated in f64 and rounded once on output.
#[derive(Debug, Clone)]
pub struct Ensemble {
    mode: EnsembleMode,
    beta: f64,
    all_sites: bool,
    dims: (usize, usize, usize),
    value: Vec<Vec<f64>>,
    hits: Vec<Vec<u32>>,
}

impl Ensemble {
    /// Starts from `init`. With `all_sites` every prediction is folded in
    /// regardless of the mask.
    pub fn new(init: &[Image], mode: EnsembleMode, beta: f64, all_sites: bool) -> Self {
        Ensemble {
            mode,
            beta,
            all_sites,
            dims: init[0].dims(),
            value: init
                .iter()
                .map(|x| x.data().iter().map(|&v| f64::from(v)).collect())
                .collect(),
            hits: init.iter().map(|x| vec![0; x.len()]).collect(),
        }
    }

    /// Folds in the predictions of iteration `t` (1-based).
    pub fn update(&mut self, t: usize, preds: &[Image], masks: &[Mask]) -> Result<()> {
        if preds.len() != self.value.len() || masks.len() != self.value.len() {
            return Err(Error::Contract(format!(
                "ensemble of {} images updated with {} predictions and {} masks",
                self.value.len(),
                preds.len(),
                masks.len()
            )));
        }
        if let EnsembleMode::AvgAfter(k) = self.mode {
            if t < k {
                return Ok(());
            }
        }
        let (beta, keep) = (self.beta, 1.0 - self.beta);
        for (k, (pred, mask)) in preds.iter().zip(masks).enumerate() {
            if pred.dims() != self.dims || mask.dims() != self.dims {
                return Err(Error::Shape(format!(
                    "ensemble over {:?} updated with {:?} / {:?}",
                    self.dims,
                    pred.dims(),
                    mask.dims()
                )));
            }
            let value = &mut self.value[k];
            let hits = &mut self.hits[k];
            for (i, (&y, &m)) in pred.data().iter().zip(mask.data()).enumerate() {
                if m != 0 && !self.all_sites {
                    continue;
                }
                let y = f64::from(y);
                hits[i] += 1;
                let v = &mut value[i];
                *v = match self.mode {
                    EnsembleMode::Ema => beta * *v + keep * y,
                    EnsembleMode::Last => y,
                    EnsembleMode::Average | EnsembleMode::AvgAfter(_) => {
                        let n = hits[i];
                        if n == 1 {
                            y
                        } else {
                            *v + (y - *v) / f64::from(n)
                        }
                    }
                };
            }
        }
        Ok(())
    }

    pub fn images(&self) -> Vec<Image> {
        let (c, h, w) = self.dims;
        self.value
            .iter()
            .map(|v| {
                Image::new(c, h, w, v.iter().map(|&x| x as f32).collect())
                    .expect("ensemble dims are consistent")
            })
            .collect()
    }

    /// Per-site update counts, one vector per image.
    pub fn hits(&self) -> &[Vec<u32>] {
        &self.hits
    }

    /// Sites that were never folded in.
    pub fn never_hit(&self) -> usize {
        self.hits.iter().flatten().filter(|&&n| n == 0).count()
    }
}

/// One line of the optional per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr: Option<f64>,
}

/// What an observer sees after each iteration.
pub struct Iteration<'a> {
    pub t: usize,
    pub loss: f64,
    pub predictions: &'a [Image],
    pub masks: &'a [Mask],
}

pub trait FillObserver {
    fn observe(&mut self, it: &Iteration<'_>);
}

impl<F: FnMut(&Iteration<'_>)> FillObserver for F {
    fn observe(&mut self, it: &Iteration<'_>) {
        self(it)
    }
}

/// Scores the current ensemble for the trace.
pub type PsnrProbe<'a> = Box<dyn Fn(&[Image]) -> Result<f64> + 'a>;

#[derive(Default)]
pub struct FillOptions<'a> {
    pub psnr: Option<PsnrProbe<'a>>,
    pub observer: Option<&'a mut dyn FillObserver>,
}

impl<'a> FillOptions<'a> {
    /// Trace PSNR against clean versions of the working images.
    pub fn with_reference(reference: &'a [Image]) -> Self {
        FillOptions {
            psnr: Some(Box::new(move |imgs: &[Image]| metrics::psnr_stack(imgs, reference))),
            observer: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FillOutput {
    pub images: Vec<Image>,
    pub trace: Vec<TraceRow>,
    pub iterations: usize,
    pub never_hit: usize,
}

/// Runs iterative filling on a batch of images that share one network and
/// one optimizer. `cfg.pd_factor` is ignored here; see [`denoise`].
pub fn iterative_fill<R: Rng + ?Sized>(
    model: &mut Hourglass,
    xs: &[Image],
    cfg: &DenoiseConfig,
    rng: &mut R,
    mut opts: FillOptions<'_>,
) -> Result<FillOutput> {
    if cfg.iterations == 0 {
        return Err(Error::Contract("iterative filling needs at least one iteration".into()));
    }
    cfg.validate()?;
    let first = xs
        .first()
        .ok_or_else(|| Error::Contract("no image to denoise".into()))?;
    let (c, h, w) = first.dims();
    let spec = cfg.mask_spec()?;
    let target = Image::stack(xs)?;
    let mut adam = model.adam(AdamConfig::default());
    let mut ensemble = Ensemble::new(xs, cfg.ensemble, cfg.beta, !cfg.mask_loss);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut ran = 0;
    for t in 1..=cfg.iterations {
        let masks: Vec<Mask> = xs.iter().map(|_| sample_mask(c, h, w, &spec, rng)).collect();
        let masked: Vec<Image> = masks
            .iter()
            .zip(xs)
            .map(|(m, x)| apply_mask(m, x))
            .collect::<Result<_>>()?;
        let input = Image::stack(&masked)?;
        let mut tape = Tape::new();
        let params = model.bind(&mut tape, true);
        let out = model.forward(&mut tape, &params, &input)?;
        let loss = if cfg.mask_loss {
            let supervised = stack_masks(masks.iter().map(Mask::negate).collect::<Vec<_>>().iter());
            tape.masked_mse(out, &target, Some(&supervised))?
        } else {
            tape.masked_mse(out, &target, None)?
        };
        let loss_value = f64::from(tape.value(loss).item()?);
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {loss_value} at iteration {t}; try a lower learning rate"
            )));
        }
        let mut grads = tape.backward(loss)?;
        let grads = model.collect_grads(&mut grads, &params)?;
        model.apply_adam(&mut adam, &grads, cfg.lr)?;
        let preds = Image::unstack(tape.value(out))?;
        drop(tape);
        ensemble.update(t, &preds, &masks)?;
        let psnr = match &opts.psnr {
            Some(probe) => Some(probe(&ensemble.images())?),
            None => None,
        };
        trace.push(TraceRow {
            t,
            loss: loss_value,
            lr: cfg.lr,
            psnr,
        });
        if let Some(obs) = opts.observer.as_deref_mut() {
            obs.observe(&Iteration {
                t,
                loss: loss_value,
                predictions: &preds,
                masks: &masks,
            });
        }
        losses.push(loss_value);
        ran = t;
        if cfg.plateau.is_some_and(|p| p.should_stop(&losses)) {
            break;
        }
    }
    Ok(FillOutput {
        images: ensemble.images(),
        trace,
        iterations: ran,
        never_hit: ensemble.never_hit(),
    })
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub image: Image,
    pub trace: Vec<TraceRow>,
    pub iterations: usize,
    /// Sites of the working stack that were never hidden and so keep the
    /// noisy value.
    pub never_hit: usize,
}

/// Denoises `x` with `cfg`, drawing masks from the stream seeded by
/// `cfg.seed`. With `pd_factor > 1` the image is reflect-padded, split
/// with [`pd_down`], filled as one batch, reassembled and cropped.
///
/// `reference` (a clean image) only feeds the trace PSNR.
pub fn denoise<'a>(
    model: &mut Hourglass,
    x: &Image,
    cfg: &DenoiseConfig,
    reference: Option<&'a Image>,
    observer: Option<&'a mut dyn FillObserver>,
) -> Result<DenoiseOutput> {
    cfg.validate()?;
    if let Some(r) = reference {
        x.check_same_dims(r, "reference")?;
    }
    let mut rng = mask_rng(cfg.seed);
    let d = cfg.pd_factor;
    let (_, h, w) = x.dims();
    let stack = if d == 1 {
        vec![x.clone()]
    } else {
        pd_down(&pad_to_multiple(x, d)?, d)?
    };
    let reassemble = move |imgs: &[Image]| -> Result<Image> {
        if d == 1 {
            Ok(imgs[0].clone())
        } else {
            pd_up(imgs, d)?.crop(0, 0, h, w)
        }
    };
    let opts = FillOptions {
        psnr: reference.map(|r| -> PsnrProbe<'a> {
            Box::new(move |imgs: &[Image]| metrics::psnr(&reassemble(imgs)?, r))
        }),
        observer,
    };
    let out = iterative_fill(model, &stack, cfg, &mut rng, opts)?;
    Ok(DenoiseOutput {
        image: reassemble(&out.images)?,
        trace: out.trace,
        iterations: out.iterations,
        never_hit: out.never_hit,
    })
}

/// The generator [`denoise`] draws masks from.
pub fn mask_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    crate::stream_rng(seed, 3)
}

/// A network for denoising `channels`-channel images: loaded from
/// `weights`, or freshly initialized from `seed` with `config`.
pub fn init_model(
    weights: Option<&Path>,
    config: HourglassConfig,
    channels: usize,
    seed: u64,
) -> Result<Hourglass> {
    let model = match weights {
        Some(p) => Hourglass::from_weights(crate::model::load_weights(p)?)?,
        None => Hourglass::new(
            HourglassConfig {
                in_channels: channels,
                ..config
            },
            &mut crate::stream_rng(seed, 0),
        )?,
    };
    if model.config().in_channels != channels {
        return Err(Error::Config(format!(
            "weights expect {}-channel images, input has {channels}",
            model.config().in_channels
        )));
    }
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct DirectOutput {
    pub image: Image,
    pub never_hit: usize,
}

/// Anything that maps a batch of masked images to predictions.
pub trait Predictor {
    fn predict_batch(&self, inputs: &[Image]) -> Result<Vec<Image>>;
}

impl Predictor for Hourglass {
    fn predict_batch(&self, inputs: &[Image]) -> Result<Vec<Image>> {
        Image::unstack(&self.predict(&Image::stack(inputs)?)?)
    }
}

/// Averages the fixed network's predictions at hidden sites over `k`
/// random masks without updating it. Sites never hidden keep `x`.
pub fn direct_ensemble<P: Predictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    x: &Image,
    spec: &MaskSpec,
    k: usize,
    rng: &mut R,
) -> Result<DirectOutput> {
    if k == 0 {
        return Err(Error::Contract("direct ensemble needs at least one mask".into()));
    }
    const CHUNK: usize = 8;
    let (c, h, w) = x.dims();
    let mut sum = vec![0.0f64; x.len()];
    let mut hits = vec![0u32; x.len()];
    let mut done = 0;
    while done < k {
        let n = CHUNK.min(k - done);
        let masks: Vec<Mask> = (0..n).map(|_| sample_mask(c, h, w, spec, rng)).collect();
        let masked: Vec<Image> = masks.iter().map(|m| apply_mask(m, x)).collect::<Result<_>>()?;
        let preds = model.predict_batch(&masked)?;
        for (pred, mask) in preds.iter().zip(&masks) {
            for (i, (&y, &m)) in pred.data().iter().zip(mask.data()).enumerate() {
                if m == 0 {
                    sum[i] += f64::from(y);
                    hits[i] += 1;
                }
            }
        }
        done += n;
    }
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if hits[i] == 0 { v } else { (sum[i] / f64::from(hits[i])) as f32 })
        .collect();
    Ok(DirectOutput {
        image: Image::new(c, h, w, data)?,
        never_hit: hits.iter().filter(|&&n| n == 0).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(c, h, w, (0..c * h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    fn tiny() -> HourglassConfig {
        HourglassConfig {
            in_channels: 1,
            depth: 2,
            base_channels: 4,
            max_channels: 8,
            ..HourglassConfig::default()
        }
    }

    fn quick(iterations: usize) -> DenoiseConfig {
        DenoiseConfig {
            iterations,
            ..Preset::SyntheticFaster.config()
        }
    }

    #[test]
    fn pd_index_arithmetic() {
        let img = Image::new(1, 4, 4, (0..16).map(|v| v as f32).collect()).unwrap();
        let subs = pd_down(&img, 2).unwrap();
        assert_eq!(subs.len(), 4);
        assert_eq!(subs[0].data(), &[0.0, 2.0, 8.0, 10.0]);
        assert_eq!(subs[1].data(), &[1.0, 3.0, 9.0, 11.0]);
        assert_eq!(subs[3].data(), &[5.0, 7.0, 13.0, 15.0]);
        assert_eq!(pd_up(&subs, 2).unwrap(), img);
        assert_eq!(pd_down(&img, 1).unwrap(), vec![img.clone()]);
        let single = pd_down(&img, 4).unwrap();
        assert!(single.iter().all(|s| s.dims() == (1, 1, 1)));
        assert_eq!(pd_up(&single, 4).unwrap(), img);
    }

    #[test]
    fn pd_shapes_and_errors() {
        let img = random_image(3, 64, 64, 1);
        let subs = pd_down(&img, 2).unwrap();
        assert_eq!(subs.len(), 4);
        assert!(subs.iter().all(|s| s.dims() == (3, 32, 32)));
        assert!(pd_down(&random_image(1, 5, 4, 1), 2).is_err());
        assert!(matches!(pd_up(&subs[..3], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn ensemble_mode_parsing() {
        for (s, m) in [
            ("ema", EnsembleMode::Ema),
            ("average", EnsembleMode::Average),
            ("last", EnsembleMode::Last),
            ("avg-after=50", EnsembleMode::AvgAfter(50)),
        ] {
            assert_eq!(s.parse::<EnsembleMode>().unwrap(), m);
            assert_eq!(m.to_string(), s);
        }
        assert!("median".parse::<EnsembleMode>().is_err());
        assert!("avg-after=x".parse::<EnsembleMode>().is_err());
    }

    #[test]
    fn presets() {
        let f = Preset::SyntheticFaster.config();
        assert_eq!((f.mask_ratio, f.beta, f.iterations, f.pd_factor), (0.3, 0.9, 200, 1));
        assert!(!f.shared_channels);
        let d = Preset::SyntheticDefault.config();
        assert_eq!((d.beta, d.iterations, d.lr), (0.99, 1000, 2e-3));
        let r = Preset::RealDefault.config();
        assert_eq!((r.mask_ratio, r.pd_factor, r.iterations), (0.85, 2, 1000));
        assert!(r.shared_channels);
        let s = Preset::RealSidd.config();
        assert_eq!((s.mask_ratio, s.pd_factor, s.iterations), (0.9, 2, 800));
        assert_eq!("real-sidd".parse::<Preset>().unwrap(), Preset::RealSidd);
        assert!("fast".parse::<Preset>().is_err());
    }

    #[test]
    fn ema_update_arithmetic() {
        let mut ybar = Image::filled(1, 1, 2, 0.5);
        let y = Image::filled(1, 1, 2, 1.0);
        let mut hits = vec![0; 2];
        let mask = Mask::from_vec(1, 1, 2, vec![0, 1]).unwrap();
        ema_update(&mut ybar, &mut hits, &y, &mask, 0.9).unwrap();
        assert!((ybar.data()[0] - 0.55).abs() < 1e-7);
        assert_eq!(ybar.data()[1], 0.5);
        assert_eq!(hits, [1, 0]);
        let before = ybar.clone();
        ema_update(&mut ybar, &mut hits, &y, &Mask::ones(1, 1, 2), 0.9).unwrap();
        assert_eq!(ybar, before);
    }

    #[test]
    fn single_iteration_unrolls() {
        let x = random_image(1, 16, 16, 2);
        let mut model = Hourglass::new(tiny(), &mut stream_rng(1, 0)).unwrap();
        let cfg = DenoiseConfig { beta: 0.9, ..quick(1) };
        let mut rec: Option<(Image, Mask)> = None;
        let mut obs = |it: &Iteration<'_>| rec = Some((it.predictions[0].clone(), it.masks[0].clone()));
        let opts = FillOptions {
            observer: Some(&mut obs),
            ..FillOptions::default()
        };
        let out = iterative_fill(&mut model, std::slice::from_ref(&x), &cfg, &mut stream_rng(1, 3), opts).unwrap();
        let (y, m) = rec.unwrap();
        for i in 0..x.len() {
            let (xv, yv) = (f64::from(x.data()[i]), f64::from(y.data()[i]));
            let expected = if m.data()[i] == 1 { xv } else { 0.9 * xv + 0.1 * yv };
            assert!((f64::from(out.images[0].data()[i]) - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_iterations_is_a_contract_error() {
        let x = random_image(1, 8, 8, 2);
        let mut model = Hourglass::new(tiny(), &mut stream_rng(1, 0)).unwrap();
        let r = iterative_fill(&mut model, &[x], &quick(0), &mut stream_rng(1, 3), FillOptions::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn nan_loss_aborts() {
        let mut x = random_image(1, 8, 8, 2);
        x.data_mut()[5] = f32::NAN;
        let mut model = Hourglass::new(tiny(), &mut stream_rng(1, 0)).unwrap();
        let cfg = DenoiseConfig { mask_ratio: 1.0, ..quick(3) };
        let r = iterative_fill(&mut model, &[x], &cfg, &mut stream_rng(1, 3), FillOptions::default());
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn pd_path_is_conjugate_fill() {
        let x = random_image(1, 10, 14, 3);
        let cfg = DenoiseConfig { pd_factor: 2, ..quick(3) };
        let base = Hourglass::new(tiny(), &mut stream_rng(2, 0)).unwrap();
        let got = denoise(&mut base.clone(), &x, &cfg, None, None).unwrap();
        assert_eq!(got.image.dims(), x.dims());
        let stack = pd_down(&pad_to_multiple(&x, 2).unwrap(), 2).unwrap();
        let fill = iterative_fill(&mut base.clone(), &stack, &cfg, &mut mask_rng(cfg.seed), FillOptions::default())
            .unwrap();
        let expected = pd_up(&fill.images, 2).unwrap().crop(0, 0, 10, 14).unwrap();
        assert_eq!(got.image, expected);
    }

    #[test]
    fn unit_factor_path_is_plain_fill() {
        let x = random_image(1, 12, 12, 4);
        let cfg = quick(3);
        let base = Hourglass::new(tiny(), &mut stream_rng(2, 0)).unwrap();
        let got = denoise(&mut base.clone(), &x, &cfg, Some(&x), None).unwrap();
        let fill = iterative_fill(&mut base.clone(), std::slice::from_ref(&x), &cfg, &mut mask_rng(cfg.seed), FillOptions::default())
            .unwrap();
        assert_eq!(got.image, fill.images[0]);
        assert_eq!(got.trace.len(), 3);
        assert!(got.trace.iter().all(|r| r.psnr.is_some()));
    }

    #[test]
    fn plateau_stops_early() {
        let x = Image::filled(1, 8, 8, 0.5);
        let mut model = Hourglass::new(tiny(), &mut stream_rng(1, 0)).unwrap();
        let cfg = DenoiseConfig {
            plateau: Some(PlateauStop {
                window: 2,
                rel_threshold: 10.0,
            }),
            ..quick(50)
        };
        let out = iterative_fill(&mut model, &[x], &cfg, &mut stream_rng(1, 3), FillOptions::default()).unwrap();
        assert_eq!(out.iterations, 4);
        assert_eq!(out.trace.len(), 4);
    }

    /// Predicts the same fixed image whatever it is shown.
    struct Constant(Image);

    impl Predictor for Constant {
        fn predict_batch(&self, inputs: &[Image]) -> Result<Vec<Image>> {
            Ok(vec![self.0.clone(); inputs.len()])
        }
    }

    #[test]
    fn direct_ensemble_single_mask() {
        let x = random_image(1, 8, 8, 6);
        let y = random_image(1, 8, 8, 7);
        let spec = MaskSpec::new(0.5, false).unwrap();
        let out = direct_ensemble(&Constant(y.clone()), &x, &spec, 1, &mut stream_rng(0, 5)).unwrap();
        let mask = sample_mask(1, 8, 8, &spec, &mut stream_rng(0, 5));
        for i in 0..x.len() {
            let expected = if mask.data()[i] == 0 { y.data()[i] } else { x.data()[i] };
            assert_eq!(out.image.data()[i], expected);
        }
        assert_eq!(out.never_hit, mask.data().iter().filter(|&&m| m == 1).count());
    }

    #[test]
    fn direct_ensemble_fixed_point_and_fallback() {
        let x = random_image(3, 8, 8, 6);
        let spec = MaskSpec::new(0.3, true).unwrap();
        let out = direct_ensemble(&Constant(x.clone()), &x, &spec, 20, &mut stream_rng(0, 5)).unwrap();
        assert_eq!(out.image, x);
        let never = MaskSpec::new(0.0, false).unwrap();
        let y = random_image(3, 8, 8, 8);
        let out = direct_ensemble(&Constant(y), &x, &never, 5, &mut stream_rng(0, 5)).unwrap();
        assert_eq!(out.image, x);
        assert_eq!(out.never_hit, x.len());
        let model = Hourglass::new(HourglassConfig { in_channels: 3, ..tiny() }, &mut stream_rng(0, 0)).unwrap();
        let out = direct_ensemble(&model, &x, &spec, 3, &mut stream_rng(0, 5)).unwrap();
        assert_eq!(out.image.dims(), x.dims());
        assert!(direct_ensemble(&model, &x, &spec, 0, &mut stream_rng(0, 5)).is_err());
    }
}
