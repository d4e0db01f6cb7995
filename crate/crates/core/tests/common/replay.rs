//! Replay oracle for the ensemble: recorded per-iteration predictions and
//! masks folded in again through per-site closed forms.

use maskfill::masking::{apply_mask, sample_mask, Mask, MaskSpec};
use maskfill::model::{Hourglass, HourglassConfig};
use maskfill::noise::add_gaussian;
use maskfill::tensor::{Tape, Tensor};
use maskfill::zeroshot::{iterative_fill, DenoiseConfig, EnsembleMode, FillOptions, Iteration};
use maskfill::{stream_rng, Image};
use rand::Rng;

pub const TOL: f64 = 1e-6;

pub fn tiny(channels: usize) -> Hourglass {
    let cfg = HourglassConfig {
        in_channels: channels,
        depth: 2,
        base_channels: 4,
        max_channels: 8,
        skip_connections: true,
        leaky_slope: 0.1,
    };
    Hourglass::new(cfg, &mut stream_rng(11, 0)).unwrap()
}

pub fn noisy(channels: usize, size: usize, seed: u64) -> Image {
    let mut rng = stream_rng(seed, 50);
    let data = (0..channels * size * size)
        .map(|i| 0.5 + 0.3 * ((i % size) as f32 / size as f32 - 0.5))
        .collect();
    let clean = Image::new(channels, size, size, data).unwrap();
    add_gaussian(&clean, 0.1, &mut rng)
}

pub struct Record {
    pub preds: Vec<Vec<Image>>,
    pub masks: Vec<Vec<Mask>>,
}

pub fn run(x: &Image, cfg: &DenoiseConfig) -> (Vec<Image>, Record) {
    let mut model = tiny(x.channels());
    let mut rec = Record { preds: vec![], masks: vec![] };
    let mut obs = |it: &Iteration<'_>| {
        assert_eq!(it.t, rec.preds.len() + 1);
        rec.preds.push(it.predictions.to_vec());
        rec.masks.push(it.masks.to_vec());
    };
    let opts = FillOptions {
        psnr: None,
        observer: Some(&mut obs),
    };
    let out = iterative_fill(&mut model, std::slice::from_ref(x), cfg, &mut stream_rng(cfg.seed, 3), opts).unwrap();
    (out.images, rec)
}

/// Per-site closed forms, written independently of the running updates.
pub fn oracle(x: &Image, rec: &Record, mode: EnsembleMode, beta: f64, all_sites: bool) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let hits: Vec<(usize, f64)> = rec
                .preds
                .iter()
                .zip(&rec.masks)
                .enumerate()
                .filter(|(_, (_, m))| all_sites || !m[0].is_visible(i))
                .map(|(k, (p, _))| (k + 1, f64::from(p[0].data()[i])))
                .collect();
            let x0 = f64::from(x.data()[i]);
            match mode {
                EnsembleMode::Ema => {
                    let n = hits.len() as i32;
                    let mut v = beta.powi(n) * x0;
                    for (j, &(_, y)) in hits.iter().enumerate() {
                        v += (1.0 - beta) * beta.powi(n - 1 - j as i32) * y;
                    }
                    v
                }
                EnsembleMode::Last => hits.last().map_or(x0, |h| h.1),
                EnsembleMode::Average | EnsembleMode::AvgAfter(_) => {
                    let from = match mode {
                        EnsembleMode::AvgAfter(k) => k,
                        _ => 0,
                    };
                    let kept: Vec<f64> = hits.iter().filter(|h| h.0 >= from).map(|h| h.1).collect();
                    if kept.is_empty() {
                        x0
                    } else {
                        kept.iter().sum::<f64>() / kept.len() as f64
                    }
                }
            }
        })
        .collect()
}

pub fn max_abs(got: &Image, want: &[f64]) -> f64 {
    got.data()
        .iter()
        .zip(want)
        .map(|(&g, &w)| (f64::from(g) - w).abs())
        .fold(0.0, f64::max)
}

/// Max-abs gap between `iterative_fill` and the oracle for one mode on a
/// small noisy image.
pub fn mode_gap(mode: EnsembleMode, cfg: &DenoiseConfig) -> f64 {
    let x = noisy(3, 16, 1);
    let cfg = DenoiseConfig { ensemble: mode, ..cfg.clone() };
    let (out, rec) = run(&x, &cfg);
    max_abs(&out[0], &oracle(&x, &rec, mode, cfg.beta, !cfg.mask_loss))
}

/// Perturbing the network output at visible sites, or the target there,
/// leaves the masked loss and every gradient bit-for-bit unchanged.
pub fn loss_blindness_violations() -> Vec<String> {
    let mut bad = Vec::new();
    let x = noisy(3, 16, 5);
    let model = tiny(3);
    let spec = MaskSpec::new(0.3, false).unwrap();
    let mut rng = stream_rng(5, 1);
    let mask = sample_mask(3, 16, 16, &spec, &mut rng);
    let input = Image::stack(&[apply_mask(&mask, &x).unwrap()]).unwrap();
    let supervised: Vec<u8> = mask.data().iter().map(|&m| 1 - m).collect();
    let target = Image::stack(std::slice::from_ref(&x)).unwrap();
    let mut scrambled = target.clone();
    let mut delta = vec![0f32; x.len()];
    for (i, d) in delta.iter_mut().enumerate() {
        if mask.is_visible(i) {
            *d = rng.random_range(-5.0..5.0);
            scrambled.data_mut()[i] = rng.random_range(0.0..1.0);
        }
    }
    let run = |delta: Option<&[f32]>, target: &Tensor<f32>| {
        let mut tape = Tape::new();
        let params = model.bind(&mut tape, true);
        let mut out = model.forward(&mut tape, &params, &input).unwrap();
        if let Some(d) = delta {
            let d = tape.constant(Tensor::from_vec(&[1, 3, 16, 16], d.to_vec()).unwrap());
            out = tape.add(out, d).unwrap();
        }
        let loss = tape.masked_mse(out, target, Some(&supervised)).unwrap();
        let value = tape.value(loss).item().unwrap();
        let mut g = tape.backward(loss).unwrap();
        (value.to_bits(), model.collect_grads(&mut g, &params).unwrap())
    };
    let base = run(None, &target);
    if base.0 == 0 {
        bad.push("zero base loss".to_string());
    }
    for (name, other) in [
        ("output", run(Some(&delta), &target)),
        ("target", run(None, &scrambled)),
        ("both", run(Some(&delta), &scrambled)),
    ] {
        if other.0 != base.0 {
            bad.push(format!("{name}: loss changed"));
        }
        let same = other.1.iter().zip(&base.1).all(|(a, b)| {
            a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        });
        if !same {
            bad.push(format!("{name}: gradient changed"));
        }
    }
    // and a hidden-site perturbation is seen
    let hidden = (0..x.len()).find(|&i| !mask.is_visible(i)).unwrap();
    let mut d = vec![0f32; x.len()];
    d[hidden] = 0.5;
    if run(Some(&d), &target).0 == base.0 {
        bad.push("hidden-site perturbation not seen".to_string());
    }
    bad
}
