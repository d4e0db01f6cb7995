//! Iterative filling against oracles built from the recorded iterations.

mod common;

use maskfill::zeroshot::{
    denoise, pd_down, pd_up, DenoiseConfig, EnsembleMode, Iteration, Preset,
};
use maskfill::Image;

use common::replay::{loss_blindness_violations, max_abs, noisy, oracle, run, tiny, Record, TOL};

fn assert_close(got: &Image, want: &[f64], what: &str) {
    let gap = max_abs(got, want);
    assert!(gap < TOL, "{what}: max-abs gap {gap:e}");
}

fn config(mode: EnsembleMode, mask_loss: bool) -> DenoiseConfig {
    DenoiseConfig {
        iterations: 15,
        ensemble: mode,
        mask_loss,
        beta: 0.8,
        mask_ratio: 0.4,
        ..Preset::SyntheticFaster.config()
    }
}

#[test]
fn ensemble_modes_match_replay() {
    let x = noisy(3, 16, 1);
    for mode in [
        EnsembleMode::Ema,
        EnsembleMode::Average,
        EnsembleMode::AvgAfter(6),
        EnsembleMode::Last,
    ] {
        let cfg = config(mode, true);
        let (out, rec) = run(&x, &cfg);
        assert_eq!(rec.preds.len(), cfg.iterations);
        assert_close(&out[0], &oracle(&x, &rec, mode, cfg.beta, false), &mode.to_string());
    }
}

#[test]
fn unmasked_loss_folds_every_site() {
    let x = noisy(1, 16, 2);
    let cfg = config(EnsembleMode::Ema, false);
    let (out, rec) = run(&x, &cfg);
    assert_close(&out[0], &oracle(&x, &rec, EnsembleMode::Ema, cfg.beta, true), "ema without mask");
}

#[test]
fn replay_with_shared_masks() {
    let x = noisy(3, 16, 3);
    let cfg = DenoiseConfig {
        shared_channels: true,
        ..config(EnsembleMode::Ema, true)
    };
    let (out, rec) = run(&x, &cfg);
    for ms in &rec.masks {
        let (_, h, w) = ms[0].dims();
        assert_eq!(ms[0].plane(0), ms[0].plane(1));
        assert_eq!(ms[0].plane(1).len(), h * w);
    }
    assert_close(&out[0], &oracle(&x, &rec, EnsembleMode::Ema, cfg.beta, false), "shared");
}

#[test]
fn pixel_shuffle_replay() {
    // 15 is not a multiple of 2, so the padded path is exercised as well
    let x = noisy(1, 15, 4);
    let cfg = DenoiseConfig {
        pd_factor: 2,
        ..config(EnsembleMode::Average, true)
    };
    let mut model = tiny(1);
    let mut rec = Record { preds: vec![], masks: vec![] };
    let mut obs = |it: &Iteration<'_>| {
        rec.preds.push(it.predictions.to_vec());
        rec.masks.push(it.masks.to_vec());
    };
    let out = denoise(&mut model, &x, &cfg, None, Some(&mut obs)).unwrap();
    assert_eq!(rec.preds[0].len(), 4);
    let padded = maskfill::zeroshot::pad_to_multiple(&x, 2).unwrap();
    let subs = pd_down(&padded, 2).unwrap();
    let filled: Vec<Image> = subs
        .iter()
        .enumerate()
        .map(|(k, sub)| {
            let one = Record {
                preds: rec.preds.iter().map(|p| vec![p[k].clone()]).collect(),
                masks: rec.masks.iter().map(|m| vec![m[k].clone()]).collect(),
            };
            let v = oracle(sub, &one, EnsembleMode::Average, cfg.beta, false);
            let (c, h, w) = sub.dims();
            Image::new(c, h, w, v.iter().map(|&a| a as f32).collect()).unwrap()
        })
        .collect();
    let want = pd_up(&filled, 2).unwrap().crop(0, 0, 15, 15).unwrap();
    let want: Vec<f64> = want.data().iter().map(|&v| f64::from(v)).collect();
    assert_close(&out.image, &want, "pd");
}

#[test]
fn masked_loss_is_blind_to_visible_sites() {
    assert_eq!(loss_blindness_violations(), Vec::<String>::new());
}

#[test]
fn same_seed_same_output() {
    let x = noisy(1, 16, 6);
    let cfg = config(EnsembleMode::Ema, true);
    let (a, _) = run(&x, &cfg);
    let (b, _) = run(&x, &cfg);
    assert!(a[0].data().iter().zip(b[0].data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    let (c, _) = run(&x, &DenoiseConfig { seed: 1, ..cfg });
    assert_ne!(a[0], c[0]);
}
