//! Central-difference gradient checks, in f64.

use maskfill::model::{Hourglass, HourglassConfig};
use maskfill::stream_rng;
use maskfill::tensor::{Tape, Tensor, Var};
use maskfill::Result;
use rand::Rng;

const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Coordinates probed per leaf; larger leaves are subsampled.
const PROBES: usize = 48;

pub type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    // keep clear of the leaky-relu kink so the difference quotient is smooth
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() < 0.05 {
                v + 0.1f64.copysign(v)
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Runs `build` on fresh leaves and reduces its output to a scalar with a
/// fixed random projection. Returns the loss and, if asked, the leaf
/// gradients.
fn eval(leaves: &[Tensor<f64>], proj_seed: u64, build: &Build, with_grads: bool) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = if tape.value(out).shape().is_empty() {
        out
    } else {
        let proj = random(tape.value(out).shape(), &mut stream_rng(proj_seed, 9));
        let prod = tape.mul_const(out, proj).unwrap();
        tape.sum(prod)
    };
    let value = tape.value(loss).item().unwrap();
    if !with_grads {
        return (value, Vec::new());
    }
    let mut g = tape.backward(loss).unwrap();
    (value, vars.iter().map(|&v| g.take(v).unwrap()).collect())
}

/// Worst relative error `|a - n| / max(|a|, |n|)` over the leaves, each
/// measured as a vector norm over the probed coordinates.
pub fn check(shapes: &[&[usize]], seed: u64, build: &Build) -> f64 {
    let mut rng = stream_rng(seed, 0);
    let leaves: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut rng)).collect();
    let (_, grads) = eval(&leaves, seed, build, true);
    let mut worst = 0f64;
    for (li, leaf) in leaves.iter().enumerate() {
        let n = leaf.len();
        let idx: Vec<usize> = if n <= PROBES {
            (0..n).collect()
        } else {
            (0..PROBES).map(|_| rng.random_range(0..n)).collect()
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &i in &idx {
            let mut plus = leaves.clone();
            plus[li].data_mut()[i] += H;
            let mut minus = leaves.clone();
            minus[li].data_mut()[i] -= H;
            let numeric = (eval(&plus, seed, build, false).0 - eval(&minus, seed, build, false).0) / (2.0 * H);
            let analytic = grads[li].data()[i];
            diff2 += (analytic - numeric).powi(2);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        let rel = if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale };
        worst = worst.max(rel);
    }
    worst
}

pub const FAMILIES: [&str; 8] = [
    "conv2d",
    "leaky_relu",
    "upsample",
    "concat",
    "elementwise",
    "crop_sum",
    "masked_mse",
    "hourglass",
];

/// Worst relative error of every case in `family`, with the case count.
pub fn family(name: &str) -> (f64, usize) {
    let mut errs = Vec::new();
    match name {
        "conv2d" => {
            // (n, cin, h, w, cout, k, stride, pad, bias)
            let cases = [
                (1, 1, 5, 5, 1, 3, 1, 1, true),
                (2, 3, 6, 7, 4, 3, 1, 1, true),
                (1, 2, 8, 8, 3, 3, 2, 1, false),
                (2, 2, 7, 5, 2, 1, 1, 0, true),
                (1, 3, 9, 9, 2, 5, 2, 2, true),
                (1, 1, 4, 6, 2, 3, 1, 0, false),
            ];
            for (s, &(n, cin, h, w, cout, k, stride, pad, bias)) in cases.iter().enumerate() {
                let x = [n, cin, h, w];
                let wt = [cout, cin, k, k];
                let b = [cout];
                let shapes: Vec<&[usize]> = if bias { vec![&x, &wt, &b] } else { vec![&x, &wt] };
                errs.push(check(&shapes, s as u64, &move |t, v| {
                    t.conv2d(v[0], v[1], v.get(2).copied(), stride, pad)
                }));
            }
        }
        "leaky_relu" => {
            for (s, shape) in [[1, 1, 4, 4], [2, 3, 5, 2], [1, 4, 3, 7], [3, 1, 2, 2], [1, 2, 6, 6]].iter().enumerate() {
                errs.push(check(&[shape], 10 + s as u64, &|t, v| t.leaky_relu(v[0], 0.1)));
                errs.push(check(&[shape], 20 + s as u64, &|t, v| t.leaky_relu(v[0], 0.0)));
            }
        }
        "upsample" => {
            let cases = [([1, 1, 2, 2], 2), ([2, 3, 3, 2], 2), ([1, 2, 2, 3], 3), ([1, 1, 1, 1], 4), ([2, 1, 3, 3], 1)];
            for (s, &(shape, f)) in cases.iter().enumerate() {
                errs.push(check(&[&shape], 30 + s as u64, &move |t, v| t.upsample_nearest(v[0], f)));
            }
        }
        "concat" => {
            let cases: [(&[usize], &[usize]); 5] = [
                (&[1, 1, 3, 3], &[1, 2, 3, 3]),
                (&[2, 3, 2, 4], &[2, 1, 2, 4]),
                (&[1, 4, 5, 5], &[1, 4, 5, 5]),
                (&[3, 1, 2, 2], &[3, 3, 2, 2]),
                (&[1, 2, 1, 6], &[1, 1, 1, 6]),
            ];
            for (s, (a, b)) in cases.iter().enumerate() {
                errs.push(check(&[a, b], 40 + s as u64, &|t, v| t.concat_channels(&[v[0], v[1], v[0]])));
            }
        }
        "elementwise" => {
            for (s, shape) in [[1, 1, 3, 3], [2, 2, 2, 2], [1, 3, 4, 1], [2, 1, 1, 5], [1, 2, 3, 4]].iter().enumerate() {
                let seed = 50 + 10 * s as u64;
                errs.push(check(&[shape, shape], seed, &|t, v| t.add(v[0], v[1])));
                errs.push(check(&[shape, shape], seed + 1, &|t, v| t.sub(v[0], v[1])));
                errs.push(check(&[shape, shape], seed + 2, &|t, v| t.mul(v[0], v[1])));
                errs.push(check(&[shape], seed + 3, &|t, v| t.mul(v[0], v[0])));
                errs.push(check(&[shape], seed + 4, &|t, v| Ok(t.scale(v[0], -2.5))));
                let c = random(shape, &mut stream_rng(seed, 7));
                errs.push(check(&[shape], seed + 5, &move |t, v| t.mul_const(v[0], c.clone())));
            }
        }
        "crop_sum" => {
            let cases = [
                ([1, 1, 5, 5], (1, 1, 3, 3)),
                ([2, 3, 4, 6], (0, 2, 4, 3)),
                ([1, 2, 7, 7], (3, 0, 2, 7)),
                ([1, 1, 2, 2], (0, 0, 2, 2)),
                ([2, 2, 6, 5], (5, 4, 1, 1)),
            ];
            for (s, &(shape, (top, left, h, w))) in cases.iter().enumerate() {
                errs.push(check(&[&shape], 110 + s as u64, &move |t, v| t.crop(v[0], top, left, h, w)));
                errs.push(check(&[&shape], 120 + s as u64, &|t, v| Ok(t.sum(v[0]))));
            }
        }
        "masked_mse" => {
            for (s, shape) in [[1, 1, 4, 4], [2, 3, 3, 3], [3, 1, 5, 2], [1, 2, 6, 6], [2, 2, 1, 7]].iter().enumerate() {
                let seed = 130 + s as u64;
                let mut rng = stream_rng(seed, 5);
                let target = random(shape, &mut rng);
                let n: usize = shape.iter().product();
                let mask: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
                let tgt = target.clone();
                errs.push(check(&[shape], seed, &move |t, v| t.masked_mse(v[0], &tgt, None)));
                errs.push(check(&[shape], seed, &move |t, v| t.masked_mse(v[0], &target, Some(&mask))));
            }
        }
        "hourglass" => {
            let cases = [
                (tiny_config(1, 1, true), [1, 1, 4, 4]),
                (tiny_config(3, 2, true), [2, 3, 8, 8]),
                (tiny_config(2, 2, false), [1, 2, 8, 4]),
                // odd sides go through the reflect-pad and crop path
                (tiny_config(1, 2, true), [1, 1, 7, 5]),
                (tiny_config(3, 1, true), [1, 3, 6, 6]),
            ];
            for (s, (cfg, input)) in cases.iter().enumerate() {
                let seed = 200 + s as u64;
                let model = Hourglass::<f64>::new(*cfg, &mut stream_rng(seed, 1)).unwrap();
                let x = random(input, &mut stream_rng(seed, 2));
                let shapes: Vec<&[usize]> = model.params().iter().map(|p| p.value.shape()).collect();
                let m = model.clone();
                errs.push(check(&shapes, seed, &move |t, v| m.forward(t, v, &x)));
            }
        }
        other => panic!("unknown family {other}"),
    }
    (errs.iter().copied().fold(0.0, f64::max), errs.len())
}

pub fn tiny_config(channels: usize, depth: usize, skip: bool) -> HourglassConfig {
    HourglassConfig {
        in_channels: channels,
        depth,
        base_channels: 3,
        max_channels: 6,
        skip_connections: skip,
        leaky_slope: 0.1,
    }
}

/// `grad(a·L1 + b·L2) - (a·grad L1 + b·grad L2)`, max-abs.
pub fn linearity_defect() -> f64 {
    let mut rng = stream_rng(300, 0);
    let leaves = [random(&[1, 2, 5, 5], &mut rng), random(&[3, 2, 3, 3], &mut rng)];
    let grad_of = |a: f64, b: f64| {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(leaves[0].clone());
        let k = tape.param(leaves[1].clone());
        let y = tape.conv2d(x, k, None, 1, 1).unwrap();
        let y = tape.leaky_relu(y, 0.2).unwrap();
        let l1 = tape.sum(y);
        let sq = tape.mul(x, x).unwrap();
        let l2 = tape.sum(sq);
        let s1 = tape.scale(l1, a);
        let s2 = tape.scale(l2, b);
        let loss = tape.add(s1, s2).unwrap();
        let mut g = tape.backward(loss).unwrap();
        [g.take(x).unwrap(), g.take(k).unwrap()]
    };
    let (g1, g2) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0));
    let (a, b) = (1.7, -0.6);
    let g = grad_of(a, b);
    let mut worst = 0f64;
    for i in 0..2 {
        for ((&c, &p), &q) in g[i].data().iter().zip(g1[i].data()).zip(g2[i].data()) {
            worst = worst.max((c - (a * p + b * q)).abs());
        }
    }
    worst
}
