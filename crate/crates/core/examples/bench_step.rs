//! Times one forward/backward/Adam step of the default hourglass at the
//! shapes used by denoising (1x128x128) and pre-training (8x64x64).

use maskfill::model::{Hourglass, HourglassConfig};
use maskfill::tensor::{AdamConfig, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = HourglassConfig::default();
    let mut m = Hourglass::<f32>::new(cfg, &mut rng).unwrap();
    println!("params {}", m.param_count());
    let mut adam = m.adam(AdamConfig::default());
    for &(n, s) in &[(1usize, 128usize), (8, 64)] {
        let x: Vec<f32> = (0..n * 3 * s * s).map(|_| rng.random()).collect();
        let x = Tensor::from_vec(&[n, 3, s, s], x).unwrap();
        for _ in 0..3 {
            let t0 = Instant::now();
            let mut tape = Tape::new();
            let p = m.bind(&mut tape, true);
            let y = m.forward(&mut tape, &p, &x).unwrap();
            let t1 = t0.elapsed();
            let l = tape.masked_mse(y, &x, None).unwrap();
            let mut g = tape.backward(l).unwrap();
            let grads = m.collect_grads(&mut g, &p).unwrap();
            m.apply_adam(&mut adam, &grads, 1e-3).unwrap();
            println!("n={n} s={s}: fwd {:?} total {:?}", t1, t0.elapsed());
        }
    }
}
