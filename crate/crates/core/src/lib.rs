//! Zero-shot image denoising with a masked-pretrained hourglass network.
//!
//! The pipeline has two stages. [`pretrain`] teaches the network to
//! reconstruct randomly masked pixels of clean natural images. [`zeroshot`]
//! then denoises a single noisy image by continuing that masked
//! reconstruction on the image itself and averaging the predictions made at
//! hidden pixels across iterations.

pub mod config;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod manifest;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod pretrain;
pub mod tensor;
pub mod zeroshot;

pub use error::{Error, FormatError, Result};
pub use image::Image;

/// A ChaCha8 generator for one of several independent streams under a
/// single user seed.
pub fn stream_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
