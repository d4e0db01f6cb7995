//! The U-shaped hourglass denoiser and its weight file.
//!
//! Encoder stages halve the resolution with a stride-2 convolution, the
//! decoder doubles it with nearest-neighbour upsampling followed by a
//! convolution, and each decoder stage concatenates the encoder features of
//! the same resolution (the top stage concatenates the network input).
//!
//! ```text
//! x ─ enc0 ─ enc1 ─ … ─ enc{D-1} ─ mid
//! │    │      │                     │
//! │    │      └───── dec{D-2} ◀─────┘
//! │    └── dec0 ◀ …
//! └─ out.fuse ◀ up ─┘ ─ out.proj ─ y
//! ```
//!
//! # Weight file layout
//!
//! All integers are little-endian `u32`, floats little-endian IEEE-754.
//!
//! | field            | bytes                                  |
//! |------------------|----------------------------------------|
//! | magic            | `b"MFWEIGHT"`                          |
//! | version          | u32 (= 1)                              |
//! | in_channels      | u32                                    |
//! | depth            | u32                                    |
//! | base_channels    | u32                                    |
//! | max_channels     | u32                                    |
//! | skip_connections | u8 (0/1)                               |
//! | leaky_slope      | f32                                    |
//! | param count P    | u32                                    |
//! | P × entry        | name len u32, UTF-8 name, ndim u32, ndim × u32 extents |
//! | P × blob         | raw f32 values of each parameter, in entry order |

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, FormatError, Result};
use crate::image::Image;
use crate::tensor::{AdamState, Gradients, Scalar, Tape, Tensor, Var};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"MFWEIGHT";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HourglassConfig {
    pub in_channels: usize,
    /// Number of down/up stages.
    pub depth: usize,
    /// Width of the first stage; doubles per stage up to `max_channels`.
    pub base_channels: usize,
    pub max_channels: usize,
    pub skip_connections: bool,
    pub leaky_slope: f32,
}

impl Default for HourglassConfig {
    fn default() -> Self {
        HourglassConfig {
            in_channels: 3,
            depth: 3,
            base_channels: 32,
            max_channels: 128,
            skip_connections: true,
            leaky_slope: 0.1,
        }
    }
}

impl HourglassConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.depth == 0 || self.base_channels == 0 {
            return Err(Error::Config(format!(
                "hourglass needs positive channels and depth: {self:?}"
            )));
        }
        if self.max_channels < self.base_channels {
            return Err(Error::Config(format!(
                "max_channels {} below base_channels {}",
                self.max_channels, self.base_channels
            )));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config(format!(
                "leaky slope {} outside [0, 1)",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Feature width of encoder stage `i`.
    pub fn width(&self, stage: usize) -> usize {
        (self.base_channels << stage.min(16)).min(self.max_channels)
    }

    /// Spatial extents must be multiples of this; inputs are padded to it.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    /// Every convolution in parameter order.
    pub fn layers(&self) -> Vec<ConvSpec> {
        let c = self.in_channels;
        let d = self.depth;
        let mut layers = Vec::new();
        for i in 0..d {
            let cin = if i == 0 { c } else { self.width(i - 1) };
            layers.push(ConvSpec::new(format!("enc{i}.down"), cin, self.width(i), 3, 2));
            layers.push(ConvSpec::new(format!("enc{i}.conv"), self.width(i), self.width(i), 3, 1));
        }
        layers.push(ConvSpec::new("mid".into(), self.width(d - 1), self.width(d - 1), 3, 1));
        for i in (0..d - 1).rev() {
            let skip = if self.skip_connections { self.width(i) } else { 0 };
            layers.push(ConvSpec::new(
                format!("dec{i}.fuse"),
                self.width(i + 1) + skip,
                self.width(i),
                3,
                1,
            ));
            layers.push(ConvSpec::new(format!("dec{i}.conv"), self.width(i), self.width(i), 3, 1));
        }
        let skip = if self.skip_connections { c } else { 0 };
        layers.push(ConvSpec::new("out.fuse".into(), self.width(0) + skip, self.width(0), 3, 1));
        layers.push(ConvSpec::new("out.proj".into(), self.width(0), c, 1, 1));
        layers
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(ConvSpec::param_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    fn new(name: String, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            name,
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

/// A named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

/// The hourglass network: a config plus its parameters (weight, bias per
/// convolution, in [`HourglassConfig::layers`] order).
#[derive(Debug, Clone, PartialEq)]
pub struct Hourglass<T: Scalar = f32> {
    config: HourglassConfig,
    layers: Vec<ConvSpec>,
    params: Vec<Param<T>>,
}

impl<T: Scalar> Hourglass<T> {
    /// Kaiming-normal weights (leaky-ReLU gain, fan-in), zero biases.
    pub fn new<R: Rng + ?Sized>(config: HourglassConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        let slope = f64::from(config.leaky_slope);
        let gain2 = 2.0 / (1.0 + slope * slope);
        let mut params = Vec::with_capacity(layers.len() * 2);
        for l in &layers {
            let fan_in = (l.in_channels * l.kernel * l.kernel) as f64;
            let std = (gain2 / fan_in).sqrt();
            let shape = l.weight_shape();
            let n: usize = shape.iter().product();
            let w: Vec<T> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    T::of(z * std)
                })
                .collect();
            params.push(Param {
                name: format!("{}.weight", l.name),
                value: Tensor::from_vec(&shape, w)?,
            });
            params.push(Param {
                name: format!("{}.bias", l.name),
                value: Tensor::zeros(&[l.out_channels]),
            });
        }
        Ok(Hourglass {
            config,
            layers,
            params,
        })
    }

    /// Rebuilds a model from parameters, checking names and shapes.
    pub fn from_params(config: HourglassConfig, params: Vec<Param<T>>) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        if params.len() != layers.len() * 2 {
            return Err(FormatError::ShapeMismatch(format!(
                "expected {} parameters, found {}",
                layers.len() * 2,
                params.len()
            ))
            .into());
        }
        for (l, pair) in layers.iter().zip(params.chunks(2)) {
            let expect = [
                (format!("{}.weight", l.name), l.weight_shape().to_vec()),
                (format!("{}.bias", l.name), vec![l.out_channels]),
            ];
            for ((name, shape), p) in expect.iter().zip(pair) {
                if &p.name != name || p.value.shape() != &shape[..] {
                    return Err(FormatError::ShapeMismatch(format!(
                        "parameter {} {:?} where {name} {shape:?} was expected",
                        p.name,
                        p.value.shape()
                    ))
                    .into());
                }
            }
        }
        Ok(Hourglass {
            config,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &HourglassConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Hourglass<U> {
        Hourglass {
            config: self.config,
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Records the parameters on `tape`; with `trainable` they receive
    /// gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect()
    }

    /// Runs the network on a `[N, C, H, W]` batch.
    ///
    /// Inputs whose sides are not multiples of `2^depth` are reflect-padded
    /// and the output is cropped back, so the result always has the input's
    /// shape.
    pub fn forward(&self, tape: &mut Tape<T>, params: &[Var], input: &Tensor<T>) -> Result<Var> {
        let [_, c, h, w] = input.dims4()?;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} channels, input has {c}",
                self.config.in_channels
            )));
        }
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} bound parameters for a model with {}",
                params.len(),
                self.params.len()
            )));
        }
        let m = self.config.size_multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let x = if (ph, pw) == (h, w) {
            tape.constant(input.clone())
        } else {
            tape.constant(reflect_pad_tensor(input, ph, pw)?)
        };
        let slope = T::of(f64::from(self.config.leaky_slope));
        let mut layer = 0usize;
        let mut conv = |tape: &mut Tape<T>, x: Var, act: bool| -> Result<Var> {
            let spec = &self.layers[layer];
            let (wv, bv) = (params[2 * layer], params[2 * layer + 1]);
            layer += 1;
            let y = tape.conv2d(x, wv, Some(bv), spec.stride, spec.kernel / 2)?;
            if act {
                tape.leaky_relu(y, slope)
            } else {
                Ok(y)
            }
        };
        let d = self.config.depth;
        let mut features = Vec::with_capacity(d);
        let mut cur = x;
        for _ in 0..d {
            cur = conv(tape, cur, true)?;
            cur = conv(tape, cur, true)?;
            features.push(cur);
        }
        cur = conv(tape, cur, true)?;
        for i in (0..d - 1).rev() {
            let up = tape.upsample_nearest(cur, 2)?;
            let fused = if self.config.skip_connections {
                tape.concat_channels(&[up, features[i]])?
            } else {
                up
            };
            cur = conv(tape, fused, true)?;
            cur = conv(tape, cur, true)?;
        }
        let up = tape.upsample_nearest(cur, 2)?;
        let fused = if self.config.skip_connections {
            tape.concat_channels(&[up, x])?
        } else {
            up
        };
        cur = conv(tape, fused, true)?;
        let out = conv(tape, cur, false)?;
        if (ph, pw) == (h, w) {
            Ok(out)
        } else {
            tape.crop(out, 0, 0, h, w)
        }
    }

    /// Inference without recording gradients.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &params, input)?;
        Ok(tape.value(out).clone())
    }

    /// Gradients of the bound parameters, in parameter order.
    pub fn collect_grads(&self, grads: &mut Gradients<T>, params: &[Var]) -> Result<Vec<Tensor<T>>> {
        params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| {
                grads
                    .take(v)
                    .ok_or_else(|| Error::Contract(format!("no gradient for {}", p.name)))
            })
            .collect()
    }

    pub fn adam(&self, config: crate::tensor::AdamConfig) -> AdamState<T> {
        AdamState::new(config, self.params.iter().map(|p| &p.value))
    }

    pub fn apply_adam(&mut self, adam: &mut AdamState<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        adam.step(self.params.iter_mut().map(|p| &mut p.value), grads, lr)
    }
}

impl Hourglass<f32> {
    /// Runs the network on one image.
    pub fn predict_image(&self, img: &Image) -> Result<Image> {
        let out = self.predict(&Image::stack(std::slice::from_ref(img))?)?;
        Ok(Image::unstack(&out)?.remove(0))
    }

    pub fn to_weights(&self) -> ModelWeights {
        ModelWeights {
            config: self.config,
            params: self.params.clone(),
        }
    }

    pub fn from_weights(weights: ModelWeights) -> Result<Self> {
        Self::from_params(weights.config, weights.params)
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_weights().to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Replaces the parameters with those stored at `path`; the file's
    /// config must equal this model's.
    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let w = load_weights(path)?;
        if w.config != self.config {
            return Err(FormatError::ShapeMismatch(format!(
                "file config {:?} differs from model config {:?}",
                w.config, self.config
            ))
            .into());
        }
        *self = Self::from_weights(w)?;
        Ok(())
    }
}

fn reflect_pad_tensor<T: Scalar>(t: &Tensor<T>, ph: usize, pw: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = t.dims4()?;
    let reflect = |i: usize, len: usize| -> usize {
        if len == 1 {
            return 0;
        }
        let period = 2 * (len - 1);
        let m = i % period;
        if m < len {
            m
        } else {
            period - m
        }
    };
    let mut out = Vec::with_capacity(n * c * ph * pw);
    for p in 0..n * c {
        let plane = &t.data()[p * h * w..(p + 1) * h * w];
        for y in 0..ph {
            let row = &plane[reflect(y, h) * w..(reflect(y, h) + 1) * w];
            for x in 0..pw {
                out.push(row[reflect(x, w)]);
            }
        }
    }
    Tensor::from_vec(&[n, c, ph, pw], out)
}

/// Parsed contents of a weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: HourglassConfig,
    pub params: Vec<Param<f32>>,
}

impl ModelWeights {
    /// Bytes before the first parameter blob.
    pub fn header_size(&self) -> usize {
        let fixed = 8 + 4 + 4 * 4 + 1 + 4 + 4;
        fixed
            + self
                .params
                .iter()
                .map(|p| 4 + p.name.len() + 4 + 4 * p.value.shape().len())
                .sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let total: usize = self.params.iter().map(|p| p.value.len()).sum();
        let mut out = Vec::with_capacity(self.header_size() + 4 * total);
        let c = &self.config;
        out.extend_from_slice(WEIGHTS_MAGIC);
        for v in [
            WEIGHTS_VERSION,
            c.in_channels as u32,
            c.depth as u32,
            c.base_channels as u32,
            c.max_channels as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(u8::from(c.skip_connections));
        out.extend_from_slice(&c.leaky_slope.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for p in &self.params {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != WEIGHTS_MAGIC {
            return Err(FormatError::BadMagic(format!("{:?}", String::from_utf8_lossy(magic))).into());
        }
        let version = r.u32("version")?;
        if version != WEIGHTS_VERSION {
            return Err(FormatError::Version {
                found: version,
                expected: WEIGHTS_VERSION,
            }
            .into());
        }
        let in_channels = r.u32("in_channels")? as usize;
        let depth = r.u32("depth")? as usize;
        let base_channels = r.u32("base_channels")? as usize;
        let max_channels = r.u32("max_channels")? as usize;
        let skip = r.take(1, "skip flag")?[0];
        if skip > 1 {
            return Err(FormatError::Malformed(format!("skip flag {skip}")).into());
        }
        let leaky_slope = f32::from_le_bytes(r.take(4, "leaky slope")?.try_into().unwrap());
        let config = HourglassConfig {
            in_channels,
            depth,
            base_channels,
            max_channels,
            skip_connections: skip == 1,
            leaky_slope,
        };
        config
            .validate()
            .map_err(|e| FormatError::Malformed(e.to_string()))?;
        let count = r.u32("parameter count")? as usize;
        if count > 4096 {
            return Err(FormatError::Malformed(format!("{count} parameters")).into());
        }
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| FormatError::Malformed("parameter name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32("rank")? as usize;
            if ndim == 0 || ndim > 8 {
                return Err(FormatError::Malformed(format!("{name}: rank {ndim}")).into());
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("extent")? as usize);
            }
            entries.push((name, shape));
        }
        let mut params = Vec::with_capacity(count);
        for (name, shape) in entries {
            let n: usize = shape.iter().product();
            let blob = r.take(n * 4, &name)?;
            let data = blob
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let value = Tensor::from_vec(&shape, data)
                .map_err(|e| FormatError::Malformed(format!("{name}: {e}")))?;
            params.push(Param { name, value });
        }
        if r.pos != bytes.len() {
            return Err(FormatError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            ))
            .into());
        }
        let weights = ModelWeights { config, params };
        // shape check against the architecture
        Hourglass::from_params(config, weights.params.clone())?;
        Ok(weights)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Truncated(format!(
                "{what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
            .into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelWeights::from_bytes(&bytes)
}

/// Hex SHA-256 of a file, recorded in run manifests.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
