//! The TOML run configuration.
//!
//! ```toml
//! preset = "synthetic-faster"
//!
//! [denoise]          # any DenoiseConfig key, applied over the preset
//! iterations = 300
//! ensemble = "avg-after=100"
//!
//! [model]            # architecture used when no weights are loaded
//! depth = 3
//! base_channels = 32
//!
//! [pretrain]
//! corpus_dir = "corpus"
//! total_steps = 2000
//!
//! [noise]
//! kind = "gaussian"
//! sigma = 0.098
//! ```
//!
//! Precedence, lowest first: built-in defaults, the preset, the file's
//! `[denoise]` table, command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HourglassConfig;
use crate::noise::NoiseSpec;
use crate::pretrain::PretrainConfig;
use crate::zeroshot::{DenoiseConfig, EnsembleMode, PlateauStop, Preset};

/// Optional replacements for [`DenoiseConfig`] fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseOverrides {
    pub mask_ratio: Option<f64>,
    pub shared_channels: Option<bool>,
    pub beta: Option<f64>,
    pub iterations: Option<usize>,
    pub lr: Option<f64>,
    pub pd_factor: Option<usize>,
    pub ensemble: Option<EnsembleMode>,
    pub mask_loss: Option<bool>,
    pub seed: Option<u64>,
    pub plateau: Option<PlateauStop>,
    pub init_weights: Option<PathBuf>,
}

impl DenoiseOverrides {
    pub fn apply(&self, cfg: &mut DenoiseConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f.clone() {
                    cfg.$f = v;
                }
            )*};
        }
        set!(mask_ratio, shared_channels, beta, iterations, lr, pd_factor, ensemble, mask_loss, seed);
        if self.plateau.is_some() {
            cfg.plateau = self.plateau;
        }
        if self.init_weights.is_some() {
            cfg.init_weights = self.init_weights.clone();
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub denoise: DenoiseOverrides,
    pub model: HourglassConfig,
    pub pretrain: PretrainConfig,
    pub noise: Option<NoiseSpec>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Preset (the flag wins over the file), then file overrides, then
    /// flag overrides.
    pub fn denoise_config(&self, preset: Option<Preset>, flags: &DenoiseOverrides) -> Result<DenoiseConfig> {
        let preset = preset.or(self.preset).unwrap_or(Preset::SyntheticDefault);
        let mut cfg = preset.config();
        self.denoise.apply(&mut cfg);
        flags.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Pretty TOML for echoing an effective configuration.
pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string_pretty(value).unwrap_or_else(|e| format!("# unprintable: {e}\n"))
}
