//! Flat key-value configuration files for model geometry and seeds.
//!
//! Format: one `key = value` pair per line, `#` starts a comment, blank
//! lines ignored. Unknown keys are rejected. Every key has a toy-scale
//! default, so an empty file is a valid configuration.

use std::path::Path;

use crate::decoder::{DecoderGeometry, PheyeModel};
use crate::error::{Error, Result};
use crate::vision::{LoraConfig, VitGeometry};

/// Complete model + seed configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub decoder: DecoderGeometry,
    pub vit: VitGeometry,
    pub lora: LoraConfig,
    pub cross_init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            decoder: DecoderGeometry {
                d_model: 16,
                layers: 2,
                heads: 2,
                vocab_size: 12,
                cross_interval: 2,
                max_text_len: 8,
            },
            vit: VitGeometry {
                base_resolution: 14,
                patch_size: 7,
                d_vit: 12,
                layers: 1,
                heads: 2,
                target_resolution: 28,
                channels: 3,
            },
            lora: LoraConfig {
                rank: 2,
                alpha: 4.0,
                dropout: 0.05,
            },
            cross_init_std: 1e-6,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        self.vit.validate()?;
        if self.lora.rank == 0 {
            return Err(Error::Config("lora_rank must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.lora.dropout) {
            return Err(Error::Config("lora_dropout must lie in [0, 1)".into()));
        }
        if self.cross_init_std < 0.0 {
            return Err(Error::Config("cross_init_std must be non-negative".into()));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<PheyeModel> {
        self.validate()?;
        PheyeModel::build(self.decoder, self.vit, self.lora, self.cross_init_std, self.seed)
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

/// Parse configuration text over the defaults.
pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut config = ModelConfig::default();
    for (number, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value'", number + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "seed" => config.seed = parse_value(key, value)?,
            "cross_init_std" => config.cross_init_std = parse_value(key, value)?,
            "d_model" => config.decoder.d_model = parse_value(key, value)?,
            "decoder_layers" => config.decoder.layers = parse_value(key, value)?,
            "decoder_heads" => config.decoder.heads = parse_value(key, value)?,
            "vocab_size" => config.decoder.vocab_size = parse_value(key, value)?,
            "cross_interval" => config.decoder.cross_interval = parse_value(key, value)?,
            "max_text_len" => config.decoder.max_text_len = parse_value(key, value)?,
            "base_resolution" => config.vit.base_resolution = parse_value(key, value)?,
            "patch_size" => config.vit.patch_size = parse_value(key, value)?,
            "d_vit" => config.vit.d_vit = parse_value(key, value)?,
            "vit_layers" => config.vit.layers = parse_value(key, value)?,
            "vit_heads" => config.vit.heads = parse_value(key, value)?,
            "target_resolution" => config.vit.target_resolution = parse_value(key, value)?,
            "channels" => config.vit.channels = parse_value(key, value)?,
            "lora_rank" => config.lora.rank = parse_value(key, value)?,
            "lora_alpha" => config.lora.alpha = parse_value(key, value)?,
            "lora_dropout" => config.lora.dropout = parse_value(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "line {}: unknown key '{other}'",
                    number + 1
                )))
            }
        }
    }
    config.validate()?;
    Ok(config)
}

pub fn parse_config_file(path: &Path) -> Result<ModelConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
