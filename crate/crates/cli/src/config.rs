//! Optional JSON config file with `model`, `train`, `stream`, and `bench`
//! sections. Every field defaults to its owning module's default; unknown
//! keys are rejected with an error naming the key.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

use gesturebench_core::cnn3d::{BlockSpec, Cnn3dConfig};
use gesturebench_core::lstm::LstmConfig;
use gesturebench_core::stream::StreamConfig;
use gesturebench_core::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfigFile {
    pub model: Option<ModelSection>,
    pub train: Option<TrainSection>,
    pub stream: Option<StreamSection>,
    pub bench: Option<BenchSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub family: Option<String>,
    // lstm fields
    pub input_size: Option<usize>,
    pub hidden_sizes: Option<Vec<usize>>,
    // shared fields
    pub dropout_rate: Option<f64>,
    pub dense_size: Option<usize>,
    pub num_classes: Option<usize>,
    // cnn3d fields
    pub input_dims: Option<[usize; 4]>,
    pub blocks: Option<Vec<BlockSpecFile>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpecFile {
    pub out_channels: usize,
    pub kernel: Option<[usize; 3]>,
    pub stride: Option<[usize; 3]>,
    pub pool: Option<bool>,
    pub pool_window: Option<[usize; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub early_stop_patience: Option<usize>,
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSection {
    pub window_len: Option<usize>,
    pub infer_every: Option<usize>,
    pub confidence_threshold: Option<f64>,
    pub stability_count: Option<usize>,
    pub cooldown_frames: Option<usize>,
    pub charset: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub trials: Option<usize>,
    pub warmup: Option<usize>,
    pub seq_len: Option<usize>,
}

impl CliConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(CliConfigFile::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(CliError::Runtime)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn family(&self) -> Option<&str> {
        self.model.as_ref().and_then(|m| m.family.as_deref())
    }

    /// LstmConfig with the file's overrides applied over the defaults.
    pub fn lstm_config(&self, num_classes: usize) -> Result<LstmConfig, CliError> {
        let mut config = LstmConfig {
            num_classes,
            ..LstmConfig::default()
        };
        if let Some(model) = &self.model {
            if model.input_dims.is_some() || model.blocks.is_some() {
                return Err(CliError::Usage(
                    "config model section sets cnn3d fields for an lstm model".into(),
                ));
            }
            if let Some(v) = model.input_size {
                config.input_size = v;
            }
            if let Some(v) = &model.hidden_sizes {
                config.hidden_sizes = v.clone();
            }
            if let Some(v) = model.dropout_rate {
                config.dropout_rate = v;
            }
            if let Some(v) = model.dense_size {
                config.dense_size = v;
            }
            if let Some(v) = model.num_classes {
                if v != num_classes {
                    return Err(CliError::Usage(format!(
                        "config num_classes {v} does not match the dataset's {num_classes}"
                    )));
                }
            }
        }
        Ok(config)
    }

    /// Cnn3dConfig with the file's overrides applied over the defaults.
    pub fn cnn3d_config(
        &self,
        num_classes: usize,
        input_dims: [usize; 4],
    ) -> Result<Cnn3dConfig, CliError> {
        let mut config = Cnn3dConfig {
            num_classes,
            input_dims,
            ..Cnn3dConfig::default()
        };
        if let Some(model) = &self.model {
            if model.input_size.is_some() || model.hidden_sizes.is_some() {
                return Err(CliError::Usage(
                    "config model section sets lstm fields for a cnn3d model".into(),
                ));
            }
            if let Some(v) = model.input_dims {
                if v != input_dims {
                    return Err(CliError::Usage(format!(
                        "config input_dims {v:?} do not match the dataset's {input_dims:?}"
                    )));
                }
            }
            if let Some(blocks) = &model.blocks {
                config.blocks = blocks
                    .iter()
                    .map(|b| {
                        let mut spec = BlockSpec::new(b.out_channels);
                        if let Some(k) = b.kernel {
                            spec.kernel = (k[0], k[1], k[2]);
                        }
                        if let Some(s) = b.stride {
                            spec.stride = (s[0], s[1], s[2]);
                        }
                        if let Some(p) = b.pool {
                            spec.pool = p;
                        }
                        if let Some(w) = b.pool_window {
                            spec.pool_window = (w[0], w[1], w[2]);
                        }
                        spec
                    })
                    .collect();
            }
            if let Some(v) = model.dropout_rate {
                config.dropout_rate = v;
            }
            if let Some(v) = model.dense_size {
                config.dense_size = v;
            }
            if let Some(v) = model.num_classes {
                if v != num_classes {
                    return Err(CliError::Usage(format!(
                        "config num_classes {v} does not match the dataset's {num_classes}"
                    )));
                }
            }
        }
        Ok(config)
    }

    /// TrainConfig with overrides; `seed` resolves flag > config > env >
    /// built-in default.
    pub fn train_config(&self, flag_seed: Option<u64>, flag_epochs: Option<usize>) -> TrainConfig {
        let mut config = TrainConfig::default();
        if let Some(section) = &self.train {
            if let Some(v) = section.learning_rate {
                config.learning_rate = v;
            }
            if let Some(v) = section.beta1 {
                config.beta1 = v;
            }
            if let Some(v) = section.beta2 {
                config.beta2 = v;
            }
            if let Some(v) = section.eps {
                config.eps = v;
            }
            if let Some(v) = section.batch_size {
                config.batch_size = v;
            }
            if let Some(v) = section.epochs {
                config.epochs = v;
            }
            if let Some(v) = section.seed {
                config.seed = v;
            }
            if let Some(v) = section.early_stop_patience {
                config.early_stop_patience = v;
            }
            if let Some(v) = section.threads {
                config.threads = v;
            }
        }
        if self.train.as_ref().and_then(|t| t.seed).is_none() {
            if let Some(env_seed) = env_seed() {
                config.seed = env_seed;
            }
        }
        if let Some(seed) = flag_seed {
            config.seed = seed;
        }
        if let Some(epochs) = flag_epochs {
            config.epochs = epochs;
        }
        config
    }

    pub fn stream_config(&self, classes: usize) -> Result<StreamConfig, CliError> {
        let mut config =
            StreamConfig::for_classes(classes).map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(section) = &self.stream {
            if let Some(v) = section.window_len {
                config.window_len = v;
            }
            if let Some(v) = section.infer_every {
                config.infer_every = v;
            }
            if let Some(v) = section.confidence_threshold {
                config.confidence_threshold = v;
            }
            if let Some(v) = section.stability_count {
                config.stability_count = v;
            }
            if let Some(v) = section.cooldown_frames {
                config.cooldown_frames = v;
            }
            if let Some(v) = &section.charset {
                config.charset = v.clone();
            }
        }
        config
            .validate(classes)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

/// GESTUREBENCH_SEED overrides the built-in default seed (flags and config
/// files still win).
pub fn env_seed() -> Option<u64> {
    std::env::var("GESTUREBENCH_SEED")
        .ok()
        .and_then(|v| v.parse().ok())
}

pub fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(env_seed).unwrap_or(42)
}
