use std::path::{Path, PathBuf};

use clap::Args;
use daf::model::ModelConfig;
use daf::train::{DecayMode, TrainConfig};
use daf::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a run needs. Read from a TOML file, then overridden by flags;
/// fields absent from both take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed: parameter initialization, shuffling and dropout.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Feature columns to keep, in order; every numeric column when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    /// Target column names; the first feature column when empty.
    #[serde(default)]
    pub targets: Vec<String>,
    /// Leading rows used for training; three quarters of the series when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_rows: Option<usize>,
    /// Rows after the training split used for testing; the rest when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_rows: Option<usize>,
    /// Replicate the first and last rows so every index is a window's first
    /// center.
    #[serde(default = "default_pad")]
    pub pad: bool,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/latest")
}

fn default_pad() -> bool {
    true
}

fn default_model() -> ModelConfig {
    ModelConfig::new(0, Vec::new())
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            out: default_out(),
            columns: None,
            targets: Vec::new(),
            train_rows: None,
            test_rows: None,
            pad: default_pad(),
            model: default_model(),
            train: TrainConfig::default(),
        }
    }
}

/// Flags shared by every subcommand. Each one, when given, replaces the
/// config-file value.
#[derive(Args, Clone, Debug, Default)]
pub struct SharedArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// CSV input with a header row.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Output directory (output file for `synth`).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop the differential layer, neighbor attention and sliding fusion.
    #[arg(long)]
    pub ablate_diff_attention: bool,
    /// Bypass every conv+LSTM residual block.
    #[arg(long)]
    pub ablate_residual_layer: bool,
    /// Learn one fusion weight column per time step.
    #[arg(long)]
    pub per_timestep_fusion_weights: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Window length N.
    #[arg(long)]
    pub window: Option<usize>,
    /// Comma-separated target column names.
    #[arg(long, value_delimiter = ',', value_name = "NAMES")]
    pub targets: Option<Vec<String>>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Config file (if any) with the flags applied on top.
    pub fn resolve(args: &SharedArgs) -> Result<Self> {
        let mut config = match &args.config {
            Some(path) => Self::from_toml(&read_text(path)?)?,
            None => Self::default(),
        };
        if let Some(d) = &args.data {
            config.data = Some(d.clone());
        }
        if let Some(o) = &args.out {
            config.out = o.clone();
        }
        if let Some(s) = args.seed {
            config.seed = s;
        }
        if let Some(e) = args.epochs {
            config.train.epochs = e;
        }
        if let Some(w) = args.window {
            config.model.window = w;
        }
        if let Some(t) = &args.targets {
            config.targets = t.clone();
        }
        config.model.ablate_diff_attention |= args.ablate_diff_attention;
        config.model.ablate_residual_layer |= args.ablate_residual_layer;
        config.model.per_timestep_fusion_weights |= args.per_timestep_fusion_weights;
        config.train.seed = config.seed;
        config.train.validate()?;
        Ok(config)
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("no data file given (use --data or `data` in the config)".into()))
    }

    pub fn set_decay(&mut self, decay: Option<DecayMode>) {
        if let Some(d) = decay {
            self.train.decay = d;
        }
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}
