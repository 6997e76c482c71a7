use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Filled from the data when loaded from a file.
    #[serde(default)]
    pub d_input: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    /// Key/query width of the neighbor attention; `d_model` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_attn: Option<usize>,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_layers")]
    pub encoder_layers: usize,
    #[serde(default = "default_layers")]
    pub decoder_layers: usize,
    /// Hidden width of the position-wise feed-forward; `4·d_model` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ffn_width: Option<usize>,
    /// Window length `N`; each window yields `N − 2` center positions.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub target_columns: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub ablate_diff_attention: bool,
    #[serde(default)]
    pub ablate_residual_layer: bool,
    #[serde(default)]
    pub per_timestep_fusion_weights: bool,
}

fn default_d_model() -> usize {
    64
}
fn default_heads() -> usize {
    4
}
fn default_layers() -> usize {
    2
}
fn default_window() -> usize {
    12
}
fn default_dropout() -> f64 {
    0.5
}

impl ModelConfig {
    pub const DEFAULT_WINDOW: usize = 12;

    pub fn new(d_input: usize, target_columns: Vec<usize>) -> Self {
        Self {
            d_input,
            d_model: default_d_model(),
            d_attn: None,
            heads: default_heads(),
            encoder_layers: default_layers(),
            decoder_layers: default_layers(),
            ffn_width: None,
            window: default_window(),
            target_columns,
            dropout: default_dropout(),
            ablate_diff_attention: false,
            ablate_residual_layer: false,
            per_timestep_fusion_weights: false,
        }
    }

    pub fn d_attn(&self) -> usize {
        self.d_attn.unwrap_or(self.d_model)
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_width.unwrap_or(4 * self.d_model)
    }

    /// Center length `n = N − 2`.
    pub fn center_len(&self) -> usize {
        self.window.saturating_sub(2)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_input == 0 {
            return fail("d_input must be positive".into());
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return fail(format!("d_model must be even and positive, got {}", self.d_model));
        }
        if self.window < 4 {
            return fail(format!("window must be at least 4, got {}", self.window));
        }
        if self.target_columns.is_empty() {
            return fail("at least one target column is required".into());
        }
        if let Some(&c) = self.target_columns.iter().find(|&&c| c >= self.d_input) {
            return fail(format!("target column {c} outside {} input columns", self.d_input));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!("d_model {} is not divisible into {} heads", self.d_model, self.heads));
        }
        if self.d_attn() == 0 || self.ffn_width() == 0 {
            return fail("d_attn and ffn_width must be positive".into());
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return fail("encoder and decoder need at least one layer each".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}
