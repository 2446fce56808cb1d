//! Model configuration, read from JSON.

use serde::{Deserialize, Serialize};

use crate::data::TaskKind;
use crate::fusion::MainModality;
use crate::rng::fnv1a;

/// Fusion strategy of a registered model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    AttentionGate,
    Tensor,
    Attention,
    Early,
    None,
}

/// Text encoder sizing. The vocabulary always comes from the dataset
/// header, so it is not part of the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextDims {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_positions: usize,
}

impl Default for TextDims {
    fn default() -> Self {
        // toy scale; the full-scale preset configs override these
        Self {
            width: 64,
            layers: 2,
            heads: 4,
            max_positions: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Registry key, e.g. `LstmBert` or `BertEncoder[TF]`.
    pub model_name: String,
    pub task: TaskKind,
    /// Encoded time-invariant width (D1').
    pub d1_encoded: usize,
    /// Time-series encoder hidden size (L2').
    pub ts_hidden: usize,
    /// Encoded time-series width (D2'). Must equal `ts_hidden` for the
    /// transformer encoder variant, which has no trailing projection.
    pub d2_encoded: usize,
    /// Transformer-encoder layers / star update cycles.
    pub ts_layers: usize,
    pub ts_heads: usize,
    pub text: TextDims,
    /// Derived from the model name; may be given explicitly and is then
    /// checked against the registry.
    pub fusion: Option<FusionKind>,
    /// Derived from the model name for fusion pairs.
    pub main: Option<MainModality>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_name: String::new(),
            task: TaskKind::ArfBinary,
            d1_encoded: 64,
            ts_hidden: 32,
            d2_encoded: 32,
            ts_layers: 1,
            ts_heads: 2,
            text: TextDims::default(),
            fusion: None,
            main: None,
            dropout: 0.1,
            learning_rate: 1e-4,
            epochs: 50,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Stable digest of the resolved configuration, stored in checkpoints.
    pub fn digest(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a(json.as_bytes())
    }
}
