//! Attention-based MIMO detector.
//!
//! Each transmit layer is a token. Queries and keys are embedded from the
//! estimated channel column of that layer, values from its per-antenna
//! matched-filter products. Attention layers compute element-wise
//! interference weights between token pairs with small per-head MLPs and
//! refine the values by weighted element-wise sums; a final MLP maps every
//! value to bit logits.

mod checkpoint;
mod detector;
mod forward;
pub(crate) mod kernels;
mod params;
mod smoothing;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use detector::AttDetDetector;
pub use forward::{
    attention_layer, embed_tokens, forward, forward_batch, forward_trace, logit_slot_to_bit, phi, AttInput, GridShape,
    TokenState,
};
pub(crate) use forward::{MlpCache, Trace};
pub use params::{init_params, BlockShape, HeadShape, MlpShape, ModelParams, ParamLayout, TensorKind, TensorSpec};
pub(crate) use smoothing::depthwise_backward;
pub use smoothing::{smooth_scores, ConvShape};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared column norm below which a layer is treated as absent.
pub const DEGENERATE_COLUMN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Model inner dimension.
    pub d: usize,
    pub n_heads: usize,
    /// Number of attention layers.
    pub n_layers: usize,
    /// Logit outputs per token, `log2` of the largest supported order.
    pub max_bits: usize,
    /// Use one embedding network for queries and keys.
    pub share_qk: bool,
    /// Tie the parameters of all attention layers.
    pub share_layer_params: bool,
    /// Depthwise-separable 3x3 smoothing of pre-MLP scores across the RE grid.
    pub score_smoothing: bool,
    /// Skip connection around value update and head mixing.
    pub residual: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            d: 64,
            n_heads: 4,
            n_layers: 4,
            max_bits: 6,
            share_qk: false,
            share_layer_params: false,
            score_smoothing: false,
            residual: true,
        }
    }
}

impl ArchConfig {
    /// Small configuration used by the gradient check.
    pub fn small() -> Self {
        Self { d: 8, n_heads: 2, n_layers: 2, max_bits: 2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_heads == 0 || !self.d.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d ({}) must be a positive multiple of n_heads ({})",
                self.d, self.n_heads
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        if ![2, 4, 6].contains(&self.max_bits) {
            return Err(Error::Config(format!("max_bits must be 2, 4 or 6, got {}", self.max_bits)));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d / self.n_heads
    }
}
