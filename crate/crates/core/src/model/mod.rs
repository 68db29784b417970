//! The hop-interaction classifier: encode every hop token with a shared
//! linear map (plus a learnable hop-order embedding), mix the tokens with K
//! interaction layers, fuse them into one vector and predict with a linear
//! head.

mod checkpoint;
mod forward;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use forward::{encode_hops, forward, fuse, infer, interaction_layer, predict, Forward, Inference, LAYER_NORM_EPS};
pub use params::{param_count, param_shapes, xavier_uniform, Bound, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    #[default]
    Attention,
    GcnMean,
    Sage,
    Mlp,
    None,
}

impl InteractionKind {
    pub const ALL: [InteractionKind; 5] = [
        InteractionKind::None,
        InteractionKind::Mlp,
        InteractionKind::GcnMean,
        InteractionKind::Sage,
        InteractionKind::Attention,
    ];
}

impl FromStr for InteractionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Self::Attention),
            "gcn_mean" => Ok(Self::GcnMean),
            "sage" => Ok(Self::Sage),
            "mlp" => Ok(Self::Mlp),
            "none" => Ok(Self::None),
            _ => Err(Error::Config(format!("unknown interaction kind {s:?}"))),
        }
    }
}

impl fmt::Display for InteractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Attention => "attention",
            Self::GcnMean => "gcn_mean",
            Self::Sage => "sage",
            Self::Mlp => "mlp",
            Self::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    #[default]
    Mean,
    Max,
    Attention,
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [FusionKind::Mean, FusionKind::Max, FusionKind::Attention];
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            "attention" => Ok(Self::Attention),
            _ => Err(Error::Config(format!("unknown fusion kind {s:?}"))),
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Max => "max",
            Self::Attention => "attention",
        })
    }
}

/// Architecture hyperparameters. `input_dim` and `num_classes` are filled
/// from the data when left at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Number of propagated hops L; the model sees L + 1 tokens.
    pub hops: usize,
    pub interaction_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub interaction_kind: InteractionKind,
    pub fusion_kind: FusionKind,
    pub use_order_embedding: bool,
    pub dropout: f64,
    pub num_classes: usize,
    /// ReLU after the shared encoder. Off by default.
    pub encoder_activation: bool,
    /// Bias-free `d x d` projection after the concatenated attention heads.
    pub attention_output_projection: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 0,
            hops: 6,
            interaction_layers: 2,
            hidden: 128,
            heads: 1,
            interaction_kind: InteractionKind::Attention,
            fusion_kind: FusionKind::Mean,
            use_order_embedding: true,
            dropout: 0.5,
            num_classes: 0,
            encoder_activation: false,
            attention_output_projection: false,
        }
    }
}

impl ModelConfig {
    pub fn tokens(&self) -> usize {
        self.hops + 1
    }

    /// Number of interaction layers actually instantiated.
    pub fn layers(&self) -> usize {
        if self.interaction_kind == InteractionKind::None {
            0
        } else {
            self.interaction_layers
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 {
            return bad("model.input_dim must be set".into());
        }
        if self.num_classes < 2 {
            return bad(format!("model.num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.hidden == 0 {
            return bad("model.hidden must be >= 1".into());
        }
        if self.interaction_kind != InteractionKind::None && self.interaction_layers == 0 {
            return bad(format!(
                "interaction kind {} needs at least one layer",
                self.interaction_kind
            ));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return bad(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        Ok(())
    }
}
