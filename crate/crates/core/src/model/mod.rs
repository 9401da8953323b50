//! The network: per-view autoencoders, consistent and global attentive
//! fusion, the self-expressive layer and the training objectives.
//!
//! Two entry styles are offered. The free functions ([`forward`],
//! [`encode_view`], [`joint_loss`], ...) evaluate on plain matrices and are
//! what evaluation code wants. [`Graph`] records the same computation on a
//! [`Tape`](crate::numerics::Tape) so the trainer can differentiate it.

mod graph;
mod loss;
mod params;

pub use graph::{
    autoencoder_loss_and_gradients, consistent_attention, decode_view, encode_view, forward, global_attention,
    loss_and_gradients, pretrain_loss, self_representation, ConsistentOutput, ForwardVars, Graph, LatentBundle,
    LossVars,
};
pub use loss::{joint_loss, LossTerms};
pub use params::{init_params, ModelParams, ParamGroup, Tensor};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Penalty applied to encoder, decoder and shared consistent weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightReg {
    /// Entrywise absolute sum.
    L1,
    /// Squared Frobenius norm.
    #[default]
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub view_dims: Vec<usize>,
    pub hidden_dim: usize,
    pub encoder_depth: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    #[serde(default)]
    pub weight_reg: WeightReg,
    #[serde(default = "yes")]
    pub use_shortcut: bool,
    #[serde(default = "yes")]
    pub use_consistent_layer: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.view_dims.is_empty() {
            return Err(Error::Argument("view_dims must list at least one view".into()));
        }
        if let Some(v) = self.view_dims.iter().position(|&d| d == 0) {
            return Err(Error::Argument(format!("view_dims[{v}] must be at least 1")));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Argument("hidden_dim must be at least 1".into()));
        }
        if self.encoder_depth == 0 {
            return Err(Error::Argument("encoder_depth must be at least 1".into()));
        }
        for (name, value) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Argument(format!(
                    "{name} = {value} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }

    pub fn num_views(&self) -> usize {
        self.view_dims.len()
    }

    pub(crate) fn check_dataset(&self, dataset: &crate::data::MultiViewDataset) -> Result<()> {
        if dataset.view_dims() != self.view_dims {
            return Err(Error::Contract(format!(
                "dataset view dims {:?} do not match model view dims {:?}",
                dataset.view_dims(),
                self.view_dims
            )));
        }
        Ok(())
    }
}
