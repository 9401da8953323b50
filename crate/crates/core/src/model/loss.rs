use serde::{Deserialize, Serialize};

use super::graph::LatentBundle;
use super::params::ModelParams;
use super::{ModelConfig, WeightReg};
use crate::data::MultiViewDataset;
use crate::error::{Error, Result};

/// The joint objective split into its weighted parts; the four parts sum to
/// `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    /// `(λ₁/N)‖Z − Z_s‖²`
    pub selfexpr: f64,
    /// `(λ₂/(NV)) Σ ‖X^v − X̂^v‖²`
    pub recon: f64,
    /// `‖C‖²`, diagonal included.
    pub reg_c: f64,
    /// `λ₂λ₃ Ω` over encoder, decoder and shared consistent weights.
    pub reg_w: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [self.total, self.selfexpr, self.recon, self.reg_c, self.reg_w]
            .iter()
            .all(|x| x.is_finite())
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("reg_C", self.reg_c),
            ("selfexpr", self.selfexpr),
            ("recon", self.recon),
            ("reg_W", self.reg_w),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, x)| !x.is_finite())
        .map(|(name, _)| name)
    }
}

/// Evaluates the joint objective from an already computed bundle.
pub fn joint_loss(
    params: &ModelParams,
    config: &ModelConfig,
    dataset: &MultiViewDataset,
    bundle: &LatentBundle,
) -> Result<LossTerms> {
    config.check_dataset(dataset)?;
    if bundle.recon.len() != dataset.num_views() {
        return Err(Error::Contract(
            "bundle and dataset disagree on the number of views".into(),
        ));
    }
    let n = dataset.n_samples() as f64;
    let v = dataset.num_views() as f64;

    let reg_c = params.coefficients().frobenius_sq();
    let selfexpr = config.lambda1 / n * bundle.z.sub(&bundle.zs)?.frobenius_sq();
    let mut err = 0.0;
    for (x, xhat) in dataset.views().iter().zip(&bundle.recon) {
        err += x.sub(xhat)?.frobenius_sq();
    }
    let recon = config.lambda2 / (n * v) * err;
    let omega: f64 = params
        .tensors()
        .iter()
        .filter(|t| t.group.is_regularized())
        .map(|t| match config.weight_reg {
            WeightReg::L1 => t.value.abs_sum(),
            WeightReg::L2 => t.value.frobenius_sq(),
        })
        .sum();
    let reg_w = config.lambda2 * config.lambda3 * omega;
    Ok(LossTerms {
        total: reg_c + selfexpr + recon + reg_w,
        selfexpr,
        recon,
        reg_c,
        reg_w,
    })
}
