//! Two-phase optimisation: per-view autoencoder pretraining with early
//! stopping, then full-batch training of the joint objective.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, load_pretrained, save_checkpoint, save_pretrained, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::model::{
    autoencoder_loss_and_gradients, init_params, loss_and_gradients, LossTerms, ModelConfig, ModelParams, ParamGroup,
};
use crate::numerics::{Matrix, Optimizer, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub pretrain_patience: usize,
    pub pretrain_max_epochs: usize,
    pub optimizer: OptimizerKind,
    pub freeze_encoders: bool,
    /// Progress is reported every `log_every` epochs; 0 disables reporting.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 200,
            pretrain_patience: 200,
            pretrain_max_epochs: 2000,
            optimizer: OptimizerKind::Adam,
            freeze_encoders: true,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Argument(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            )));
        }
        if self.pretrain_patience == 0 {
            return Err(Error::Argument("pretrain_patience must be at least 1".into()));
        }
        if self.pretrain_max_epochs == 0 {
            return Err(Error::Argument("pretrain_max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Pretrained autoencoder of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedView {
    pub encoder: Vec<Matrix>,
    pub decoder: Vec<Matrix>,
    /// Loss at every epoch run, evaluated before that epoch's update.
    pub history: Vec<f64>,
    pub best_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub views: Vec<PretrainedView>,
}

/// Where the main phase starts from.
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    Scratch,
    Pretrained(&'a Pretrained),
    Params(&'a ModelParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: ModelParams,
    pub epoch: usize,
    /// Loss terms at every epoch, evaluated before that epoch's update.
    pub history: Vec<LossTerms>,
}

impl Checkpoint {
    /// Lowest total loss seen during training.
    pub fn best_loss(&self) -> Option<f64> {
        self.history.iter().map(|t| t.total).reduce(f64::min)
    }
}

fn divergence(epoch: usize, view: Option<usize>) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(term) => Error::Divergence { epoch, view, term },
        other => other,
    }
}

fn pretrain_view(
    dataset: &MultiViewDataset,
    config: &ModelConfig,
    train: &TrainConfig,
    init: &ModelParams,
    v: usize,
) -> Result<PretrainedView> {
    let mut encoder: Vec<Matrix> = init.encoder(v).into_iter().cloned().collect();
    let mut decoder: Vec<Matrix> = init.decoder(v).into_iter().cloned().collect();
    let shapes: Vec<(usize, usize)> = encoder.iter().chain(&decoder).map(Matrix::shape).collect();
    let mut opt = Optimizer::new(train.optimizer, train.learning_rate, &shapes);
    let x = dataset.view(v);

    let mut best = (f64::INFINITY, encoder.clone(), decoder.clone());
    let mut history = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=train.pretrain_max_epochs {
        let (loss, enc_grads, dec_grads) =
            autoencoder_loss_and_gradients(&encoder, &decoder, x, config.lambda3, config.weight_reg)
                .map_err(divergence(epoch, Some(v)))?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                view: Some(v),
                term: "total".into(),
            });
        }
        history.push(loss);
        if loss < best.0 {
            best = (loss, encoder.clone(), decoder.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train.pretrain_patience {
                break;
            }
        }
        if train.log_every > 0 && epoch % train.log_every == 0 {
            eprintln!("pretrain view {v} epoch {epoch}: {loss:.6e}");
        }
        let grads: Vec<Matrix> = enc_grads.into_iter().chain(dec_grads).collect();
        let mut refs: Vec<&mut Matrix> = encoder.iter_mut().chain(decoder.iter_mut()).collect();
        opt.step(&mut refs, &grads)?;
    }
    let (best_loss, encoder, decoder) = best;
    Ok(PretrainedView {
        encoder,
        decoder,
        history,
        best_loss,
    })
}

/// Trains each view's plain autoencoder separately (in parallel) and keeps
/// the weights with the lowest loss. Stops a view once its best loss has
/// not improved for `pretrain_patience` epochs.
pub fn pretrain(
    dataset: &MultiViewDataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<Pretrained> {
    model_config.validate()?;
    train_config.validate()?;
    model_config.check_dataset(dataset)?;
    let init = init_params(model_config, dataset.n_samples())?;
    let views = (0..dataset.num_views())
        .into_par_iter()
        .map(|v| pretrain_view(dataset, model_config, train_config, &init, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(Pretrained {
        model_config: model_config.clone(),
        train_config: train_config.clone(),
        views,
    })
}

/// Copies pretrained encoder and decoder stacks into `params`.
pub fn apply_pretrained(params: &mut ModelParams, pretrained: &Pretrained) -> Result<()> {
    if pretrained.views.len() != params.num_views() {
        return Err(Error::Contract(format!(
            "pretrained weights cover {} views, the model has {}",
            pretrained.views.len(),
            params.num_views()
        )));
    }
    for (v, view) in pretrained.views.iter().enumerate() {
        for (l, w) in view.encoder.iter().enumerate() {
            params.set(&format!("view{v}.encoder.{l}"), w.clone())?;
        }
        for (l, w) in view.decoder.iter().enumerate() {
            params.set(&format!("view{v}.decoder.{l}"), w.clone())?;
        }
    }
    Ok(())
}

/// Trains the joint objective. Starting from pretrained weights with
/// `freeze_encoders` set, encoder stacks stay fixed and everything else
/// trains; otherwise every tensor trains.
pub fn train(
    dataset: &MultiViewDataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    init: Init<'_>,
) -> Result<Checkpoint> {
    let freeze = train_config.freeze_encoders && matches!(init, Init::Pretrained(_));
    train_with(dataset, model_config, train_config, init, |g| {
        !(freeze && g == ParamGroup::Encoder)
    })
}

/// [`train`] with an explicit choice of which parameter groups update.
pub fn train_with(
    dataset: &MultiViewDataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    init: Init<'_>,
    trainable: impl Fn(ParamGroup) -> bool + Copy,
) -> Result<Checkpoint> {
    model_config.validate()?;
    train_config.validate()?;
    model_config.check_dataset(dataset)?;
    let n = dataset.n_samples();
    let mut params = match init {
        Init::Params(p) => {
            if p.n_samples() != n || p.shapes() != ModelParams::zeros(model_config, n)?.shapes() {
                return Err(Error::Contract(
                    "initial parameters do not match the model config".into(),
                ));
            }
            p.clone()
        }
        _ => init_params(model_config, n)?,
    };
    if let Init::Pretrained(pre) = init {
        apply_pretrained(&mut params, pre)?;
    }

    let active: Vec<usize> = params
        .tensors()
        .iter()
        .enumerate()
        .filter(|(_, t)| trainable(t.group))
        .map(|(i, _)| i)
        .collect();
    let shapes: Vec<(usize, usize)> = active.iter().map(|&i| params.tensors()[i].value.shape()).collect();
    let mut opt = Optimizer::new(train_config.optimizer, train_config.learning_rate, &shapes);

    let mut history = Vec::with_capacity(train_config.max_epochs);
    for epoch in 1..=train_config.max_epochs {
        let (terms, mut grads) =
            loss_and_gradients(&params, model_config, dataset, trainable).map_err(divergence(epoch, None))?;
        if let Some(term) = terms.first_non_finite() {
            return Err(Error::Divergence {
                epoch,
                view: None,
                term: term.into(),
            });
        }
        history.push(terms);
        if train_config.log_every > 0 && epoch % train_config.log_every == 0 {
            eprintln!("{}", log_line(epoch, &terms));
        }
        let step_grads: Vec<Matrix> = active
            .iter()
            .map(|&i| std::mem::replace(&mut grads[i], Matrix::zeros(0, 0)))
            .collect();
        let tensors = params.tensors_mut();
        let mut refs: Vec<&mut Matrix> = tensors
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| active.binary_search(i).is_ok())
            .map(|(_, t)| &mut t.value)
            .collect();
        opt.step(&mut refs, &step_grads)?;
    }
    Ok(Checkpoint {
        model_config: model_config.clone(),
        train_config: train_config.clone(),
        params,
        epoch: train_config.max_epochs,
        history,
    })
}

/// One run-log line: `epoch,total,selfexpr,recon,reg_C,reg_W`.
pub fn log_line(epoch: usize, t: &LossTerms) -> String {
    format!("{epoch},{},{},{},{},{}", t.total, t.selfexpr, t.recon, t.reg_c, t.reg_w)
}

/// The whole history as a run log, one line per epoch.
pub fn run_log(history: &[LossTerms]) -> String {
    let mut out = String::new();
    for (i, t) in history.iter().enumerate() {
        writeln!(out, "{}", log_line(i + 1, t)).expect("writing to a String");
    }
    out
}
