use super::loss::LossTerms;
use super::params::{Layout, ModelParams, ParamGroup};
use super::{ModelConfig, WeightReg};
use crate::data::MultiViewDataset;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBundle {
    /// View-specific embeddings `H^v`, each `M^h × N`.
    pub h: Vec<Matrix>,
    /// Consistent projections `H_c^v`; absent when the consistent layer is off.
    pub hc_views: Option<Vec<Matrix>>,
    /// Consistent attention weights, `V × N`.
    pub consistent_weights: Option<Matrix>,
    /// Fused consistent representation `H_c`.
    pub hc: Option<Matrix>,
    /// Global attention weights, `(V + 1) × N` with the consistent source in
    /// the last row, or `V × N` without the consistent layer.
    pub global_weights: Matrix,
    pub z: Matrix,
    pub zs: Matrix,
    pub recon: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistentOutput {
    pub views: Vec<Matrix>,
    pub weights: Matrix,
    pub fused: Matrix,
}

#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub inputs: Vec<Var>,
    pub h: Vec<Var>,
    pub hc_views: Option<Vec<Var>>,
    pub consistent_weights: Option<Var>,
    pub hc: Option<Var>,
    pub global_weights: Var,
    pub z: Var,
    pub zs: Var,
    pub recon: Vec<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub selfexpr: Var,
    pub recon: Var,
    pub reg_c: Var,
    pub reg_w: Var,
}

/// The network recorded on a tape. Parameters are leaves in the same order
/// as [`ModelParams::tensors`].
pub struct Graph<'a> {
    pub tape: Tape,
    params: Vec<Var>,
    groups: Vec<ParamGroup>,
    layout: &'a Layout,
    config: &'a ModelConfig,
}

/// Rewrites a non-finite error so it names the stage that produced it.
fn in_stage(stage: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite(op) => Error::NonFinite(format!("{stage} ({op})")),
        other => other,
    }
}

fn check_params(params: &ModelParams, config: &ModelConfig) -> Result<()> {
    config.validate()?;
    let layout = &params.layout;
    let ok = layout.views.len() == config.num_views()
        && layout.views.iter().zip(&config.view_dims).all(|(slots, &m)| {
            slots.encoder.len() == config.encoder_depth
                && params.at(slots.encoder[0]).shape() == (config.hidden_dim, m + 1)
                && slots.shortcut_enc.is_some() == config.use_shortcut
                && slots.consistent_key.is_some() == config.use_consistent_layer
        })
        && layout.consistent_weight.is_some() == config.use_consistent_layer;
    if !ok {
        return Err(Error::Contract(
            "parameters were built for a different model config".into(),
        ));
    }
    Ok(())
}

pub(crate) fn relu_stack(tape: &mut Tape, layers: &[Var], input: Var) -> Result<Var> {
    let mut a = input;
    for &w in layers {
        let aug = tape.append_ones(a)?;
        let pre = tape.matmul(w, aug)?;
        a = tape.relu(pre)?;
    }
    Ok(a)
}

pub(crate) fn weight_penalty(tape: &mut Tape, weights: &[Var], reg: WeightReg) -> Result<Var> {
    let mut terms = Vec::with_capacity(weights.len());
    for &w in weights {
        terms.push(match reg {
            WeightReg::L1 => tape.sum_abs(w)?,
            WeightReg::L2 => tape.sum_squares(w)?,
        });
    }
    if terms.is_empty() {
        return Ok(tape.constant(Matrix::zeros(1, 1)));
    }
    tape.add_all(&terms)
}

/// Plain autoencoder objective of one view:
/// `(1/N)‖X − Dec(Enc(X))‖² + λ₃ Ω(encoder, decoder)`.
pub(crate) fn autoencoder_loss(
    tape: &mut Tape,
    encoder: &[Var],
    decoder: &[Var],
    x: Var,
    lambda3: f64,
    reg: WeightReg,
) -> Result<Var> {
    let n = tape.shape(x).1 as f64;
    let h = relu_stack(tape, encoder, x).map_err(in_stage("encoder"))?;
    let xhat = relu_stack(tape, decoder, h).map_err(in_stage("decoder"))?;
    let diff = tape.sub(x, xhat)?;
    let sq = tape.sum_squares(diff).map_err(in_stage("recon"))?;
    let recon = tape.scale(sq, 1.0 / n)?;
    let weights: Vec<Var> = encoder.iter().chain(decoder).copied().collect();
    let omega = weight_penalty(tape, &weights, reg).map_err(in_stage("reg_W"))?;
    let reg_w = tape.scale(omega, lambda3)?;
    tape.add(recon, reg_w).map_err(in_stage("total"))
}

impl<'a> Graph<'a> {
    /// Records every tensor as a leaf; tensors whose group fails
    /// `trainable` become constants and get no gradient.
    pub fn new(
        params: &'a ModelParams,
        config: &'a ModelConfig,
        trainable: impl Fn(ParamGroup) -> bool,
    ) -> Result<Self> {
        check_params(params, config)?;
        let mut tape = Tape::new();
        let mut vars = Vec::with_capacity(params.tensors().len());
        let mut groups = Vec::with_capacity(params.tensors().len());
        for t in params.tensors() {
            let var = if trainable(t.group) {
                tape.param(t.value.clone())
            } else {
                tape.constant(t.value.clone())
            };
            vars.push(var);
            groups.push(t.group);
        }
        Ok(Graph {
            tape,
            params: vars,
            groups,
            layout: &params.layout,
            config,
        })
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }

    fn p(&self, index: usize) -> Var {
        self.params[index]
    }

    pub fn input(&mut self, x: &Matrix) -> Var {
        self.tape.constant(x.clone())
    }

    fn affine(&mut self, w: Var, a: Var) -> Result<Var> {
        let aug = self.tape.append_ones(a)?;
        self.tape.matmul(w, aug)
    }

    /// `qᵀ tanh(K [h; 1])` as a `1 × N` row.
    fn score(&mut self, query: Var, key: Var, h: Var) -> Result<Var> {
        let keyed = self.affine(key, h)?;
        let act = self.tape.tanh(keyed)?;
        let qt = self.tape.transpose(query)?;
        self.tape.matmul(qt, act)
    }

    fn weighted_sum(&mut self, weights: Var, sources: &[Var]) -> Result<Var> {
        let mut terms = Vec::with_capacity(sources.len());
        for (i, &s) in sources.iter().enumerate() {
            let w = self.tape.row(weights, i)?;
            terms.push(self.tape.scale_columns(w, s)?);
        }
        self.tape.add_all(&terms)
    }

    pub fn encode_view(&mut self, v: usize, x: Var) -> Result<Var> {
        let slots = &self.layout.views[v];
        let expected = self.config.view_dims[v];
        if self.tape.shape(x).0 != expected {
            return Err(Error::Contract(format!(
                "view {v} input has {} rows, the encoder expects {expected}",
                self.tape.shape(x).0
            )));
        }
        let layers: Vec<Var> = slots.encoder.iter().map(|&i| self.p(i)).collect();
        let stack = relu_stack(&mut self.tape, &layers, x)?;
        match slots.shortcut_enc {
            Some(we) => {
                let pass = self.tape.matmul(self.p(we), x)?;
                self.tape.add(pass, stack)
            }
            None => Ok(stack),
        }
    }

    /// Returns the per-view consistent projections, the `V × N` weights and
    /// the fused representation.
    pub fn consistent_attention(&mut self, h: &[Var]) -> Result<(Vec<Var>, Var, Var)> {
        if h.is_empty() {
            return Err(Error::Argument("consistent attention over zero views".into()));
        }
        let (Some(wc), Some(qc)) = (self.layout.consistent_weight, self.layout.consistent_query) else {
            return Err(Error::Contract("the consistent layer is disabled in this model".into()));
        };
        let mut views = Vec::with_capacity(h.len());
        let mut scores = Vec::with_capacity(h.len());
        for (v, &hv) in h.iter().enumerate() {
            let hcv = self.affine(self.p(wc), hv)?;
            let key = self.layout.views[v].consistent_key.expect("key exists with the layer");
            scores.push(self.score(self.p(qc), self.p(key), hcv)?);
            views.push(hcv);
        }
        let stacked = self.tape.stack_rows(&scores)?;
        let weights = self.tape.softmax_columns(stacked)?;
        let fused = self.weighted_sum(weights, &views)?;
        Ok((views, weights, fused))
    }

    /// Returns the global weights and the joint representation `Z`.
    pub fn global_attention(&mut self, h: &[Var], hc: Option<Var>) -> Result<(Var, Var)> {
        if h.is_empty() {
            return Err(Error::Argument("global attention over zero views".into()));
        }
        if self.config.use_consistent_layer != hc.is_some() {
            return Err(Error::Contract(if hc.is_some() {
                "a consistent representation was given but the layer is disabled".into()
            } else {
                "the consistent layer is enabled but no consistent representation was given".into()
            }));
        }
        let q = self.p(self.layout.global_query);
        let mut sources: Vec<Var> = h.to_vec();
        let mut scores = Vec::with_capacity(h.len() + 1);
        for (v, &hv) in h.iter().enumerate() {
            let key = self.p(self.layout.views[v].global_key);
            scores.push(self.score(q, key, hv)?);
        }
        if let Some(hc) = hc {
            let key = self.p(self.layout.consistent_source_key.expect("key exists with the layer"));
            scores.push(self.score(q, key, hc)?);
            sources.push(hc);
        }
        let stacked = self.tape.stack_rows(&scores)?;
        let weights = self.tape.softmax_columns(stacked)?;
        let mut z = self.weighted_sum(weights, &sources)?;
        if self.config.use_shortcut {
            let total = self.tape.add_all(h)?;
            let mean = self.tape.scale(total, 1.0 / h.len() as f64)?;
            z = self.tape.add(z, mean)?;
        }
        Ok((weights, z))
    }

    pub fn self_representation(&mut self, z: Var) -> Result<Var> {
        let c = self.p(self.layout.coefficients);
        let n = self.tape.shape(c).0;
        if self.tape.shape(z).1 != n {
            return Err(Error::Contract(format!(
                "Z has {} columns but C is {n}x{n}",
                self.tape.shape(z).1
            )));
        }
        let masked = self.tape.zero_diagonal(c)?;
        self.tape.matmul(z, masked)
    }

    pub fn decode_view(&mut self, v: usize, zs: Var) -> Result<Var> {
        if self.tape.shape(zs).0 != self.config.hidden_dim {
            return Err(Error::Contract(format!(
                "decoder input has {} rows, expected {}",
                self.tape.shape(zs).0,
                self.config.hidden_dim
            )));
        }
        let slots = &self.layout.views[v];
        let layers: Vec<Var> = slots.decoder.iter().map(|&i| self.p(i)).collect();
        let stack = relu_stack(&mut self.tape, &layers, zs)?;
        match slots.shortcut_dec {
            Some(wd) => {
                let pass = self.tape.matmul(self.p(wd), zs)?;
                self.tape.add(stack, pass)
            }
            None => Ok(stack),
        }
    }

    pub fn forward(&mut self, dataset: &MultiViewDataset) -> Result<ForwardVars> {
        self.config.check_dataset(dataset)?;
        let inputs: Vec<Var> = dataset.views().iter().map(|x| self.input(x)).collect();
        let stage = in_stage("forward pass");
        let mut h = Vec::with_capacity(inputs.len());
        for (v, &x) in inputs.iter().enumerate() {
            h.push(self.encode_view(v, x).map_err(&stage)?);
        }
        let (hc_views, consistent_weights, hc) = if self.config.use_consistent_layer {
            let (views, w, fused) = self.consistent_attention(&h).map_err(&stage)?;
            (Some(views), Some(w), Some(fused))
        } else {
            (None, None, None)
        };
        let (global_weights, z) = self.global_attention(&h, hc).map_err(&stage)?;
        let zs = self.self_representation(z).map_err(&stage)?;
        let mut recon = Vec::with_capacity(inputs.len());
        for v in 0..inputs.len() {
            recon.push(self.decode_view(v, zs).map_err(&stage)?);
        }
        Ok(ForwardVars {
            inputs,
            h,
            hc_views,
            consistent_weights,
            hc,
            global_weights,
            z,
            zs,
            recon,
        })
    }

    /// `‖C‖² + (λ₁/N)‖Z − Z_s‖² + λ₂[(1/(NV)) Σ ‖X^v − X̂^v‖² + λ₃ Ω]`.
    pub fn joint_loss(&mut self, fwd: &ForwardVars) -> Result<LossVars> {
        let cfg = self.config;
        let n = self.tape.shape(fwd.z).1 as f64;
        let views = fwd.inputs.len() as f64;

        let c = self.p(self.layout.coefficients);
        let reg_c = self.tape.sum_squares(c).map_err(in_stage("reg_C"))?;

        let diff = self.tape.sub(fwd.z, fwd.zs)?;
        let sq = self.tape.sum_squares(diff).map_err(in_stage("selfexpr"))?;
        let selfexpr = self.tape.scale(sq, cfg.lambda1 / n).map_err(in_stage("selfexpr"))?;

        let mut errs = Vec::with_capacity(fwd.inputs.len());
        for (&x, &xhat) in fwd.inputs.iter().zip(&fwd.recon) {
            let d = self.tape.sub(x, xhat)?;
            errs.push(self.tape.sum_squares(d).map_err(in_stage("recon"))?);
        }
        let err_sum = self.tape.add_all(&errs).map_err(in_stage("recon"))?;
        let recon = self
            .tape
            .scale(err_sum, cfg.lambda2 / (n * views))
            .map_err(in_stage("recon"))?;

        let regularized: Vec<Var> = self
            .params
            .iter()
            .zip(&self.groups)
            .filter(|(_, g)| g.is_regularized())
            .map(|(&v, _)| v)
            .collect();
        let omega = weight_penalty(&mut self.tape, &regularized, cfg.weight_reg).map_err(in_stage("reg_W"))?;
        let reg_w = self
            .tape
            .scale(omega, cfg.lambda2 * cfg.lambda3)
            .map_err(in_stage("reg_W"))?;

        let total = self
            .tape
            .add_all(&[reg_c, selfexpr, recon, reg_w])
            .map_err(in_stage("total"))?;
        Ok(LossVars {
            total,
            selfexpr,
            recon,
            reg_c,
            reg_w,
        })
    }

    pub fn loss_terms(&self, loss: &LossVars) -> LossTerms {
        LossTerms {
            total: self.tape.scalar(loss.total),
            selfexpr: self.tape.scalar(loss.selfexpr),
            recon: self.tape.scalar(loss.recon),
            reg_c: self.tape.scalar(loss.reg_c),
            reg_w: self.tape.scalar(loss.reg_w),
        }
    }

    pub fn bundle(&self, fwd: &ForwardVars) -> LatentBundle {
        let val = |v: Var| self.tape.value(v).clone();
        LatentBundle {
            h: fwd.h.iter().map(|&v| val(v)).collect(),
            hc_views: fwd.hc_views.as_ref().map(|vs| vs.iter().map(|&v| val(v)).collect()),
            consistent_weights: fwd.consistent_weights.map(val),
            hc: fwd.hc.map(val),
            global_weights: val(fwd.global_weights),
            z: val(fwd.z),
            zs: val(fwd.zs),
            recon: fwd.recon.iter().map(|&v| val(v)).collect(),
        }
    }
}

fn all(_: ParamGroup) -> bool {
    true
}

pub fn encode_view(params: &ModelParams, config: &ModelConfig, v: usize, x: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new(params, config, all)?;
    check_view(config, v)?;
    let xv = g.input(x);
    let h = g.encode_view(v, xv)?;
    Ok(g.tape.value(h).clone())
}

pub fn consistent_attention(params: &ModelParams, config: &ModelConfig, h: &[Matrix]) -> Result<ConsistentOutput> {
    let mut g = Graph::new(params, config, all)?;
    check_hidden(config, h)?;
    if h.len() > config.num_views() {
        return Err(Error::Contract(format!(
            "{} embeddings for {} views",
            h.len(),
            config.num_views()
        )));
    }
    let hv: Vec<Var> = h.iter().map(|m| g.input(m)).collect();
    let (views, weights, fused) = g.consistent_attention(&hv)?;
    Ok(ConsistentOutput {
        views: views.iter().map(|&v| g.tape.value(v).clone()).collect(),
        weights: g.tape.value(weights).clone(),
        fused: g.tape.value(fused).clone(),
    })
}

/// Returns the global attention weights and `Z`.
pub fn global_attention(
    params: &ModelParams,
    config: &ModelConfig,
    h: &[Matrix],
    hc: Option<&Matrix>,
) -> Result<(Matrix, Matrix)> {
    let mut g = Graph::new(params, config, all)?;
    check_hidden(config, h)?;
    if h.len() != config.num_views() {
        return Err(Error::Contract(format!(
            "{} embeddings for {} views",
            h.len(),
            config.num_views()
        )));
    }
    let hv: Vec<Var> = h.iter().map(|m| g.input(m)).collect();
    let hc = hc.map(|m| g.input(m));
    let (w, z) = g.global_attention(&hv, hc)?;
    Ok((g.tape.value(w).clone(), g.tape.value(z).clone()))
}

pub fn self_representation(params: &ModelParams, config: &ModelConfig, z: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new(params, config, all)?;
    let zv = g.input(z);
    let zs = g.self_representation(zv)?;
    Ok(g.tape.value(zs).clone())
}

pub fn decode_view(params: &ModelParams, config: &ModelConfig, v: usize, zs: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new(params, config, all)?;
    check_view(config, v)?;
    let zv = g.input(zs);
    let out = g.decode_view(v, zv)?;
    Ok(g.tape.value(out).clone())
}

pub fn forward(params: &ModelParams, config: &ModelConfig, dataset: &MultiViewDataset) -> Result<LatentBundle> {
    let mut g = Graph::new(params, config, all)?;
    let fwd = g.forward(dataset)?;
    Ok(g.bundle(&fwd))
}

/// Joint loss and its gradient with respect to every tensor, in
/// [`ModelParams::tensors`] order. Tensors outside `trainable` get zeros.
pub fn loss_and_gradients(
    params: &ModelParams,
    config: &ModelConfig,
    dataset: &MultiViewDataset,
    trainable: impl Fn(ParamGroup) -> bool,
) -> Result<(LossTerms, Vec<Matrix>)> {
    let mut g = Graph::new(params, config, trainable)?;
    let fwd = g.forward(dataset)?;
    let loss = g.joint_loss(&fwd)?;
    let mut grads = g.tape.backward(loss.total)?;
    let terms = g.loss_terms(&loss);
    Ok((terms, g.params.iter().map(|&v| grads.take(v)).collect()))
}

/// Plain per-view autoencoder objective using the encoder and decoder
/// stacks of view `v`; shortcuts, attention and `C` play no part.
pub fn pretrain_loss(params: &ModelParams, config: &ModelConfig, v: usize, dataset: &MultiViewDataset) -> Result<f64> {
    check_params(params, config)?;
    check_view(config, v)?;
    config.check_dataset(dataset)?;
    let mut tape = Tape::new();
    let enc: Vec<Var> = params
        .encoder(v)
        .into_iter()
        .map(|m| tape.constant(m.clone()))
        .collect();
    let dec: Vec<Var> = params
        .decoder(v)
        .into_iter()
        .map(|m| tape.constant(m.clone()))
        .collect();
    let x = tape.constant(dataset.view(v).clone());
    let loss = autoencoder_loss(&mut tape, &enc, &dec, x, config.lambda3, config.weight_reg)?;
    Ok(tape.scalar(loss))
}

/// Plain autoencoder objective of one view and its gradients with respect
/// to the encoder and decoder blocks.
pub fn autoencoder_loss_and_gradients(
    encoder: &[Matrix],
    decoder: &[Matrix],
    x: &Matrix,
    lambda3: f64,
    reg: WeightReg,
) -> Result<(f64, Vec<Matrix>, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let enc: Vec<Var> = encoder.iter().map(|m| tape.param(m.clone())).collect();
    let dec: Vec<Var> = decoder.iter().map(|m| tape.param(m.clone())).collect();
    let xv = tape.constant(x.clone());
    let loss = autoencoder_loss(&mut tape, &enc, &dec, xv, lambda3, reg)?;
    let mut grads = tape.backward(loss)?;
    Ok((
        tape.scalar(loss),
        enc.iter().map(|&v| grads.take(v)).collect(),
        dec.iter().map(|&v| grads.take(v)).collect(),
    ))
}

fn check_view(config: &ModelConfig, v: usize) -> Result<()> {
    if v >= config.num_views() {
        return Err(Error::Argument(format!(
            "view {v} of a {}-view model",
            config.num_views()
        )));
    }
    Ok(())
}

fn check_hidden(config: &ModelConfig, h: &[Matrix]) -> Result<()> {
    if let Some(bad) = h.iter().find(|m| m.rows() != config.hidden_dim) {
        return Err(Error::Contract(format!(
            "embedding has {} rows, hidden_dim is {}",
            bad.rows(),
            config.hidden_dim
        )));
    }
    Ok(())
}
