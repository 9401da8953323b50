use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Which part of the network a tensor belongs to. Used for freezing and to
/// decide what the weight penalty covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Decoder,
    Shortcut,
    Consistent,
    Attention,
    Coefficient,
}

impl ParamGroup {
    pub fn is_regularized(self) -> bool {
        matches!(self, ParamGroup::Encoder | ParamGroup::Decoder | ParamGroup::Consistent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub group: ParamGroup,
    /// Whether the last column is a bias acting on an appended row of ones.
    pub has_bias: bool,
    pub value: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ViewSlots {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub shortcut_enc: Option<usize>,
    pub shortcut_dec: Option<usize>,
    pub consistent_key: Option<usize>,
    pub global_key: usize,
}

/// Positions of each named tensor in [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub views: Vec<ViewSlots>,
    pub consistent_weight: Option<usize>,
    pub consistent_query: Option<usize>,
    pub consistent_source_key: Option<usize>,
    pub global_query: usize,
    pub coefficients: usize,
}

/// Every trainable tensor of the network, in a fixed order.
///
/// Affine blocks store weight and bias together as `out × (in + 1)` and act
/// on `[x; 1]`. Queries are `M^h × 1` columns. `C` is `N × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: Vec<Tensor>,
    pub(crate) layout: Layout,
}

struct Builder {
    tensors: Vec<Tensor>,
}

impl Builder {
    fn push(&mut self, name: String, group: ParamGroup, rows: usize, cols: usize, has_bias: bool) -> usize {
        self.tensors.push(Tensor {
            name,
            group,
            has_bias,
            value: Matrix::zeros(rows, cols),
        });
        self.tensors.len() - 1
    }
}

impl ModelParams {
    /// All-zero parameters with the shapes implied by `config` and `n`.
    pub fn zeros(config: &ModelConfig, n_samples: usize) -> Result<Self> {
        config.validate()?;
        if n_samples == 0 {
            return Err(Error::Argument("the model needs at least one sample".into()));
        }
        let h = config.hidden_dim;
        let depth = config.encoder_depth;
        let mut b = Builder { tensors: Vec::new() };
        let mut views = Vec::with_capacity(config.num_views());
        for (v, &m) in config.view_dims.iter().enumerate() {
            let encoder = (0..depth)
                .map(|l| {
                    let input = if l == 0 { m } else { h };
                    b.push(format!("view{v}.encoder.{l}"), ParamGroup::Encoder, h, input + 1, true)
                })
                .collect();
            let decoder = (0..depth)
                .map(|l| {
                    let output = if l + 1 == depth { m } else { h };
                    b.push(format!("view{v}.decoder.{l}"), ParamGroup::Decoder, output, h + 1, true)
                })
                .collect();
            let (shortcut_enc, shortcut_dec) = if config.use_shortcut {
                (
                    Some(b.push(format!("view{v}.shortcut_enc"), ParamGroup::Shortcut, h, m, false)),
                    Some(b.push(format!("view{v}.shortcut_dec"), ParamGroup::Shortcut, m, h, false)),
                )
            } else {
                (None, None)
            };
            let consistent_key = config
                .use_consistent_layer
                .then(|| b.push(format!("view{v}.consistent_key"), ParamGroup::Attention, h, h + 1, true));
            let global_key = b.push(format!("view{v}.global_key"), ParamGroup::Attention, h, h + 1, true);
            views.push(ViewSlots {
                encoder,
                decoder,
                shortcut_enc,
                shortcut_dec,
                consistent_key,
                global_key,
            });
        }
        let (consistent_weight, consistent_query, consistent_source_key) = if config.use_consistent_layer {
            (
                Some(b.push("consistent_weight".into(), ParamGroup::Consistent, h, h + 1, true)),
                Some(b.push("consistent_query".into(), ParamGroup::Attention, h, 1, false)),
                Some(b.push("consistent_source_key".into(), ParamGroup::Attention, h, h + 1, true)),
            )
        } else {
            (None, None, None)
        };
        let global_query = b.push("global_query".into(), ParamGroup::Attention, h, 1, false);
        let coefficients = b.push(
            "coefficients".into(),
            ParamGroup::Coefficient,
            n_samples,
            n_samples,
            false,
        );
        Ok(ModelParams {
            tensors: b.tensors,
            layout: Layout {
                views,
                consistent_weight,
                consistent_query,
                consistent_source_key,
                global_query,
                coefficients,
            },
        })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.iter_mut().find(|t| t.name == name).map(|t| &mut t.value)
    }

    pub fn n_samples(&self) -> usize {
        self.tensors[self.layout.coefficients].value.rows()
    }

    pub fn num_views(&self) -> usize {
        self.layout.views.len()
    }

    pub(crate) fn at(&self, index: usize) -> &Matrix {
        &self.tensors[index].value
    }

    pub fn coefficients(&self) -> &Matrix {
        self.at(self.layout.coefficients)
    }

    pub fn coefficients_mut(&mut self) -> &mut Matrix {
        &mut self.tensors[self.layout.coefficients].value
    }

    pub fn encoder(&self, v: usize) -> Vec<&Matrix> {
        self.layout.views[v].encoder.iter().map(|&i| self.at(i)).collect()
    }

    pub fn decoder(&self, v: usize) -> Vec<&Matrix> {
        self.layout.views[v].decoder.iter().map(|&i| self.at(i)).collect()
    }

    /// Replaces `tensor` after checking the new value has the same shape.
    pub fn set(&mut self, name: &str, value: Matrix) -> Result<()> {
        let slot = self
            .tensors
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Argument(format!("no parameter named {name}")))?;
        if slot.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_param",
                left: slot.value.shape(),
                right: value.shape(),
            });
        }
        slot.value = value;
        Ok(())
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(|t| t.value.shape()).collect()
    }
}

/// Stream id for a tensor name, so each tensor's initial draw depends only
/// on the seed and its name and not on which other tensors exist.
fn stream_for(name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Lecun normal initialisation: weights `N(0, 1/fan_in)` where `fan_in`
/// counts the bias column, biases zero, `C` zero.
pub fn init_params(config: &ModelConfig, n_samples: usize) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config, n_samples)?;
    for t in params.tensors_mut() {
        if t.group == ParamGroup::Coefficient {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream_for(&t.name));
        let (rows, cols) = t.value.shape();
        // A query is used as qᵀ, so its fan-in is its length.
        let fan_in = if cols == 1 && !t.has_bias { rows } else { cols };
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
        let weight_cols = if t.has_bias { cols - 1 } else { cols };
        for r in 0..rows {
            for c in 0..weight_cols {
                t.value.set(r, c, normal.sample(&mut rng));
            }
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WeightReg;

    fn config(views: Vec<usize>, hidden: usize, depth: usize) -> ModelConfig {
        ModelConfig {
            view_dims: views,
            hidden_dim: hidden,
            encoder_depth: depth,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.1,
            weight_reg: WeightReg::L2,
            use_shortcut: true,
            use_consistent_layer: true,
            seed: 3,
        }
    }

    #[test]
    fn shapes_follow_config() {
        let p = ModelParams::zeros(&config(vec![5, 7], 4, 2), 8).unwrap();
        assert_eq!(p.get("view0.encoder.0").unwrap().shape(), (4, 6));
        assert_eq!(p.get("view1.encoder.1").unwrap().shape(), (4, 5));
        assert_eq!(p.get("view1.decoder.0").unwrap().shape(), (4, 5));
        assert_eq!(p.get("view1.decoder.1").unwrap().shape(), (7, 5));
        assert_eq!(p.get("view1.shortcut_enc").unwrap().shape(), (4, 7));
        assert_eq!(p.get("view1.shortcut_dec").unwrap().shape(), (7, 4));
        assert_eq!(p.get("consistent_weight").unwrap().shape(), (4, 5));
        assert_eq!(p.get("global_query").unwrap().shape(), (4, 1));
        assert_eq!(p.coefficients().shape(), (8, 8));
    }

    #[test]
    fn ablation_drops_tensors() {
        let mut cfg = config(vec![5, 7], 4, 1);
        cfg.use_shortcut = false;
        cfg.use_consistent_layer = false;
        let p = ModelParams::zeros(&cfg, 3).unwrap();
        assert!(p.get("view0.shortcut_enc").is_none());
        assert!(p.get("consistent_weight").is_none());
        assert!(p.get("view0.consistent_key").is_none());
        assert_eq!(p.get("view0.decoder.0").unwrap().shape(), (5, 5));
    }

    #[test]
    fn lecun_std() {
        let cfg = config(vec![128], 128, 2);
        for seed in 0..5 {
            let p = init_params(&ModelConfig { seed, ..cfg.clone() }, 4).unwrap();
            let w = p.get("view0.encoder.1").unwrap();
            assert_eq!(w.shape(), (128, 129));
            let weights: Vec<f64> = (0..128).flat_map(|r| w.row(r)[..128].to_vec()).collect();
            let mean = weights.iter().sum::<f64>() / weights.len() as f64;
            let var = weights.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / weights.len() as f64;
            let target = 1.0 / 129f64.sqrt();
            assert!(
                (var.sqrt() - target).abs() < 0.1 * target,
                "seed {seed}: {}",
                var.sqrt()
            );
        }
    }

    #[test]
    fn biases_and_coefficients_start_at_zero() {
        let p = init_params(&config(vec![5, 7], 4, 2), 6).unwrap();
        for t in p.tensors() {
            if t.has_bias {
                let last = t.value.cols() - 1;
                assert!(t.value.column(last).iter().all(|&x| x == 0.0), "{}", t.name);
            }
        }
        assert!(p.coefficients().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn init_independent_of_ablation_flags() {
        let full = init_params(&config(vec![5, 7], 4, 2), 6).unwrap();
        let mut cfg = config(vec![5, 7], 4, 2);
        cfg.use_shortcut = false;
        let plain = init_params(&cfg, 6).unwrap();
        assert_eq!(full.get("view1.encoder.1"), plain.get("view1.encoder.1"));
        assert_ne!(
            init_params(&ModelConfig { seed: 4, ..cfg.clone() }, 6)
                .unwrap()
                .get("view1.encoder.1"),
            plain.get("view1.encoder.1")
        );
    }
}
