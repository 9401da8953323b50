use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MultiViewDataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Union-of-subspaces generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub clusters: usize,
    pub views: usize,
    pub ambient_dims: Vec<usize>,
    pub subspace_dim: usize,
    pub samples_per_cluster: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Argument(msg));
        if self.clusters == 0 || self.views == 0 {
            return fail("synth needs at least one cluster and one view".into());
        }
        if self.ambient_dims.len() != self.views {
            return fail(format!(
                "ambient_dims has {} entries for {} views",
                self.ambient_dims.len(),
                self.views
            ));
        }
        if self.subspace_dim == 0 {
            return fail("subspace_dim must be at least 1".into());
        }
        if let Some(&m) = self.ambient_dims.iter().find(|&&m| m <= self.subspace_dim) {
            return fail(format!(
                "subspace_dim {} must be below every ambient dim (found {m})",
                self.subspace_dim
            ));
        }
        if self.samples_per_cluster < self.subspace_dim {
            return fail(format!(
                "samples_per_cluster {} is below subspace_dim {}",
                self.samples_per_cluster, self.subspace_dim
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return fail(format!("noise_std {} must be finite and nonnegative", self.noise_std));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.clusters * self.samples_per_cluster
    }
}

/// Orthonormal `m × d` basis from Gram-Schmidt on a Gaussian draw.
fn random_basis(m: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Samples are laid out cluster by cluster. Each object draws one
/// coefficient vector that every view maps through its own basis, so
/// column `n` is the same object in all views.
pub fn synth_subspaces(spec: &SynthSpec) -> Result<MultiViewDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_samples();
    let d = spec.subspace_dim;

    let bases: Vec<Vec<Vec<Vec<f64>>>> = spec
        .ambient_dims
        .iter()
        .map(|&m| (0..spec.clusters).map(|_| random_basis(m, d, &mut rng)).collect())
        .collect();

    let coeffs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();

    let mut views = Vec::with_capacity(spec.views);
    for (v, &m) in spec.ambient_dims.iter().enumerate() {
        let mut view = Matrix::zeros(m, n);
        for (col, y) in coeffs.iter().enumerate() {
            let basis = &bases[v][col / spec.samples_per_cluster];
            for r in 0..m {
                let clean: f64 = basis.iter().zip(y).map(|(b, yi)| b[r] * yi).sum();
                view.set(r, col, clean);
            }
        }
        if spec.noise_std > 0.0 {
            for x in view.data_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *x += spec.noise_std * e;
            }
        }
        views.push(view);
    }

    let labels = (0..n).map(|i| i / spec.samples_per_cluster).collect();
    MultiViewDataset::new("synthetic", views, Some(labels))
}
