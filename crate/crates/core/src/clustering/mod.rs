//! From a learned coefficient matrix to cluster labels: affinity
//! construction and normalized spectral clustering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{kmeans, sym_eig, EigenPairs, Matrix, Which};

/// Degree given to isolated samples so `D^{-1/2}` stays finite.
pub const ZERO_DEGREE: f64 = 1e-12;
pub const KMEANS_RESTARTS: usize = 20;
const THRESHOLD_TOL: f64 = 1e-12;

/// Symmetric, entrywise nonnegative `N×N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix(Matrix);

impl AffinityMatrix {
    /// Checks exact symmetry and nonnegativity.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::Shape {
                op: "affinity",
                left: m.shape(),
                right: (m.cols(), m.rows()),
            });
        }
        if !m.is_symmetric(0.0) {
            return Err(Error::Argument("affinity matrix is not symmetric".into()));
        }
        if m.data().iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Argument(
                "affinity entries must be finite and nonnegative".into(),
            ));
        }
        Ok(AffinityMatrix(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        AffinityMatrix::new(self.0.scale(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityMode {
    #[default]
    Plain,
    Enhanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffinityOptions {
    pub mode: AffinityMode,
    /// Share of each column's absolute mass kept by the enhanced mode.
    pub energy_fraction: f64,
    /// Entrywise exponent applied by the enhanced mode.
    pub power: f64,
}

impl Default for AffinityOptions {
    fn default() -> Self {
        AffinityOptions {
            mode: AffinityMode::Plain,
            energy_fraction: 1.0,
            power: 1.0,
        }
    }
}

impl AffinityOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.energy_fraction > 0.0 && self.energy_fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "energy_fraction = {} must lie in (0, 1]",
                self.energy_fraction
            )));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::Argument(format!("power = {} must be positive", self.power)));
        }
        Ok(())
    }
}

fn check_square(c: &Matrix) -> Result<()> {
    if c.rows() != c.cols() {
        return Err(Error::Shape {
            op: "affinity",
            left: c.shape(),
            right: (c.cols(), c.rows()),
        });
    }
    Ok(())
}

fn symmetrize(c: &Matrix) -> Matrix {
    let n = c.rows();
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (c.get(i, j).abs() + c.get(j, i).abs()) / 2.0
        }
    })
}

/// `(|C| + |Cᵀ|)/2` with the diagonal set to zero.
pub fn affinity_plain(c: &Matrix) -> Result<AffinityMatrix> {
    check_square(c)?;
    if !c.is_finite() {
        return Err(Error::NonFinite("affinity input".into()));
    }
    AffinityMatrix::new(symmetrize(c))
}

/// Keeps, per column, the fewest largest-magnitude off-diagonal entries
/// whose absolute sum reaches `energy_fraction` of the column's, then
/// symmetrizes like [`affinity_plain`] and raises entries to `power`.
pub fn affinity_enhanced(c: &Matrix, opts: &AffinityOptions) -> Result<AffinityMatrix> {
    check_square(c)?;
    opts.validate()?;
    if !c.is_finite() {
        return Err(Error::NonFinite("affinity input".into()));
    }
    let n = c.rows();
    let mut kept = Matrix::zeros(n, n);
    for j in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&i| i != j).collect();
        if opts.energy_fraction >= 1.0 {
            for i in order {
                kept.set(i, j, c.get(i, j));
            }
            continue;
        }
        let total: f64 = order.iter().map(|&i| c.get(i, j).abs()).sum();
        order.sort_by(|&a, &b| c.get(b, j).abs().total_cmp(&c.get(a, j).abs()));
        let target = opts.energy_fraction * total * (1.0 - THRESHOLD_TOL);
        let mut acc = 0.0;
        for i in order {
            if acc >= target {
                break;
            }
            acc += c.get(i, j).abs();
            kept.set(i, j, c.get(i, j));
        }
    }
    let mut a = symmetrize(&kept);
    if opts.power != 1.0 {
        a = a.map(|x| x.powf(opts.power));
    }
    AffinityMatrix::new(a)
}

/// Dispatches on `opts.mode`.
pub fn affinity(c: &Matrix, opts: &AffinityOptions) -> Result<AffinityMatrix> {
    match opts.mode {
        AffinityMode::Plain => affinity_plain(c),
        AffinityMode::Enhanced => affinity_enhanced(c, opts),
    }
}

/// `I − D^{-1/2} A D^{-1/2}`, isolated rows taking degree [`ZERO_DEGREE`].
pub fn normalized_laplacian(a: &AffinityMatrix) -> Matrix {
    let m = a.matrix();
    let n = m.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = m.row(i).iter().sum();
            1.0 / if d > 0.0 { d } else { ZERO_DEGREE }.sqrt()
        })
        .collect();
    Matrix::from_fn(n, n, |i, j| {
        let off = m.get(i, j) * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    })
}

/// Bottom `k` eigenvectors of the normalized Laplacian as rows-as-samples,
/// each row scaled to unit length (zero rows stay zero).
pub fn spectral_embedding(a: &AffinityMatrix, k: usize) -> Result<(Matrix, EigenPairs)> {
    let n = a.n();
    if k < 2 {
        return Err(Error::Argument(format!("spectral clustering needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Argument(format!("k = {k} exceeds the {n} samples")));
    }
    if a.matrix().data().iter().all(|&x| x == 0.0) {
        return Err(Error::Argument("affinity matrix is all zeros".into()));
    }
    let pairs = sym_eig(&normalized_laplacian(a), k, Which::Smallest)?;
    let mut embedding = pairs.vectors.clone();
    for i in 0..n {
        let norm = embedding.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for j in 0..k {
                embedding.set(i, j, embedding.get(i, j) / norm);
            }
        }
    }
    Ok((embedding, pairs))
}

/// Normalized spectral clustering into `k` groups, deterministic in `seed`.
pub fn spectral_cluster(a: &AffinityMatrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    let (embedding, _) = spectral_embedding(a, k)?;
    Ok(kmeans(&embedding, k, KMEANS_RESTARTS, seed)?.labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn plain_folds_signs() {
        let a = affinity_plain(&m(&[&[0.0, 1.0], &[-1.0, 0.0]])).unwrap();
        assert_eq!(a.matrix(), &m(&[&[0.0, 1.0], &[1.0, 0.0]]));
        assert_eq!(
            affinity_plain(&Matrix::zeros(3, 3)).unwrap().matrix(),
            &Matrix::zeros(3, 3)
        );
        assert!(matches!(affinity_plain(&Matrix::zeros(2, 3)), Err(Error::Shape { .. })));
    }

    #[test]
    fn threshold_keeps_dominant_entry() {
        let c = m(&[&[0.0, 0.0], &[0.9, 0.0], &[0.09, 0.0], &[0.01, 0.0]]);
        let c = Matrix::from_fn(4, 4, |i, j| if j == 0 { c.get(i, 0) } else { 0.0 });
        let opts = AffinityOptions {
            mode: AffinityMode::Enhanced,
            energy_fraction: 0.9,
            power: 1.0,
        };
        let a = affinity_enhanced(&c, &opts).unwrap();
        assert_eq!(a.matrix().get(1, 0), 0.45);
        assert_eq!(a.matrix().get(2, 0), 0.0);
        assert_eq!(a.matrix().get(3, 0), 0.0);
    }

    #[test]
    fn options_are_validated() {
        for (rho, gamma) in [(0.0, 1.0), (1.5, 1.0), (0.5, 0.0), (0.5, f64::NAN)] {
            let opts = AffinityOptions {
                mode: AffinityMode::Enhanced,
                energy_fraction: rho,
                power: gamma,
            };
            assert!(affinity_enhanced(&Matrix::zeros(2, 2), &opts).is_err());
        }
    }

    #[test]
    fn isolated_sample_gets_epsilon_degree() {
        let a = AffinityMatrix::new(m(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0]])).unwrap();
        let l = normalized_laplacian(&a);
        assert!(l.is_finite());
        assert_eq!(l.get(2, 2), 1.0);
        assert_eq!(l.get(0, 1), -1.0);
    }

    #[test]
    fn bad_k_is_rejected() {
        let a = AffinityMatrix::new(Matrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 })).unwrap();
        assert!(spectral_cluster(&a, 1, 0).is_err());
        assert!(spectral_cluster(&a, 4, 0).is_err());
        assert!(spectral_cluster(&AffinityMatrix::new(Matrix::zeros(3, 3)).unwrap(), 2, 0).is_err());
    }

    fn random_c(n: usize, seed: u64) -> Matrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    proptest! {
        #[test]
        fn enhanced_output_is_a_valid_affinity(n in 2usize..9, seed in any::<u64>(), rho in 0.01f64..=1.0, gamma in 0.1f64..3.0) {
            let c = random_c(n, seed);
            let opts = AffinityOptions { mode: AffinityMode::Enhanced, energy_fraction: rho, power: gamma };
            let a = affinity_enhanced(&c, &opts).unwrap().into_inner();
            prop_assert!(a.is_symmetric(0.0));
            prop_assert!(a.data().iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn enhanced_reduces_to_plain(n in 1usize..9, seed in any::<u64>()) {
            let c = random_c(n, seed);
            let opts = AffinityOptions { mode: AffinityMode::Enhanced, ..AffinityOptions::default() };
            prop_assert_eq!(affinity_enhanced(&c, &opts).unwrap(), affinity_plain(&c).unwrap());
            prop_assert_eq!(affinity_plain(&c.transpose()).unwrap(), affinity_plain(&c).unwrap());
        }
    }
}
