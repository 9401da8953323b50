//! Symmetric eigendecomposition.
//!
//! Small matrices use cyclic Jacobi rotations; larger ones are reduced to
//! tridiagonal form by Householder reflections and finished with implicit
//! QL iterations. Both paths are checked against the same residual bound
//! before anything is returned.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Largest dimension handled by the Jacobi path.
pub const JACOBI_MAX_DIM: usize = 512;

const MAX_SWEEPS: usize = 100;
const QL_MAX_ITER: usize = 60;
const SYMMETRY_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Smallest,
    Largest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenMethod {
    Auto,
    Jacobi,
    TridiagonalQl,
}

/// `k` eigenpairs; column `i` of `vectors` belongs to `values[i]`.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Matrix,
    /// Largest `‖A·v − λ·v‖₂` over the returned pairs.
    pub max_residual: f64,
}

pub fn sym_eig(a: &Matrix, k: usize, which: Which) -> Result<EigenPairs> {
    sym_eig_with(a, k, which, EigenMethod::Auto)
}

pub fn sym_eig_with(a: &Matrix, k: usize, which: Which, method: EigenMethod) -> Result<EigenPairs> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::Shape {
            op: "sym_eig",
            left: a.shape(),
            right: (a.cols(), a.rows()),
        });
    }
    if k == 0 || k > n {
        return Err(Error::Argument(format!("sym_eig needs 1 <= k <= {n}, got {k}")));
    }
    let scale = a.max_abs().max(1.0);
    if !a.is_symmetric(SYMMETRY_TOL * scale) {
        return Err(Error::Argument("sym_eig input is not symmetric".into()));
    }
    let sym = Matrix::from_fn(n, n, |i, j| 0.5 * (a.get(i, j) + a.get(j, i)));

    let use_jacobi = match method {
        EigenMethod::Auto => n <= JACOBI_MAX_DIM,
        EigenMethod::Jacobi => true,
        EigenMethod::TridiagonalQl => false,
    };
    // Both return ascending eigenvalues with eigenvectors as columns of a
    // row-major n×n buffer.
    let (values, vectors) = if use_jacobi {
        jacobi(&sym)?
    } else {
        householder_ql(&sym)?
    };

    let order: Vec<usize> = match which {
        Which::Smallest => (0..k).collect(),
        Which::Largest => (0..k).map(|i| n - 1 - i).collect(),
    };
    let picked_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let picked = Matrix::from_fn(n, k, |r, c| vectors[r * n + order[c]]);

    let max_residual = residual(&sym, &picked_values, &picked);
    let bound = RESIDUAL_TOL * sym.frobenius().max(f64::MIN_POSITIVE);
    if !(max_residual <= bound) {
        return Err(Error::NoConvergence {
            sweeps: if use_jacobi { MAX_SWEEPS } else { QL_MAX_ITER },
            residual: max_residual,
        });
    }
    Ok(EigenPairs {
        values: picked_values,
        vectors: picked,
        max_residual,
    })
}

fn residual(a: &Matrix, values: &[f64], vectors: &Matrix) -> f64 {
    let n = a.rows();
    let mut worst = 0.0f64;
    for (c, &lambda) in values.iter().enumerate() {
        let v = vectors.column(c);
        let mut norm_sq = 0.0;
        for i in 0..n {
            let av: f64 = a.row(i).iter().zip(&v).map(|(x, y)| x * y).sum();
            let d = av - lambda * v[i];
            norm_sq += d * d;
        }
        worst = worst.max(norm_sq.sqrt());
    }
    worst
}

fn sort_ascending(values: Vec<f64>, vectors: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let sorted_values = idx.iter().map(|&i| values[i]).collect();
    let mut sorted_vectors = vec![0.0; n * n];
    for r in 0..n {
        for (c, &src) in idx.iter().enumerate() {
            sorted_vectors[r * n + c] = vectors[r * n + src];
        }
    }
    (sorted_values, sorted_vectors)
}

fn jacobi(sym: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sym.rows();
    let mut a = sym.data().to_vec();
    let mut v = Matrix::identity(n).into_vec();
    let fro = sym.frobenius();
    let tol = (n as f64 * f64::EPSILON).max(1e-14) * fro;

    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += a[i * n + j] * a[i * n + j];
            }
        }
        (2.0 * s).sqrt()
    };

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let new_rp = arp - s * (arq + tau * arp);
                    let new_rq = arq + s * (arp - tau * arq);
                    a[r * n + p] = new_rp;
                    a[p * n + r] = new_rp;
                    a[r * n + q] = new_rq;
                    a[q * n + r] = new_rq;
                }
                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = vrp - s * (vrq + tau * vrp);
                    v[r * n + q] = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }
    if !converged && off_norm(&a) > tol {
        // Accept anyway if the residual contract holds; sym_eig re-checks.
        let values: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
        let vecs = Matrix::from_raw(n, n, v.clone());
        let res = residual(sym, &values, &vecs);
        if !(res <= RESIDUAL_TOL * fro) {
            return Err(Error::NoConvergence {
                sweeps: MAX_SWEEPS,
                residual: res,
            });
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    Ok(sort_ascending(values, v, n))
}

/// Householder tridiagonalisation followed by implicit QL with shifts.
fn householder_ql(sym: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sym.rows();
    if n == 1 {
        return Ok((vec![sym.get(0, 0)], vec![1.0]));
    }
    let mut v = sym.data().to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e, n);
    // QL rotates column pairs of V; work on the transpose so those columns
    // are contiguous rows.
    let mut vt = Matrix::from_raw(n, n, v).transpose().into_vec();
    tridiagonal_ql(&mut vt, &mut d, &mut e, n)?;
    let v = Matrix::from_raw(n, n, vt).transpose().into_vec();
    Ok(sort_ascending(d, v, n))
}

fn tridiagonalize(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    let at = |r: usize, c: usize| r * n + c;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in j + 1..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// `vt` holds the eigenvector matrix transposed: row `i` is vector `i`.
fn tridiagonal_ql(vt: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITER {
                    return Err(Error::NoConvergence {
                        sweeps: QL_MAX_ITER,
                        residual: e[l].abs(),
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = vt.split_at_mut((i + 1) * n);
                    let row_i = &mut lo[i * n..];
                    let row_next = &mut hi[..n];
                    for (a, b) in row_i.iter_mut().zip(row_next.iter_mut()) {
                        let hk = *b;
                        *b = s * *a + c * hk;
                        *a = c * *a - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        Matrix::from_fn(n, n, |i, j| m.get(i, j) + m.get(j, i))
    }

    fn orthonormality_error(v: &Matrix) -> f64 {
        let g = v.matmul_tn(v).unwrap();
        let mut worst = 0.0f64;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }

    #[test]
    fn diagonal_matrix() {
        let a = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let e = sym_eig(&a, 2, Which::Smallest).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14 && (e.values[1] - 3.0).abs() < 1e-14);
        assert!((e.vectors.get(1, 0).abs() - 1.0).abs() < 1e-14);
        assert!((e.vectors.get(0, 1).abs() - 1.0).abs() < 1e-14);
        let top = sym_eig(&a, 1, Which::Largest).unwrap();
        assert!((top.values[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_identity() {
        let e = sym_eig(&Matrix::identity(3), 1, Which::Smallest).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        let norm: f64 = e.vectors.column(0).iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_residual_and_orthonormality_both_methods() {
        for method in [EigenMethod::Jacobi, EigenMethod::TridiagonalQl] {
            for seed in 0..5 {
                let a = random_symmetric(10, seed);
                let e = sym_eig_with(&a, 10, Which::Smallest, method).unwrap();
                assert!(e.max_residual <= 1e-8 * a.frobenius());
                assert!(orthonormality_error(&e.vectors) <= 1e-8);
                assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    #[test]
    fn methods_agree_on_spectrum() {
        let a = random_symmetric(40, 9);
        let j = sym_eig_with(&a, 40, Which::Largest, EigenMethod::Jacobi).unwrap();
        let q = sym_eig_with(&a, 40, Which::Largest, EigenMethod::TridiagonalQl).unwrap();
        for (x, y) in j.values.iter().zip(&q.values) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
        assert!(j.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn large_input_uses_ql_path() {
        let a = random_symmetric(JACOBI_MAX_DIM + 20, 3);
        let e = sym_eig(&a, 4, Which::Smallest).unwrap();
        assert!(e.max_residual <= 1e-8 * a.frobenius());
        assert!(orthonormality_error(&e.vectors) <= 1e-8);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            sym_eig(&Matrix::zeros(2, 3), 1, Which::Smallest),
            Err(Error::Shape { .. })
        ));
        assert!(sym_eig(&Matrix::identity(2), 3, Which::Smallest).is_err());
        let asym = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(sym_eig(&asym, 1, Which::Smallest).is_err());
    }
}
