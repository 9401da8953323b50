//! Lloyd's k-means with k-means++ seeding and restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAX_ITER: usize = 300;
const SHIFT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub centroids: Matrix,
}

/// Clusters the rows of `points`. Restart `r` draws from stream `r` of a
/// generator seeded with `seed`, so adding restarts never changes the
/// earlier ones and the best inertia can only improve.
pub fn kmeans(points: &Matrix, k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("k-means with k={k} on {n} points")));
    }
    if restarts == 0 {
        return Err(Error::Argument("k-means needs at least one restart".into()));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let run = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let dim = points.cols();
    let mut centroids = Matrix::zeros(k, dim);
    let first = rng.random_range(0..n);
    centroids.data_mut()[..dim].copy_from_slice(points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.data_mut()[c * dim..(c + 1) * dim].copy_from_slice(points.row(chosen));
        for (i, slot) in nearest.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(points.row(i), points.row(chosen)));
        }
    }
    centroids
}

fn assign(points: &Matrix, centroids: &Matrix, labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best = (0, f64::INFINITY);
        for c in 0..centroids.rows() {
            let d = sq_dist(points.row(i), centroids.row(c));
            if d < best.1 {
                best = (c, d);
            }
        }
        *label = best.0;
        inertia += best.1;
    }
    inertia
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &Matrix, centroids: &Matrix, labels: &mut [usize], k: usize) {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let far = (0..labels.len()).filter(|&i| counts[labels[i]] > 1).max_by(|&i, &j| {
            let di = sq_dist(points.row(i), centroids.row(labels[i]));
            let dj = sq_dist(points.row(j), centroids.row(labels[j]));
            di.total_cmp(&dj).then(j.cmp(&i))
        });
        if let Some(i) = far {
            counts[labels[i]] -= 1;
            labels[i] = c;
            counts[c] = 1;
        }
    }
}

fn means(points: &Matrix, labels: &[usize], previous: &Matrix) -> Matrix {
    let k = previous.rows();
    let dim = points.cols();
    let mut sums = Matrix::zeros(k, dim);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, x) in sums.data_mut()[l * dim..(l + 1) * dim].iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    let mut out = previous.clone();
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let inv = 1.0 / count as f64;
        for d in 0..dim {
            out.set(c, d, sums.get(c, d) * inv);
        }
    }
    out
}

fn lloyd(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let mut centroids = plus_plus_init(points, k, rng);
    let mut labels = vec![0usize; points.rows()];
    assign(points, &centroids, &mut labels);

    for _ in 0..MAX_ITER {
        repair_empty(points, &centroids, &mut labels, k);
        let next = means(points, &labels, &centroids);
        let shift = (0..k)
            .map(|c| sq_dist(next.row(c), centroids.row(c)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        assign(points, &centroids, &mut labels);
        if shift < SHIFT_TOL {
            break;
        }
    }
    repair_empty(points, &centroids, &mut labels, k);
    let centroids = means(points, &labels, &centroids);
    let inertia = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points.row(i), centroids.row(l)))
        .sum();
    KMeansResult {
        labels,
        inertia,
        centroids,
    }
}
