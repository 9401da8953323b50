//! Clustering evaluation: best label matching, classification scores after
//! matching, NMI and ARI.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Optimal one-to-one assignment between predicted rows and true columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `assignment[p]` is the true column matched to predicted row `p`, or
    /// `None` when `p` was paired with padding.
    pub assignment: Vec<Option<usize>>,
    /// Sum of the matched confusion entries.
    pub matched: f64,
}

/// Maximum-weight assignment on `confusion[pred][true]` (Kuhn-Munkres).
/// Rectangular input is padded with zero rows or columns.
pub fn hungarian_match(confusion: &Matrix) -> Result<Matching> {
    if let Some(&x) = confusion.data().iter().find(|&&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::Argument(format!(
            "confusion entries must be nonnegative, found {x}"
        )));
    }
    let (rows, cols) = confusion.shape();
    let n = rows.max(cols);
    let at = |i: usize, j: usize| if i < rows && j < cols { confusion.get(i, j) } else { 0.0 };
    let big = confusion.data().iter().copied().fold(0.0, f64::max);
    let cost = |i: usize, j: usize| big - at(i, j);

    // Shortest augmenting paths with potentials; indices are 1-based and
    // index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![None; rows];
    let mut matched = 0.0;
    for j in 1..=n {
        let (p, t) = (owner[j] - 1, j - 1);
        if p < rows && t < cols {
            assignment[p] = Some(t);
            matched += confusion.get(p, t);
        }
    }
    Ok(Matching { assignment, matched })
}

/// Labels relabeled to dense ids `0..k` in increasing order of value.
fn dense(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let map: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(d, &l)| (l, d)).collect();
    (labels.iter().map(|l| map[l]).collect(), ids)
}

struct Contingency {
    /// `counts[p][t]` over dense predicted and true ids.
    counts: Vec<Vec<usize>>,
    true_ids: Vec<usize>,
    pred_ids: Vec<usize>,
    n: usize,
}

impl Contingency {
    fn new(y_true: &[usize], y_pred: &[usize]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Argument(format!(
                "label lengths differ: {} true vs {} predicted",
                y_true.len(),
                y_pred.len()
            )));
        }
        if y_true.is_empty() {
            return Err(Error::Argument("no labels to compare".into()));
        }
        let (t, true_ids) = dense(y_true);
        let (p, pred_ids) = dense(y_pred);
        let mut counts = vec![vec![0; true_ids.len()]; pred_ids.len()];
        for (&a, &b) in p.iter().zip(&t) {
            counts[a][b] += 1;
        }
        Ok(Contingency {
            counts,
            true_ids,
            pred_ids,
            n: y_true.len(),
        })
    }

    fn matrix(&self) -> Matrix {
        Matrix::from_fn(self.pred_ids.len(), self.true_ids.len(), |i, j| {
            self.counts[i][j] as f64
        })
    }

    fn pred_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn true_sums(&self) -> Vec<usize> {
        (0..self.true_ids.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationMetrics {
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Matched `(predicted id, true id)` pairs in original label values.
    pub mapping: Vec<(usize, usize)>,
}

/// Accuracy after the best one-to-one relabeling of `y_pred`, plus
/// precision, recall and F macro-averaged over the true classes.
pub fn classification_metrics(y_true: &[usize], y_pred: &[usize]) -> Result<ClassificationMetrics> {
    let table = Contingency::new(y_true, y_pred)?;
    let matching = hungarian_match(&table.matrix())?;
    let true_sums = table.true_sums();
    let pred_sums = table.pred_sums();

    let k = table.true_ids.len();
    let (mut precision, mut recall, mut f_score) = (0.0, 0.0, 0.0);
    let mut mapping = Vec::new();
    let mut matched_to = vec![None; k];
    for (p, t) in matching.assignment.iter().enumerate() {
        if let Some(t) = *t {
            matched_to[t] = Some(p);
            mapping.push((table.pred_ids[p], table.true_ids[t]));
        }
    }
    for t in 0..k {
        let (tp, predicted) = match matched_to[t] {
            Some(p) => (table.counts[p][t] as f64, pred_sums[p] as f64),
            None => (0.0, 0.0),
        };
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = tp / true_sums[t] as f64;
        precision += p;
        recall += r;
        f_score += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let k = k as f64;
    Ok(ClassificationMetrics {
        acc: matching.matched / table.n as f64,
        precision: precision / k,
        recall: recall / k,
        f_score: f_score / k,
        mapping,
    })
}

fn entropy(sums: &[usize], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies
/// (natural log). Two single-cluster partitions score 1.
pub fn nmi(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let table = Contingency::new(y_true, y_pred)?;
    let n = table.n as f64;
    let (ps, ts) = (table.pred_sums(), table.true_sums());
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (ps[i] as f64 * ts[j] as f64)).ln();
            }
        }
    }
    let denom = (entropy(&ps, n) + entropy(&ts, n)) / 2.0;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((mi.max(0.0) / denom).min(1.0))
}

fn pairs(c: usize) -> f64 {
    let c = c as f64;
    c * (c - 1.0) / 2.0
}

/// Adjusted Rand index; `0/0` cases (both partitions trivial) score 1.
pub fn ari(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.len() < 2 {
        return Err(Error::Argument("ARI needs at least two samples".into()));
    }
    let table = Contingency::new(y_true, y_pred)?;
    let index: f64 = table.counts.iter().flatten().map(|&c| pairs(c)).sum();
    let a: f64 = table.pred_sums().into_iter().map(pairs).sum();
    let b: f64 = table.true_sums().into_iter().map(pairs).sum();
    let expected = a * b / pairs(table.n);
    let max = (a + b) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub n_samples: usize,
    pub k_true: usize,
    pub k_pred: usize,
    /// Matched `[predicted, true]` label pairs.
    pub mapping: Vec<(usize, usize)>,
}

impl MetricsReport {
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for (key, value) in [
            ("acc", self.acc),
            ("nmi", self.nmi),
            ("ari", self.ari),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f_score", self.f_score),
        ] {
            writeln!(out, "{key} = {value:.6}").expect("writing to a String");
        }
        let pairs: Vec<String> = self.mapping.iter().map(|(p, t)| format!("[{p}, {t}]")).collect();
        write!(
            out,
            "n_samples = {}\nk_true = {}\nk_pred = {}\nmapping = [{}]\n",
            self.n_samples,
            self.k_true,
            self.k_pred,
            pairs.join(", ")
        )
        .expect("writing to a String");
        out
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Argument(format!("metrics report: {e}")))
    }
}

/// All six scores for one labeling.
pub fn evaluate(y_true: &[usize], y_pred: &[usize]) -> Result<MetricsReport> {
    let cls = classification_metrics(y_true, y_pred)?;
    let table = Contingency::new(y_true, y_pred)?;
    let report = MetricsReport {
        acc: cls.acc,
        nmi: nmi(y_true, y_pred)?,
        ari: if y_true.len() >= 2 { ari(y_true, y_pred)? } else { 1.0 },
        precision: cls.precision,
        recall: cls.recall,
        f_score: cls.f_score,
        n_samples: table.n,
        k_true: table.true_ids.len(),
        k_pred: table.pred_ids.len(),
        mapping: cls.mapping,
    };
    Ok(report)
}
