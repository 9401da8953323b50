use serde::{Deserialize, Serialize};

use super::MultiViewDataset;
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    /// Each feature row of each view mapped onto `[0, 1]`; constant rows
    /// become 0.
    #[default]
    Minmax,
    /// Each sample column scaled to unit Euclidean norm; zero columns stay
    /// zero.
    UnitSample,
    None,
}

/// Columns whose norm is already this close to 1 are left untouched, which
/// makes a second pass a no-op.
const UNIT_TOL: f64 = 1e-12;

pub fn normalize(dataset: &MultiViewDataset, mode: NormalizeMode) -> MultiViewDataset {
    let views = dataset
        .views()
        .iter()
        .map(|view| match mode {
            NormalizeMode::Minmax => minmax(view),
            NormalizeMode::UnitSample => unit_sample(view),
            NormalizeMode::None => view.clone(),
        })
        .collect();
    dataset.with_views(views)
}

fn minmax(view: &Matrix) -> Matrix {
    let mut out = view.clone();
    let cols = view.cols();
    for r in 0..view.rows() {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for x in row.iter_mut() {
            *x = if span > 0.0 { (*x - lo) / span } else { 0.0 };
        }
    }
    out
}

fn unit_sample(view: &Matrix) -> Matrix {
    let mut out = view.clone();
    let (rows, cols) = view.shape();
    for c in 0..cols {
        let norm = (0..rows).map(|r| view.get(r, c).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || (norm - 1.0).abs() <= UNIT_TOL {
            continue;
        }
        for r in 0..rows {
            out.set(r, c, view.get(r, c) / norm);
        }
    }
    out
}
