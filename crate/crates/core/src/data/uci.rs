//! Loader for the UCI "Multiple Features" handwritten digit files.
//!
//! Each file has 2000 whitespace-separated rows, 200 per digit in order
//! 0..9. Three feature sets are used as views.

use std::fs;
use std::path::Path;

use super::MultiViewDataset;
use crate::error::{DataError, Result};
use crate::numerics::Matrix;

/// File name and feature count of each view.
pub const UCI_DIGIT_VIEWS: [(&str, usize); 3] = [("mfeat-fac", 216), ("mfeat-fou", 76), ("mfeat-kar", 64)];

const ROWS: usize = 2000;
const PER_CLASS: usize = 200;

pub fn load_uci_digit(dir: impl AsRef<Path>) -> Result<MultiViewDataset> {
    let dir = dir.as_ref();
    let mut views = Vec::with_capacity(UCI_DIGIT_VIEWS.len());
    for (v, &(file, dim)) in UCI_DIGIT_VIEWS.iter().enumerate() {
        let path = dir.join(file);
        let text = fs::read_to_string(&path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                DataError::Missing { path: path.clone() }
            } else {
                DataError::Io {
                    path: path.clone(),
                    source,
                }
            }
        })?;
        let mut data = Vec::with_capacity(ROWS * dim);
        let mut rows = 0;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let before = data.len();
            for cell in line.split_whitespace() {
                let x: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                    path: path.clone(),
                    line: i + 1,
                    cell: cell.to_string(),
                })?;
                data.push(x);
            }
            if data.len() - before != dim {
                return Err(DataError::Dimension {
                    path,
                    view: v,
                    message: format!("line {} has {} values, expected {dim}", i + 1, data.len() - before),
                }
                .into());
            }
            rows += 1;
        }
        if rows != ROWS {
            return Err(DataError::Dimension {
                path,
                view: v,
                message: format!("{rows} rows, expected {ROWS}"),
            }
            .into());
        }
        let samples = Matrix::from_vec(ROWS, dim, data).map_err(|e| DataError::Invalid(e.to_string()))?;
        views.push(samples.transpose());
    }
    let labels = (0..ROWS).map(|i| i / PER_CLASS).collect();
    MultiViewDataset::new("uci-digit", views, Some(labels))
}
