//! Multi-view datasets: validation, on-disk format, normalisation and a
//! union-of-subspaces generator.
//!
//! In memory each view is `M^v × N` with one column per sample. On disk the
//! convention is the usual one, one row per sample, and the loader
//! transposes.

mod io;
mod normalize;
mod synth;
mod uci;

pub use io::{load_dataset, read_labels, save_dataset, write_labels, DatasetMeta, META_FILE};
pub use normalize::{normalize, NormalizeMode};
pub use synth::{synth_subspaces, SynthSpec};
pub use uci::{load_uci_digit, UCI_DIGIT_VIEWS};

use crate::error::{DataError, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    name: String,
    views: Vec<Matrix>,
    labels: Option<Vec<usize>>,
}

impl MultiViewDataset {
    /// Validates that every view has at least one feature row, all views share
    /// the sample count, and labels (if any) cover `0..C` without gaps.
    pub fn new(name: impl Into<String>, views: Vec<Matrix>, labels: Option<Vec<usize>>) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| DataError::Invalid("a dataset needs at least one view".into()))?;
        let n = first.cols();
        if n == 0 {
            return Err(DataError::Invalid("a dataset needs at least one sample".into()).into());
        }
        for (v, view) in views.iter().enumerate() {
            if view.rows() == 0 {
                return Err(DataError::Invalid(format!("view {v} has no features")).into());
            }
            if view.cols() != n {
                return Err(DataError::Invalid(format!("view {v} has {} samples, view 0 has {n}", view.cols())).into());
            }
            if !view.is_finite() {
                return Err(DataError::Invalid(format!("view {v} has non-finite entries")).into());
            }
        }
        if let Some(labels) = &labels {
            check_labels(labels, n)?;
        }
        Ok(MultiViewDataset {
            name: name.into(),
            views,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn views(&self) -> &[Matrix] {
        &self.views
    }

    pub fn view(&self, v: usize) -> &Matrix {
        &self.views[v]
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_samples(&self) -> usize {
        self.views[0].cols()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(Matrix::rows).collect()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_clusters(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// Reorders samples: column `i` of the result is column `perm[i]` of
    /// `self` in every view, and labels follow.
    pub fn permute_samples(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_samples();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(DataError::Invalid("not a permutation of the samples".into()).into());
        }
        let views = self.views.iter().map(|v| v.select_columns(perm)).collect();
        let labels = self.labels.as_ref().map(|l| perm.iter().map(|&p| l[p]).collect());
        MultiViewDataset::new(self.name.clone(), views, labels)
    }

    pub(crate) fn with_views(&self, views: Vec<Matrix>) -> Self {
        MultiViewDataset {
            name: self.name.clone(),
            views,
            labels: self.labels.clone(),
        }
    }
}

fn check_labels(labels: &[usize], n: usize) -> Result<(), DataError> {
    if labels.len() != n {
        return Err(DataError::Invalid(format!("{} labels for {n} samples", labels.len())));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut used = vec![false; k];
    for &l in labels {
        used[l] = true;
    }
    if let Some(missing) = used.iter().position(|u| !u) {
        return Err(DataError::Invalid(format!(
            "cluster id {missing} is never used (labels must cover 0..{k})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_sample_counts() {
        let err = MultiViewDataset::new("x", vec![Matrix::zeros(2, 4), Matrix::zeros(3, 5)], None);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_label_gaps() {
        let views = vec![Matrix::zeros(2, 3)];
        assert!(MultiViewDataset::new("x", views.clone(), Some(vec![0, 2, 2])).is_err());
        assert!(MultiViewDataset::new("x", views.clone(), Some(vec![0, 1])).is_err());
        assert!(MultiViewDataset::new("x", views, Some(vec![1, 0, 1])).is_ok());
    }

    #[test]
    fn permutation_moves_columns_and_labels() {
        let view = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let d = MultiViewDataset::new("x", vec![view], Some(vec![0, 1, 1])).unwrap();
        let p = d.permute_samples(&[2, 0, 1]).unwrap();
        assert_eq!(p.view(0).data(), &[3.0, 1.0, 2.0]);
        assert_eq!(p.labels().unwrap(), &[1, 0, 1]);
        assert!(d.permute_samples(&[0, 0, 1]).is_err());
    }
}
