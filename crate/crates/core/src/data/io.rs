//! Dataset directory format.
//!
//! ```text
//! <dir>/meta          TOML: name, num_views, n_samples, view_dims, has_labels
//!                     and optionally num_clusters
//! <dir>/view_<v>.csv  N rows × M^v comma-separated values, v = 0..num_views
//! <dir>/labels.csv    N lines, one 0-based cluster id each (if has_labels)
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MultiViewDataset;
use crate::error::{DataError, Result};
use crate::numerics::Matrix;

pub const META_FILE: &str = "meta";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    pub num_views: usize,
    pub n_samples: usize,
    pub view_dims: Vec<usize>,
    pub has_labels: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_clusters: Option<usize>,
}

impl DatasetMeta {
    pub fn parse(text: &str, path: &Path) -> Result<Self, DataError> {
        let meta: DatasetMeta = toml::from_str(text).map_err(|e| DataError::Meta {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        meta.validate(path)?;
        Ok(meta)
    }

    pub fn validate(&self, path: &Path) -> Result<(), DataError> {
        let fail = |message: String| DataError::Meta {
            path: path.to_path_buf(),
            message,
        };
        if self.num_views == 0 {
            return Err(fail("num_views must be at least 1".into()));
        }
        if self.view_dims.len() != self.num_views {
            return Err(fail(format!(
                "view_dims lists {} views but num_views is {}",
                self.view_dims.len(),
                self.num_views
            )));
        }
        if let Some(v) = self.view_dims.iter().position(|&d| d == 0) {
            return Err(fail(format!("view_dims[{v}] must be at least 1")));
        }
        if self.n_samples == 0 {
            return Err(fail("n_samples must be at least 1".into()));
        }
        if let Some(k) = self.num_clusters {
            if k == 0 || k > self.n_samples {
                return Err(fail(format!("num_clusters {k} must lie in 1..={}", self.n_samples)));
            }
        }
        Ok(())
    }
}

pub fn view_file(v: usize) -> String {
    format!("view_{v}.csv")
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::Missing {
                path: path.to_path_buf(),
            }
        } else {
            DataError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let empty = body.is_empty();
    body.split('\n')
        .filter(move |_| !empty)
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

fn parse_view(path: &Path, v: usize, expected_rows: usize, expected_cols: usize) -> Result<Matrix, DataError> {
    let text = read(path)?;
    let dim_err = |message: String| DataError::Dimension {
        path: path.to_path_buf(),
        view: v,
        message,
    };
    let mut data = Vec::with_capacity(expected_rows * expected_cols);
    let mut rows = 0;
    for (line_no, line) in lines(&text) {
        rows += 1;
        if rows > expected_rows {
            continue;
        }
        let mut cols = 0;
        for cell in line.split(',') {
            cols += 1;
            let value: f64 = cell.trim().parse().map_err(|_| DataError::NonNumeric {
                path: path.to_path_buf(),
                line: line_no,
                cell: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DataError::NonNumeric {
                    path: path.to_path_buf(),
                    line: line_no,
                    cell: cell.to_string(),
                });
            }
            data.push(value);
        }
        if cols != expected_cols {
            return Err(dim_err(format!(
                "line {line_no} has {cols} columns, meta declares {expected_cols}"
            )));
        }
    }
    if rows != expected_rows {
        return Err(dim_err(format!(
            "{rows} sample rows, meta declares n_samples = {expected_rows}"
        )));
    }
    let samples_by_features =
        Matrix::from_vec(expected_rows, expected_cols, data).map_err(|e| dim_err(e.to_string()))?;
    Ok(samples_by_features.transpose())
}

/// Reads a label file: one 0-based integer per line. When `num_clusters`
/// is given, ids at or above it are rejected.
pub fn read_labels(path: &Path, num_clusters: Option<usize>) -> Result<Vec<usize>, DataError> {
    let text = read(path)?;
    let mut labels = Vec::new();
    for (line_no, line) in lines(&text) {
        let value: i64 = line.trim().parse().map_err(|_| DataError::NonNumeric {
            path: path.to_path_buf(),
            line: line_no,
            cell: line.to_string(),
        })?;
        let limit = num_clusters.map_or(i64::MAX, |k| k as i64);
        if value < 0 || value >= limit {
            return Err(DataError::LabelRange {
                path: path.to_path_buf(),
                line: line_no,
                label: value,
                num_clusters: num_clusters.unwrap_or(0),
            });
        }
        labels.push(value as usize);
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        writeln!(out, "{l}").expect("writing to a String");
    }
    fs::write(path, out).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<MultiViewDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let meta = DatasetMeta::parse(&read(&meta_path)?, &meta_path)?;

    let mut views = Vec::with_capacity(meta.num_views);
    for (v, &dim) in meta.view_dims.iter().enumerate() {
        views.push(parse_view(&dir.join(view_file(v)), v, meta.n_samples, dim)?);
    }

    let labels = if meta.has_labels {
        let path = dir.join(LABELS_FILE);
        let labels = read_labels(&path, meta.num_clusters)?;
        if labels.len() != meta.n_samples {
            return Err(DataError::Labels {
                path,
                message: format!("{} labels, meta declares n_samples = {}", labels.len(), meta.n_samples),
            }
            .into());
        }
        let k = meta
            .num_clusters
            .unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let mut used = vec![false; k];
        for &l in &labels {
            used[l] = true;
        }
        if let Some(missing) = used.iter().position(|u| !u) {
            return Err(DataError::Labels {
                path,
                message: format!("cluster id {missing} never appears"),
            }
            .into());
        }
        Some(labels)
    } else {
        None
    };

    MultiViewDataset::new(meta.name, views, labels)
}

fn write_file(path: PathBuf, contents: String) -> Result<()> {
    fs::write(&path, contents).map_err(|source| DataError::Io { path, source })?;
    Ok(())
}

pub fn save_dataset(dataset: &MultiViewDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let meta = DatasetMeta {
        name: dataset.name().to_string(),
        num_views: dataset.num_views(),
        n_samples: dataset.n_samples(),
        view_dims: dataset.view_dims(),
        has_labels: dataset.labels().is_some(),
        num_clusters: dataset.num_clusters(),
    };
    let meta_text = toml::to_string(&meta).map_err(|e| DataError::Invalid(e.to_string()))?;
    write_file(dir.join(META_FILE), meta_text)?;

    for (v, view) in dataset.views().iter().enumerate() {
        let mut out = String::new();
        for n in 0..view.cols() {
            for m in 0..view.rows() {
                if m > 0 {
                    out.push(',');
                }
                write!(out, "{}", view.get(m, n)).expect("writing to a String");
            }
            out.push('\n');
        }
        write_file(dir.join(view_file(v)), out)?;
    }
    if let Some(labels) = dataset.labels() {
        write_labels(&dir.join(LABELS_FILE), labels)?;
    }
    Ok(())
}
