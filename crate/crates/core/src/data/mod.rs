//! Multi-view datasets: the in-memory model, CSV ingestion, standardization,
//! the unbalanced degree metric and synthetic generators.

mod csv_io;
mod synthetic;
mod unbalance;

pub use csv_io::{load_csv_dataset, write_csv_dataset, write_matrix_csv, DatasetMeta};
pub use synthetic::{generate_clustered, generate_toy, ClusteredSpec, LatentLayout, ToyGroundTruth, ToySpec};
pub use unbalance::{unbalance_degree, unbalance_degree_with, GlobalDispersion, UnbalanceReport};

use ndarray::{concatenate, Array2, Axis};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{file}: row count {found} does not match {expected} rows of view_0.csv")]
    RowMismatch {
        file: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{file}: row {row}, column {column}: cannot parse {value:?} as a number")]
    Parse {
        file: PathBuf,
        row: usize,
        column: usize,
        value: String,
    },
    #[error("{file}: {message}")]
    Ingest { file: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// `V >= 2` row-aligned views with optional integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    views: Vec<Array2<f64>>,
    labels: Option<Vec<usize>>,
    view_names: Vec<String>,
}

impl MultiViewDataset {
    pub fn new(
        views: Vec<Array2<f64>>,
        labels: Option<Vec<usize>>,
        view_names: Option<Vec<String>>,
    ) -> Result<Self, DataError> {
        if views.len() < 2 {
            return Err(DataError::Invalid(format!(
                "need at least 2 views, got {}",
                views.len()
            )));
        }
        let n = views[0].nrows();
        if n == 0 {
            return Err(DataError::Invalid("views have no rows".into()));
        }
        for (v, x) in views.iter().enumerate() {
            if x.nrows() != n {
                return Err(DataError::Invalid(format!(
                    "view {v} has {} rows, view 0 has {n}",
                    x.nrows()
                )));
            }
            if x.ncols() == 0 {
                return Err(DataError::Invalid(format!("view {v} has no columns")));
            }
            if x.iter().any(|e| !e.is_finite()) {
                return Err(DataError::Invalid(format!("view {v} has non-finite entries")));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(DataError::Invalid(format!("{} labels for {n} samples", l.len())));
            }
        }
        let view_names = match view_names {
            Some(names) if names.len() != views.len() => {
                return Err(DataError::Invalid(format!(
                    "{} view names for {} views",
                    names.len(),
                    views.len()
                )))
            }
            Some(names) => names,
            None => (0..views.len()).map(|v| format!("view_{v}")).collect(),
        };
        Ok(Self {
            views,
            labels,
            view_names,
        })
    }

    pub fn views(&self) -> &[Array2<f64>] {
        &self.views
    }

    pub fn view(&self, v: usize) -> &Array2<f64> {
        &self.views[v]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn view_names(&self) -> &[String] {
        &self.view_names
    }

    pub fn n_samples(&self) -> usize {
        self.views[0].nrows()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(|x| x.ncols()).collect()
    }

    /// Number of distinct label values, if labels are present.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| {
            let mut ids = l.clone();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        })
    }

    /// All views side by side, as one wide matrix.
    pub fn concatenated(&self) -> Array2<f64> {
        let views: Vec<_> = self.views.iter().map(|x| x.view()).collect();
        concatenate(Axis(1), &views).expect("row-aligned views")
    }
}

/// Per-column standardization to mean 0 and sample standard deviation 1;
/// constant columns become zeros.
pub fn standardize(ds: &MultiViewDataset) -> MultiViewDataset {
    MultiViewDataset {
        views: ds.views.iter().map(standardize_matrix).collect(),
        labels: ds.labels.clone(),
        view_names: ds.view_names.clone(),
    }
}

pub fn standardize_matrix(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut out = x.clone();
    if n < 2 {
        out.fill(0.0);
        return out;
    }
    for mut col in out.axis_iter_mut(Axis(1)) {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            col.fill(0.0);
            continue;
        }
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        col.mapv_inplace(|v| (v - mean) / sd);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn rejects_bad_shapes() {
        let a = Array2::<f64>::zeros((4, 2));
        let b = Array2::<f64>::zeros((5, 3));
        assert!(MultiViewDataset::new(vec![a.clone()], None, None).is_err());
        assert!(MultiViewDataset::new(vec![a.clone(), b], None, None).is_err());
        let c = Array2::<f64>::zeros((4, 3));
        assert!(MultiViewDataset::new(vec![a.clone(), c.clone()], Some(vec![0; 3]), None).is_err());
        let ds = MultiViewDataset::new(vec![a, c], Some(vec![0, 1, 1, 2]), None).unwrap();
        assert_eq!(ds.n_classes(), Some(3));
        assert_eq!(ds.dims(), vec![2, 3]);
        assert_eq!(ds.view_names(), &["view_0".to_string(), "view_1".to_string()]);
    }

    #[test]
    fn standardize_examples() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let s = standardize_matrix(&x);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(s[[0, 0]], -h, epsilon = 1e-12);
        assert_abs_diff_eq!(s[[1, 0]], h, epsilon = 1e-12);
        assert_eq!(s.column(1).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn standardize_is_idempotent() {
        let x = array![[1.0, -2.0, 0.3], [4.0, 7.5, 0.1], [2.5, 0.0, -9.0], [0.2, 1.0, 4.0]];
        let once = standardize_matrix(&x);
        let twice = standardize_matrix(&once);
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        for col in once.axis_iter(Axis(1)) {
            assert_abs_diff_eq!(col.sum() / 4.0, 0.0, epsilon = 1e-12);
            let var = col.iter().map(|v| v * v).sum::<f64>() / 3.0;
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
        }
    }
}
