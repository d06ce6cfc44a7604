//! Dataset directories: `view_<k>.csv` (headerless reals, one row per sample),
//! optional `labels.csv` (one integer per line) and optional `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DataError, MultiViewDataset};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn ingest_err(path: &Path, e: csv::Error) -> DataError {
    DataError::Ingest {
        file: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn read_matrix(path: &Path) -> Result<Array2<f64>, DataError> {
    let mut rdr = reader(path)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| ingest_err(path, e))?;
        for (column, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                file: path.to_path_buf(),
                row: row + 1,
                column: column + 1,
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    file: path.to_path_buf(),
                    row: row + 1,
                    column: column + 1,
                    value: cell.to_string(),
                });
            }
            values.push(v);
        }
        cols.get_or_insert(record.len());
        rows += 1;
    }
    let cols = cols.ok_or_else(|| DataError::Ingest {
        file: path.to_path_buf(),
        message: "file is empty".into(),
    })?;
    Array2::from_shape_vec((rows, cols), values).map_err(|e| DataError::Ingest {
        file: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read_labels(path: &Path) -> Result<Vec<usize>, DataError> {
    let mut rdr = reader(path)?;
    let mut labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| ingest_err(path, e))?;
        let cell = record.get(0).unwrap_or("");
        let v: usize = cell.parse().map_err(|_| DataError::Parse {
            file: path.to_path_buf(),
            row: row + 1,
            column: 1,
            value: cell.to_string(),
        })?;
        labels.push(v);
    }
    Ok(labels)
}

fn view_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("view_{k}.csv"))
}

/// Loads `view_0.csv`, `view_1.csv`, ... until the first missing index.
pub fn load_csv_dataset(dir: impl AsRef<Path>) -> Result<MultiViewDataset, DataError> {
    let dir = dir.as_ref();
    let mut views = Vec::new();
    while view_path(dir, views.len()).is_file() {
        let path = view_path(dir, views.len());
        let x = read_matrix(&path)?;
        if let Some(first) = views.first() {
            let expected = Array2::nrows(first);
            if x.nrows() != expected {
                return Err(DataError::RowMismatch {
                    file: path,
                    expected,
                    found: x.nrows(),
                });
            }
        }
        views.push(x);
    }
    if views.len() < 2 {
        return Err(DataError::Invalid(format!(
            "{}: expected at least view_0.csv and view_1.csv, found {} view file(s)",
            dir.display(),
            views.len()
        )));
    }
    let n = views[0].nrows();

    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.is_file() {
        let l = read_labels(&labels_path)?;
        if l.len() != n {
            return Err(DataError::RowMismatch {
                file: labels_path,
                expected: n,
                found: l.len(),
            });
        }
        Some(l)
    } else {
        None
    };

    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        serde_json::from_str(&text).map_err(|e| DataError::Ingest {
            file: meta_path.clone(),
            message: e.to_string(),
        })?
    } else {
        DatasetMeta::default()
    };

    MultiViewDataset::new(views, labels, meta.view_names)
}

/// Headerless CSV with shortest round-trip float formatting.
pub fn write_matrix_csv(path: impl AsRef<Path>, x: &Array2<f64>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out = String::with_capacity(x.len() * 20);
    for row in x.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn write_csv_dataset(ds: &MultiViewDataset, dir: impl AsRef<Path>) -> Result<(), DataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (k, x) in ds.views().iter().enumerate() {
        write_matrix_csv(view_path(dir, k), x)?;
    }
    if let Some(labels) = ds.labels() {
        let path = dir.join("labels.csv");
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    let meta = DatasetMeta {
        view_names: Some(ds.view_names().to_vec()),
        n_classes: ds.n_classes(),
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&path, text).map_err(io_err(&path))
}
