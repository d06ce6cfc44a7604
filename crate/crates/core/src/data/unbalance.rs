use serde::{Deserialize, Serialize};

use super::DataError;

/// Normalization of the dispersion term of the dataset-level degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalDispersion {
    /// Standard deviation with divisor `V - 1`.
    #[default]
    Sample,
    /// Standard deviation with divisor `V`.
    Population,
}

/// Dimensional disparity of a set of views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbalanceReport {
    pub dims: Vec<usize>,
    pub aligned_dim: usize,
    /// Dataset-level degree: `pairwise + global`.
    pub lambda_total: f64,
    pub pairwise: f64,
    pub global: f64,
    /// Per-view degree, the input of the moderating factor.
    pub per_view: Vec<f64>,
    pub mean_dim: f64,
    pub std_dim: f64,
    /// `aligned_dim / D_v` for every view.
    pub expansion_ratios: Vec<f64>,
    pub mean_ratio: f64,
    pub std_ratio: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64], divisor: f64) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / divisor).sqrt()
}

pub fn unbalance_degree(dims: &[usize], aligned_dim: usize) -> Result<UnbalanceReport, DataError> {
    unbalance_degree_with(dims, aligned_dim, GlobalDispersion::Sample)
}

pub fn unbalance_degree_with(
    dims: &[usize],
    aligned_dim: usize,
    dispersion: GlobalDispersion,
) -> Result<UnbalanceReport, DataError> {
    if dims.len() < 2 {
        return Err(DataError::Contract(format!(
            "need at least 2 views, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(DataError::Contract("view dimensions must be positive".into()));
    }
    if aligned_dim == 0 {
        return Err(DataError::Contract("aligned dimension must be positive".into()));
    }
    let v = dims.len();
    let d: Vec<f64> = dims.iter().map(|&x| x as f64).collect();

    let mut pair_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..v {
        for j in (i + 1)..v {
            pair_sum += 2.0 * (d[i] - d[j]).abs() / (d[i] + d[j]);
            pairs += 1;
        }
    }
    let pairwise = pair_sum / pairs as f64;

    let mean_dim = mean(&d);
    let global_divisor = match dispersion {
        GlobalDispersion::Sample => (v - 1) as f64,
        GlobalDispersion::Population => v as f64,
    };
    let global = std_dev(&d, global_divisor) / mean_dim;

    let std_dim = std_dev(&d, (v - 1) as f64);
    let ratios: Vec<f64> = d.iter().map(|x| aligned_dim as f64 / x).collect();
    let mean_ratio = mean(&ratios);
    let std_ratio = std_dev(&ratios, (v - 1) as f64);
    let scaled = |x: f64, m: f64, s: f64| if s > 0.0 { (x - m).abs() / (2.0 * s) } else { 0.0 };
    let per_view = d
        .iter()
        .zip(&ratios)
        .map(|(&dv, &pv)| scaled(dv, mean_dim, std_dim) + scaled(pv, mean_ratio, std_ratio))
        .collect();

    Ok(UnbalanceReport {
        dims: dims.to_vec(),
        aligned_dim,
        lambda_total: pairwise + global,
        pairwise,
        global,
        per_view,
        mean_dim,
        std_dim,
        expansion_ratios: ratios,
        mean_ratio,
        std_ratio,
    })
}
