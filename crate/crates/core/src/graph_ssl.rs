//! Self-supervision from similarity graphs.
//!
//! Each view gets a Gaussian-kernel KNN graph over its raw (standardized)
//! features. The graphs are combined into a consensus matrix whose thresholded
//! entries become binary positive / negative pair labels for contrastive training.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{write_matrix_csv, DataError};
use crate::exec::Execution;
use crate::tensor_nn::{Adam, AdamConfig, ParamSlot};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Export(#[from] DataError),
}

type Result<T> = std::result::Result<T, GraphError>;

/// How the kernel width is derived from the distances to each point's K-th neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// `sigma = mean_i ||x_i - x_(i,K)||^2`, used as-is inside `exp(-d^2 / (2 sigma^2))`.
    #[default]
    MeanSqDist,
    /// `sigma = mean_i ||x_i - x_(i,K)||`.
    MeanDist,
}

/// How the pseudo-label threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    /// Median of the nonzero off-diagonal consensus entries.
    #[default]
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub matrix: Array2<f64>,
    pub kernel_sigma: f64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusGraph {
    pub matrix: Array2<f64>,
    /// View weights on the probability simplex.
    pub alpha: Vec<f64>,
    /// Final value of `||S - sum_v alpha_v S_v||_F^2`.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub matrix: Array2<u8>,
    pub threshold: f64,
}

impl PseudoLabels {
    /// Fraction of positive off-diagonal pairs.
    pub fn positive_rate(&self) -> f64 {
        let n = self.matrix.nrows();
        if n < 2 {
            return 0.0;
        }
        let pos = self
            .matrix
            .indexed_iter()
            .filter(|((i, j), &v)| i != j && v != 0)
            .count();
        pos as f64 / (n * (n - 1)) as f64
    }

    /// Sub-matrix for a mini-batch of sample indices.
    pub fn batch(&self, idx: &[usize]) -> Array2<u8> {
        Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| self.matrix[[idx[a], idx[b]]])
    }

    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_matrix_csv(path, &self.matrix.mapv(f64::from))?)
    }
}

impl ConsensusGraph {
    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_matrix_csv(path, &self.matrix)?)
    }
}

/// Squared Euclidean distances by direct summation. Entry `(i, j)` is computed
/// once for `i < j` and mirrored, so the result is exactly symmetric and does not
/// depend on the execution strategy.
pub fn pairwise_sq_distances(x: ArrayView2<f64>, exec: Execution) -> Array2<f64> {
    let n = x.nrows();
    let x = x.as_standard_layout();
    let rows: Vec<&[f64]> = x
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect();
    let upper: Vec<Vec<f64>> = exec.map_range(n, |i| {
        let a = rows[i];
        ((i + 1)..n)
            .map(|j| {
                let b = rows[j];
                a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
            })
            .collect()
    });
    let mut d = Array2::<f64>::zeros((n, n));
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// For each point, the `k` nearest other points ordered by `(distance, index)`.
pub fn knn_indices(sq_dist: &Array2<f64>, k: usize, exec: Execution) -> Vec<Vec<usize>> {
    let n = sq_dist.nrows();
    exec.map_range(n, |i| {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let key = |j: &usize| (sq_dist[[i, *j]], *j);
        others.sort_by(|a, b| key(a).partial_cmp(&key(b)).expect("finite distances"));
        others.truncate(k);
        others
    })
}

pub fn build_view_graph(
    view: ArrayView2<f64>,
    k: usize,
    sigma_mode: SigmaMode,
    exec: Execution,
) -> Result<SimilarityGraph> {
    let n = view.nrows();
    if k == 0 || k >= n {
        return Err(GraphError::Contract(format!(
            "neighbour count must satisfy 1 <= K < N, got K={k}, N={n}"
        )));
    }
    let d2 = pairwise_sq_distances(view, exec);
    let neighbours = knn_indices(&d2, k, exec);

    let kth: Vec<f64> = neighbours
        .iter()
        .enumerate()
        .map(|(i, nb)| d2[[i, nb[k - 1]]])
        .collect();
    let sigma = match sigma_mode {
        SigmaMode::MeanSqDist => kth.iter().sum::<f64>() / n as f64,
        SigmaMode::MeanDist => kth.iter().map(|v| v.sqrt()).sum::<f64>() / n as f64,
    };
    let kernel = |dist2: f64| {
        if dist2 == 0.0 {
            1.0
        } else if sigma == 0.0 {
            0.0
        } else {
            (-dist2 / (2.0 * sigma * sigma)).exp()
        }
    };

    let mut s = Array2::<f64>::zeros((n, n));
    for (i, nb) in neighbours.iter().enumerate() {
        for &j in nb {
            let v = kernel(d2[[i, j]]);
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
        s[[i, i]] = 1.0;
    }
    Ok(SimilarityGraph {
        matrix: s,
        kernel_sigma: sigma,
        k,
    })
}

/// Euclidean projection onto `{a : a >= 0, sum a = 1}`.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusConfig {
    pub lr: f64,
    pub steps: usize,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self { lr: 1e-3, steps: 200 }
    }
}

fn combine(graphs: &[SimilarityGraph], alpha: &[f64]) -> Array2<f64> {
    let mut s = Array2::<f64>::zeros(graphs[0].matrix.dim());
    for (g, &a) in graphs.iter().zip(alpha) {
        s.scaled_add(a, &g.matrix);
    }
    s
}

/// Alternating minimization of `||S - sum_v alpha_v S_v||_F^2` over the consensus
/// `S` and simplex weights `alpha`: `S` is reset to the current combination, then
/// `alpha` takes a projected Adam step.
///
/// The objective vanishes for every feasible `alpha` once `S` is reset, so the
/// weights stay at their uniform start; they are reported for inspection.
pub fn fit_consensus(graphs: &[SimilarityGraph], config: ConsensusConfig) -> Result<ConsensusGraph> {
    if graphs.len() < 2 {
        return Err(GraphError::Contract(format!(
            "need at least 2 view graphs, got {}",
            graphs.len()
        )));
    }
    let dim = graphs[0].matrix.dim();
    if let Some(g) = graphs.iter().find(|g| g.matrix.dim() != dim) {
        return Err(GraphError::Contract(format!(
            "graph sizes differ: {:?} vs {:?}",
            g.matrix.dim(),
            dim
        )));
    }
    let v = graphs.len();
    let mut alpha = vec![1.0 / v as f64; v];
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut objective = 0.0;
    for _ in 0..config.steps {
        let s = combine(graphs, &alpha);
        let residual = &s - &combine(graphs, &alpha);
        objective = residual.iter().map(|r| r * r).sum();
        let grad: Vec<f64> = graphs.iter().map(|g| -2.0 * (&residual * &g.matrix).sum()).collect();
        adam.step(&mut [ParamSlot {
            name: "consensus.alpha".into(),
            values: &mut alpha,
            grads: &grad,
        }])
        .map_err(|e| GraphError::Contract(e.to_string()))?;
        alpha = project_to_simplex(&alpha);
    }
    let matrix = combine(graphs, &alpha);
    Ok(ConsensusGraph {
        matrix,
        alpha,
        objective,
    })
}

/// Median of the nonzero off-diagonal consensus entries (0 if there are none).
pub fn median_threshold(c: &ConsensusGraph) -> f64 {
    let n = c.matrix.nrows();
    let mut vals: Vec<f64> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = c.matrix[[i, j]];
            if v != 0.0 {
                vals.push(v);
            }
        }
    }
    if vals.is_empty() {
        return 0.0;
    }
    vals.sort_by(|a, b| a.total_cmp(b));
    let m = vals.len();
    if m % 2 == 1 {
        vals[m / 2]
    } else {
        0.5 * (vals[m / 2 - 1] + vals[m / 2])
    }
}

pub fn resolve_threshold(c: &ConsensusGraph, mode: EpsilonMode) -> f64 {
    match mode {
        EpsilonMode::Median => median_threshold(c),
        EpsilonMode::Fixed(eps) => eps,
    }
}

/// `l_ij = 1` iff `S_ij > epsilon`, with the diagonal forced to 1.
pub fn make_pseudo_labels(c: &ConsensusGraph, epsilon: f64) -> Result<PseudoLabels> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(GraphError::Contract(format!(
            "label threshold must lie in [0, 1), got {epsilon}"
        )));
    }
    let mut l = c.matrix.mapv(|s| u8::from(s > epsilon));
    for i in 0..l.nrows() {
        l[[i, i]] = 1;
    }
    Ok(PseudoLabels {
        matrix: l,
        threshold: epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn seq() -> Execution {
        Execution::Sequential
    }

    #[test]
    fn coincident_points_are_fully_similar() {
        let x = array![[1.0, 2.0], [1.0, 2.0], [5.0, 5.0]];
        let g = build_view_graph(x.view(), 1, SigmaMode::MeanSqDist, seq()).unwrap();
        assert_eq!(g.matrix[[0, 1]], 1.0);
        assert_eq!(g.matrix[[1, 0]], 1.0);
    }

    #[test]
    fn collinear_neighbour_enumeration() {
        // K=1: 0->1, 1->0, 10->1, so edges {0,1} and {1,2}; no edge {0,2}
        let x = array![[0.0], [1.0], [10.0]];
        let g = build_view_graph(x.view(), 1, SigmaMode::MeanSqDist, seq()).unwrap();
        assert!(g.matrix[[0, 1]] > 0.0);
        assert!(g.matrix[[1, 2]] > 0.0);
        assert_eq!(g.matrix[[0, 2]], 0.0);
        assert_eq!(g.matrix[[2, 0]], 0.0);
        // sigma = mean of squared K-th neighbour distances = (1 + 1 + 81) / 3
        assert_abs_diff_eq!(g.kernel_sigma, 83.0 / 3.0, epsilon = 1e-12);
        let expected = (-81.0 / (2.0 * g.kernel_sigma * g.kernel_sigma)).exp();
        assert_abs_diff_eq!(g.matrix[[1, 2]], expected, epsilon = 1e-15);
        let md = build_view_graph(x.view(), 1, SigmaMode::MeanDist, seq()).unwrap();
        assert_abs_diff_eq!(md.kernel_sigma, 11.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn k_must_be_below_n() {
        let x = array![[0.0], [1.0]];
        assert!(build_view_graph(x.view(), 2, SigmaMode::MeanSqDist, seq()).is_err());
        assert!(build_view_graph(x.view(), 0, SigmaMode::MeanSqDist, seq()).is_err());
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_to_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        let p = project_to_simplex(&[2.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
        let p = project_to_simplex(&[0.4, 0.4, 0.4]);
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    fn graph(m: Array2<f64>) -> SimilarityGraph {
        SimilarityGraph {
            matrix: m,
            kernel_sigma: 1.0,
            k: 1,
        }
    }

    #[test]
    fn consensus_of_identical_graphs() {
        let m = array![[1.0, 0.3, 0.0], [0.3, 1.0, 0.8], [0.0, 0.8, 1.0]];
        let c = fit_consensus(
            &[graph(m.clone()), graph(m.clone()), graph(m.clone())],
            ConsensusConfig::default(),
        )
        .unwrap();
        for (a, b) in c.matrix.iter().zip(m.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for a in &c.alpha {
            assert_abs_diff_eq!(*a, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn consensus_is_linear_in_views() {
        let zero = Array2::zeros((3, 3));
        let ones = Array2::from_elem((3, 3), 1.0);
        let c = fit_consensus(&[graph(zero), graph(ones)], ConsensusConfig::default()).unwrap();
        for &v in c.matrix.iter() {
            assert_abs_diff_eq!(v, c.alpha[1], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(c.alpha.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn consensus_rejects_mismatch() {
        let a = graph(Array2::zeros((3, 3)));
        let b = graph(Array2::zeros((4, 4)));
        assert!(fit_consensus(&[a.clone(), b], ConsensusConfig::default()).is_err());
        assert!(fit_consensus(&[a], ConsensusConfig::default()).is_err());
    }

    #[test]
    fn pseudo_label_thresholding() {
        let s = array![[1.0, 0.9, 0.5], [0.9, 1.0, 0.0], [0.5, 0.0, 1.0]];
        let c = ConsensusGraph {
            matrix: s,
            alpha: vec![0.5, 0.5],
            objective: 0.0,
        };
        let l = make_pseudo_labels(&c, 0.5).unwrap();
        assert_eq!(l.matrix[[0, 1]], 1);
        assert_eq!(l.matrix[[0, 2]], 0, "strict inequality");
        let l0 = make_pseudo_labels(&c, 0.0).unwrap();
        assert_eq!(l0.matrix, array![[1, 1, 1], [1, 1, 0], [1, 0, 1]]);
        assert!(make_pseudo_labels(&c, 1.0).is_err());
        assert_abs_diff_eq!(median_threshold(&c), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn sequential_and_parallel_graphs_agree() {
        let x = Array2::from_shape_fn((40, 5), |(i, j)| ((i * 7 + j * 13) % 11) as f64 * 0.37 - (j as f64));
        let a = build_view_graph(x.view(), 4, SigmaMode::MeanSqDist, Execution::Sequential).unwrap();
        let b = build_view_graph(x.view(), 4, SigmaMode::MeanSqDist, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn graphs_and_labels_are_symmetric(
            vals in proptest::collection::vec(-3.0f64..3.0, 30),
            k in 1usize..9,
            eps_a in 0.0f64..0.99,
            eps_b in 0.0f64..0.99,
        ) {
            let x = Array2::from_shape_vec((10, 3), vals).unwrap();
            let g = build_view_graph(x.view(), k, SigmaMode::MeanDist, seq()).unwrap();
            prop_assert_eq!(&g.matrix, &g.matrix.t().to_owned());
            for i in 0..10 { prop_assert_eq!(g.matrix[[i, i]], 1.0); }
            prop_assert!(g.matrix.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let g2 = build_view_graph((&x * 2.0).view(), k, SigmaMode::MeanSqDist, seq()).unwrap();
            let c = fit_consensus(&[g, g2], ConsensusConfig { lr: 1e-3, steps: 5 }).unwrap();
            prop_assert_eq!(&c.matrix, &c.matrix.t().to_owned());
            let (lo, hi) = if eps_a <= eps_b { (eps_a, eps_b) } else { (eps_b, eps_a) };
            let la = make_pseudo_labels(&c, lo).unwrap();
            let lb = make_pseudo_labels(&c, hi).unwrap();
            prop_assert_eq!(&la.matrix, &la.matrix.t().to_owned());
            prop_assert!(lb.positive_rate() <= la.positive_rate());
        }
    }
}
