//! Downstream evaluation of frozen representations: k-means clustering scored by
//! Hungarian-matched accuracy, NMI and ARI, and a softmax linear probe scored by
//! accuracy and macro-F1.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::standardize_matrix;
use crate::exec::Execution;
use crate::rng::{child, Stream};
use crate::tensor_nn::{softmax_cross_entropy, Adam, AdamConfig, ParamSlot};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
}

type Result<T> = std::result::Result<T, EvalError>;

pub const KMEANS_TOL: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.outer_iter().enumerate() {
        let d = sq_dist(row, cen.as_slice().expect("standard layout"));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_once(z: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let n = z.nrows();
    let rows: Vec<&[f64]> = z.outer_iter().map(|r| r.to_slice().expect("standard layout")).collect();

    // k-means++ seeding
    let mut centroids = Array2::<f64>::zeros((k, z.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&z.row(first));
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, rows[first])).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if t < w {
                    idx = i;
                    break;
                }
                t -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&z.row(pick));
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, rows[pick]));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut dist = vec![0.0; n];
        for (i, r) in rows.iter().enumerate() {
            let (c, d) = nearest(r, &centroids);
            assign[i] = c;
            dist[i] = d;
        }
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &z.row(i));
            counts[c] += 1;
        }
        let mut new_centroids = centroids.clone();
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                new_centroids.row_mut(c).assign(&(&sums.row(c) / count as f64));
            } else {
                // empty cluster: move it to the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("n > 0");
                new_centroids.row_mut(c).assign(&z.row(far));
                dist[far] = 0.0;
            }
        }
        let shift = centroids
            .outer_iter()
            .zip(new_centroids.outer_iter())
            .map(|(a, b)| sq_dist(a.as_slice().unwrap(), b.as_slice().unwrap()).sqrt())
            .fold(0.0, f64::max);
        centroids = new_centroids;
        if shift < KMEANS_TOL {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, r) in rows.iter().enumerate() {
        let (c, d) = nearest(r, &centroids);
        assign[i] = c;
        inertia += d;
    }
    KMeansResult {
        assignments: assign,
        centroids,
        inertia,
    }
}

fn kmeans_restarts(
    z: ArrayView2<f64>,
    k: usize,
    restarts: usize,
    seed: u64,
    first_stream: u64,
    exec: Execution,
) -> Result<KMeansResult> {
    let n = z.nrows();
    if k == 0 || k > n {
        return Err(EvalError::Contract(format!("need 1 <= k <= N, got k={k}, N={n}")));
    }
    if restarts == 0 {
        return Err(EvalError::Contract("restarts must be positive".into()));
    }
    let z = z.as_standard_layout().to_owned();
    let runs = exec.map_range(restarts, |r| {
        let mut rng = child(seed, Stream::KMeans, first_stream + r as u64);
        kmeans_once(&z, k, &mut rng)
    });
    // lowest inertia, earliest restart on ties
    Ok(runs
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("restarts > 0"))
}

/// Best of `restarts` seeded k-means++ / Lloyd runs by within-cluster sum of squares.
pub fn kmeans(z: ArrayView2<f64>, k: usize, restarts: usize, seed: u64, exec: Execution) -> Result<KMeansResult> {
    kmeans_restarts(z, k, restarts, seed, 0, exec)
}

/// Minimum-cost assignment of every row to a distinct column (`rows <= cols`).
/// Returns the column for each row.
pub fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    assert!(n <= m, "hungarian needs rows <= cols");
    if n == 0 {
        return Vec::new();
    }
    // potentials u (rows), v (cols); p[j] = row matched to column j (1-based, 0 = none)
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

fn relabel(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &x in ids {
        let next = map.len();
        map.entry(x).or_insert(next);
    }
    (ids.iter().map(|x| map[x]).collect(), map.len())
}

/// Counts of (pred, truth) co-occurrences over compacted ids.
pub fn contingency(pred: &[usize], truth: &[usize]) -> Result<Array2<f64>> {
    if pred.len() != truth.len() {
        return Err(EvalError::Contract(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let (p, kp) = relabel(pred);
    let (t, kt) = relabel(truth);
    let mut c = Array2::<f64>::zeros((kp, kt));
    for (&a, &b) in p.iter().zip(&t) {
        c[[a, b]] += 1.0;
    }
    Ok(c)
}

/// Largest total of a one-to-one matching between the rows and columns of a table.
pub fn max_matching_total(table: &Array2<f64>) -> f64 {
    let (r, c) = table.dim();
    let s = r.max(c);
    let mut cost = Array2::<f64>::zeros((s, s));
    for ((i, j), &v) in table.indexed_iter() {
        cost[[i, j]] = -v;
    }
    hungarian(&cost)
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < r && j < c)
        .map(|(i, &j)| table[[i, j]])
        .sum()
}

/// Exhaustive search over all injective maps, for cross-checking small tables.
pub fn brute_force_matching_total(table: &Array2<f64>) -> f64 {
    let (r, c) = table.dim();
    let s = r.max(c);
    let mut perm: Vec<usize> = (0..s).collect();
    let mut best = f64::NEG_INFINITY;
    fn visit(k: usize, perm: &mut Vec<usize>, table: &Array2<f64>, best: &mut f64) {
        if k == perm.len() {
            let (r, c) = table.dim();
            let total = (0..r).filter(|&i| perm[i] < c).map(|i| table[[i, perm[i]]]).sum();
            *best = best.max(total);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            visit(k + 1, perm, table, best);
            perm.swap(k, i);
        }
    }
    visit(0, &mut perm, table, &mut best);
    best
}

/// Fraction of samples correctly labeled under the best cluster-to-class bijection.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = contingency(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(max_matching_total(&c) / pred.len() as f64)
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies (0 when both are 0).
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = contingency(pred, truth)?;
    let n = pred.len() as f64;
    if n == 0.0 {
        return Ok(0.0);
    }
    let rows = c.sum_axis(Axis(1));
    let cols = c.sum_axis(Axis(0));
    let mut mi = 0.0;
    for ((i, j), &v) in c.indexed_iter() {
        if v > 0.0 {
            mi += v / n * ((v * n) / (rows[i] * cols[j])).ln();
        }
    }
    let h = 0.5 * (entropy(rows.iter().copied(), n) + entropy(cols.iter().copied(), n));
    if h == 0.0 {
        return Ok(0.0);
    }
    Ok((mi / h).clamp(0.0, 1.0))
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table (1 when both partitions are trivial and equal).
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = contingency(pred, truth)?;
    let n = pred.len() as f64;
    let index: f64 = c.iter().map(|&v| comb2(v)).sum();
    let a: f64 = c.sum_axis(Axis(1)).iter().map(|&v| comb2(v)).sum();
    let b: f64 = c.sum_axis(Axis(0)).iter().map(|&v| comb2(v)).sum();
    let total = comb2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = a * b / total;
    let max = 0.5 * (a + b);
    if max == expected {
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

pub fn cluster_and_score(
    z: ArrayView2<f64>,
    truth: &[usize],
    k: usize,
    restarts: usize,
    seed: u64,
    exec: Execution,
) -> Result<ClusteringResult> {
    score_clusters(kmeans(z, k, restarts, seed, exec)?.assignments, truth)
}

fn score_clusters(assignments: Vec<usize>, truth: &[usize]) -> Result<ClusteringResult> {
    Ok(ClusteringResult {
        acc: clustering_accuracy(&assignments, truth)?,
        nmi: nmi(&assignments, truth)?,
        ari: ari(&assignments, truth)?,
        assignments,
    })
}

/// Mean Hungarian accuracy of uniformly random assignments to `k` clusters.
pub fn random_assignment_accuracy(truth: &[usize], k: usize, trials: usize, seed: u64) -> Result<f64> {
    if k == 0 || trials == 0 {
        return Err(EvalError::Contract("k and trials must be positive".into()));
    }
    let mut rng = child(seed, Stream::Baseline, 0);
    let mut total = 0.0;
    for _ in 0..trials {
        let pred: Vec<usize> = truth.iter().map(|_| rng.random_range(0..k)).collect();
        total += clustering_accuracy(&pred, truth)?;
    }
    Ok(total / trials as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub acc: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
}

pub const PROBE_EPOCHS: usize = 200;
pub const PROBE_LR: f64 = 1e-3;

/// Per-class F1 (0 when precision and recall are both undefined) for classes `0..k`.
pub fn f1_scores(pred: &[usize], truth: &[usize], k: usize) -> Vec<f64> {
    (0..k)
        .map(|c| {
            let tp = pred.iter().zip(truth).filter(|&(&p, &t)| p == c && t == c).count() as f64;
            let fp = pred.iter().zip(truth).filter(|&(&p, &t)| p == c && t != c).count() as f64;
            let fn_ = pred.iter().zip(truth).filter(|&(&p, &t)| p != c && t == c).count() as f64;
            let denom = 2.0 * tp + fp + fn_;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect()
}

/// Softmax regression on frozen features (standardized with training statistics),
/// full-batch Adam.
pub fn linear_probe(
    z_train: ArrayView2<f64>,
    y_train: &[usize],
    z_test: ArrayView2<f64>,
    y_test: &[usize],
    seed: u64,
) -> Result<ProbeResult> {
    if z_train.nrows() != y_train.len() || z_test.nrows() != y_test.len() {
        return Err(EvalError::Contract("feature rows and labels differ in length".into()));
    }
    if z_train.ncols() != z_test.ncols() {
        return Err(EvalError::Contract("train and test widths differ".into()));
    }
    if y_train.is_empty() || y_test.is_empty() {
        return Err(EvalError::Contract("empty split".into()));
    }
    let k = y_train.iter().chain(y_test).max().expect("nonempty") + 1;
    let mut seen = vec![false; k];
    y_train.iter().for_each(|&y| seen[y] = true);
    if let Some(c) = seen.iter().position(|&s| !s) {
        return Err(EvalError::Contract(format!("class {c} absent from training split")));
    }

    let h = z_train.ncols();
    let mean = z_train.mean_axis(Axis(0)).expect("nonempty");
    let std = if z_train.nrows() > 1 {
        z_train.std_axis(Axis(0), 1.0)
    } else {
        Array1::zeros(h)
    };
    let scale = std.mapv(|s| if s > 0.0 { 1.0 / s } else { 0.0 });
    let xtr = (&z_train - &mean) * &scale;
    let xte = (&z_test - &mean) * &scale;

    let mut rng = child(seed, Stream::Probe, 0);
    let init = Normal::new(0.0, 0.01).expect("positive std");
    let mut w = Array2::from_shape_simple_fn((h, k), || init.sample(&mut rng));
    let mut b = Array1::<f64>::zeros(k);
    let mut adam = Adam::new(AdamConfig {
        lr: PROBE_LR,
        ..AdamConfig::default()
    });
    for _ in 0..PROBE_EPOCHS {
        let logits = xtr.dot(&w) + &b;
        let (_, g) = softmax_cross_entropy(logits.view(), y_train).map_err(|e| EvalError::Contract(e.to_string()))?;
        let gw = xtr.t().dot(&g);
        let gb = g.sum_axis(Axis(0));
        adam.step(&mut [
            ParamSlot {
                name: "probe.weight".into(),
                values: w.as_slice_mut().expect("standard layout"),
                grads: gw.as_standard_layout().as_slice().expect("standard layout"),
            },
            ParamSlot {
                name: "probe.bias".into(),
                values: b.as_slice_mut().expect("contiguous"),
                grads: gb.as_slice().expect("contiguous"),
            },
        ])
        .map_err(|e| EvalError::Contract(e.to_string()))?;
    }
    let logits = xte.dot(&w) + &b;
    let pred: Vec<usize> = logits
        .outer_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0
        })
        .collect();
    let acc = pred.iter().zip(y_test).filter(|(p, t)| p == t).count() as f64 / y_test.len() as f64;
    let per_class_f1 = f1_scores(&pred, y_test, k);
    let macro_f1 = per_class_f1.iter().sum::<f64>() / k as f64;
    Ok(ProbeResult {
        acc,
        macro_f1,
        per_class_f1,
    })
}

/// Per-class shuffled split with `round(test_fraction * n_c)` test samples per class.
/// Both index lists are returned sorted.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EvalError::Contract(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = child(seed, Stream::Split, 0);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).min(idx.len().saturating_sub(1));
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Clustering,
    Classification,
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complexity {
    pub params_before: usize,
    pub params_after: usize,
    pub flops_before: usize,
    pub flops_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub task: String,
    pub acc: MeanStd,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nmi: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ari: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub f1: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub complexity: Option<Complexity>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nmi_normalization: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub task: EvalTask,
    pub restarts: usize,
    pub runs: usize,
    pub test_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            task: EvalTask::Both,
            restarts: 10,
            runs: 5,
            test_fraction: 0.2,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.runs == 0 {
            return Err(EvalError::Contract("restarts and runs must be positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(EvalError::Contract(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// `runs` seeded k-means evaluations (each the best of `restarts`), summarized.
pub fn evaluate_clustering(
    z: ArrayView2<f64>,
    truth: &[usize],
    k: usize,
    config: &EvalConfig,
    seed: u64,
    exec: Execution,
) -> Result<RunMetrics> {
    let mut accs = Vec::new();
    let mut nmis = Vec::new();
    let mut aris = Vec::new();
    for run in 0..config.runs {
        let first = (run * config.restarts) as u64;
        let km = kmeans_restarts(z, k, config.restarts, seed, first, exec)?;
        let r = score_clusters(km.assignments, truth)?;
        accs.push(r.acc);
        nmis.push(r.nmi);
        aris.push(r.ari);
    }
    Ok(RunMetrics {
        task: "clustering".into(),
        acc: MeanStd::of(&accs),
        nmi: Some(MeanStd::of(&nmis)),
        ari: Some(MeanStd::of(&aris)),
        f1: None,
        complexity: None,
        nmi_normalization: Some("arithmetic".into()),
    })
}

/// `runs` stratified splits, each scored by a freshly trained linear probe.
pub fn evaluate_classification(
    z: ArrayView2<f64>,
    labels: &[usize],
    config: &EvalConfig,
    seed: u64,
) -> Result<RunMetrics> {
    let mut accs = Vec::new();
    let mut f1s = Vec::new();
    for run in 0..config.runs {
        let r = probe_split(z, labels, config.test_fraction, seed.wrapping_add(run as u64))?;
        accs.push(r.acc);
        f1s.push(r.macro_f1);
    }
    Ok(RunMetrics {
        task: "classification".into(),
        acc: MeanStd::of(&accs),
        nmi: None,
        ari: None,
        f1: Some(MeanStd::of(&f1s)),
        complexity: None,
        nmi_normalization: None,
    })
}

/// One stratified split and probe.
pub fn probe_split(z: ArrayView2<f64>, labels: &[usize], test_fraction: f64, seed: u64) -> Result<ProbeResult> {
    let (train, test) = stratified_split(labels, test_fraction, seed)?;
    let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let yte: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    linear_probe(
        z.select(Axis(0), &train).view(),
        &ytr,
        z.select(Axis(0), &test).view(),
        &yte,
        seed,
    )
}

/// Probe on standardized raw features, useful as a reference point.
pub fn raw_feature_probe(x: &Array2<f64>, labels: &[usize], test_fraction: f64, seed: u64) -> Result<ProbeResult> {
    probe_split(standardize_matrix(x).view(), labels, test_fraction, seed)
}
