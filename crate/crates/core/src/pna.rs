//! Principal neuron analysis: one-shot structural pruning driven by how
//! concentrated each hidden layer's activation eigen-spectrum is.
//!
//! A layer whose covariance spectrum is close to uniform uses all of its
//! directions and is left alone; a layer whose spectrum collapses onto a few
//! directions is redundant and loses a proportional share of its neurons.

use std::fmt;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::UnbalanceReport;
use crate::exec::Execution;
use crate::model::{AdamusModel, ModelError, TrainingStage};
use crate::numerics::{
    covariance, dirac_uniform_distance, pearson_matrix, symmetric_eigenvalues, wasserstein_1d, DiscreteDistribution,
    NumericsError,
};
use crate::tensor_nn::{DenseLayer, LayerNormState, NormMode};

#[derive(Debug, Error)]
pub enum PnaError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("stage ordering: {0}")]
    Ordering(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("prune report {path}: {message}")]
    Io { path: String, message: String },
}

type Result<T> = std::result::Result<T, PnaError>;

/// Form of the logistic moderating factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauVariant {
    /// `2 / (1 + exp(-lambda))`, in `[1, 2)` for `lambda >= 0`.
    #[default]
    AsPrinted,
    /// `2 / (1 + exp(lambda))`, in `(0, 1]` for `lambda >= 0`.
    Inverted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PnaConfig {
    pub enabled: bool,
    pub rate_cap: f64,
    pub tau_variant: TauVariant,
}

impl Default for PnaConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rate_cap: 0.95,
            tau_variant: TauVariant::AsPrinted,
        }
    }
}

impl PnaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_cap > 0.0 && self.rate_cap < 1.0) {
            return Err(PnaError::Contract(format!(
                "rate_cap must lie in (0, 1), got {}",
                self.rate_cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpectrumReport {
    pub view: usize,
    pub layer: usize,
    pub width: usize,
    /// Normalized eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub w_to_uniform: f64,
    pub normalizer: f64,
    pub raw_ratio: f64,
}

/// Spectral concentration of one layer's activations (`N x D`).
///
/// A single-neuron layer cannot be pruned and reports a ratio of 0.
pub fn layer_spectrum(activations: ArrayView2<f64>, view: usize, layer: usize) -> Result<LayerSpectrumReport> {
    let width = activations.ncols();
    if activations.nrows() < 2 {
        return Err(PnaError::Contract(format!(
            "spectrum needs at least 2 samples, got {}",
            activations.nrows()
        )));
    }
    if width < 2 {
        return Ok(LayerSpectrumReport {
            view,
            layer,
            width,
            eigenvalues: vec![1.0; width],
            w_to_uniform: 0.0,
            normalizer: 0.0,
            raw_ratio: 0.0,
        });
    }
    let spectrum = symmetric_eigenvalues(covariance(activations)?.view())?.normalize();
    let w = wasserstein_1d(&spectrum.as_distribution()?, &DiscreteDistribution::uniform(width))?;
    let normalizer = dirac_uniform_distance(width);
    Ok(LayerSpectrumReport {
        view,
        layer,
        width,
        eigenvalues: spectrum.eigenvalues().to_vec(),
        w_to_uniform: w,
        normalizer,
        raw_ratio: (w / normalizer).clamp(0.0, 1.0),
    })
}

pub fn moderating_factor(report: &UnbalanceReport, view: usize, variant: TauVariant) -> f64 {
    tau(report.per_view[view], variant)
}

/// The logistic factor for a given per-view degree.
pub fn tau(lambda: f64, variant: TauVariant) -> f64 {
    match variant {
        TauVariant::AsPrinted => 2.0 / (1.0 + (-lambda).exp()),
        TauVariant::Inverted => 2.0 / (1.0 + lambda.exp()),
    }
}

pub fn pruning_rate(spectrum: &LayerSpectrumReport, tau: f64, rate_cap: f64) -> f64 {
    (spectrum.raw_ratio * tau).min(rate_cap).max(0.0)
}

/// Neurons to remove: the `floor(rate * D)` with the largest total absolute
/// off-diagonal Pearson correlation, ties going to the lower index. At least one
/// neuron always survives. Returned in ascending order.
pub fn select_neurons(activations: ArrayView2<f64>, rate: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(PnaError::Contract(format!("rate must lie in [0, 1), got {rate}")));
    }
    let d = activations.ncols();
    let count = ((rate * d as f64).floor() as usize).min(d.saturating_sub(1));
    if count == 0 {
        return Ok(Vec::new());
    }
    let rho = pearson_matrix(activations)?;
    let scores: Vec<f64> = (0..d)
        .map(|i| (0..d).filter(|&j| j != i).map(|j| rho[[i, j]].abs()).sum())
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut removed = order[..count].to_vec();
    removed.sort_unstable();
    Ok(removed)
}

fn kept(width: usize, removed: &[usize]) -> Vec<usize> {
    (0..width).filter(|i| removed.binary_search(i).is_err()).collect()
}

/// Deletes output units `removed` of `layer` (weight rows, bias entries, and the
/// matching slots of `norm`) and the corresponding input columns of `next`.
pub fn remove_units(
    layer: &mut DenseLayer,
    norm: Option<&mut LayerNormState>,
    next: &mut DenseLayer,
    removed: &[usize],
) -> Result<()> {
    let width = layer.d_out();
    if next.d_in() != width {
        return Err(PnaError::Contract(format!(
            "next layer takes {} inputs, layer emits {width}",
            next.d_in()
        )));
    }
    if removed.iter().any(|&i| i >= width) || removed.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PnaError::Contract(
            "removal indices must be sorted, unique and in range".into(),
        ));
    }
    if removed.len() >= width {
        return Err(PnaError::Contract("at least one unit must survive".into()));
    }
    let keep = kept(width, removed);
    // select may return a non-standard layout; optimizers need contiguous rows
    layer.weight = layer.weight.select(Axis(0), &keep).as_standard_layout().into_owned();
    layer.bias = layer.bias.select(Axis(0), &keep);
    next.weight = next.weight.select(Axis(1), &keep).as_standard_layout().into_owned();
    if let Some(n) = norm {
        n.gamma = n.gamma.select(Axis(0), &keep);
        n.beta = n.beta.select(Axis(0), &keep);
        if n.mode == NormMode::PerChannel {
            n.running_mean = n.running_mean.select(Axis(0), &keep);
            n.running_var = n.running_var.select(Axis(0), &keep);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub view: usize,
    pub layer: usize,
    pub width: usize,
    pub rate: f64,
    pub removed: Vec<usize>,
    pub kept: usize,
    /// Raw spectral ratio before moderation and capping.
    pub w_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub layers: Vec<LayerPlan>,
    /// Moderating factor per view.
    pub tau: Vec<f64>,
    /// Per-view unbalance degree.
    pub lambda: Vec<f64>,
    pub rate_cap: f64,
    pub tau_variant: TauVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub plan: PrunePlan,
    pub params_before: usize,
    pub params_after: usize,
    pub flops_before: usize,
    pub flops_after: usize,
}

impl PruneReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("plain data");
        std::fs::write(path, json).map_err(|e| PnaError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |message: String| PnaError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

fn ratio(after: usize, before: usize) -> f64 {
    if before == 0 {
        1.0
    } else {
        after as f64 / before as f64
    }
}

impl fmt::Display for PruneReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "rate cap {:.3}, tau variant {:?}",
            self.plan.rate_cap, self.plan.tau_variant
        )?;
        for (v, (t, l)) in self.plan.tau.iter().zip(&self.plan.lambda).enumerate() {
            writeln!(f, "view {v}: lambda {l:.4}  tau {t:.4}")?;
        }
        writeln!(
            f,
            "{:>4} {:>5} {:>7} {:>7} {:>7} {:>7}",
            "view", "layer", "width", "kept", "w_ratio", "rate"
        )?;
        for p in &self.plan.layers {
            writeln!(
                f,
                "{:>4} {:>5} {:>7} {:>7} {:>7.4} {:>7.4}",
                p.view, p.layer, p.width, p.kept, p.w_ratio, p.rate
            )?;
        }
        writeln!(
            f,
            "params {} -> {} ({:.2}%)",
            self.params_before,
            self.params_after,
            100.0 * ratio(self.params_after, self.params_before)
        )?;
        write!(
            f,
            "flops  {} -> {} ({:.2}%)",
            self.flops_before,
            self.flops_after,
            100.0 * ratio(self.flops_after, self.flops_before)
        )
    }
}

/// Rates and removal sets for a stack of hidden-layer activations sharing one `tau`.
pub fn plan_layers(
    activations: &[(usize, usize, Array2<f64>)],
    taus: &[f64],
    rate_cap: f64,
    exec: Execution,
) -> Result<Vec<LayerPlan>> {
    let plans = exec.map_range(activations.len(), |i| {
        let (v, l, a) = &activations[i];
        let spectrum = layer_spectrum(a.view(), *v, *l)?;
        let rate = pruning_rate(&spectrum, taus[*v], rate_cap);
        let removed = select_neurons(a.view(), rate)?;
        Ok(LayerPlan {
            view: *v,
            layer: *l,
            width: spectrum.width,
            rate,
            kept: spectrum.width - removed.len(),
            removed,
            w_ratio: spectrum.raw_ratio,
        })
    });
    plans.into_iter().collect()
}

/// Applies every removal set of `layers` to the encoders.
pub fn apply_plan(model: &mut AdamusModel, layers: &[LayerPlan]) -> Result<()> {
    for p in layers {
        if p.removed.is_empty() {
            continue;
        }
        let enc = model
            .encoders
            .get_mut(p.view)
            .ok_or_else(|| PnaError::Contract(format!("no view {}", p.view)))?;
        if p.layer >= enc.n_hidden() {
            return Err(PnaError::Contract(format!(
                "view {} layer {} is not a prunable hidden layer",
                p.view, p.layer
            )));
        }
        let (head, tail) = enc.layers.split_at_mut(p.layer + 1);
        let cur = &mut head[p.layer];
        remove_units(&mut cur.dense, Some(&mut cur.norm), &mut tail[0].dense, &p.removed)?;
    }
    Ok(())
}

/// Stage 2: a single inference pass over `data` records every hidden layer's
/// activations, all rates are computed from them, and all removals are applied
/// at once. Aligned layers and inputs are never pruned.
pub fn one_shot_prune(
    model: &mut AdamusModel,
    data: &[Array2<f64>],
    unbalance: &UnbalanceReport,
    config: &PnaConfig,
    exec: Execution,
) -> Result<PruneReport> {
    config.validate()?;
    if model.stage != TrainingStage::Pretrained {
        return Err(PnaError::Ordering(format!(
            "pruning needs a pretrained model, stage is {}",
            model.stage
        )));
    }
    if unbalance.per_view.len() != model.n_views() || data.len() != model.n_views() {
        return Err(PnaError::Contract(format!(
            "model has {} views, unbalance report {}, dataset {}",
            model.n_views(),
            unbalance.per_view.len(),
            data.len()
        )));
    }
    let taus: Vec<f64> = (0..model.n_views())
        .map(|v| moderating_factor(unbalance, v, config.tau_variant))
        .collect();

    let mut acts = Vec::new();
    for (v, e) in model.encoders.iter().enumerate() {
        for (l, a) in e.hidden_activations(data[v].view())?.into_iter().enumerate() {
            acts.push((v, l, a));
        }
    }
    let layers = plan_layers(&acts, &taus, config.rate_cap, exec)?;
    drop(acts);

    let params_before = model.n_params();
    let flops_before = model.flops();
    apply_plan(model, &layers)?;
    model.stage = TrainingStage::Pruned;
    Ok(PruneReport {
        plan: PrunePlan {
            layers,
            tau: taus,
            lambda: unbalance.per_view.clone(),
            rate_cap: config.rate_cap,
            tau_variant: config.tau_variant,
        },
        params_before,
        params_after: model.n_params(),
        flops_before,
        flops_after: model.flops(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{unbalance_degree, MultiViewDataset};
    use crate::graph_ssl::{make_pseudo_labels, ConsensusGraph};
    use crate::model::{pretrain, HiddenDims, Supervision, TrainConfig};
    use crate::rng::{child, Stream};
    use crate::tensor_nn::Activation;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = child(seed, Stream::Data, 3);
        Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn independent_columns_give_small_ratio() {
        let r = layer_spectrum(gaussian(20_000, 6, 1).view(), 0, 0).unwrap();
        assert!(r.raw_ratio < 0.05, "{}", r.raw_ratio);
        assert_eq!(r.normalizer, 2.5);
    }

    #[test]
    fn rank_one_gives_full_ratio() {
        let base = gaussian(50, 1, 2);
        let a = Array2::from_shape_fn((50, 4), |(i, j)| base[[i, 0]] * (j as f64 + 1.0));
        let r = layer_spectrum(a.view(), 0, 0).unwrap();
        assert_abs_diff_eq!(r.raw_ratio, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn two_by_two_spectrum() {
        // independent columns with variances 3 and 1 -> normalized spectrum (0.75, 0.25)
        let a = array![
            [3f64.sqrt(), 1.0],
            [-(3f64.sqrt()), 1.0],
            [3f64.sqrt(), -1.0],
            [-(3f64.sqrt()), -1.0]
        ];
        let r = layer_spectrum(a.view(), 0, 0).unwrap();
        assert_abs_diff_eq!(r.eigenvalues[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(r.w_to_uniform, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(r.raw_ratio, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_neuron_layer_is_unprunable() {
        let r = layer_spectrum(array![[1.0], [2.0]].view(), 0, 0).unwrap();
        assert_eq!(r.raw_ratio, 0.0);
    }

    #[test]
    fn tau_values() {
        assert_eq!(tau(0.0, TauVariant::AsPrinted), 1.0);
        assert!((tau(50.0, TauVariant::AsPrinted) - 2.0).abs() < 1e-12);
        assert_eq!(tau(0.0, TauVariant::Inverted), 1.0);
        assert!(tau(3.0, TauVariant::Inverted) < 0.1);
        let rep = unbalance_degree(&[8, 8], 8).unwrap();
        assert_eq!(moderating_factor(&rep, 1, TauVariant::AsPrinted), 1.0);
    }

    fn spec(raw: f64) -> LayerSpectrumReport {
        LayerSpectrumReport {
            view: 0,
            layer: 0,
            width: 4,
            eigenvalues: vec![0.25; 4],
            w_to_uniform: raw * 1.5,
            normalizer: 1.5,
            raw_ratio: raw,
        }
    }

    #[test]
    fn rate_product_and_cap() {
        assert_eq!(pruning_rate(&spec(0.0), 1.9, 0.95), 0.0);
        assert_eq!(pruning_rate(&spec(1.0), 1.0, 0.95), 0.95);
        assert_abs_diff_eq!(pruning_rate(&spec(0.5), 1.2, 0.95), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_neuron_is_removed_first() {
        let g = gaussian(200, 2, 4);
        let a = Array2::from_shape_fn((200, 3), |(i, j)| if j < 2 { g[[i, 0]] } else { g[[i, 1]] });
        assert_eq!(select_neurons(a.view(), 0.34).unwrap(), vec![0]);
        assert!(select_neurons(a.view(), 0.0).unwrap().is_empty());
    }

    #[test]
    fn constant_layer_removes_lowest_indices() {
        let a = Array2::from_elem((10, 5), 0.3);
        assert_eq!(select_neurons(a.view(), 0.5).unwrap(), vec![0, 1]);
        assert_eq!(select_neurons(a.view(), 0.99).unwrap().len(), 4);
    }

    #[test]
    fn remove_units_rewrites_shapes() {
        let mut rng = child(0, Stream::Init, 0);
        let mut l = DenseLayer::init(47, 200, Activation::Relu, &mut rng);
        let mut n = LayerNormState::new(200, NormMode::PerChannel);
        let mut next = DenseLayer::init(200, 9, Activation::Identity, &mut rng);
        let before = l.n_params() + next.n_params();
        let removed: Vec<usize> = (0..200).step_by(2).collect();
        let expected_next_col = next.weight.column(1).to_owned();
        remove_units(&mut l, Some(&mut n), &mut next, &removed).unwrap();
        assert_eq!(
            (l.d_out(), next.d_in(), n.width(), n.running_var.len()),
            (100, 100, 100, 100)
        );
        assert_eq!(next.weight.column(0), expected_next_col);
        assert!(l.n_params() + next.n_params() < before);
        assert!(l.weight.is_standard_layout() && next.weight.is_standard_layout());
        assert!(remove_units(&mut l, None, &mut next, &[5, 3]).is_err());
    }

    fn pretrained(seed: u64) -> (AdamusModel, MultiViewDataset) {
        let cfg = TrainConfig {
            hidden_dims: HiddenDims::Shared(vec![16, 8]),
            aligned_dim: 3,
            batch_size: 16,
            epochs_pre: 2,
            seed,
            ..TrainConfig::default()
        };
        // strongly correlated inputs so hidden spectra concentrate
        let base = gaussian(60, 2, seed);
        let v0 = Array2::from_shape_fn((60, 6), |(i, j)| base[[i, j % 2]] * (1.0 + j as f64));
        let v1 = gaussian(60, 3, seed + 1);
        let ds = MultiViewDataset::new(vec![v0, v1], None, None).unwrap();
        let c = ConsensusGraph {
            matrix: Array2::eye(60),
            alpha: vec![0.5, 0.5],
            objective: 0.0,
        };
        let l = make_pseudo_labels(&c, 0.5).unwrap();
        let mut m = AdamusModel::new(&[6, 3], &cfg).unwrap();
        pretrain(
            &mut m,
            ds.views(),
            Supervision {
                labels: &l,
                consensus: &c,
            },
            &cfg,
        )
        .unwrap();
        (m, ds)
    }

    #[test]
    fn one_shot_prune_counts_match_analytic_formulas() {
        let (mut m, ds) = pretrained(5);
        let unb = unbalance_degree(&ds.dims(), 3).unwrap();
        let rep = one_shot_prune(&mut m, ds.views(), &unb, &PnaConfig::default(), Execution::default()).unwrap();
        assert_eq!(m.stage, TrainingStage::Pruned);
        assert!(rep.plan.layers.iter().any(|p| !p.removed.is_empty()));
        let mut params = 0;
        let mut flops = 0;
        for (v, e) in m.encoders.iter().enumerate() {
            let mut prev = ds.dims()[v];
            for (l, layer) in e.layers.iter().enumerate() {
                let out = rep
                    .plan
                    .layers
                    .iter()
                    .find(|p| p.view == v && p.layer == l)
                    .map_or(3, |p| p.kept);
                assert_eq!(layer.dense.d_out(), out);
                params += (prev + 1) * out;
                flops += 2 * prev * out;
                prev = out;
            }
            assert_eq!(e.msbn().width(), 3, "aligned layer untouched");
        }
        assert_eq!(rep.params_after, params);
        assert_eq!(rep.flops_after, flops);
        assert!(rep.params_after < rep.params_before);
        assert!(rep.flops_after < rep.flops_before);
        let z = m.encode(&[ds.view(0).view(), ds.view(1).view()]).unwrap();
        assert_eq!(z.fused.dim(), (60, 3));
        assert!(matches!(
            one_shot_prune(&mut m, ds.views(), &unb, &PnaConfig::default(), Execution::default()),
            Err(PnaError::Ordering(_))
        ));
    }

    #[test]
    fn zero_rate_prune_is_identity() {
        let (mut m, ds) = pretrained(6);
        let before = m.clone();
        let mut acts = Vec::new();
        for (v, e) in m.encoders.iter().enumerate() {
            for (l, a) in e.hidden_activations(ds.view(v).view()).unwrap().into_iter().enumerate() {
                acts.push((v, l, a));
            }
        }
        let plans = plan_layers(&acts, &[0.0, 0.0], 0.5, Execution::Sequential).unwrap();
        assert!(plans.iter().all(|p| p.removed.is_empty() && p.rate == 0.0));
        apply_plan(&mut m, &plans).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn report_json_round_trip() {
        let (mut m, ds) = pretrained(7);
        let unb = unbalance_degree(&ds.dims(), 3).unwrap();
        let rep = one_shot_prune(&mut m, ds.views(), &unb, &PnaConfig::default(), Execution::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("prune_report.json");
        rep.save(&p).unwrap();
        assert_eq!(PruneReport::load(&p).unwrap(), rep);
        let text = rep.to_string();
        assert!(text.contains("params"));
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        for key in ["view", "layer", "width", "rate", "removed", "w_ratio"] {
            assert!(v["plan"]["layers"][0].get(key).is_some(), "{key}");
        }
    }

    proptest! {
        #[test]
        fn normalizer_is_closed_form(d in 2usize..64) {
            let a = gaussian(8, d, d as u64);
            let r = layer_spectrum(a.view(), 0, 0).unwrap();
            prop_assert_eq!(r.normalizer, (d as f64 - 1.0) / 2.0);
            prop_assert!((0.0..=1.0).contains(&r.raw_ratio));
        }

        #[test]
        fn spectrum_and_removed_set_follow_permutations(seed in 0u64..200, shift in 1usize..5) {
            let g = gaussian(40, 3, seed);
            // five neurons, two of them near-duplicates of others
            let a = Array2::from_shape_fn((40, 5), |(i, j)| match j {
                0 => g[[i, 0]],
                1 => g[[i, 1]],
                2 => g[[i, 0]] * 2.0 + 0.01 * g[[i, 2]],
                3 => g[[i, 2]],
                _ => g[[i, 1]] - 0.05 * g[[i, 2]],
            });
            let perm: Vec<usize> = (0..5).map(|j| (j + shift) % 5).collect();
            let b = a.select(Axis(1), &perm);
            let ra = layer_spectrum(a.view(), 0, 0).unwrap();
            let rb = layer_spectrum(b.view(), 0, 0).unwrap();
            for (x, y) in ra.eigenvalues.iter().zip(&rb.eigenvalues) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let rem_a = select_neurons(a.view(), 0.4).unwrap();
            let rem_b: Vec<usize> = select_neurons(b.view(), 0.4).unwrap().into_iter().map(|k| perm[k]).collect();
            let mut rem_b = rem_b;
            rem_b.sort_unstable();
            prop_assert_eq!(rem_a, rem_b);
        }
    }

    #[test]
    fn norm_slots_follow_removed_units() {
        let mut rng = child(1, Stream::Init, 0);
        let mut l = DenseLayer::init(3, 4, Activation::Relu, &mut rng);
        let mut n = LayerNormState::new(4, NormMode::LayerWide);
        n.gamma = Array1::from(vec![1.0, 2.0, 3.0, 4.0]);
        let mut next = DenseLayer::init(4, 2, Activation::Identity, &mut rng);
        remove_units(&mut l, Some(&mut n), &mut next, &[1, 2]).unwrap();
        assert_eq!(n.gamma.to_vec(), vec![1.0, 4.0]);
        assert_eq!(n.running_var.len(), 1);
    }
}
