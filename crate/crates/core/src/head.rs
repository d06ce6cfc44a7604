//! A plain relu MLP classifier and the dense-versus-pruned overfitting study.
//!
//! The study trains the same head twice on one view: once dense, once pruned by
//! principal neuron analysis after a few warm-up epochs. Validation cross-entropy
//! is recorded after every epoch.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pna::{layer_spectrum, pruning_rate, remove_units, select_neurons, PnaError};
use crate::rng::{child, stream, Stream};
use crate::tensor_nn::{
    softmax_cross_entropy, Activation, Adam, AdamConfig, DenseCache, DenseLayer, ParamSlot, TensorError,
};

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Pna(#[from] PnaError),
}

pub type Result<T> = std::result::Result<T, HeadError>;

/// `d_in -> hidden... -> classes`; relu on hidden layers, logits out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    pub layers: Vec<DenseLayer>,
}

impl MlpClassifier {
    pub fn new(d_in: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || classes < 2 || hidden.contains(&0) {
            return Err(HeadError::Contract(format!(
                "bad classifier shape {d_in} -> {hidden:?} -> {classes}"
            )));
        }
        let mut rng = stream(seed, Stream::Init);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = d_in;
        for &h in hidden {
            layers.push(DenseLayer::init(width, h, Activation::Relu, &mut rng));
            width = h;
        }
        layers.push(DenseLayer::init(width, classes, Activation::Identity, &mut rng));
        Ok(Self { layers })
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.d_out()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.n_params()).sum()
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = layer.apply(h.view())?;
        }
        Ok(h)
    }

    /// Post-relu outputs of each hidden layer.
    pub fn hidden_activations(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        let mut out = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.to_owned();
        for layer in &self.layers[..self.layers.len() - 1] {
            h = layer.apply(h.view())?;
            out.push(h.clone());
        }
        Ok(out)
    }

    pub fn loss(&self, x: ArrayView2<f64>, y: &[usize]) -> Result<f64> {
        Ok(softmax_cross_entropy(self.logits(x)?.view(), y)?.0)
    }

    /// Mean cross-entropy and per-layer `(weight, bias)` gradients.
    pub fn loss_and_grads(&self, x: ArrayView2<f64>, y: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut caches: Vec<DenseCache> = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &self.layers {
            let (out, cache) = layer.forward(h.view())?;
            caches.push(cache);
            h = out;
        }
        let (loss, mut g) = softmax_cross_entropy(h.view(), y)?;
        let mut grads = vec![Vec::new(); 2 * self.layers.len()];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (gin, pg) = layer.backward(&caches[l], g.view(), l > 0);
            grads[2 * l] = pg.weight.into_raw_vec_and_offset().0;
            grads[2 * l + 1] = pg.bias.into_raw_vec_and_offset().0;
            if let Some(gin) = gin {
                g = gin;
            }
        }
        Ok((loss, grads))
    }

    fn slots<'a>(&'a mut self, grads: &'a [Vec<f64>]) -> Vec<ParamSlot<'a>> {
        let mut slots = Vec::with_capacity(grads.len());
        let mut g = grads.iter();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            slots.push(ParamSlot {
                name: format!("layer{l}.weight"),
                values: layer.weight.as_slice_mut().expect("standard layout"),
                grads: g.next().expect("gradient per slot"),
            });
            slots.push(ParamSlot {
                name: format!("layer{l}.bias"),
                values: layer.bias.as_slice_mut().expect("contiguous"),
                grads: g.next().expect("gradient per slot"),
            });
        }
        slots
    }

    /// One shuffled pass of mini-batch Adam; returns the mean batch loss.
    pub fn train_epoch(
        &mut self,
        adam: &mut Adam,
        x: ArrayView2<f64>,
        y: &[usize],
        batch_size: usize,
        rng: &mut impl rand::Rng,
    ) -> Result<f64> {
        let mut order: Vec<usize> = (0..x.nrows()).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for idx in order.chunks(batch_size.max(1)) {
            let xb = x.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let (loss, grads) = self.loss_and_grads(xb.view(), &yb)?;
            adam.step(&mut self.slots(&grads))?;
            total += loss;
            count += 1;
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    /// One-shot structural prune of every hidden layer from its activations on `x`.
    /// Returns the rate applied to each hidden layer.
    pub fn prune(&mut self, x: ArrayView2<f64>, tau: f64, rate_cap: f64) -> Result<Vec<f64>> {
        let acts = self.hidden_activations(x)?;
        let mut rates = Vec::with_capacity(acts.len());
        for (l, a) in acts.iter().enumerate() {
            let spectrum = layer_spectrum(a.view(), 0, l)?;
            let rate = pruning_rate(&spectrum, tau, rate_cap);
            let removed = select_neurons(a.view(), rate)?;
            let (head, tail) = self.layers.split_at_mut(l + 1);
            remove_units(&mut head[l], None, &mut tail[0], &removed)?;
            rates.push(rate);
        }
        Ok(rates)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverfitConfig {
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub prune_after: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub rate_cap: f64,
    pub seed: u64,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![1024, 512],
            epochs: 30,
            prune_after: 5,
            lr: 1e-3,
            batch_size: 128,
            rate_cap: 0.95,
            seed: 0,
        }
    }
}

/// Per-epoch validation losses of the two variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitCurves {
    pub dense: Vec<f64>,
    pub pruned: Vec<f64>,
    pub pruned_widths: Vec<usize>,
    pub rates: Vec<f64>,
}

/// Trains a dense head and a pruned head from the same initialization and
/// shuffling seed. The pruned variant is pruned with moderating factor `tau`
/// after `prune_after` epochs (activations over the training rows) and continues
/// with a fresh optimizer, since its parameter shapes change.
pub fn overfit_study(
    train: (ArrayView2<f64>, &[usize]),
    val: (ArrayView2<f64>, &[usize]),
    classes: usize,
    tau: f64,
    cfg: &OverfitConfig,
) -> Result<OverfitCurves> {
    if cfg.prune_after == 0 || cfg.prune_after >= cfg.epochs {
        return Err(HeadError::Contract(format!(
            "prune_after must lie in 1..{}, got {}",
            cfg.epochs, cfg.prune_after
        )));
    }
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let base = MlpClassifier::new(train.0.ncols(), &cfg.hidden_dims, classes, cfg.seed)?;
    let mut curves = Vec::with_capacity(2);
    let mut pruned_info = (Vec::new(), Vec::new());
    for prune in [false, true] {
        let mut net = base.clone();
        let mut adam = Adam::new(adam_cfg);
        let mut rng = child(cfg.seed, Stream::Shuffle, 0);
        let mut val_loss = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            if prune && epoch == cfg.prune_after {
                pruned_info.1 = net.prune(train.0, tau, cfg.rate_cap)?;
                pruned_info.0 = net.hidden_widths();
                adam = Adam::new(adam_cfg);
            }
            net.train_epoch(&mut adam, train.0, train.1, cfg.batch_size, &mut rng)?;
            val_loss.push(net.loss(val.0, val.1)?);
        }
        curves.push(val_loss);
    }
    let pruned = curves.pop().expect("two variants");
    let dense = curves.pop().expect("two variants");
    Ok(OverfitCurves {
        dense,
        pruned,
        pruned_widths: pruned_info.0,
        rates: pruned_info.1,
    })
}

/// Ordinary least-squares slope of `y` against `0, 1, 2, ...`.
pub fn least_squares_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (v - my);
        sxx += dx * dx;
    }
    sxy / sxx
}
