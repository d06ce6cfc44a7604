//! The multi-view network: one encoder stack per view, each ending in an
//! H-wide aligned layer with sparse batch normalization (MSBN), fused by averaging.

use std::fmt;
use std::path::Path;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::graph_ssl::{ConsensusGraph, PseudoLabels};
use crate::rng::{child, Stream};
use crate::tensor_nn::{
    contrastive_loss, graph_embedding_loss, Activation, Adam, AdamConfig, DenseCache, DenseGrads, DenseLayer,
    LayerNormState, Mode, NormCache, NormGrads, NormMode, ParamSlot, TensorError,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("stage ordering: {0}")]
    Ordering(String),
    #[error("numeric fault in {stage} at epoch {epoch}, batch {batch}: {detail}")]
    NumericFault {
        stage: String,
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Margin contrastive loss on binary pseudo-labels.
    #[default]
    Contrastive,
    /// Similarity-weighted squared distances on the consensus graph.
    GraphEmbedding,
}

/// Hidden widths, either shared by every view or given per view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HiddenDims {
    Shared(Vec<usize>),
    PerView(Vec<Vec<usize>>),
}

impl Default for HiddenDims {
    fn default() -> Self {
        HiddenDims::Shared(vec![512])
    }
}

impl HiddenDims {
    pub fn for_view(&self, v: usize) -> &[usize] {
        match self {
            HiddenDims::Shared(d) => d,
            HiddenDims::PerView(d) => &d[v],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs_pre: usize,
    pub epochs_fine: usize,
    pub batch_size: usize,
    pub margin: f64,
    pub sparsity_weight: f64,
    pub aligned_dim: usize,
    pub hidden_dims: HiddenDims,
    pub bn_mode: NormMode,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs_pre: 50,
            epochs_fine: 50,
            batch_size: 128,
            margin: 1.0,
            sparsity_weight: 1e-3,
            aligned_dim: 128,
            hidden_dims: HiddenDims::default(),
            bn_mode: NormMode::LayerWide,
            loss: LossKind::Contrastive,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_views: usize) -> Result<()> {
        let bad = |m: String| Err(ModelError::Contract(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.margin > 0.0) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.sparsity_weight >= 0.0) {
            return bad(format!("sparsity_weight must be >= 0, got {}", self.sparsity_weight));
        }
        if self.aligned_dim == 0 {
            return bad("aligned_dim must be positive".into());
        }
        match &self.hidden_dims {
            HiddenDims::PerView(d) if d.len() != n_views => {
                return bad(format!("hidden_dims lists {} views, dataset has {n_views}", d.len()))
            }
            HiddenDims::Shared(d) if d.contains(&0) => return bad("hidden width 0".into()),
            HiddenDims::PerView(d) if d.iter().flatten().any(|&w| w == 0) => return bad("hidden width 0".into()),
            _ => {}
        }
        Ok(())
    }
}

/// Dense layer followed by batch normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub dense: DenseLayer,
    pub norm: LayerNormState,
}

struct LayerCache {
    dense: DenseCache,
    norm: NormCache,
}

struct LayerGrads {
    dense: DenseGrads,
    norm: NormGrads,
}

/// Hidden layers are `dense(relu) -> BN`; the last layer is `dense(identity) -> MSBN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEncoder {
    pub layers: Vec<EncoderLayer>,
}

impl ViewEncoder {
    pub fn init(
        d_in: usize,
        hidden: &[usize],
        aligned_dim: usize,
        bn_mode: NormMode,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = d_in;
        for &w in hidden {
            layers.push(EncoderLayer {
                dense: DenseLayer::init(prev, w, Activation::Relu, rng),
                norm: LayerNormState::new(w, bn_mode),
            });
            prev = w;
        }
        layers.push(EncoderLayer {
            dense: DenseLayer::init(prev, aligned_dim, Activation::Identity, rng),
            norm: LayerNormState::new(aligned_dim, bn_mode),
        });
        Self { layers }
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].dense.d_in()
    }

    pub fn msbn(&self) -> &LayerNormState {
        &self.layers.last().expect("encoder has an aligned layer").norm
    }

    pub fn msbn_mut(&mut self) -> &mut LayerNormState {
        &mut self.layers.last_mut().expect("encoder has an aligned layer").norm
    }

    pub fn n_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.dense.n_params()).sum()
    }

    pub fn flops(&self) -> usize {
        self.layers.iter().map(|l| l.dense.flops()).sum()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut h = x.to_owned();
        for l in &self.layers {
            h = l.norm.apply(l.dense.apply(h.view())?.view())?;
        }
        Ok(h)
    }

    /// Post-activation outputs of every hidden dense layer, in inference mode.
    pub fn hidden_activations(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        let mut out = Vec::with_capacity(self.n_hidden());
        let mut h = x.to_owned();
        for l in &self.layers[..self.n_hidden()] {
            let a = l.dense.apply(h.view())?;
            h = l.norm.apply(a.view())?;
            out.push(a);
        }
        Ok(out)
    }

    fn forward(&mut self, x: ArrayView2<f64>, mode: Mode) -> Result<(Array2<f64>, Vec<LayerCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for l in &mut self.layers {
            let (a, dense) = l.dense.forward(h.view())?;
            let (y, norm) = l.norm.forward(a.view(), mode)?;
            caches.push(LayerCache { dense, norm });
            h = y;
        }
        Ok((h, caches))
    }

    fn backward(&self, caches: &[LayerCache], dz: Array2<f64>) -> Vec<LayerGrads> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = dz;
        for (i, (l, c)) in self.layers.iter().zip(caches).enumerate().rev() {
            let (da, norm) = l.norm.backward(&c.norm, g.view());
            let (dx, dense) = l.dense.backward(&c.dense, da.view(), i > 0);
            grads.push(LayerGrads { dense, norm });
            if let Some(dx) = dx {
                g = dx;
            } else {
                break;
            }
        }
        grads.reverse();
        grads
    }
}

/// Per-view aligned representations and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedBatch {
    pub per_view: Vec<Array2<f64>>,
    pub fused: Array2<f64>,
}

fn fuse(per_view: Vec<Array2<f64>>) -> FusedBatch {
    let mut fused = Array2::<f64>::zeros(per_view[0].dim());
    for z in &per_view {
        fused += z;
    }
    fused /= per_view.len() as f64;
    FusedBatch { per_view, fused }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingStage {
    Initialized,
    Pretrained,
    Pruned,
    PruneSkipped,
    Finetuned,
}

impl fmt::Display for TrainingStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit enum");
        write!(f, "{}", s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamusModel {
    pub encoders: Vec<ViewEncoder>,
    pub aligned_dim: usize,
    pub stage: TrainingStage,
}

/// What the pairwise loss compares against for the whole dataset.
#[derive(Debug, Clone, Copy)]
pub struct Supervision<'a> {
    pub labels: &'a PseudoLabels,
    pub consensus: &'a ConsensusGraph,
}

/// Batch-level pair targets.
#[derive(Debug, Clone)]
pub enum PairTargets {
    Labels(Array2<u8>),
    Similarity(Array2<f64>),
}

impl Supervision<'_> {
    fn batch(&self, kind: LossKind, idx: &[usize]) -> PairTargets {
        match kind {
            LossKind::Contrastive => PairTargets::Labels(self.labels.batch(idx)),
            LossKind::GraphEmbedding => {
                PairTargets::Similarity(Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| {
                    self.consensus.matrix[[idx[a], idx[b]]]
                }))
            }
        }
    }
}

/// Parameter gradients laid out like [`AdamusModel::param_slots`].
pub struct ModelGrads(Vec<Vec<LayerGrads>>);

impl ModelGrads {
    /// Flattened in slot order.
    pub fn flatten(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for view in &self.0 {
            for g in view {
                out.push(g.dense.weight.iter().copied().collect());
                out.push(g.dense.bias.to_vec());
                out.push(g.norm.gamma.to_vec());
                out.push(g.norm.beta.to_vec());
            }
        }
        out
    }
}

impl AdamusModel {
    pub fn new(dims: &[usize], config: &TrainConfig) -> Result<Self> {
        config.validate(dims.len())?;
        let encoders = dims
            .iter()
            .enumerate()
            .map(|(v, &d)| {
                let mut rng = child(config.seed, Stream::Init, v as u64);
                ViewEncoder::init(
                    d,
                    config.hidden_dims.for_view(v),
                    config.aligned_dim,
                    config.bn_mode,
                    &mut rng,
                )
            })
            .collect();
        Ok(Self {
            encoders,
            aligned_dim: config.aligned_dim,
            stage: TrainingStage::Initialized,
        })
    }

    pub fn n_views(&self) -> usize {
        self.encoders.len()
    }

    pub fn n_params(&self) -> usize {
        self.encoders.iter().map(ViewEncoder::n_params).sum()
    }

    pub fn flops(&self) -> usize {
        self.encoders.iter().map(ViewEncoder::flops).sum()
    }

    /// MSBN scale vectors, one per view.
    pub fn msbn_gammas(&self) -> Vec<Array1<f64>> {
        self.encoders.iter().map(|e| e.msbn().gamma.clone()).collect()
    }

    fn check_views(&self, views: &[ArrayView2<f64>]) -> Result<()> {
        if views.len() != self.n_views() {
            return Err(ModelError::Contract(format!(
                "model has {} views, got {}",
                self.n_views(),
                views.len()
            )));
        }
        for (v, (e, x)) in self.encoders.iter().zip(views).enumerate() {
            if e.d_in() != x.ncols() {
                return Err(ModelError::Contract(format!(
                    "view {v} expects width {}, got {}",
                    e.d_in(),
                    x.ncols()
                )));
            }
        }
        Ok(())
    }

    /// Inference-mode encoding and fusion.
    pub fn encode(&self, views: &[ArrayView2<f64>]) -> Result<FusedBatch> {
        self.check_views(views)?;
        let per_view = self
            .encoders
            .iter()
            .zip(views)
            .map(|(e, x)| e.apply(*x))
            .collect::<Result<Vec<_>>>()?;
        Ok(fuse(per_view))
    }

    /// Training-mode encoding (batch statistics, running estimates updated).
    pub fn encode_train(&mut self, views: &[ArrayView2<f64>]) -> Result<FusedBatch> {
        Ok(self.forward_train(views)?.0)
    }

    fn forward_train(&mut self, views: &[ArrayView2<f64>]) -> Result<(FusedBatch, Vec<Vec<LayerCache>>)> {
        self.check_views(views)?;
        let mut per_view = Vec::with_capacity(views.len());
        let mut caches = Vec::with_capacity(views.len());
        for (e, x) in self.encoders.iter_mut().zip(views) {
            let (z, c) = e.forward(*x, Mode::Train)?;
            per_view.push(z);
            caches.push(c);
        }
        Ok((fuse(per_view), caches))
    }

    /// Loss of one batch and gradients for every parameter tensor.
    pub fn loss_and_grads(
        &mut self,
        views: &[ArrayView2<f64>],
        targets: &PairTargets,
        config: &TrainConfig,
    ) -> Result<(f64, ModelGrads)> {
        let (batch, caches) = self.forward_train(views)?;
        let gammas = self.msbn_gammas();
        let gamma_views: Vec<_> = gammas.iter().map(|g| g.view()).collect();
        let out = match targets {
            PairTargets::Labels(l) => contrastive_loss(
                batch.fused.view(),
                l.view(),
                config.margin,
                config.sparsity_weight,
                &gamma_views,
            )?,
            PairTargets::Similarity(s) => {
                graph_embedding_loss(batch.fused.view(), s.view(), config.sparsity_weight, &gamma_views)?
            }
        };
        let share = 1.0 / self.n_views() as f64;
        let mut grads = Vec::with_capacity(self.n_views());
        for (v, (e, c)) in self.encoders.iter().zip(&caches).enumerate() {
            let mut g = e.backward(c, &out.grad_z * share);
            let last = g.last_mut().expect("aligned layer");
            last.norm.gamma += &out.grad_gammas[v];
            grads.push(g);
        }
        Ok((out.loss, ModelGrads(grads)))
    }

    /// Parameter tensors in a fixed order: per view, per layer: weight, bias, gamma, beta.
    pub fn param_slots<'a>(&'a mut self, grads: &'a [Vec<f64>]) -> Vec<ParamSlot<'a>> {
        let mut slots = Vec::new();
        let mut g = grads.iter();
        for (v, e) in self.encoders.iter_mut().enumerate() {
            for (l, layer) in e.layers.iter_mut().enumerate() {
                let tag = format!("view{v}.layer{l}");
                slots.push(ParamSlot {
                    name: format!("{tag}.weight"),
                    values: layer.dense.weight.as_slice_mut().expect("standard layout"),
                    grads: g.next().expect("gradient per slot"),
                });
                slots.push(ParamSlot {
                    name: format!("{tag}.bias"),
                    values: layer.dense.bias.as_slice_mut().expect("contiguous"),
                    grads: g.next().expect("gradient per slot"),
                });
                slots.push(ParamSlot {
                    name: format!("{tag}.gamma"),
                    values: layer.norm.gamma.as_slice_mut().expect("contiguous"),
                    grads: g.next().expect("gradient per slot"),
                });
                slots.push(ParamSlot {
                    name: format!("{tag}.beta"),
                    values: layer.norm.beta.as_slice_mut().expect("contiguous"),
                    grads: g.next().expect("gradient per slot"),
                });
            }
        }
        slots
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |message: String| ModelError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let json = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| err(e.to_string()))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |message: String| ModelError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

/// Runs `epochs` of Adam over shuffled mini-batches. Trailing batches with fewer
/// than two rows are skipped. Returns the mean batch loss per epoch.
fn train_stage(
    model: &mut AdamusModel,
    data: &[Array2<f64>],
    supervision: Supervision<'_>,
    config: &TrainConfig,
    epochs: usize,
    stage: &str,
    stream_index: u64,
) -> Result<Vec<f64>> {
    let n = data.first().map_or(0, |x| x.nrows());
    if supervision.labels.matrix.nrows() != n || supervision.consensus.matrix.nrows() != n {
        return Err(ModelError::Contract(format!(
            "supervision covers {} samples, dataset has {n}",
            supervision.labels.matrix.nrows()
        )));
    }
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut rng = child(config.seed, Stream::Shuffle, stream_index);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let fault = |detail: String| ModelError::NumericFault {
                stage: stage.to_string(),
                epoch,
                batch,
                detail,
            };
            let views: Vec<Array2<f64>> = data.iter().map(|x| x.select(Axis(0), idx)).collect();
            let views: Vec<_> = views.iter().map(|x| x.view()).collect();
            let targets = supervision.batch(config.loss, idx);
            let (loss, grads) = model.loss_and_grads(&views, &targets, config)?;
            if !loss.is_finite() {
                return Err(fault(format!("loss is {loss}")));
            }
            let flat = grads.flatten();
            let mut slots = model.param_slots(&flat);
            adam.step(&mut slots).map_err(|e| match e {
                TensorError::NumericFault { tensor } => fault(format!("non-finite gradient in {tensor}")),
                other => ModelError::Tensor(other),
            })?;
            total += loss;
            count += 1;
        }
        history.push(if count == 0 { 0.0 } else { total / count as f64 });
    }
    Ok(history)
}

/// Stage 1 encoder training on the pseudo-labels.
pub fn pretrain(
    model: &mut AdamusModel,
    data: &[Array2<f64>],
    supervision: Supervision<'_>,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    if model.stage != TrainingStage::Initialized {
        return Err(ModelError::Ordering(format!(
            "pretrain needs a fresh model, stage is {}",
            model.stage
        )));
    }
    let h = train_stage(model, data, supervision, config, config.epochs_pre, "pretrain", 0)?;
    model.stage = TrainingStage::Pretrained;
    Ok(h)
}

/// Stage 3 training of the compressed (or explicitly unpruned) model.
pub fn finetune(
    model: &mut AdamusModel,
    data: &[Array2<f64>],
    supervision: Supervision<'_>,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    if !matches!(model.stage, TrainingStage::Pruned | TrainingStage::PruneSkipped) {
        return Err(ModelError::Ordering(format!(
            "finetune needs a pruned model or an explicit skip, stage is {}",
            model.stage
        )));
    }
    let h = train_stage(model, data, supervision, config, config.epochs_fine, "finetune", 1)?;
    model.stage = TrainingStage::Finetuned;
    Ok(h)
}

/// Marks stage 2 as deliberately skipped.
pub fn skip_pruning(model: &mut AdamusModel) -> Result<()> {
    if model.stage != TrainingStage::Pretrained {
        return Err(ModelError::Ordering(format!(
            "pruning can only be skipped after pretraining, stage is {}",
            model.stage
        )));
    }
    model.stage = TrainingStage::PruneSkipped;
    Ok(())
}

/// Full-dataset fused embeddings in inference mode, in row order.
pub fn extract_representations(model: &AdamusModel, data: &[Array2<f64>], exec: Execution) -> Result<Array2<f64>> {
    const CHUNK: usize = 256;
    let n = data.first().map_or(0, |x| x.nrows());
    let chunks = n.div_ceil(CHUNK);
    let parts = exec.map_range(chunks, |c| {
        let rows = (c * CHUNK)..((c + 1) * CHUNK).min(n);
        let views: Vec<_> = data.iter().map(|x| x.slice(ndarray::s![rows.clone(), ..])).collect();
        model.encode(&views).map(|b| b.fused)
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        return Ok(Array2::zeros((0, model.aligned_dim)));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("equal widths"))
}

/// `epoch,loss` CSV with a header.
pub fn write_loss_csv(path: impl AsRef<Path>, history: &[f64]) -> std::io::Result<()> {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        s.push_str(&format!("{e},{l}\n"));
    }
    std::fs::write(path, s)
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter of the model, for one fixed batch.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    model: &AdamusModel,
    views: &[ArrayView2<f64>],
    targets: &PairTargets,
    config: &TrainConfig,
    step: f64,
    floor: f64,
) -> Result<f64> {
    let mut probe = model.clone();
    let (_, grads) = probe.loss_and_grads(views, targets, config)?;
    let analytic = grads.flatten();
    let mut worst = 0.0f64;
    for (s, slot_grads) in analytic.iter().enumerate() {
        for (i, &a) in slot_grads.iter().enumerate() {
            let eval = |delta: f64| -> Result<f64> {
                let mut m = model.clone();
                let zeros: Vec<Vec<f64>> = analytic.iter().map(|g| vec![0.0; g.len()]).collect();
                m.param_slots(&zeros)[s].values[i] += delta;
                Ok(m.loss_and_grads(views, targets, config)?.0)
            };
            let num = (eval(step)? - eval(-step)?) / (2.0 * step);
            let err = (a - num).abs() / a.abs().max(num.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
