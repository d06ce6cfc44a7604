//! End-to-end orchestration: data, graphs and pseudo-labels, pretraining, one-shot
//! pruning, fine-tuning, evaluation, and the artifacts of a run directory.

use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::data::{
    generate_toy, load_csv_dataset, standardize, standardize_matrix, unbalance_degree, write_matrix_csv,
    MultiViewDataset, ToyGroundTruth, ToySpec,
};
use crate::eval::{evaluate_classification, evaluate_clustering, Complexity, EvalConfig, EvalTask, RunMetrics};
use crate::exec::Execution;
use crate::graph_ssl::{
    build_view_graph, fit_consensus, make_pseudo_labels, resolve_threshold, ConsensusConfig, ConsensusGraph,
    EpsilonMode, PseudoLabels, SigmaMode,
};
use crate::model::{
    extract_representations, finetune, pretrain, skip_pruning, write_loss_csv, AdamusModel, Supervision, TrainConfig,
};
use crate::pna::{one_shot_prune, PnaConfig, PrunePlan, PruneReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("stage {stage} failed: {cause}")]
    Stage { stage: &'static str, cause: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

type Result<T> = std::result::Result<T, PipelineError>;

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        cause: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub k: usize,
    pub epsilon_mode: EpsilonMode,
    pub kernel_sigma_mode: SigmaMode,
    pub consensus: ConsensusConfig,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 10,
            epsilon_mode: EpsilonMode::Median,
            kernel_sigma_mode: SigmaMode::MeanSqDist,
            consensus: ConsensusConfig::default(),
        }
    }
}

/// Everything a run needs. The top-level `seed` drives every random stream and
/// overrides `train.seed` and `toy.seed` on resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// `"toy"` or a directory of `view_k.csv` files.
    pub dataset: String,
    pub toy: ToySpec,
    /// Standardize every view column before graphs and training.
    pub standardize: bool,
    pub train: TrainConfig,
    pub pna: PnaConfig,
    pub graph: GraphConfig,
    pub eval: EvalConfig,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "toy".into(),
            toy: ToySpec::default(),
            standardize: true,
            train: TrainConfig::default(),
            pna: PnaConfig::default(),
            graph: GraphConfig::default(),
            eval: EvalConfig::default(),
            output_dir: None,
            seed: 0,
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Sets `a.b.c` in a JSON object. The value is parsed as JSON when possible and
/// taken as a string otherwise.
pub fn set_dotted(target: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = target;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(PipelineError::Config(format!("malformed key {path:?}")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| PipelineError::Config(format!("{path}: {} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    unreachable!("path has at least one part")
}

impl RunConfig {
    /// Defaults, then the optional JSON file, then `key=value` overrides on dotted
    /// paths. Unknown keys anywhere are rejected.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default()).expect("plain data");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let patch: Value =
                serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            if !patch.is_object() {
                return Err(PipelineError::Config(format!(
                    "{}: expected a JSON object",
                    path.display()
                )));
            }
            merge(&mut value, patch);
        }
        for (k, v) in overrides {
            set_dotted(&mut value, k, v)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.toy.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: String| PipelineError::Config(e);
        self.pna.validate().map_err(|e| cfg(e.to_string()))?;
        self.eval.validate().map_err(|e| cfg(e.to_string()))?;
        if self.dataset == "toy" {
            self.toy.validate().map_err(|e| cfg(e.to_string()))?;
        }
        if self.graph.k == 0 {
            return Err(cfg("graph.k must be positive".into()));
        }
        if let EpsilonMode::Fixed(e) = self.graph.epsilon_mode {
            if !(0.0..1.0).contains(&e) {
                return Err(cfg(format!(
                    "graph.epsilon_mode fixed threshold must lie in [0, 1), got {e}"
                )));
            }
        }
        if self.graph.consensus.steps == 0 || !(self.graph.consensus.lr > 0.0) {
            return Err(cfg("graph.consensus needs positive steps and lr".into()));
        }
        // train is checked against the view count once the dataset is loaded
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }
}

/// Raw dataset named by the config, plus toy ground truth when generated.
pub fn load_dataset(config: &RunConfig) -> Result<(MultiViewDataset, Option<ToyGroundTruth>)> {
    if config.dataset == "toy" {
        let (ds, truth) = generate_toy(&config.toy).map_err(stage("data"))?;
        Ok((ds, Some(truth)))
    } else {
        Ok((load_csv_dataset(&config.dataset).map_err(stage("data"))?, None))
    }
}

fn prepared(config: &RunConfig, ds: MultiViewDataset) -> MultiViewDataset {
    if config.standardize {
        standardize(&ds)
    } else {
        ds
    }
}

/// Graph construction, consensus and pseudo-labels over the given views.
pub fn self_supervision(
    views: &[Array2<f64>],
    graph: &GraphConfig,
    exec: Execution,
) -> Result<(ConsensusGraph, PseudoLabels)> {
    let graphs = views
        .iter()
        .map(|x| build_view_graph(x.view(), graph.k, graph.kernel_sigma_mode, exec))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(stage("graph"))?;
    let consensus = if graphs.len() == 1 {
        let g = graphs.into_iter().next().expect("one graph");
        ConsensusGraph {
            matrix: g.matrix,
            alpha: vec![1.0],
            objective: 0.0,
        }
    } else {
        fit_consensus(&graphs, graph.consensus).map_err(stage("graph"))?
    };
    let eps = resolve_threshold(&consensus, graph.epsilon_mode);
    let labels = make_pseudo_labels(&consensus, eps).map_err(stage("graph"))?;
    Ok((consensus, labels))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub model: AdamusModel,
    pub prune: PruneReport,
    pub pretrain_loss: Vec<f64>,
    pub finetune_loss: Vec<f64>,
    pub embeddings: Array2<f64>,
    pub metrics: Vec<RunMetrics>,
    pub pseudo_label_threshold: f64,
    pub truth: Option<ToyGroundTruth>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub const CONFIG_FILE: &str = "config.resolved.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PRUNE_REPORT_FILE: &str = "prune_report.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

/// Evaluates embeddings for the configured task(s).
pub fn evaluate_embeddings(
    z: &Array2<f64>,
    labels: &[usize],
    config: &RunConfig,
    complexity: Option<Complexity>,
    exec: Execution,
) -> Result<Vec<RunMetrics>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = Vec::new();
    if matches!(config.eval.task, EvalTask::Clustering | EvalTask::Both) {
        out.push(evaluate_clustering(z.view(), labels, k, &config.eval, config.seed, exec).map_err(stage("eval"))?);
    }
    if matches!(config.eval.task, EvalTask::Classification | EvalTask::Both) {
        out.push(evaluate_classification(z.view(), labels, &config.eval, config.seed).map_err(stage("eval"))?);
    }
    for m in &mut out {
        m.complexity = complexity;
    }
    Ok(out)
}

fn complexity_of(r: &PruneReport) -> Complexity {
    Complexity {
        params_before: r.params_before,
        params_after: r.params_after,
        flops_before: r.flops_before,
        flops_after: r.flops_after,
    }
}

/// Trained model, prune report, pretrain and finetune loss curves, pseudo-label threshold.
pub type TrainOutcome = (AdamusModel, PruneReport, Vec<f64>, Vec<f64>, f64);

/// Training stages on already prepared views; no artifacts are written.
pub fn train_model(views: &[Array2<f64>], config: &RunConfig, exec: Execution) -> Result<TrainOutcome> {
    config
        .train
        .validate(views.len())
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let (consensus, labels) = self_supervision(views, &config.graph, exec)?;
    let sup = Supervision {
        labels: &labels,
        consensus: &consensus,
    };
    let dims: Vec<usize> = views.iter().map(|x| x.ncols()).collect();
    let mut model = AdamusModel::new(&dims, &config.train).map_err(stage("pretrain"))?;
    let pre = pretrain(&mut model, views, sup, &config.train).map_err(stage("pretrain"))?;

    let prune = if config.pna.enabled && views.len() >= 2 {
        let unb = unbalance_degree(&dims, config.train.aligned_dim).map_err(stage("prune"))?;
        one_shot_prune(&mut model, views, &unb, &config.pna, exec).map_err(stage("prune"))?
    } else {
        skip_pruning(&mut model).map_err(stage("prune"))?;
        PruneReport {
            plan: PrunePlan {
                layers: Vec::new(),
                tau: Vec::new(),
                lambda: Vec::new(),
                rate_cap: config.pna.rate_cap,
                tau_variant: config.pna.tau_variant,
            },
            params_before: model.n_params(),
            params_after: model.n_params(),
            flops_before: model.flops(),
            flops_after: model.flops(),
        }
    };
    let fine = finetune(&mut model, views, sup, &config.train).map_err(stage("finetune"))?;
    Ok((model, prune, pre, fine, labels.threshold))
}

/// Stage 1 (graphs, pseudo-labels, pretraining), stage 2 (one-shot pruning unless
/// disabled), stage 3 (fine-tuning), then evaluation. With an `output_dir`, every
/// artifact is written as soon as it exists.
pub fn run(config: &RunConfig, exec: Execution) -> Result<RunOutcome> {
    config.validate()?;
    let out_dir = config.output_dir.clone();
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_text(&dir.join(CONFIG_FILE), &config.to_json())?;
    }
    let (raw, truth) = load_dataset(config)?;
    let labels = raw.labels().map(<[usize]>::to_vec);
    let ds = prepared(config, raw);

    let (model, prune, pre, fine, threshold) = train_model(ds.views(), config, exec)?;
    if let Some(dir) = &out_dir {
        write_loss_csv(dir.join("loss_pretrain.csv"), &pre).map_err(|e| io_err(dir, e))?;
        write_loss_csv(dir.join("loss_finetune.csv"), &fine).map_err(|e| io_err(dir, e))?;
        prune.save(dir.join(PRUNE_REPORT_FILE)).map_err(stage("prune"))?;
        model
            .save_checkpoint(dir.join(CHECKPOINT_FILE))
            .map_err(stage("finetune"))?;
    }

    let z = extract_representations(&model, ds.views(), exec).map_err(stage("eval"))?;
    if let Some(dir) = &out_dir {
        write_matrix_csv(dir.join(EMBEDDINGS_FILE), &z).map_err(stage("eval"))?;
    }
    let metrics = match &labels {
        Some(l) => evaluate_embeddings(&z, l, config, Some(complexity_of(&prune)), exec)?,
        None => Vec::new(),
    };
    if let Some(dir) = &out_dir {
        write_text(&dir.join(METRICS_FILE), &metrics_json(&metrics))?;
    }
    Ok(RunOutcome {
        config: config.clone(),
        model,
        prune,
        pretrain_loss: pre,
        finetune_loss: fine,
        embeddings: z,
        metrics,
        pseudo_label_threshold: threshold,
        truth,
    })
}

pub fn metrics_json(metrics: &[RunMetrics]) -> String {
    serde_json::to_string_pretty(metrics).expect("plain data")
}

/// Recomputes the metrics of a finished run directory from its resolved config
/// and checkpoint, without retraining.
pub fn evaluate_run_dir(dir: &Path, exec: Execution) -> Result<Vec<RunMetrics>> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| io_err(&cfg_path, e))?;
    let config: RunConfig = serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
    let model = AdamusModel::load_checkpoint(dir.join(CHECKPOINT_FILE)).map_err(stage("eval"))?;
    let prune = PruneReport::load(dir.join(PRUNE_REPORT_FILE)).map_err(stage("eval"))?;
    let (raw, _) = load_dataset(&config)?;
    let labels = raw
        .labels()
        .map(<[usize]>::to_vec)
        .ok_or_else(|| PipelineError::Stage {
            stage: "eval",
            cause: "dataset has no labels".into(),
        })?;
    let ds = prepared(&config, raw);
    let z = extract_representations(&model, ds.views(), exec).map_err(stage("eval"))?;
    evaluate_embeddings(&z, &labels, &config, Some(complexity_of(&prune)), exec)
}

/// Reference model for the multi-view architecture: the standardized views are
/// concatenated into one input and pushed through the same graph, pseudo-label
/// and contrastive training with a single encoder (no pruning).
pub fn concat_baseline(
    ds: &MultiViewDataset,
    config: &RunConfig,
    exec: Execution,
) -> Result<(Array2<f64>, AdamusModel)> {
    let std_views: Vec<Array2<f64>> = ds.views().iter().map(standardize_matrix).collect();
    let parts: Vec<_> = std_views.iter().map(|x| x.view()).collect();
    let joined = concatenate(Axis(1), &parts).expect("row-aligned views");
    let views = vec![joined];
    let mut cfg = config.clone();
    cfg.pna.enabled = false;
    cfg.train.hidden_dims = crate::model::HiddenDims::Shared(config.train.hidden_dims.for_view(0).to_vec());
    let (model, _, _, _, _) = train_model(&views, &cfg, exec)?;
    let z = extract_representations(&model, &views, exec).map_err(stage("eval"))?;
    Ok((z, model))
}
