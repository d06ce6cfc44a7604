use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adamus::data::{generate_toy, load_csv_dataset, unbalance_degree, write_csv_dataset, ToySpec};
use adamus::pipeline::{evaluate_run_dir, metrics_json, run, set_dotted, RunConfig, PRUNE_REPORT_FILE};
use adamus::pna::{tau, PruneReport, TauVariant};
use adamus::Execution;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "adamus", version, about = "Adaptive multi-view sparsity learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TauArg {
    AsPrinted,
    Inverted,
}

#[derive(Subcommand)]
enum Command {
    /// Unbalanced degree of a set of view dimensions.
    Unbalance {
        /// Comma-separated view dimensions, e.g. 6,47,240.
        #[arg(
            long,
            value_delimiter = ',',
            conflicts_with = "dataset",
            required_unless_present = "dataset"
        )]
        dims: Vec<usize>,
        /// Dataset directory (view_k.csv files) to read the dimensions from.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Width of the aligned layer, used by the per-view degree.
        #[arg(long, default_value_t = 128)]
        aligned_dim: usize,
        #[arg(long, value_enum, default_value_t = TauArg::AsPrinted)]
        tau_variant: TauArg,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write the two-view toy benchmark and its ground truth.
    GenerateToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON file with toy spec fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `--field value` overrides of toy spec fields.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        rest: Vec<String>,
    },
    /// Pretrain, prune, fine-tune and evaluate; artifacts go to the output directory.
    Run {
        /// JSON run config; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted overrides such as `--dataset toy --seed 7 --pna.enabled false`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        rest: Vec<String>,
    },
    /// Recompute metrics for a finished run directory from its checkpoint.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Pretty-print a prune report (file or run directory).
    PruneReport {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

/// `--a.b value` / `--a.b=value` pairs; dashes in keys become underscores.
fn parse_overrides(rest: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = rest.iter();
    while let Some(tok) = it.next() {
        let Some(key) = tok.strip_prefix("--") else {
            bail!("expected --key value, got {tok:?}");
        };
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().with_context(|| format!("--{key} needs a value"))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

/// Writes one line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(line: std::fmt::Arguments<'_>) -> Result<()> {
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("ADAMUS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("ADAMUS_THREADS must be a positive integer, got {raw:?}"))?;
    if std::env::var_os("MATMUL_NUM_THREADS").is_none() {
        std::env::set_var("MATMUL_NUM_THREADS", n.to_string());
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn cmd_unbalance(
    dims: Vec<usize>,
    dataset: Option<PathBuf>,
    aligned_dim: usize,
    variant: TauArg,
    as_json: bool,
) -> Result<()> {
    let dims = match dataset {
        Some(dir) => load_csv_dataset(&dir)?.dims(),
        None => dims,
    };
    let report = unbalance_degree(&dims, aligned_dim)?;
    let variant = match variant {
        TauArg::AsPrinted => TauVariant::AsPrinted,
        TauArg::Inverted => TauVariant::Inverted,
    };
    let taus: Vec<f64> = report.per_view.iter().map(|&l| tau(l, variant)).collect();
    if as_json {
        let mut v = serde_json::to_value(&report)?;
        v["tau"] = json!(taus);
        emit(format_args!("{}", serde_json::to_string_pretty(&v)?))?;
        return Ok(());
    }
    emit(format_args!("dims      {dims:?}"))?;
    emit(format_args!("lambda    {:.4}", report.lambda_total))?;
    emit(format_args!("pairwise  {:.4}", report.pairwise))?;
    emit(format_args!("global    {:.4}", report.global))?;
    for (v, (l, t)) in report.per_view.iter().zip(&taus).enumerate() {
        emit(format_args!("view {v}: D={} lambda_v {l:.4} tau_v {t:.4}", dims[v]))?;
    }
    Ok(())
}

fn rows(x: &ndarray::Array2<f64>) -> Value {
    json!(x.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

fn cmd_generate_toy(out: &Path, seed: Option<u64>, config: Option<PathBuf>, rest: &[String]) -> Result<()> {
    let mut value = serde_json::to_value(ToySpec::default())?;
    if let Some(p) = config {
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let patch: Value = serde_json::from_str(&text)?;
        let Value::Object(patch) = patch else {
            bail!("{}: expected a JSON object", p.display());
        };
        for (k, v) in patch {
            value[k] = v;
        }
    }
    for (k, v) in parse_overrides(rest)? {
        set_dotted(&mut value, &k, &v)?;
    }
    if let Some(s) = seed {
        value["seed"] = json!(s);
    }
    let spec: ToySpec = serde_json::from_value(value).context("toy spec")?;
    let (ds, truth) = generate_toy(&spec)?;
    write_csv_dataset(&ds, out)?;
    let truth_json = json!({
        "z": rows(&truth.z),
        "w1": rows(&truth.w1),
        "w2": rows(&truth.w2),
        "labels": truth.labels,
        "layout": truth.layout,
        "spec": spec,
    });
    let path = out.join("truth.json");
    std::fs::write(&path, serde_json::to_string(&truth_json)?)
        .with_context(|| format!("writing {}", path.display()))?;
    eprintln!(
        "wrote {} samples: view_0 {}x{}, view_1 {}x{} to {}",
        ds.n_samples(),
        ds.view(0).nrows(),
        ds.view(0).ncols(),
        ds.view(1).nrows(),
        ds.view(1).ncols(),
        out.display()
    );
    Ok(())
}

fn cmd_run(config: Option<PathBuf>, rest: &[String]) -> Result<()> {
    let overrides = parse_overrides(rest)?;
    let mut cfg = RunConfig::resolve(config.as_deref(), &overrides)?;
    if cfg.output_dir.is_none() {
        cfg.output_dir = Some(PathBuf::from("adamus-run"));
    }
    let out = run(&cfg, Execution::default())?;
    emit(format_args!("{}", metrics_json(&out.metrics)))?;
    eprintln!(
        "params {} -> {}, flops {} -> {}; artifacts in {}",
        out.prune.params_before,
        out.prune.params_after,
        out.prune.flops_before,
        out.prune.flops_after,
        cfg.output_dir.as_deref().unwrap_or(Path::new(".")).display()
    );
    Ok(())
}

fn cmd_prune_report(path: &Path, as_json: bool) -> Result<()> {
    let file = if path.is_dir() {
        path.join(PRUNE_REPORT_FILE)
    } else {
        path.to_path_buf()
    };
    let report = PruneReport::load(&file)?;
    if as_json {
        emit(format_args!("{}", serde_json::to_string_pretty(&report)?))?;
    } else {
        emit(format_args!("{report}"))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Unbalance {
            dims,
            dataset,
            aligned_dim,
            tau_variant,
            json,
        } => cmd_unbalance(dims, dataset, aligned_dim, tau_variant, json),
        Command::GenerateToy {
            out,
            seed,
            config,
            rest,
        } => cmd_generate_toy(&out, seed, config, &rest),
        Command::Run { config, rest } => cmd_run(config, &rest),
        Command::Eval { run_dir } => {
            let metrics = evaluate_run_dir(&run_dir, Execution::default())?;
            emit(format_args!("{}", metrics_json(&metrics)))?;
            Ok(())
        }
        Command::PruneReport { path, json } => cmd_prune_report(&path, json),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
