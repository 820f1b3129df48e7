//! Command dispatch for the `fcg` binary.
//!
//! Every command resolves one [`RunConfig`] (file + `--set` overrides +
//! flag shortcuts), runs on the 64-bit pipeline, and leaves artifacts in
//! `--out` with the resolved config embedded, so any artifact can be
//! reproduced from its own header.

use clap::{Parser, Subcommand};
use fcg_core::config::{Ablation, RunConfig};
use fcg_core::evalkit::{linear_probe, ProbeResult, SplitSpec};
use fcg_core::frequency::write_contrib_csv;
use fcg_core::graph::{
    generate_synthetic, load_graph, save_graph, EdgePolicy, GraphFormat, SynthKind, SynthParams,
};
use fcg_core::spectral::edge_list_hash;
use fcg_core::trainer::{
    load_checkpoint, preprocess_for_config, save_checkpoint, train, write_history_csv,
    PreprocessArtifacts, TrainOutcome,
};
use fcg_core::{Error, Graph64};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Environment variable pointing at a shared spectral-cache directory.
pub const CACHE_DIR_ENV: &str = "FCG_CACHE_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "fcg",
    about = "Graph self-supervised learning with frequency-contribution-guided corruption",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run-config file (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override one config key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    pub out: PathBuf,

    /// Shortcut for `--set seed=N`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Worker threads (kept at 1 for deterministic runs).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Compute the spectral cache and contribution scores.
    Preprocess,
    /// Train the encoder; writes a checkpoint and loss history.
    Train,
    /// Frozen-encoder linear probe on node labels.
    Eval,
    /// Run the baseline plus all six ablation variants.
    Ablate,
    /// Grid over loss weights and sampling rates.
    Sweep,
    /// Generate a synthetic block-model dataset.
    Synth,
}

/// Failure modes mapped to exit codes: config errors exit 1, runtime
/// errors exit 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

fn classify(e: Error) -> CliError {
    match e {
        Error::Config(_) | Error::Parse { .. } => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", cli.out.display())))?;
    match cli.command {
        Command::Synth => cmd_synth(&cfg, &cli.out),
        Command::Preprocess => cmd_preprocess(&cfg, &cli.out),
        Command::Train => cmd_train(&cfg, &cli.out).map(|_| ()),
        Command::Eval => cmd_eval(&cfg, &cli.out),
        Command::Ablate => cmd_ablate(&cfg, &cli.out),
        Command::Sweep => cmd_sweep(&cfg, &cli.out),
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::parse_file(path).map_err(classify)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(cli.overrides.iter().map(String::as_str))
        .map_err(classify)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.validate().map_err(classify)?;
    Ok(cfg)
}

fn synth_params(cfg: &RunConfig) -> Result<SynthParams, CliError> {
    let kind = match cfg.synth_kind.as_str() {
        "sbm" => SynthKind::Sbm,
        "heterophilous-blocks" => SynthKind::HeterophilousBlocks,
        other => return Err(CliError::Config(format!("unknown synth kind `{other}`"))),
    };
    Ok(SynthParams {
        kind,
        block_sizes: cfg.synth_blocks.clone(),
        p_in: cfg.synth_p_in,
        p_out: cfg.synth_p_out,
        feature_dim: cfg.synth_feature_dim,
        noise: cfg.synth_noise,
        seed: cfg.seed,
    })
}

/// Load the configured dataset, or synthesize one when no path is set.
fn load_dataset(cfg: &RunConfig) -> Result<Graph64, CliError> {
    if cfg.data_path.is_empty() {
        return generate_synthetic(&synth_params(cfg)?).map_err(classify);
    }
    let format = match cfg.data_format.as_str() {
        "edgelist" => GraphFormat::EdgeList,
        "bundle" => GraphFormat::Bundle,
        other => return Err(CliError::Config(format!("unknown data format `{other}`"))),
    };
    let policy = if cfg.data_strict {
        EdgePolicy::Strict
    } else {
        EdgePolicy::Lenient
    };
    load_graph(Path::new(&cfg.data_path), format, policy).map_err(classify)
}

/// Spectral cache location: `$FCG_CACHE_DIR` keyed by graph content and
/// spectral settings when set, otherwise `<out>/spectral.bin`.
fn cache_path(cfg: &RunConfig, g: &Graph64, out: &Path) -> PathBuf {
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(dir) => {
            let hash = edge_list_hash(g);
            let k = cfg.effective_k(g.num_nodes());
            let k_e = cfg.effective_k_e(k);
            let hex: String = hash[..8].iter().map(|b| format!("{b:02x}")).collect();
            PathBuf::from(dir).join(format!("spectral-{hex}-k{k}-ke{k_e}.bin"))
        }
        None => out.join("spectral.bin"),
    }
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let g = generate_synthetic::<f64>(&synth_params(cfg)?).map_err(classify)?;
    save_graph(&g, out, GraphFormat::EdgeList).map_err(classify)?;
    let cfg_path = out.join("synth.resolved.cfg");
    std::fs::write(&cfg_path, cfg.resolved_string())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", cfg_path.display())))?;
    println!(
        "wrote synthetic graph: {} nodes, {} edges -> {}",
        g.num_nodes(),
        g.num_edges(),
        out.display()
    );
    Ok(())
}

fn preprocess_step(
    cfg: &RunConfig,
    g: &Graph64,
    out: &Path,
) -> Result<PreprocessArtifacts<f64>, CliError> {
    let cache = cache_path(cfg, g, out);
    preprocess_for_config(cfg, g, Some(&cache)).map_err(classify)
}

fn cmd_preprocess(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let g = load_dataset(cfg)?;
    let pre = preprocess_step(cfg, &g, out)?;
    let contrib = out.join("contrib.csv");
    write_contrib_csv(&pre.scores, &g, &contrib, &cfg.resolved_string()).map_err(classify)?;
    println!(
        "preprocessed {} nodes / {} edges (K={}, K_e={}, cache {})",
        g.num_nodes(),
        g.num_edges(),
        pre.bundle.k,
        pre.bundle.k_e,
        if pre.cache_hit { "hit" } else { "miss" }
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome<f64>, CliError> {
    let g = load_dataset(cfg)?;
    let pre = preprocess_step(cfg, &g, out)?;
    let outcome = train(cfg, &g, &pre).map_err(classify)?;
    write_history_csv(
        &outcome.history,
        &cfg.resolved_string(),
        &out.join("history.csv"),
    )
    .map_err(classify)?;
    save_checkpoint(&outcome.params, cfg, &out.join("model.ckpt")).map_err(classify)?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        println!(
            "trained {} epochs: loss {:.6} -> {:.6}",
            outcome.history.len(),
            first.total,
            last.total
        );
    }
    Ok(outcome)
}

fn probe_embeddings(
    cfg: &RunConfig,
    g: &Graph64,
    h: &fcg_core::Tensor<f64>,
) -> Result<ProbeResult, CliError> {
    let classes = g
        .node_classes()
        .ok_or_else(|| CliError::Runtime("dataset has no per-node class labels".into()))?;
    let split = if cfg.eval_split_file.is_empty() {
        SplitSpec::Fractions {
            train: cfg.eval_train_frac,
            val: cfg.eval_val_frac,
        }
    } else {
        SplitSpec::File(PathBuf::from(&cfg.eval_split_file))
    };
    linear_probe(
        h,
        classes,
        &split,
        cfg.eval_repeats,
        cfg.seed,
        cfg.eval_probe_steps,
        cfg.eval_probe_lr,
    )
    .map_err(classify)
}

fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let g = load_dataset(cfg)?;
    let ckpt = out.join("model.ckpt");
    if !ckpt.exists() {
        return Err(CliError::Runtime(format!(
            "no checkpoint at {}; run `fcg train` first",
            ckpt.display()
        )));
    }
    let (params, ckpt_cfg) = load_checkpoint::<f64>(&ckpt).map_err(classify)?;
    let pre = preprocess_step(&ckpt_cfg, &g, out)?;
    let h = fcg_core::evalkit::embed(&g, &params, &pre).map_err(classify)?;
    let result = probe_embeddings(cfg, &g, &h)?;
    fcg_core::evalkit::write_results_json(&result, cfg, &out.join("results.json"))
        .map_err(classify)?;
    println!(
        "probe accuracy: {:.4} ± {:.4} over {} repeats",
        result.mean,
        result.std,
        result.per_repeat.len()
    );
    Ok(())
}

/// Train + probe one derived config; returns (final loss, probe).
fn run_cell(
    cfg: &RunConfig,
    g: &Graph64,
    pre: &PreprocessArtifacts<f64>,
) -> Result<(f64, Option<ProbeResult>), CliError> {
    let outcome = train(cfg, g, pre).map_err(classify)?;
    let final_loss = outcome.history.last().map(|r| r.total).unwrap_or(f64::NAN);
    let probe = if g.node_classes().is_some() {
        let h = fcg_core::evalkit::embed(g, &outcome.params, pre).map_err(classify)?;
        Some(probe_embeddings(cfg, g, &h)?)
    } else {
        None
    };
    Ok((final_loss, probe))
}

fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let g = load_dataset(cfg)?;
    let pre = preprocess_step(cfg, &g, out)?;

    let mut table = String::new();
    for line in cfg.resolved_string().lines() {
        let _ = writeln!(table, "# {line}");
    }
    let _ = writeln!(table, "variant,final_loss,probe_mean,probe_std");

    let mut variants = vec![Ablation::None];
    variants.extend(Ablation::ALL_VARIANTS);
    for ablation in variants {
        let mut cell_cfg = cfg.clone();
        cell_cfg.ablation = ablation;
        let (final_loss, probe) = run_cell(&cell_cfg, &g, &pre)?;
        let (mean, std) = probe
            .map(|p| (format!("{}", p.mean), format!("{}", p.std)))
            .unwrap_or_default();
        let name = if ablation == Ablation::None {
            "baseline".to_string()
        } else {
            ablation.to_string()
        };
        let _ = writeln!(table, "{name},{final_loss},{mean},{std}");
        println!("ablate {name}: final loss {final_loss:.6}");
    }
    let path = out.join("ablate.csv");
    std::fs::write(&path, table)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let g = load_dataset(cfg)?;
    let pre = preprocess_step(cfg, &g, out)?;

    let or_single = |list: &[f64], base: f64| -> Vec<f64> {
        if list.is_empty() {
            vec![base]
        } else {
            list.to_vec()
        }
    };
    let alphas = or_single(&cfg.sweep_alpha, cfg.alpha);
    let betas = or_single(&cfg.sweep_beta, cfg.beta);
    let rns = or_single(&cfg.sweep_r_n, cfg.r_n);
    let res = or_single(&cfg.sweep_r_e, cfg.r_e);

    let mut table = String::new();
    for line in cfg.resolved_string().lines() {
        let _ = writeln!(table, "# {line}");
    }
    let _ = writeln!(table, "alpha,beta,r_n,r_e,final_loss,probe_mean,probe_std");

    for &alpha in &alphas {
        for &beta in &betas {
            for &r_n in &rns {
                for &r_e in &res {
                    let mut cell_cfg = cfg.clone();
                    cell_cfg.alpha = alpha;
                    cell_cfg.beta = beta;
                    cell_cfg.r_n = r_n;
                    cell_cfg.r_e = r_e;
                    cell_cfg.validate().map_err(classify)?;
                    let (final_loss, probe) = run_cell(&cell_cfg, &g, &pre)?;
                    let (mean, std) = probe
                        .map(|p| (format!("{}", p.mean), format!("{}", p.std)))
                        .unwrap_or_default();
                    let _ = writeln!(
                        table,
                        "{alpha},{beta},{r_n},{r_e},{final_loss},{mean},{std}"
                    );
                    println!("sweep a={alpha} b={beta} rn={r_n} re={r_e}: loss {final_loss:.6}");
                }
            }
        }
    }
    let path = out.join("sweep.csv");
    std::fs::write(&path, table)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}
