mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dream_core::dataset::{Dataset, GraphFile, Split};
use dream_core::noise::{NoiseKind, NoiseSpec};
use dream_core::synth::{generate, SynthSpec};
use dream_core::trainer::{
    ablate, aggregate, aggregate_csv, evaluate, harness_csv, sweep, train_observed, Checkpoint, TrainConfig,
    TrainFailure, Variant,
};
use dream_core::DreamError;

use config::{List, ResolvedConfig, Resolver};

/// Bad flags, bad config keys, refusing to overwrite.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Parser)]
#[command(name = "dream", version, about = "Label-noise-robust GCN training with anchor-based reweighting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-partition benchmark graph.
    Synth(SynthArgs),
    /// Corrupt the train/validation labels of a graph file.
    Corrupt(CorruptArgs),
    /// Train one model and write metrics, checkpoint and summary.
    Train(TrainCmd),
    /// Accuracy of a checkpoint on one split.
    Eval(EvalArgs),
    /// DREAM vs. the unweighted baseline over noise kinds, rates and seeds.
    Sweep(SweepArgs),
    /// All ablation variants at one noise setting.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct Common {
    /// Flat key=value file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    c: Option<usize>,
    /// Sub-communities per class.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_mid: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    d_in: Option<usize>,
    #[arg(long)]
    sep: Option<f64>,
    #[arg(long)]
    sub_sep: Option<f64>,
    #[arg(long)]
    feat_noise: Option<f64>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CorruptArgs {
    #[command(flatten)]
    common: Common,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// uniform, pair or asymmetric.
    #[arg(long)]
    kind: Option<NoiseKind>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Default)]
struct TrainFlags {
    #[arg(long)]
    k_p: Option<usize>,
    #[arg(long)]
    k_t: Option<usize>,
    #[arg(long)]
    d_max: Option<u16>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// full, v1_no_topo, v2_no_prox, v3_no_temp, v4_global_pool, v5_union_pool or baseline_unweighted.
    #[arg(long)]
    variant: Option<Variant>,
    /// Fill the wall_ms metrics column (makes metrics non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    common: Common,
    #[arg(short, long)]
    input: PathBuf,
    /// Output directory for metrics.csv, checkpoint.json and summary.json.
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    seed: Option<u64>,
    /// Write selected anchors and scores for every epoch as JSON lines.
    #[arg(long)]
    dump_anchors: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// train, val or test. Test accuracy uses clean labels, the others observed labels.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    kinds: Option<List<NoiseKind>>,
    #[arg(long)]
    rates: Option<List<f64>>,
    #[arg(long)]
    seeds: Option<List<u64>>,
    /// Runs executed in parallel; output order does not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    kind: Option<NoiseKind>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    seeds: Option<List<u64>>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 usage, 3 data, 4 numeric failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    let core = err
        .downcast_ref::<DreamError>()
        .or_else(|| err.downcast_ref::<TrainFailure>().map(|f| &f.error));
    match core {
        Some(e) if e.is_numeric() => 4,
        Some(e) if e.is_config() => 2,
        _ => 3,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Corrupt(a) => cmd_corrupt(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(UsageError(format!("{} already exists; pass --force to overwrite", path.display())).into());
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<(Dataset, GraphFile)> {
    let file = GraphFile::load(path).with_context(|| format!("reading {}", path.display()))?;
    let ds = Dataset::from_file(file.clone()).with_context(|| format!("loading {}", path.display()))?;
    Ok((ds, file))
}

fn resolve_train(r: &mut Resolver, flags: &TrainFlags, seed_flag: Option<u64>) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        k_p: r.get("k-p", flags.k_p, d.k_p)?,
        k_t: r.get("k-t", flags.k_t, d.k_t)?,
        d_max: r.get("d-max", flags.d_max, d.d_max)?,
        tau: r.get("tau", flags.tau, d.tau)?,
        hidden: r.get("hidden", flags.hidden, d.hidden)?,
        lr: r.get("lr", flags.lr, d.lr)?,
        epochs: r.get("epochs", flags.epochs, d.epochs)?,
        seed: r.get("seed", seed_flag, d.seed)?,
        variant: r.get("variant", flags.variant, d.variant)?,
        record_timing: r.get("timing", flags.timing.then_some(true), false)?,
    })
}

/// Clean-label view of a possibly corrupted dataset.
fn clean_view(ds: &Dataset) -> Dataset {
    let mut clean = ds.clone();
    clean.labels = ds.clean_labels.clone();
    clean.corrupted_mask = None;
    clean.noise = None;
    clean
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    ensure_writable(&a.out, a.common.force)?;
    let mut r = Resolver::new("synth", a.common.config.as_deref())?;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        n: r.get("n", a.n, d.n)?,
        classes: r.get("c", a.c, d.classes)?,
        subcommunities: r.get("m", a.m, d.subcommunities)?,
        p_in: r.get("p-in", a.p_in, d.p_in)?,
        p_mid: r.get("p-mid", a.p_mid, d.p_mid)?,
        p_out: r.get("p-out", a.p_out, d.p_out)?,
        d_in: r.get("d-in", a.d_in, d.d_in)?,
        sep: r.get("sep", a.sep, d.sep)?,
        sub_sep: r.get("sub-sep", a.sub_sep, d.sub_sep)?,
        feat_noise: r.get("feat-noise", a.feat_noise, d.feat_noise)?,
        train_frac: r.get("train-frac", a.train_frac, d.train_frac)?,
        val_frac: r.get("val-frac", a.val_frac, d.val_frac)?,
        seed: r.get("seed", a.seed, d.seed)?,
    };
    let resolved = r.finish()?;
    let ds = generate(&spec)?;
    let mut file = ds.to_file();
    file.config = Some(resolved.to_value());
    write_file(&a.out, &file.to_json()?)?;
    Ok(())
}

fn cmd_corrupt(a: CorruptArgs) -> Result<()> {
    ensure_writable(&a.out, a.common.force)?;
    let mut r = Resolver::new("corrupt", a.common.config.as_deref())?;
    r.record("input", a.input.display());
    let d = NoiseSpec::default();
    let kind = r.get("kind", a.kind, d.kind)?;
    let rate = r.get("rate", a.rate, d.rate)?;
    let seed = r.get("seed", a.seed, d.seed)?;
    let resolved = r.finish()?;
    let spec = NoiseSpec::new(kind, rate, seed)?;

    let (ds, input_file) = load_dataset(&a.input)?;
    let (noisy, state) = ds.corrupt(spec)?;
    log::info!(
        "corrupted {} of {} train/val labels",
        state.corrupted.iter().filter(|&&c| c).count(),
        state.nodes.len()
    );
    let mut file = noisy.to_file();
    file.config = Some(json!({ "corrupt": resolved.to_value(), "input": input_file.config }));
    write_file(&a.out, &file.to_json()?)?;
    Ok(())
}

fn cmd_train(a: TrainCmd) -> Result<()> {
    let metrics_path = a.out.join("metrics.csv");
    let metrics_config_path = a.out.join("metrics.config.json");
    let checkpoint_path = a.out.join("checkpoint.json");
    let summary_path = a.out.join("summary.json");
    for p in [&metrics_path, &metrics_config_path, &checkpoint_path, &summary_path] {
        ensure_writable(p, a.common.force)?;
    }
    if let Some(p) = &a.dump_anchors {
        ensure_writable(p, a.common.force)?;
    }

    let mut r = Resolver::new("train", a.common.config.as_deref())?;
    r.record("input", a.input.display());
    let cfg = resolve_train(&mut r, &a.train, a.seed)?;
    let resolved = r.finish()?;
    let (ds, input_file) = load_dataset(&a.input)?;

    let mut dump = String::new();
    let dumping = a.dump_anchors.is_some();
    let result = train_observed(&ds, &cfg, &mut |epoch, nodes, scored| {
        if !dumping {
            return;
        }
        for (k, &node) in nodes.iter().enumerate() {
            let set = &scored.anchors[k];
            let line = json!({
                "epoch": epoch,
                "node": node,
                "score": scored.scores.scores[k],
                "anchors_p": set.proximity,
                "anchors_t": set.topology,
            });
            dump.push_str(&line.to_string());
            dump.push('\n');
        }
    });
    let result = match result {
        Ok(r) => r,
        Err(failure) => {
            // keep the partial trace for diagnosis
            if !failure.trace.is_empty() {
                let _ = write_file(&metrics_path, &dream_core::trainer::metrics_csv(&failure.trace));
            }
            return Err(failure.into());
        }
    };

    let config = json!({ "train": resolved.to_value(), "input": input_file.config });
    write_file(&metrics_path, &result.metrics_csv())?;
    write_file(&metrics_config_path, &serde_json::to_string_pretty(&config)?)?;
    let mut ck = Checkpoint::from_params(&result.params);
    ck.config = Some(config.clone());
    write_file(&checkpoint_path, &serde_json::to_string(&ck)?)?;
    let summary = json!({
        "method": cfg.variant.method(),
        "variant": cfg.variant.as_str(),
        "k_p": cfg.k_p,
        "k_t": cfg.k_t,
        "d_max": cfg.d_max,
        "tau": cfg.tau,
        "hidden": cfg.hidden,
        "lr": cfg.lr,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "test_acc_final": result.test_acc_final,
        "test_acc_bestval": result.test_acc_bestval,
        "best_epoch": result.best_epoch,
        "final_loss": result.final_loss,
        "final_unweighted_loss": result.final_unweighted_loss,
        "empty_union_nodes": result.empty_union_nodes,
        "noise": ds.noise,
        "config": config,
    });
    write_file(&summary_path, &serde_json::to_string_pretty(&summary)?)?;
    if let Some(p) = &a.dump_anchors {
        write_file(p, &dump)?;
    }
    println!("{}", serde_json::to_string(&json!({
        "method": cfg.variant.method(),
        "test_acc_final": result.test_acc_final,
        "test_acc_bestval": result.test_acc_bestval,
    }))?);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let split: Split = a.split.parse().map_err(|e: DreamError| UsageError(e.to_string()))?;
    let (ds, _) = load_dataset(&a.input)?;
    let text = fs::read_to_string(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(DreamError::from)?;
    let params = ck.to_params()?;
    let (labels, against) = match split {
        Split::Test => (&ds.clean_labels, "clean"),
        _ => (&ds.labels, "observed"),
    };
    let acc = evaluate(&params, &ds.graph, labels, ds.mask(split))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", json!({ "split": a.split, "labels": against, "accuracy": acc }))?;
    Ok(())
}

fn write_harness(out: &Path, force: bool, rows: &[dream_core::trainer::HarnessRow], config: &ResolvedConfig, input: Option<serde_json::Value>) -> Result<()> {
    let agg_path = out.with_extension("agg.csv");
    let config_path = out.with_extension("config.json");
    for p in [out, &agg_path, &config_path] {
        ensure_writable(p, force)?;
    }
    write_file(out, &harness_csv(rows))?;
    write_file(&agg_path, &aggregate_csv(&aggregate(rows)))?;
    let config = json!({ config.command.clone(): config.to_value(), "input": input });
    write_file(&config_path, &serde_json::to_string_pretty(&config)?)?;
    let failed = rows.iter().filter(|r| r.failed()).count();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed; marked `failed` in {}", rows.len(), out.display());
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    ensure_writable(&a.out, a.common.force)?;
    let mut r = Resolver::new("sweep", a.common.config.as_deref())?;
    r.record("input", a.input.display());
    let cfg = resolve_train(&mut r, &a.train, None)?;
    let kinds = r.get("kinds", a.kinds, List(vec![NoiseKind::Uniform]))?;
    let rates = r.get("rates", a.rates, List(vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]))?;
    let seeds = r.get("seeds", a.seeds, List(vec![1, 2, 3, 4, 5]))?;
    let jobs = r.get("jobs", a.jobs, 1usize)?;
    let resolved = r.finish()?;
    let (ds, file) = load_dataset(&a.input)?;
    let rows = sweep(&clean_view(&ds), &kinds.0, &rates.0, &seeds.0, &cfg, jobs)?;
    write_harness(&a.out, a.common.force, &rows, &resolved, file.config)
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    ensure_writable(&a.out, a.common.force)?;
    let mut r = Resolver::new("ablate", a.common.config.as_deref())?;
    r.record("input", a.input.display());
    let cfg = resolve_train(&mut r, &a.train, None)?;
    let kind = r.get("kind", a.kind, NoiseKind::Uniform)?;
    let rate = r.get("rate", a.rate, 0.3)?;
    let seeds = r.get("seeds", a.seeds, List(vec![1, 2, 3, 4, 5]))?;
    let jobs = r.get("jobs", a.jobs, 1usize)?;
    let resolved = r.finish()?;
    let (ds, file) = load_dataset(&a.input)?;
    let rows = ablate(&clean_view(&ds), kind, rate, &seeds.0, &cfg, jobs)?;
    write_harness(&a.out, a.common.force, &rows, &resolved, file.config)
}
