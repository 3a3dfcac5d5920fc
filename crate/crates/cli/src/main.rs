//! `embed`: train and evaluate joint image/text embeddings from the shell.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sje_core::data::{generate_synthetic, SyntheticConfig};
use sje_core::encoders::{EncoderSpec, Family, ImageMode};
use sje_core::eval::sweep::summarize;
use sje_core::eval::{CaptionCount, SweepAxis};
use sje_core::experiment::{self, ExperimentConfig};
use sje_core::gradcheck::{check_spec, GradCheckConfig};
use sje_core::{Checkpoint, ClassSplitDataset, Level, Objective};

/// Directory under which runs without `--out` are written.
const OUT_ROOT_ENV: &str = "EMBED_OUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "embed", version, about = "Structured joint embeddings of images and text")]
struct Cli {
    /// Root for output directories when `--out` and `out_dir` are absent.
    #[arg(long, global = true, env = OUT_ROOT_ENV, default_value = "runs")]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train, checkpoint and evaluate from one config.
    Run(RunArgs),
    /// Write a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train only: config echo, loss curve, checkpoints.
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Caption-count sweep at test or training time.
    Sweep(SweepArgs),
    /// Finite-difference gradient check of an encoder and the DS-SJE objective.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed; overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    objective: Option<Objective>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Test captions per class: a positive integer or `all`.
    #[arg(long)]
    captions: Option<CaptionCount>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Generator settings (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    train_classes: Option<usize>,
    #[arg(long)]
    val_classes: Option<usize>,
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    captions: Option<usize>,
    #[arg(long)]
    attributes: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Experiment config naming the dataset (alternative to `--data`).
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Test captions per class: a positive integer or `all`.
    #[arg(long, default_value = "all")]
    captions: CaptionCount,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for report.txt and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "test")]
    axis: SweepAxis,
    /// Comma-separated caption counts, e.g. `1,2,4,all`.
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<CaptionCount>>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    encoder: Family,
    #[arg(long, default_value = "word")]
    level: Level,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    coordinates: usize,
    /// Exit nonzero when the maximum relative error reaches this.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let root = cli.out_root;
    match cli.command {
        Command::Run(a) => {
            let (cfg, out) = load_run(&a, &root)?;
            let outcome = experiment::run(&cfg, Some(&out))?;
            print!("{}", outcome.report.to_table());
            println!("artifacts in {}", out.display());
        }
        Command::Train(a) => {
            let (cfg, out) = load_run(&a, &root)?;
            let t = experiment::run_train(&cfg, Some(&out))?;
            if let Some(l) = t.state.loss_curve.last() {
                println!("trained {} epochs, final mean loss {l:.6}", t.state.epoch);
            }
            println!("artifacts in {}", out.display());
        }
        Command::GenData(a) => gen_data(&a)?,
        Command::Eval(a) => eval(&a)?,
        Command::Sweep(a) => sweep(&a, &root)?,
        Command::Gradcheck(a) => return gradcheck(&a),
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("reading config {}", common.config.display()))?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    Ok(cfg)
}

/// `--out`, then `out_dir` in the config, then `<root>/<config stem>`.
fn resolve_out(common: &Common, cfg: &ExperimentConfig, root: &Path) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| {
            let stem = common
                .config
                .file_stem()
                .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
            root.join(stem)
        })
}

fn load_run(a: &RunArgs, root: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = load_config(&a.common)?;
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    if let Some(o) = a.objective {
        cfg.training.objective = o;
    }
    if let Some(lr) = a.learning_rate {
        cfg.training.learning_rate = lr;
    }
    if let Some(c) = a.captions {
        cfg.eval.captions = c;
    }
    let out = resolve_out(&a.common, &cfg, root);
    Ok((cfg, out))
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut cfg: SyntheticConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticConfig::default(),
    };
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut cfg.n_classes, a.classes);
    set(&mut cfg.n_train_classes, a.train_classes);
    set(&mut cfg.n_val_classes, a.val_classes);
    set(&mut cfg.images_per_class, a.images);
    set(&mut cfg.captions_per_image, a.captions);
    set(&mut cfg.n_attributes, a.attributes);
    set(&mut cfg.feature_dim, a.feature_dim);
    if let Some(n) = a.noise {
        cfg.noise_sigma = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ds = generate_synthetic(&cfg)?;
    ds.save(&a.out)?;
    std::fs::write(a.out.join("generator.toml"), toml::to_string(&cfg)?)?;
    println!(
        "wrote {} images, {} captions ({} train / {} val / {} test classes) to {}",
        ds.images().len(),
        ds.captions().len(),
        ds.splits().train.len(),
        ds.splits().val.len(),
        ds.splits().test.len(),
        a.out.display()
    );
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.restore()?;
    let ds = match (&a.data, &a.config) {
        (Some(dir), _) => ClassSplitDataset::load(dir)?,
        (None, Some(p)) => ExperimentConfig::load(p)?.resolved()?.dataset.load()?,
        (None, None) => bail!("either --data or --config is required"),
    };
    let objective = ck.training.as_ref().map(|t| t.objective);
    let report = experiment::run_eval(&model, &ds, objective, a.captions, a.seed, a.out.as_deref())?;
    print!("{}", report.to_table());
    Ok(())
}

fn sweep(a: &SweepArgs, root: &Path) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(c) = &a.counts {
        cfg.eval.sweep_counts = c.clone();
    }
    if let Some(r) = a.repeats {
        cfg.eval.repeats = r;
    }
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    let out = resolve_out(&a.common, &cfg, root);
    let rows = experiment::run_sweep(&cfg, a.axis, Some(&out))?;
    println!("{:>6} {:>7} {:>16} {:>16}", "count", "repeats", "top1 %", "ap %");
    for s in summarize(&rows) {
        println!(
            "{:>6} {:>7} {:>8.2} ± {:<5.2} {:>8.2} ± {:<5.2}",
            s.count.to_string(),
            s.repeats,
            s.top1_mean,
            s.top1_std,
            s.ap50_mean,
            s.ap50_std
        );
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let ds = generate_synthetic(&SyntheticConfig {
        feature_dim: a.embed_dim,
        ..SyntheticConfig::default()
    })?;
    let spec = EncoderSpec::new(a.encoder, a.level).with_embed_dim(a.embed_dim);
    let mut worst = 0.0f64;
    for seed in a.seed..a.seed + a.seeds {
        let cfg = GradCheckConfig {
            coordinates: a.coordinates,
            seed,
            ..GradCheckConfig::default()
        };
        let r = check_spec(&spec, ImageMode::LinearProjection, &ds, &cfg)?;
        println!(
            "seed {seed}: encoder {:.3e} over {} coords, ds-sje {:.3e} over {} coords",
            r.encoder.max_rel_error(),
            r.encoder.len(),
            r.objective.max_rel_error(),
            r.objective.len()
        );
        worst = worst.max(r.max_rel_error());
    }
    println!("max relative error {worst:.3e}");
    Ok(if worst < a.tolerance {
        ExitCode::SUCCESS
    } else {
        eprintln!("error: max relative error {worst:.3e} >= tolerance {:.1e}", a.tolerance);
        ExitCode::FAILURE
    })
}
