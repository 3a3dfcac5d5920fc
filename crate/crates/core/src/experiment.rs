//! Config-driven experiment runs and their on-disk artifacts.
//!
//! ```text
//! <out>/config.toml          resolved config; re-running it reproduces the run
//! <out>/loss_curve.csv       epoch,mean_loss
//! <out>/checkpoint.json      final model and training state
//! <out>/checkpoint-eNNNN.json  periodic checkpoints (checkpoint_every)
//! <out>/report.txt|json      evaluation report
//! <out>/sweep.csv            axis,count,repeat,top1,ap50
//! <out>/sweep_summary.csv    mean and standard deviation per count
//! ```

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{generate_synthetic, ClassSplitDataset, SyntheticConfig};
use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::eval::sweep::{summarize, write_csv};
use crate::eval::{
    caption_sweep_test, caption_sweep_train, CaptionCount, EvalReport, EvalSettings, SweepAxis, SweepRow,
    TestEmbeddings,
};
use crate::joint::{train, CompatibilityModel, ImageConfig, Objective, TrainState, TrainingConfig};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_STEM: &str = "report";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    /// Directory in the layout read by [`ClassSplitDataset::load`].
    Path(PathBuf),
    Synthetic(SyntheticConfig),
}

impl DatasetSource {
    pub fn load(&self) -> Result<ClassSplitDataset> {
        match self {
            DatasetSource::Path(p) => ClassSplitDataset::load(p),
            DatasetSource::Synthetic(cfg) => generate_synthetic(cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When set, overrides the seed of every section.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSource,
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub image: ImageConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Applies the global seed, fills encoder defaults, and validates.
    pub fn resolved(mut self) -> Result<Self> {
        if let Some(s) = self.seed {
            self.encoder.seed = s;
            self.training.seed = s;
            self.eval.seed = s;
            if let DatasetSource::Synthetic(cfg) = &mut self.dataset {
                cfg.seed = s;
            }
        }
        self.encoder = self.encoder.resolved();
        self.encoder.validate()?;
        self.training.validate()?;
        self.eval.validate()?;
        if let DatasetSource::Synthetic(cfg) = &self.dataset {
            cfg.validate()?;
        }
        Ok(self)
    }
}

/// A trained model with the resolved config and dataset behind it.
#[derive(Debug, Clone)]
pub struct Trained {
    pub config: ExperimentConfig,
    pub dataset: ClassSplitDataset,
    pub model: CompatibilityModel,
    pub state: TrainState,
    pub out_dir: PathBuf,
}

/// What [`run`] produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trained: Trained,
    pub report: EvalReport,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_loss_curve(curve: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "mean_loss"])?;
    for (e, l) in curve.iter().enumerate() {
        w.write_record([(e + 1).to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_curve(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<(usize, f64)>()
        .map(|row| Ok(row?.1))
        .collect()
}

/// Trains a fresh model on `ds`, writing periodic checkpoints into `out`.
pub fn train_model(
    cfg: &ExperimentConfig,
    ds: &ClassSplitDataset,
    out: Option<&Path>,
) -> Result<(CompatibilityModel, TrainState)> {
    let mut model = CompatibilityModel::build(&cfg.encoder, cfg.image.mode, ds)?;
    let every = cfg.training.checkpoint_every;
    let state = train(&mut model, ds, &cfg.training, None, |m, st| {
        if let (Some(k), Some(dir)) = (every, out) {
            if st.epoch % k == 0 {
                let path = dir.join(format!("checkpoint-e{:04}.json", st.epoch));
                Checkpoint::capture(m, Some(&cfg.training), Some(st)).save(&path)?;
            }
        }
        Ok(ControlFlow::Continue(()))
    })?;
    Ok((model, state))
}

/// Output directory precedence: explicit argument, then the config.
pub fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf> {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::Config("no output directory given".into()))
}

fn echo_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    let echo = out.join(CONFIG_FILE);
    std::fs::write(&echo, cfg.to_toml()?).map_err(|e| Error::io(&echo, e))
}

/// Train and write the config echo, loss curve, and checkpoints.
pub fn run_train(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Trained> {
    let config = cfg.clone().resolved()?;
    let out_dir = output_dir(&config, out)?;
    echo_config(&config, &out_dir)?;
    let dataset = config.dataset.load()?;
    let (model, state) = train_model(&config, &dataset, Some(&out_dir))?;
    write_loss_curve(&state.loss_curve, &out_dir.join(LOSS_CURVE_FILE))?;
    Checkpoint::capture(&model, Some(&config.training), Some(&state)).save(&out_dir.join(CHECKPOINT_FILE))?;
    Ok(Trained {
        config,
        dataset,
        model,
        state,
        out_dir,
    })
}

/// Evaluates a model on the test split of `ds`, writing the report into
/// `out` when given.
pub fn run_eval(
    model: &CompatibilityModel,
    ds: &ClassSplitDataset,
    objective: Option<Objective>,
    count: CaptionCount,
    seed: u64,
    out: Option<&Path>,
) -> Result<EvalReport> {
    let report = TestEmbeddings::new(model, ds)?.report(model, objective, count, seed)?;
    if let Some(dir) = out {
        report.save(dir, REPORT_STEM)?;
    }
    log::info!(
        "top-1 {:.2}%  ap@{} {:.2}%",
        report.top1,
        report.effective_k,
        report.ap_at_50
    );
    Ok(report)
}

/// Train, checkpoint, evaluate, and write every artifact.
pub fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let trained = run_train(cfg, out)?;
    let c = &trained.config;
    let report = run_eval(
        &trained.model,
        &trained.dataset,
        Some(c.training.objective),
        c.eval.captions,
        c.eval.seed,
        Some(&trained.out_dir),
    )?;
    Ok(RunOutcome { trained, report })
}

/// Caption-count sweep along `axis`; writes the per-cell CSV and summary.
/// The test axis trains once; the train axis trains once per cell.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, out: Option<&Path>) -> Result<Vec<SweepRow>> {
    let cfg = cfg.clone().resolved()?;
    let out = output_dir(&cfg, out)?;
    echo_config(&cfg, &out)?;
    let ds = cfg.dataset.load()?;
    let (counts, repeats, seed) = (&cfg.eval.sweep_counts, cfg.eval.repeats, cfg.eval.seed);
    let rows = match axis {
        SweepAxis::Test => {
            let (model, _) = train_model(&cfg, &ds, None)?;
            caption_sweep_test(&model, &ds, counts, repeats, seed)?
        }
        SweepAxis::Train => caption_sweep_train(&ds, counts, repeats, seed, |sub, s| {
            let mut c = cfg.clone();
            c.encoder.seed = s;
            c.training.seed = s;
            Ok(train_model(&c, sub, None)?.0)
        })?,
    };
    write_csv(&rows, &out.join(SWEEP_FILE))?;
    let path = out.join(SWEEP_SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for s in summarize(&rows) {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
