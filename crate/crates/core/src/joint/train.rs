use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{RmsPropConfig, RmsPropState, Tape};
use crate::data::ClassSplitDataset;
use crate::error::{Error, Result};
use crate::joint::batch::{epoch_batches, MiniBatch, PreparedCorpus};
use crate::joint::loss::{objective, BatchScores, Objective};
use crate::joint::model::CompatibilityModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    /// Elementwise gradient clip; `None` disables.
    pub clip: Option<f64>,
    /// Distinct classes per minibatch.
    pub minibatch_classes: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; `None` only at the end.
    pub checkpoint_every: Option<usize>,
    /// Stop after this many epochs without a lower mean loss; `None` disables.
    pub patience: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let rms = RmsPropConfig::default();
        Self {
            objective: Objective::DsSje,
            learning_rate: rms.learning_rate,
            decay: rms.decay,
            epsilon: rms.epsilon,
            clip: rms.clip,
            minibatch_classes: 40,
            epochs: 100,
            seed: 0,
            checkpoint_every: None,
            patience: None,
        }
    }
}

impl TrainingConfig {
    pub fn rmsprop(&self) -> RmsPropConfig {
        RmsPropConfig {
            learning_rate: self.learning_rate,
            decay: self.decay,
            epsilon: self.epsilon,
            clip: self.clip,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rmsprop().validate()?;
        if self.minibatch_classes == 0 {
            return Err(Error::Config("minibatch_classes must be positive".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to resume training exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub optimizer: RmsPropState,
    /// Completed epochs.
    pub epoch: usize,
    /// Mean minibatch loss of each completed epoch.
    pub loss_curve: Vec<f64>,
}

impl TrainState {
    pub fn new(config: &TrainingConfig, model: &CompatibilityModel) -> Result<Self> {
        Ok(Self {
            optimizer: RmsPropState::new(config.rmsprop(), model.params())?,
            epoch: 0,
            loss_curve: Vec::new(),
        })
    }
}

/// The random stream of epoch `epoch`; independent of earlier epochs so that
/// a resumed run draws the same batches as an uninterrupted one.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// One forward/backward/update step on `batch`; returns the batch loss.
pub fn train_step(
    model: &mut CompatibilityModel,
    optimizer: &mut RmsPropState,
    ds: &ClassSplitDataset,
    corpus: &PreparedCorpus,
    batch: &MiniBatch,
    which: Objective,
) -> Result<f64> {
    let images: Vec<&[f64]> = batch
        .entries()
        .iter()
        .map(|e| ds.images()[e.image].vector.as_slice())
        .collect();
    let inputs = batch
        .entries()
        .iter()
        .map(|e| corpus.get(e.caption))
        .collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let scores = BatchScores::compute(&mut tape, &p, model, batch, &images, &inputs)?;
    let loss = objective(&mut tape, &scores, which)?;
    let value = tape.value(loss).values()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = tape.backward(loss)?;
    let params = model.params_mut();
    params.zero_grad();
    params.accumulate(&grads);
    optimizer.step(params)?;
    Ok(value)
}

/// Trains until `config.epochs` epochs are complete, early stopping fires, or
/// `on_epoch` breaks. `on_epoch` sees the model after each epoch.
pub fn train<F>(
    model: &mut CompatibilityModel,
    ds: &ClassSplitDataset,
    config: &TrainingConfig,
    state: Option<TrainState>,
    mut on_epoch: F,
) -> Result<TrainState>
where
    F: FnMut(&CompatibilityModel, &TrainState) -> Result<ControlFlow<()>>,
{
    config.validate()?;
    let train_classes = &ds.splits().train;
    if train_classes.is_empty() {
        return Err(Error::Dataset("no training classes".into()));
    }
    if config.minibatch_classes > train_classes.len() {
        return Err(Error::Config(format!(
            "minibatch_classes = {} exceeds the {} training classes",
            config.minibatch_classes,
            train_classes.len()
        )));
    }
    let corpus = PreparedCorpus::new(model, ds)?;
    let mut state = match state {
        Some(s) => s,
        None => TrainState::new(config, model)?,
    };
    let mut best = state.loss_curve.iter().copied().fold(f64::INFINITY, f64::min);
    let mut stale = 0;
    while state.epoch < config.epochs {
        let mut rng = epoch_rng(config.seed, state.epoch);
        let mut total = 0.0;
        let chunks = epoch_batches(train_classes, config.minibatch_classes, &mut rng);
        let n = chunks.len();
        for (b, classes) in chunks.into_iter().enumerate() {
            let batch = MiniBatch::sample(&classes, ds, &mut rng)?;
            let loss = train_step(model, &mut state.optimizer, ds, &corpus, &batch, config.objective)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: state.epoch,
                    batch: b,
                    loss,
                    classes,
                });
            }
            total += loss;
        }
        let mean = total / n as f64;
        state.epoch += 1;
        state.loss_curve.push(mean);
        log::debug!("epoch {} mean loss {mean:.6}", state.epoch);
        if on_epoch(model, &state)?.is_break() {
            break;
        }
        if mean < best {
            best = mean;
            stale = 0;
        } else {
            stale += 1;
            if config.patience.is_some_and(|p| stale >= p) {
                log::info!("early stop after {} epochs", state.epoch);
                break;
            }
        }
    }
    Ok(state)
}
