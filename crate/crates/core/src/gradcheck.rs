//! Central finite-difference checks of reverse-mode gradients.
//!
//! Before checking, every parameter is redrawn uniformly inside its Glorot
//! limit (zero-initialized parameters inside `[-0.5, 0.5]`) so that biases
//! sit away from relu and max-pool kinks.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Init, ParamId, Tape, Var};
use crate::data::ClassSplitDataset;
use crate::encoders::{EncoderInput, EncoderSpec, ImageMode};
use crate::error::{Error, Result};
use crate::joint::{objective, BatchScores, CompatibilityModel, MiniBatch, Objective, PreparedCorpus};

/// Denominator floor of the relative error, as a fraction of `max(1, |loss|)`.
/// At `h = 1e-5` central differences carry roundoff near `1e-11·|loss|`, so
/// smaller gradients cannot be resolved; their absolute mismatch still counts.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    /// Minimum number of coordinates, spread over every parameter tensor.
    pub coordinates: usize,
    pub step: f64,
    pub seed: u64,
    /// Classes in the objective's minibatch and captions in the encoder check.
    pub batch: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            coordinates: 50,
            step: 1e-5,
            seed: 0,
            batch: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checks: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn len(&self) -> usize {
        self.checks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checks.is_empty()
    }
}

/// `|a − n| / max(|a|, |n|, floor)`; 0 when all three are zero.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Redraws every parameter as described in the module docs.
pub fn randomize_params<R: Rng>(model: &mut CompatibilityModel, rng: &mut R) {
    let store = model.params_mut();
    let limits: Vec<f64> = store
        .iter()
        .map(|p| match p.init {
            Init::GlorotUniform { limit, .. } => limit,
            Init::Zeros => 0.5,
        })
        .collect();
    for (t, limit) in store.tensors_mut().zip(limits) {
        t.values_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-limit..=limit));
    }
}

fn scalar(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if !t.is_scalar() {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar loss, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.values()[0])
}

/// Compares analytic and numeric gradients of `loss` at the model's current
/// parameters on at least `cfg.coordinates` coordinates, with every tensor
/// represented.
pub fn check_gradients<F>(model: &mut CompatibilityModel, cfg: &GradCheckConfig, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&CompatibilityModel, &mut Tape, &Bound) -> Result<Var>,
{
    let eval = |m: &CompatibilityModel| -> Result<f64> {
        let mut tape = Tape::new();
        let p = m.params().bind(&mut tape);
        let l = loss(m, &mut tape, &p)?;
        scalar(&tape, l)
    };

    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let l = loss(model, &mut tape, &p)?;
    let floor = REL_FLOOR * scalar(&tape, l)?.abs().max(1.0);
    let grads = tape.backward(l)?;

    let ids: Vec<ParamId> = model.params().ids().collect();
    if ids.is_empty() {
        return Ok(GradCheckReport::default());
    }
    let per_tensor = cfg.coordinates.div_ceil(ids.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let mut report = GradCheckReport::default();
    for id in ids {
        let n = model.params().get(id).len();
        let analytic = grads.get(p.var(id)).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let mut picks = index::sample(&mut rng, n, per_tensor.min(n)).into_vec();
        picks.sort_unstable();
        for i in picks {
            let x = model.params().get(id).values()[i];
            model.params_mut().get_mut(id).values_mut()[i] = x + cfg.step;
            let plus = eval(model)?;
            model.params_mut().get_mut(id).values_mut()[i] = x - cfg.step;
            let minus = eval(model)?;
            model.params_mut().get_mut(id).values_mut()[i] = x;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            report.checks.push(CoordinateCheck {
                param: model.params().name(id).to_string(),
                index: i,
                analytic: analytic[i],
                numeric,
                rel_error: rel_error(analytic[i], numeric, floor),
            });
        }
    }
    Ok(report)
}

/// Checks the text encoder alone through `Σᵢ rᵢ · φ(tᵢ)` for fixed random
/// weight vectors `rᵢ`.
pub fn check_text_encoder(
    model: &mut CompatibilityModel,
    inputs: &[EncoderInput],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    randomize_params(model, &mut rng);
    let d = model.embed_dim();
    let weights: Vec<Vec<f64>> = inputs
        .iter()
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    check_gradients(model, cfg, |m, tape, p| {
        let mut terms = Vec::with_capacity(inputs.len());
        for (x, w) in inputs.iter().zip(&weights) {
            let phi = m.encode_text(tape, p, x)?;
            let w = tape.constant(crate::Tensor::vector(w.clone()));
            terms.push(tape.dot(phi, w)?);
        }
        let first = *terms.first().ok_or(Error::EmptySequence("check_text_encoder"))?;
        terms[1..].iter().try_fold(first, |acc, &t| tape.add(acc, t))
    })
}

/// Checks `objective` end to end on a seeded minibatch of training classes.
pub fn check_objective(
    model: &mut CompatibilityModel,
    ds: &ClassSplitDataset,
    which: Objective,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    randomize_params(model, &mut rng);
    let train = &ds.splits().train;
    if cfg.batch < 2 || cfg.batch > train.len() {
        return Err(Error::Config(format!(
            "gradient-check batch must lie in [2, {}], got {}",
            train.len(),
            cfg.batch
        )));
    }
    let classes: Vec<_> = index::sample(&mut rng, train.len(), cfg.batch)
        .into_iter()
        .map(|i| train[i])
        .collect();
    let batch = MiniBatch::sample(&classes, ds, &mut rng)?;
    let corpus = PreparedCorpus::new(model, ds)?;
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
    check_gradients(model, cfg, |m, tape, p| {
        let s = BatchScores::compute(tape, p, m, &batch, &images, &inputs)?;
        objective(tape, &s, which)
    })
}

/// Encoder check and DS-SJE objective check for one encoder spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecCheck {
    pub encoder: GradCheckReport,
    pub objective: GradCheckReport,
}

impl SpecCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.encoder.max_rel_error().max(self.objective.max_rel_error())
    }
}

pub fn check_spec(
    spec: &EncoderSpec,
    image_mode: ImageMode,
    ds: &ClassSplitDataset,
    cfg: &GradCheckConfig,
) -> Result<SpecCheck> {
    let mut model = CompatibilityModel::build(spec, image_mode, ds)?;
    let corpus = PreparedCorpus::new(&model, ds)?;
    let inputs: Vec<EncoderInput> = ds
        .captions()
        .iter()
        .enumerate()
        .filter_map(|(i, _)| corpus.get(i).ok().cloned())
        .take(cfg.batch.max(1))
        .collect();
    let encoder = check_text_encoder(&mut model, &inputs, cfg)?;
    let objective = check_objective(&mut model, ds, Objective::DsSje, cfg)?;
    Ok(SpecCheck { encoder, objective })
}
