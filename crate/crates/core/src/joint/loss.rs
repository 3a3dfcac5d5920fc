//! Structured hinge objectives over a minibatch.
//!
//! With `S[n, y] = θ(v_n)ᵀ φ(t_y)` for the batch's sampled images and captions,
//! the image-side loss is the mean over anchors `n` of
//! `max_y max(0, Δ(y_n, y) + S[n, y] − S[n, n])` and the text-side loss is the
//! same with `S[y, n]`. The expectation over a class's captions (or images) is
//! estimated by the single sample of that class in the batch.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, HingeSide, Tape, Tensor, Var};
use crate::data::ClassId;
use crate::encoders::EncoderInput;
use crate::error::{Error, Result};
use crate::joint::batch::MiniBatch;
use crate::joint::model::CompatibilityModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Image-side plus text-side loss.
    DsSje,
    /// Image-side loss only.
    DaSjeImage,
    /// Text-side loss only.
    DaSjeText,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::DsSje => "ds-sje",
            Objective::DaSjeImage => "da-sje-image",
            Objective::DaSjeText => "da-sje-text",
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Objective::DsSje, Objective::DaSjeImage, Objective::DaSjeText]
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

/// The batch score matrix on a tape.
#[derive(Debug, Clone)]
pub struct BatchScores {
    /// `[B × B]`, rows images, columns texts.
    pub scores: Var,
    pub labels: Vec<ClassId>,
}

impl BatchScores {
    /// Scores from already-computed embedding rows (each `[d]`).
    pub fn from_embeddings(
        tape: &mut Tape,
        images: &[Var],
        texts: &[Var],
        labels: Vec<ClassId>,
    ) -> Result<Self> {
        if images.len() != texts.len() || images.len() != labels.len() {
            return Err(Error::Contract(format!(
                "batch has {} images, {} texts and {} labels",
                images.len(),
                texts.len(),
                labels.len()
            )));
        }
        let theta = tape.stack_rows(images)?;
        let phi = tape.stack_rows(texts)?;
        let phi_t = tape.transpose(phi)?;
        let scores = tape.matmul(theta, phi_t)?;
        Ok(Self { scores, labels })
    }

    /// Scores for fixed embedding vectors; handy for tests and diagnostics.
    pub fn from_values(
        tape: &mut Tape,
        images: &[Vec<f64>],
        texts: &[Vec<f64>],
        labels: Vec<ClassId>,
    ) -> Result<Self> {
        let im: Vec<Var> = images
            .iter()
            .map(|v| tape.leaf(Tensor::vector(v.clone()).with_grad()))
            .collect();
        let tx: Vec<Var> = texts
            .iter()
            .map(|v| tape.leaf(Tensor::vector(v.clone()).with_grad()))
            .collect();
        Self::from_embeddings(tape, &im, &tx, labels)
    }

    /// Encodes every entry of `batch`; `inputs[c]` is the prepared caption `c`.
    pub fn compute(
        tape: &mut Tape,
        p: &Bound,
        model: &CompatibilityModel,
        batch: &MiniBatch,
        images: &[&[f64]],
        inputs: &[&EncoderInput],
    ) -> Result<Self> {
        let im = images
            .iter()
            .map(|v| model.encode_image(tape, p, v))
            .collect::<Result<Vec<_>>>()?;
        let tx = inputs
            .iter()
            .map(|t| model.encode_text(tape, p, t))
            .collect::<Result<Vec<_>>>()?;
        Self::from_embeddings(tape, &im, &tx, batch.classes())
    }
}

pub fn loss_image_side(tape: &mut Tape, s: &BatchScores) -> Result<Var> {
    tape.structured_hinge(s.scores, &s.labels, HingeSide::Rows)
}

pub fn loss_text_side(tape: &mut Tape, s: &BatchScores) -> Result<Var> {
    tape.structured_hinge(s.scores, &s.labels, HingeSide::Cols)
}

pub fn objective(tape: &mut Tape, s: &BatchScores, which: Objective) -> Result<Var> {
    match which {
        Objective::DsSje => {
            let lv = loss_image_side(tape, s)?;
            let lt = loss_text_side(tape, s)?;
            tape.add(lv, lt)
        }
        Objective::DaSjeImage => loss_image_side(tape, s),
        Objective::DaSjeText => loss_text_side(tape, s),
    }
}
