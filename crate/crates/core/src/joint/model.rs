use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamStore, Tape, Var};
use crate::data::{ClassId, ClassSplitDataset};
use crate::encoders::{EncoderInput, EncoderSpec, ImageEncoder, ImageMode, Tables, TextEncoder};
use crate::error::{Error, Result};

/// `F(v, t) = θ(v)ᵀ φ(t)` with both encoders' parameters in one store.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityModel {
    params: ParamStore,
    image: ImageEncoder,
    text: TextEncoder,
}

/// Inner product of two embeddings.
pub fn compatibility(v: &[f64], t: &[f64]) -> Result<f64> {
    if v.len() != t.len() {
        return Err(Error::dim("compatibility", &[v.len()], &[t.len()]));
    }
    Ok(v.iter().zip(t).map(|(a, b)| a * b).sum())
}

/// `Δ(y₁, y₂)`: 0 when the labels agree, 1 otherwise.
pub fn zero_one_loss(a: ClassId, b: ClassId) -> f64 {
    if a == b {
        0.0
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageConfig {
    pub mode: ImageMode,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            mode: ImageMode::Identity,
        }
    }
}

impl CompatibilityModel {
    /// Builds tables from `ds` and initializes fresh parameters.
    pub fn build(spec: &EncoderSpec, image_mode: ImageMode, ds: &ClassSplitDataset) -> Result<Self> {
        let tables = Tables::from_dataset(spec, ds)?;
        Self::from_tables(spec, image_mode, ds.feature_dim(), tables)
    }

    pub fn from_tables(
        spec: &EncoderSpec,
        image_mode: ImageMode,
        feature_dim: usize,
        tables: Tables,
    ) -> Result<Self> {
        let mut params = ParamStore::new();
        let text = TextEncoder::new(spec, tables, &mut params)?;
        let image = ImageEncoder::new(
            image_mode,
            feature_dim,
            text.embed_dim(),
            spec.seed,
            &mut params,
        )?;
        Ok(Self {
            params,
            image,
            text,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn image_encoder(&self) -> &ImageEncoder {
        &self.image
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    pub fn embed_dim(&self) -> usize {
        self.text.embed_dim()
    }

    pub fn encode_text(&self, tape: &mut Tape, p: &Bound, input: &EncoderInput) -> Result<Var> {
        self.text.encode(tape, p, input)
    }

    pub fn encode_image(&self, tape: &mut Tape, p: &Bound, v: &[f64]) -> Result<Var> {
        self.image.encode(tape, p, v)
    }

    pub fn embed_text(&self, input: &EncoderInput) -> Result<Vec<f64>> {
        self.text.embed(&self.params, input)
    }

    pub fn embed_image(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.image.embed(&self.params, v)
    }

    pub fn prepare(&self, raw: &str, class: ClassId) -> Result<EncoderInput> {
        self.text.prepare(raw, class)
    }

    /// `F(v, t)` for raw inputs.
    pub fn score(&self, v: &[f64], input: &EncoderInput) -> Result<f64> {
        compatibility(&self.embed_image(v)?, &self.embed_text(input)?)
    }
}
