//! Zero-shot classification and text-to-image retrieval on the test split,
//! plus caption-count sweeps.
//!
//! A class is represented at test time by the mean embedding of a seeded
//! sample of its captions. Images are classified against these class
//! embeddings, and each class embedding is used as a query that ranks every
//! test image.

pub mod metrics;
pub mod report;
pub mod sweep;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{ClassId, ClassSplitDataset, Split};
use crate::error::{Error, Result};
use crate::joint::{class_embedding, classify_image, compatibility, CompatibilityModel, Objective, PreparedCorpus};

pub use metrics::{ap_at_50, ap_at_k, mean, per_class_accuracy, std_dev, RetrievalRanking, AP_WINDOW};
pub use report::{ClassRecord, EvalReport};
pub use sweep::{caption_sweep_test, caption_sweep_train, SweepAxis, SweepRow, SweepSummary};

/// How many captions per class build the class text embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaptionCount {
    N(usize),
    All,
}

impl fmt::Display for CaptionCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaptionCount::N(n) => write!(f, "{n}"),
            CaptionCount::All => f.write_str("all"),
        }
    }
}

impl FromStr for CaptionCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(CaptionCount::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(CaptionCount::N(n)),
            _ => Err(Error::Config(format!(
                "caption count must be a positive integer or `all`, got `{s}`"
            ))),
        }
    }
}

impl Serialize for CaptionCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CaptionCount::N(n) => s.serialize_u64(*n as u64),
            CaptionCount::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for CaptionCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(0) => Err(serde::de::Error::custom("caption count must be positive")),
            Raw::N(n) => Ok(CaptionCount::N(n as usize)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Evaluation settings shared by single runs and sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Captions per class for the headline evaluation.
    pub captions: CaptionCount,
    /// Seed of the caption sample.
    pub seed: u64,
    /// Caption counts visited by a sweep.
    pub sweep_counts: Vec<CaptionCount>,
    /// Repeats per sweep count; repeat `r` uses seed `seed + r`.
    pub repeats: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            captions: CaptionCount::All,
            seed: 0,
            sweep_counts: [1, 2, 4, 8, 16, 32, 64, 128]
                .into_iter()
                .map(CaptionCount::N)
                .chain([CaptionCount::All])
                .collect(),
            repeats: 10,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be positive".into()));
        }
        if self.sweep_counts.is_empty() {
            return Err(Error::Config("sweep_counts must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct TestImage {
    image_id: String,
    class: ClassId,
    embedding: Vec<f64>,
}

/// Embeddings of every image and caption of a split (the test split unless
/// stated), computed once so that
/// repeated caption samples only average and score.
#[derive(Debug, Clone)]
pub struct TestEmbeddings {
    classes: Vec<ClassId>,
    images: Vec<TestImage>,
    captions: BTreeMap<ClassId, Vec<Vec<f64>>>,
}

/// A class text embedding with the number of captions averaged into it.
#[derive(Debug, Clone)]
pub struct ClassText {
    pub class: ClassId,
    pub embedding: Vec<f64>,
    pub captions_used: usize,
}

impl TestEmbeddings {
    pub fn new(model: &CompatibilityModel, ds: &ClassSplitDataset) -> Result<Self> {
        Self::for_split(model, ds, Split::Test)
    }

    /// The same cache over another split, e.g. to measure training accuracy.
    pub fn for_split(model: &CompatibilityModel, ds: &ClassSplitDataset, split: Split) -> Result<Self> {
        let mut classes = ds.splits().classes(split).to_vec();
        classes.sort_unstable();
        if classes.is_empty() {
            return Err(Error::Dataset(format!("{split:?} split is empty").to_lowercase()));
        }
        let image_idx: Vec<usize> = classes
            .iter()
            .flat_map(|&c| ds.images_of_class(c).iter().copied())
            .collect();
        let images = image_idx
            .par_iter()
            .map(|&i| {
                let img = &ds.images()[i];
                Ok(TestImage {
                    image_id: img.image_id.clone(),
                    class: img.class_id,
                    embedding: model.embed_image(&img.vector)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let corpus = PreparedCorpus::new(model, ds)?;
        let mut captions = BTreeMap::new();
        for &c in &classes {
            if ds.images_of_class(c).is_empty() {
                return Err(Error::Dataset(format!("class {c} has no images")));
            }
            let embs = ds
                .captions_of_class(c)
                .par_iter()
                .filter_map(|&k| corpus.get(k).ok())
                .map(|input| model.embed_text(input))
                .collect::<Result<Vec<_>>>()?;
            if embs.is_empty() {
                return Err(Error::Dataset(format!("class {c} has no usable captions")));
            }
            captions.insert(c, embs);
        }
        Ok(Self {
            classes,
            images,
            captions,
        })
    }

    /// Test classes in ascending id order.
    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    /// Retrieval window actually used: `min(50, #test images)`.
    pub fn effective_k(&self) -> usize {
        AP_WINDOW.min(self.images.len())
    }

    /// Class text embeddings from `count` captions per class. Each class
    /// draws from its own stream of `seed`; `All` uses no randomness.
    pub fn class_texts(&self, count: CaptionCount, seed: u64) -> Result<Vec<ClassText>> {
        self.classes
            .iter()
            .map(|&c| {
                let all = &self.captions[&c];
                let chosen: Vec<Vec<f64>> = match count {
                    CaptionCount::N(n) if n < all.len() => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(u64::from(c));
                        let mut picks = index::sample(&mut rng, all.len(), n).into_vec();
                        picks.sort_unstable();
                        picks.into_iter().map(|i| all[i].clone()).collect()
                    }
                    CaptionCount::N(n) => {
                        if n > all.len() {
                            log::warn!(
                                "class {c}: {n} captions requested, {} available; using all",
                                all.len()
                            );
                        }
                        all.clone()
                    }
                    CaptionCount::All => all.clone(),
                };
                Ok(ClassText {
                    class: c,
                    embedding: class_embedding(&chosen)?,
                    captions_used: chosen.len(),
                })
            })
            .collect()
    }

    /// Per-class accuracy of zero-shot image classification, in class order.
    pub fn classify(&self, texts: &[ClassText]) -> Result<Vec<f64>> {
        let candidates: Vec<(ClassId, Vec<f64>)> =
            texts.iter().map(|t| (t.class, t.embedding.clone())).collect();
        let predicted = self
            .images
            .par_iter()
            .map(|img| classify_image(&img.embedding, &candidates))
            .collect::<Result<Vec<_>>>()?;
        let truth: Vec<ClassId> = self.images.iter().map(|i| i.class).collect();
        per_class_accuracy(&truth, &predicted, &self.classes)
    }

    /// Ranking of every test image for one class text query.
    pub fn rank(&self, query: &ClassText) -> Result<RetrievalRanking> {
        let candidates = self
            .images
            .iter()
            .map(|img| {
                Ok((
                    img.image_id.clone(),
                    img.class,
                    compatibility(&img.embedding, &query.embedding)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RetrievalRanking::new(query.class, candidates))
    }

    /// Per-class precision in the top `effective_k`, in class order.
    pub fn retrieve(&self, texts: &[ClassText]) -> Result<Vec<f64>> {
        let k = self.effective_k();
        texts
            .par_iter()
            .map(|t| ap_at_k(&self.rank(t)?, k))
            .collect()
    }

    /// Both metrics from one caption sample.
    pub fn evaluate(&self, count: CaptionCount, seed: u64) -> Result<(Vec<ClassText>, Vec<f64>, Vec<f64>)> {
        let texts = self.class_texts(count, seed)?;
        let top1 = self.classify(&texts)?;
        let ap = self.retrieve(&texts)?;
        Ok((texts, top1, ap))
    }

    pub fn report(
        &self,
        model: &CompatibilityModel,
        objective: Option<Objective>,
        count: CaptionCount,
        seed: u64,
    ) -> Result<EvalReport> {
        let (texts, top1, ap) = self.evaluate(count, seed)?;
        let per_class = texts
            .iter()
            .zip(top1.iter().zip(&ap))
            .map(|(t, (&acc, &ap))| ClassRecord {
                class: t.class,
                images: self.images.iter().filter(|i| i.class == t.class).count(),
                captions_used: t.captions_used,
                top1: acc,
                ap_at_k: ap,
            })
            .collect();
        let spec = model.text_encoder().spec();
        Ok(EvalReport {
            objective,
            encoder: spec.family,
            level: spec.effective_level(),
            captions: count,
            seed,
            top1: mean(&top1),
            ap_at_50: mean(&ap),
            effective_k: self.effective_k(),
            per_class,
        })
    }
}

/// Average per-class top-1 accuracy (percent) on the test split.
pub fn zero_shot_accuracy(
    model: &CompatibilityModel,
    ds: &ClassSplitDataset,
    count: CaptionCount,
    seed: u64,
) -> Result<f64> {
    let emb = TestEmbeddings::new(model, ds)?;
    Ok(mean(&emb.classify(&emb.class_texts(count, seed)?)?))
}

/// Mean over test classes of the top-k retrieval precision (percent), with
/// the per-class values in ascending class order.
pub fn retrieval_eval(
    model: &CompatibilityModel,
    ds: &ClassSplitDataset,
    count: CaptionCount,
    seed: u64,
) -> Result<(f64, Vec<(ClassId, f64)>)> {
    let emb = TestEmbeddings::new(model, ds)?;
    let ap = emb.retrieve(&emb.class_texts(count, seed)?)?;
    let table = emb.classes().iter().copied().zip(ap.iter().copied()).collect();
    Ok((mean(&ap), table))
}

/// Full report for one caption count.
pub fn evaluate(
    model: &CompatibilityModel,
    ds: &ClassSplitDataset,
    objective: Option<Objective>,
    count: CaptionCount,
    seed: u64,
) -> Result<EvalReport> {
    TestEmbeddings::new(model, ds)?.report(model, objective, count, seed)
}
