//! Desk-scale stand-in for a fine-grained captioned image dataset.
//!
//! Each class owns a distinct binary attribute signature `a`. Image features
//! are `M·a + ε` for a fixed random projection `M`, and every caption names
//! the class's active attributes with fixed phrases ("crest is crimson") in
//! random order, optionally dropping one. Unseen classes are new combinations
//! of phrases seen in training, so zero-shot transfer is possible.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::dataset::{Caption, ClassId, ClassSplitDataset, ImageFeature, Splits};
use crate::data::wordvec::WordVectors;
use crate::error::{Error, Result};

const PARTS: [&str; 12] = [
    "crown", "crest", "wing", "tail", "breast", "belly", "throat", "back", "eyering", "bill",
    "nape", "rump",
];
const COLORS: [&str; 11] = [
    "crimson", "yellow", "blue", "white", "black", "brown", "grey", "orange", "green", "buff",
    "olive",
];
const OPENERS: [&str; 3] = ["this bird's", "the bird's", "a bird whose"];
const PLAIN: &str = "this bird has no distinctive markings.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub n_train_classes: usize,
    pub n_val_classes: usize,
    pub images_per_class: usize,
    pub captions_per_image: usize,
    pub n_attributes: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    /// Drop one random phrase from each caption that has at least two.
    pub phrase_dropout: bool,
    /// Probability that an attribute is active in a class signature.
    pub attribute_prob: f64,
    /// Dimension of the generated word vectors; 0 disables them.
    pub wordvec_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            n_train_classes: 5,
            n_val_classes: 0,
            images_per_class: 10,
            captions_per_image: 10,
            n_attributes: 8,
            feature_dim: 32,
            noise_sigma: 0.0,
            phrase_dropout: true,
            attribute_prob: 0.5,
            wordvec_dim: 16,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_classes", self.n_classes),
            ("n_train_classes", self.n_train_classes),
            ("images_per_class", self.images_per_class),
            ("captions_per_image", self.captions_per_image),
            ("n_attributes", self.n_attributes),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.n_train_classes + self.n_val_classes >= self.n_classes {
            return Err(Error::Config(format!(
                "need at least one test class: {} train + {} val >= {} classes",
                self.n_train_classes, self.n_val_classes, self.n_classes
            )));
        }
        if self.n_attributes > PARTS.len() * COLORS.len() {
            return Err(Error::Config(format!(
                "at most {} attributes have phrases",
                PARTS.len() * COLORS.len()
            )));
        }
        if self.n_attributes < 63 && self.n_classes as u64 > 1u64 << self.n_attributes {
            return Err(Error::Config(format!(
                "{} classes cannot have distinct signatures over {} attributes",
                self.n_classes, self.n_attributes
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and >= 0".into()));
        }
        if !(self.attribute_prob > 0.0 && self.attribute_prob < 1.0) {
            return Err(Error::Config("attribute_prob must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Phrase for attribute `k`. Part and color are chosen so every pair is
/// distinct for `k < 132`.
pub fn attribute_phrase(k: usize) -> String {
    let p = PARTS.len();
    let part = PARTS[k % p];
    let color = COLORS[(k + k / p) % COLORS.len()];
    format!("{part} is {color}")
}

/// Per-class binary signatures plus the projection used for the features.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub signatures: BTreeMap<ClassId, Vec<bool>>,
    /// `[feature_dim × n_attributes]`, row-major.
    pub projection: Vec<f64>,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<ClassSplitDataset> {
    generate_with_latents(cfg).map(|(d, _)| d)
}

pub fn generate_with_latents(cfg: &SyntheticConfig) -> Result<(ClassSplitDataset, Latents)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.n_attributes;

    let mut seen = HashSet::new();
    let mut signatures = BTreeMap::new();
    let exhaustive = k <= 12 && cfg.n_classes * 2 > (1usize << k);
    if exhaustive {
        // sampling by rejection would crawl; shuffle every code instead
        let mut codes: Vec<u64> = (0..1u64 << k).collect();
        codes.shuffle(&mut rng);
        for (c, code) in codes.into_iter().take(cfg.n_classes).enumerate() {
            signatures.insert(c as ClassId, (0..k).map(|b| code >> b & 1 == 1).collect());
        }
    } else {
        while signatures.len() < cfg.n_classes {
            let sig: Vec<bool> = (0..k).map(|_| rng.random_bool(cfg.attribute_prob)).collect();
            if seen.insert(sig.clone()) {
                signatures.insert(signatures.len() as ClassId, sig);
            }
        }
    }

    let scale = 1.0 / (k as f64).sqrt();
    let projection: Vec<f64> = (0..cfg.feature_dim * k)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let phrases: Vec<String> = (0..k).map(attribute_phrase).collect();

    let mut images = Vec::new();
    let mut captions = Vec::new();
    for (&class, sig) in &signatures {
        let clean: Vec<f64> = (0..cfg.feature_dim)
            .map(|r| {
                (0..k)
                    .filter(|&j| sig[j])
                    .map(|j| projection[r * k + j])
                    .sum()
            })
            .collect();
        let active: Vec<usize> = (0..k).filter(|&j| sig[j]).collect();
        for i in 0..cfg.images_per_class {
            let image_id = format!("c{class:04}_i{i:04}");
            let vector = clean
                .iter()
                .map(|&x| {
                    if cfg.noise_sigma > 0.0 {
                        x + noise.sample(&mut rng)
                    } else {
                        x
                    }
                })
                .collect();
            images.push(ImageFeature {
                image_id: image_id.clone(),
                class_id: class,
                vector,
            });
            for _ in 0..cfg.captions_per_image {
                let mut order = active.clone();
                order.shuffle(&mut rng);
                if cfg.phrase_dropout && order.len() >= 2 {
                    let drop = rng.random_range(0..order.len());
                    order.remove(drop);
                }
                let opener = OPENERS[rng.random_range(0..OPENERS.len())];
                captions.push(Caption {
                    image_id: image_id.clone(),
                    class_id: class,
                    raw_text: sentence(opener, order.iter().map(|&j| phrases[j].as_str())),
                });
            }
        }
    }

    let n_train = cfg.n_train_classes as ClassId;
    let n_val = cfg.n_val_classes as ClassId;
    let splits = Splits {
        train: (0..n_train).collect(),
        val: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..cfg.n_classes as ClassId).collect(),
    };

    let attributes = signatures
        .iter()
        .map(|(&c, s)| (c, s.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()))
        .collect();

    let word_vectors = if cfg.wordvec_dim > 0 {
        let words: BTreeSet<String> = phrases
            .iter()
            .map(String::as_str)
            .chain(OPENERS)
            .chain([PLAIN, "and"])
            .flat_map(|s| s.split(|c: char| !(c.is_alphanumeric() || c == '\'')))
            .filter(|w| !w.is_empty())
            .map(str::to_string)
            .collect();
        let table = words
            .into_iter()
            .map(|w| {
                let v = (0..cfg.wordvec_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                (w, v)
            })
            .collect();
        Some(WordVectors::new(cfg.wordvec_dim, table)?)
    } else {
        None
    };

    let ds = ClassSplitDataset::new(images, captions, splits, Some(attributes), word_vectors)?;
    Ok((
        ds,
        Latents {
            signatures,
            projection,
        },
    ))
}

fn sentence<'a>(opener: &str, phrases: impl Iterator<Item = &'a str>) -> String {
    let phrases: Vec<&str> = phrases.collect();
    match phrases.as_slice() {
        [] => PLAIN.to_string(),
        [one] => format!("{opener} {one}."),
        [init @ .., last] => format!("{opener} {} and {last}.", init.join(", ")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phrase_counts(text: &str, k: usize) -> Vec<usize> {
        (0..k)
            .map(|j| text.matches(&attribute_phrase(j)).count())
            .collect()
    }

    #[test]
    fn phrases_are_distinct() {
        let all: BTreeSet<String> = (0..132).map(attribute_phrase).collect();
        assert_eq!(all.len(), 132);
        // no phrase is a substring of another, so counting by substring is sound
        for a in &all {
            for b in &all {
                assert!(a == b || !b.contains(a.as_str()), "{a} in {b}");
            }
        }
    }

    #[test]
    fn zero_noise_features_are_identical_within_class() {
        let cfg = SyntheticConfig {
            n_classes: 2,
            n_train_classes: 1,
            images_per_class: 3,
            captions_per_image: 1,
            n_attributes: 3,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        for class in 0..2 {
            let imgs = ds.images_of_class(class);
            let first = &ds.images()[imgs[0]].vector;
            assert!(imgs.iter().all(|&i| &ds.images()[i].vector == first));
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = SyntheticConfig {
            noise_sigma: 0.3,
            ..Default::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SyntheticConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn too_many_classes_for_attributes() {
        let cfg = SyntheticConfig {
            n_classes: 9,
            n_train_classes: 4,
            n_attributes: 3,
            ..Default::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let cfg = SyntheticConfig { n_classes: 8, ..cfg };
        assert!(generate(&cfg).is_ok());
    }

    #[test]
    fn zero_noise_captions_are_permutations() {
        let cfg = SyntheticConfig {
            phrase_dropout: false,
            n_attributes: 6,
            ..Default::default()
        };
        let (ds, lat) = generate_with_latents(&cfg).unwrap();
        for (&class, sig) in &lat.signatures {
            let expect: Vec<usize> = sig.iter().map(|&b| b as usize).collect();
            for c in ds.captions_of_class(class) {
                assert_eq!(phrase_counts(&ds.captions()[c].raw_text, 6), expect);
            }
        }
    }

    #[test]
    fn dropout_removes_exactly_one_phrase() {
        let cfg = SyntheticConfig {
            n_attributes: 6,
            ..Default::default()
        };
        let (ds, lat) = generate_with_latents(&cfg).unwrap();
        for cap in ds.captions() {
            let active = lat.signatures[&cap.class_id].iter().filter(|&&b| b).count();
            let named: usize = phrase_counts(&cap.raw_text, 6).iter().sum();
            let expect = if active >= 2 { active - 1 } else { active };
            assert_eq!(named, expect, "{}", cap.raw_text);
        }
    }

    #[test]
    fn nearest_centroid_is_perfect_without_noise() {
        let cfg = SyntheticConfig {
            n_classes: 12,
            n_train_classes: 8,
            n_attributes: 6,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        let centroids: Vec<(ClassId, Vec<f64>)> = ds
            .splits()
            .train
            .iter()
            .map(|&c| {
                let idx = ds.images_of_class(c);
                let mut m = vec![0.0; cfg.feature_dim];
                for &i in idx {
                    m.iter_mut()
                        .zip(&ds.images()[i].vector)
                        .for_each(|(a, b)| *a += b / idx.len() as f64);
                }
                (c, m)
            })
            .collect();
        for &c in &ds.splits().train {
            for &i in ds.images_of_class(c) {
                let v = &ds.images()[i].vector;
                let best = centroids
                    .iter()
                    .min_by(|a, b| {
                        let da: f64 = a.1.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum();
                        let db: f64 = b.1.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                assert_eq!(best.0, c);
            }
        }
    }

    #[test]
    fn word_vectors_cover_caption_words() {
        let ds = generate(&SyntheticConfig::default()).unwrap();
        let wv = ds.word_vectors().unwrap();
        let alphabet = crate::data::text::Alphabet::default();
        for cap in ds.captions() {
            for w in crate::data::text::word_tokens(&cap.raw_text, &alphabet) {
                assert!(wv.get(&w).is_some(), "missing {w}");
            }
        }
    }
}
