use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::data::{ClassId, ClassSplitDataset};
use crate::encoders::EncoderInput;
use crate::error::{Error, Result};
use crate::joint::model::CompatibilityModel;

/// One sampled image of a class and one of that image's captions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchEntry {
    pub class: ClassId,
    pub image: usize,
    pub caption: usize,
}

/// Entries for distinct classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    entries: Vec<BatchEntry>,
}

impl MiniBatch {
    pub fn new(entries: Vec<BatchEntry>, ds: &ClassSplitDataset) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.class) {
                return Err(Error::Contract(format!("class {} repeated in batch", e.class)));
            }
            let img = ds
                .images()
                .get(e.image)
                .ok_or_else(|| Error::Contract(format!("image index {} out of range", e.image)))?;
            if img.class_id != e.class {
                return Err(Error::Contract(format!(
                    "image {} is not of class {}",
                    img.image_id, e.class
                )));
            }
            if !ds.captions_of_image(e.image).contains(&e.caption) {
                return Err(Error::Contract(format!(
                    "caption {} does not describe image {}",
                    e.caption, img.image_id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[BatchEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn classes(&self) -> Vec<ClassId> {
        self.entries.iter().map(|e| e.class).collect()
    }

    /// For each class: a uniformly drawn captioned image, then one of its
    /// captions uniformly.
    pub fn sample<R: Rng>(classes: &[ClassId], ds: &ClassSplitDataset, rng: &mut R) -> Result<Self> {
        let entries = classes
            .iter()
            .map(|&class| {
                let captioned: Vec<usize> = ds
                    .images_of_class(class)
                    .iter()
                    .copied()
                    .filter(|&i| !ds.captions_of_image(i).is_empty())
                    .collect();
                let &image = captioned.choose(rng).ok_or_else(|| {
                    Error::Dataset(format!("class {class} has no captioned image"))
                })?;
                let &caption = ds.captions_of_image(image).choose(rng).expect("nonempty");
                Ok(BatchEntry {
                    class,
                    image,
                    caption,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries, ds)
    }
}

/// Shuffles `classes` and cuts them into batches of at most `size`.
pub fn epoch_batches<R: Rng>(classes: &[ClassId], size: usize, rng: &mut R) -> Vec<Vec<ClassId>> {
    let mut order = classes.to_vec();
    order.shuffle(rng);
    order.chunks(size.max(1)).map(<[ClassId]>::to_vec).collect()
}

/// Every caption of a dataset prepared once for a model's text encoder.
/// Captions that cannot be encoded (empty after normalization) are `None`.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    inputs: Vec<Option<EncoderInput>>,
}

impl PreparedCorpus {
    pub fn new(model: &CompatibilityModel, ds: &ClassSplitDataset) -> Result<Self> {
        let inputs = ds
            .captions()
            .iter()
            .map(|c| match model.prepare(&c.raw_text, c.class_id) {
                Ok(x) => Ok(Some(x)),
                Err(Error::EmptyCaption(t)) => {
                    log::warn!("skipping caption that is empty after normalization: {t:?}");
                    Ok(None)
                }
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { inputs })
    }

    pub fn get(&self, caption: usize) -> Result<&EncoderInput> {
        self.inputs
            .get(caption)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::EmptyCaption(format!("caption #{caption}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampled_batches_respect_invariants() {
        let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let batches = epoch_batches(&ds.splits().train, 2, &mut rng);
            assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), ds.splits().train.len());
            for classes in batches {
                let b = MiniBatch::sample(&classes, &ds, &mut rng).unwrap();
                assert_eq!(b.classes(), classes);
                for e in b.entries() {
                    assert_eq!(ds.captions()[e.caption].image_id, ds.images()[e.image].image_id);
                }
            }
        }
    }

    #[test]
    fn repeated_class_is_rejected() {
        let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let img = ds.images_of_class(0)[0];
        let cap = ds.captions_of_image(img)[0];
        let e = BatchEntry {
            class: 0,
            image: img,
            caption: cap,
        };
        assert!(MiniBatch::new(vec![e, e], &ds).is_err());
        let wrong = BatchEntry { class: 1, ..e };
        assert!(MiniBatch::new(vec![wrong], &ds).is_err());
    }
}
