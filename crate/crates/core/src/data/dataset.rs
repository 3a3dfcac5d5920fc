//! In-memory dataset and its directory layout.
//!
//! ```text
//! features.csv    image_id,class_id,f1,...,fD     (no header)
//! captions.tsv    image_id<TAB>class_id<TAB>text
//! splits.json     {"train": [..], "val": [..], "test": [..]}
//! attributes.csv  class_id,a1,...,aK              (optional)
//! wordvecs.txt    word f1 ... fE                  (optional)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::wordvec::WordVectors;
use crate::error::{Error, Result};

pub type ClassId = u32;

pub const FEATURES_FILE: &str = "features.csv";
pub const CAPTIONS_FILE: &str = "captions.tsv";
pub const SPLITS_FILE: &str = "splits.json";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";
pub const WORDVECS_FILE: &str = "wordvecs.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeature {
    pub image_id: String,
    pub class_id: ClassId,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Caption {
    pub image_id: String,
    pub class_id: ClassId,
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<ClassId>,
    #[serde(default)]
    pub val: Vec<ClassId>,
    pub test: Vec<ClassId>,
}

impl Splits {
    pub fn classes(&self, split: Split) -> &[ClassId] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn validate(&self) -> Result<()> {
        let sets = [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ];
        for (name, s) in sets {
            let unique: BTreeSet<_> = s.iter().collect();
            if unique.len() != s.len() {
                return Err(Error::Dataset(format!("duplicate class in {name} split")));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                let a: BTreeSet<_> = sets[i].1.iter().collect();
                if let Some(c) = sets[j].1.iter().find(|c| a.contains(c)) {
                    return Err(Error::Dataset(format!(
                        "class {c} appears in both {} and {} splits",
                        sets[i].0, sets[j].0
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Images, captions and disjoint class splits, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSplitDataset {
    images: Vec<ImageFeature>,
    captions: Vec<Caption>,
    splits: Splits,
    attributes: Option<BTreeMap<ClassId, Vec<f64>>>,
    word_vectors: Option<WordVectors>,
    feature_dim: usize,
    image_index: HashMap<String, usize>,
    captions_by_image: Vec<Vec<usize>>,
    images_by_class: BTreeMap<ClassId, Vec<usize>>,
}

impl ClassSplitDataset {
    pub fn new(
        images: Vec<ImageFeature>,
        captions: Vec<Caption>,
        splits: Splits,
        attributes: Option<BTreeMap<ClassId, Vec<f64>>>,
        word_vectors: Option<WordVectors>,
    ) -> Result<Self> {
        splits.validate()?;
        let split_classes: BTreeSet<ClassId> = splits
            .train
            .iter()
            .chain(&splits.val)
            .chain(&splits.test)
            .copied()
            .collect();

        let feature_dim = images
            .first()
            .map(|i| i.vector.len())
            .ok_or_else(|| Error::Dataset("dataset has no images".into()))?;
        if feature_dim == 0 {
            return Err(Error::Dataset("image features are empty".into()));
        }

        let mut image_index = HashMap::with_capacity(images.len());
        let mut images_by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, img) in images.iter().enumerate() {
            if img.vector.len() != feature_dim {
                return Err(Error::Dataset(format!(
                    "image {} has feature dimension {}, expected {feature_dim}",
                    img.image_id,
                    img.vector.len()
                )));
            }
            if img.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!(
                    "image {} has non-finite features",
                    img.image_id
                )));
            }
            if !split_classes.contains(&img.class_id) {
                return Err(Error::Dataset(format!(
                    "image {} has class {} which is in no split",
                    img.image_id, img.class_id
                )));
            }
            if image_index.insert(img.image_id.clone(), i).is_some() {
                return Err(Error::Dataset(format!("duplicate image id {}", img.image_id)));
            }
            images_by_class.entry(img.class_id).or_default().push(i);
        }

        let mut captions_by_image = vec![Vec::new(); images.len()];
        let mut captioned_classes = BTreeSet::new();
        for (c, cap) in captions.iter().enumerate() {
            let Some(&img) = image_index.get(&cap.image_id) else {
                return Err(Error::Dataset(format!(
                    "caption {c} refers to unknown image {}",
                    cap.image_id
                )));
            };
            if images[img].class_id != cap.class_id {
                return Err(Error::Dataset(format!(
                    "caption {c} has class {} but image {} has class {}",
                    cap.class_id, cap.image_id, images[img].class_id
                )));
            }
            captions_by_image[img].push(c);
            captioned_classes.insert(cap.class_id);
        }

        for class in &split_classes {
            if !images_by_class.contains_key(class) {
                return Err(Error::Dataset(format!("class {class} has no images")));
            }
            if !captioned_classes.contains(class) {
                return Err(Error::Dataset(format!("class {class} has no captions")));
            }
        }

        if let Some(attrs) = &attributes {
            let dim = attrs.values().next().map_or(0, Vec::len);
            if dim == 0 {
                return Err(Error::Dataset("attribute vectors are empty".into()));
            }
            for class in &split_classes {
                match attrs.get(class) {
                    None => {
                        return Err(Error::Dataset(format!(
                            "class {class} has no attribute vector"
                        )))
                    }
                    Some(v) if v.len() != dim => {
                        return Err(Error::Dataset(format!(
                            "attribute vector of class {class} has dimension {}, expected {dim}",
                            v.len()
                        )))
                    }
                    _ => {}
                }
            }
            if let Some(c) = attrs.keys().find(|c| !split_classes.contains(c)) {
                return Err(Error::Dataset(format!(
                    "attribute vector for class {c} which is in no split"
                )));
            }
        }

        Ok(Self {
            images,
            captions,
            splits,
            attributes,
            word_vectors,
            feature_dim,
            image_index,
            captions_by_image,
            images_by_class,
        })
    }

    pub fn images(&self) -> &[ImageFeature] {
        &self.images
    }

    pub fn captions(&self) -> &[Caption] {
        &self.captions
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn attributes(&self) -> Option<&BTreeMap<ClassId, Vec<f64>>> {
        self.attributes.as_ref()
    }

    pub fn word_vectors(&self) -> Option<&WordVectors> {
        self.word_vectors.as_ref()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageFeature> {
        self.image_index.get(image_id).map(|&i| &self.images[i])
    }

    /// Image indices of `class`, in file order.
    pub fn images_of_class(&self, class: ClassId) -> &[usize] {
        self.images_by_class.get(&class).map_or(&[], Vec::as_slice)
    }

    /// Caption indices of image `image`, in file order.
    pub fn captions_of_image(&self, image: usize) -> &[usize] {
        &self.captions_by_image[image]
    }

    /// Caption indices of every image of `class`.
    pub fn captions_of_class(&self, class: ClassId) -> Vec<usize> {
        self.images_of_class(class)
            .iter()
            .flat_map(|&i| self.captions_by_image[i].iter().copied())
            .collect()
    }

    /// Captions of every class in `split`.
    pub fn split_captions(&self, split: Split) -> impl Iterator<Item = &Caption> {
        let classes: BTreeSet<ClassId> = self.splits.classes(split).iter().copied().collect();
        self.captions
            .iter()
            .filter(move |c| classes.contains(&c.class_id))
    }

    /// Keeps only the first `n` captions of each image.
    pub fn with_captions_per_image(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("captions per image must be positive".into()));
        }
        let keep: BTreeSet<usize> = self
            .captions_by_image
            .iter()
            .flat_map(|c| c.iter().take(n).copied())
            .collect();
        let captions = self
            .captions
            .iter()
            .enumerate()
            .filter(|(i, _)| keep.contains(i))
            .map(|(_, c)| c.clone())
            .collect();
        Self::new(
            self.images.clone(),
            captions,
            self.splits.clone(),
            self.attributes.clone(),
            self.word_vectors.clone(),
        )
    }

    /// Reads the directory layout described at the top of this module.
    pub fn load(root: &Path) -> Result<Self> {
        let features = root.join(FEATURES_FILE);
        let mut images = Vec::new();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(&features)?;
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse_err = |detail: String| Error::Parse {
                path: features.clone(),
                line: n + 1,
                detail,
            };
            if rec.len() < 3 {
                return Err(parse_err("expected image_id, class_id and features".into()));
            }
            let class_id = rec[1]
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("class id: {e}")))?;
            let vector = rec
                .iter()
                .skip(2)
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("feature: {e}")))?;
            images.push(ImageFeature {
                image_id: rec[0].to_string(),
                class_id,
                vector,
            });
        }

        let captions_path = root.join(CAPTIONS_FILE);
        let text = fs::read_to_string(&captions_path).map_err(|e| Error::io(&captions_path, e))?;
        let mut captions = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(image_id), Some(class), Some(raw)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Parse {
                    path: captions_path.clone(),
                    line: n + 1,
                    detail: "expected image_id<TAB>class_id<TAB>text".into(),
                });
            };
            let class_id = class.trim().parse().map_err(|e| Error::Parse {
                path: captions_path.clone(),
                line: n + 1,
                detail: format!("class id: {e}"),
            })?;
            captions.push(Caption {
                image_id: image_id.to_string(),
                class_id,
                raw_text: raw.to_string(),
            });
        }

        let splits_path = root.join(SPLITS_FILE);
        let splits_text = fs::read_to_string(&splits_path).map_err(|e| Error::io(&splits_path, e))?;
        let splits: Splits = serde_json::from_str(&splits_text)?;

        let attr_path = root.join(ATTRIBUTES_FILE);
        let attributes = if attr_path.exists() {
            let mut attrs = BTreeMap::new();
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_path(&attr_path)?;
            for (n, rec) in rdr.records().enumerate() {
                let rec = rec?;
                let parse_err = |detail: String| Error::Parse {
                    path: attr_path.clone(),
                    line: n + 1,
                    detail,
                };
                let class: ClassId = rec
                    .get(0)
                    .ok_or_else(|| parse_err("empty record".into()))?
                    .trim()
                    .parse()
                    .map_err(|e| parse_err(format!("class id: {e}")))?;
                let v = rec
                    .iter()
                    .skip(1)
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| parse_err(format!("attribute: {e}")))?;
                if attrs.insert(class, v).is_some() {
                    return Err(parse_err(format!("duplicate attribute vector for class {class}")));
                }
            }
            Some(attrs)
        } else {
            None
        };

        let wv_path = root.join(WORDVECS_FILE);
        let word_vectors = if wv_path.exists() {
            Some(WordVectors::load(&wv_path)?)
        } else {
            None
        };

        Self::new(images, captions, splits, attributes, word_vectors)
    }

    /// Writes the directory layout; every float is written in shortest
    /// round-trip form so [`Self::load`] reproduces the data exactly.
    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(root.join(FEATURES_FILE))?;
        for img in &self.images {
            let mut rec = vec![img.image_id.clone(), img.class_id.to_string()];
            rec.extend(img.vector.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(root.join(FEATURES_FILE), e))?;

        let path = root.join(CAPTIONS_FILE);
        let mut out = String::new();
        for c in &self.captions {
            if c.raw_text.contains(['\t', '\n', '\r']) || c.image_id.contains(['\t', '\n']) {
                return Err(Error::Dataset(format!(
                    "caption of image {} contains a tab or newline",
                    c.image_id
                )));
            }
            out.push_str(&format!("{}\t{}\t{}\n", c.image_id, c.class_id, c.raw_text));
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;

        let path = root.join(SPLITS_FILE);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(&mut f, &self.splits)?;
        f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;

        if let Some(attrs) = &self.attributes {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_path(root.join(ATTRIBUTES_FILE))?;
            for (class, v) in attrs {
                let mut rec = vec![class.to_string()];
                rec.extend(v.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(root.join(ATTRIBUTES_FILE), e))?;
        }

        if let Some(wv) = &self.word_vectors {
            let path = root.join(WORDVECS_FILE);
            fs::write(&path, wv.to_text()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(id: &str, class: ClassId, v: Vec<f64>) -> ImageFeature {
        ImageFeature {
            image_id: id.into(),
            class_id: class,
            vector: v,
        }
    }

    fn caption(id: &str, class: ClassId, text: &str) -> Caption {
        Caption {
            image_id: id.into(),
            class_id: class,
            raw_text: text.into(),
        }
    }

    fn minimal() -> (Vec<ImageFeature>, Vec<Caption>, Splits) {
        (
            vec![image("a", 0, vec![1.0, 0.0]), image("b", 1, vec![0.0, 1.0])],
            vec![caption("a", 0, "red bird"), caption("b", 1, "blue bird")],
            Splits {
                train: vec![0],
                val: vec![],
                test: vec![1],
            },
        )
    }

    #[test]
    fn minimal_fixture_loads() {
        let (i, c, s) = minimal();
        let ds = ClassSplitDataset::new(i, c, s, None, None).unwrap();
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.captions_of_class(1), vec![1]);
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let (i, c, mut s) = minimal();
        s.test.push(0);
        let err = ClassSplitDataset::new(i, c, s, None, None).unwrap_err();
        assert!(err.to_string().contains("both train and test"), "{err}");
    }

    #[test]
    fn dangling_and_mismatched_ids_are_rejected() {
        let (i, mut c, s) = minimal();
        c.push(caption("zzz", 0, "ghost"));
        assert!(ClassSplitDataset::new(i, c, s, None, None).is_err());

        let (i, mut c, s) = minimal();
        c[0].class_id = 1;
        assert!(ClassSplitDataset::new(i, c, s, None, None).is_err());

        let (mut i, c, s) = minimal();
        i[1].vector.push(3.0);
        assert!(ClassSplitDataset::new(i, c, s, None, None).is_err());

        let (i, c, mut s) = minimal();
        s.val.push(7);
        assert!(ClassSplitDataset::new(i, c, s, None, None).is_err());
    }

    #[test]
    fn attributes_need_one_vector_per_class() {
        let (i, c, s) = minimal();
        let attrs = BTreeMap::from([(0, vec![1.0, 0.0])]);
        assert!(ClassSplitDataset::new(i, c, s, Some(attrs), None).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let (i, c, s) = minimal();
        let attrs = BTreeMap::from([(0, vec![1.0, 0.5]), (1, vec![0.1, 1e-9])]);
        let wv = WordVectors::parse("red 1 2\nbird 0.5 -0.25\n", Path::new("mem")).unwrap();
        let ds = ClassSplitDataset::new(i, c, s, Some(attrs), Some(wv)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = ClassSplitDataset::load(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn caption_subset() {
        let (i, mut c, s) = minimal();
        c.push(caption("a", 0, "second caption"));
        let ds = ClassSplitDataset::new(i, c, s, None, None).unwrap();
        let one = ds.with_captions_per_image(1).unwrap();
        assert_eq!(one.captions().len(), 2);
        assert!(ds.with_captions_per_image(0).is_err());
    }
}
