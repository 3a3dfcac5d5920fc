use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::joint::model::compatibility;

/// Arithmetic mean of a class's caption (or image) embeddings.
pub fn class_embedding(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = embeddings
        .first()
        .ok_or(Error::EmptySequence("class_embedding"))?;
    let mut mean = vec![0.0; first.len()];
    for e in embeddings {
        if e.len() != mean.len() {
            return Err(Error::dim("class_embedding", &[mean.len()], &[e.len()]));
        }
        mean.iter_mut().zip(e).for_each(|(m, x)| *m += x);
    }
    let inv = 1.0 / embeddings.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(mean)
}

/// `argmax_y ⟨query, class_y⟩`; ties go to the smallest class id.
pub fn argmax_class(query: &[f64], classes: &[(ClassId, Vec<f64>)]) -> Result<ClassId> {
    let mut best: Option<(ClassId, f64)> = None;
    for (id, emb) in classes {
        let s = compatibility(query, emb)?;
        best = match best {
            Some((bid, bs)) if bs > s || (bs == s && bid < *id) => Some((bid, bs)),
            _ => Some((*id, s)),
        };
    }
    best.map(|(id, _)| id)
        .ok_or(Error::EmptySequence("classify"))
}

/// Zero-shot image classifier: `argmax_y θ(v)ᵀ E_t[φ(t)]` given the averaged
/// text embedding of each candidate class.
pub fn classify_image(image_embedding: &[f64], class_text: &[(ClassId, Vec<f64>)]) -> Result<ClassId> {
    argmax_class(image_embedding, class_text)
}

/// Text classifier: `argmax_y E_v[θ(v)]ᵀ φ(t)` given the averaged image
/// embedding of each candidate class.
pub fn classify_text(text_embedding: &[f64], class_images: &[(ClassId, Vec<f64>)]) -> Result<ClassId> {
    argmax_class(text_embedding, class_images)
}
