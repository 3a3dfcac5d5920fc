use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageMode {
    /// `θ(v) = v`; features are used as they come.
    Identity,
    /// `θ(v) = W·v` with a trainable, bias-free `W [d × D_img]`.
    LinearProjection,
}

/// Image side `θ(v)` of the joint embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEncoder {
    mode: ImageMode,
    feature_dim: usize,
    embed_dim: usize,
    projection: Option<ParamId>,
}

impl ImageEncoder {
    pub fn new(
        mode: ImageMode,
        feature_dim: usize,
        embed_dim: usize,
        seed: u64,
        store: &mut ParamStore,
    ) -> Result<Self> {
        let projection = match mode {
            ImageMode::Identity => {
                if feature_dim != embed_dim {
                    return Err(Error::Config(format!(
                        "identity image encoder needs feature dimension {feature_dim} \
                         to equal embedding dimension {embed_dim}"
                    )));
                }
                None
            }
            ImageMode::LinearProjection => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a6e);
                Some(store.linear_weight("image.projection", embed_dim, feature_dim, &mut rng))
            }
        };
        Ok(Self {
            mode,
            feature_dim,
            embed_dim,
            projection,
        })
    }

    pub fn mode(&self) -> ImageMode {
        self.mode
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn encode(&self, tape: &mut Tape, p: &Bound, v: &[f64]) -> Result<Var> {
        if v.len() != self.feature_dim {
            return Err(Error::dim("encode_image", &[self.feature_dim], &[v.len()]));
        }
        let x = tape.constant(Tensor::vector(v.to_vec()));
        match self.projection {
            None => Ok(x),
            Some(w) => tape.matvec(p[w], x),
        }
    }

    pub fn embed(&self, params: &ParamStore, v: &[f64]) -> Result<Vec<f64>> {
        match self.projection {
            None => {
                if v.len() != self.feature_dim {
                    return Err(Error::dim("encode_image", &[self.feature_dim], &[v.len()]));
                }
                Ok(v.to_vec())
            }
            Some(w) => {
                let w = params.get(w);
                Ok((0..self.embed_dim)
                    .map(|i| (0..self.feature_dim).map(|j| w.at2(i, j) * v[j]).sum())
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_mode() {
        let mut store = ParamStore::new();
        let enc = ImageEncoder::new(ImageMode::Identity, 3, 3, 0, &mut store).unwrap();
        assert_eq!(enc.embed(&store, &[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
        assert_eq!(enc.embed(&store, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(store.is_empty());
        assert!(ImageEncoder::new(ImageMode::Identity, 3, 4, 0, &mut store).is_err());
    }

    #[test]
    fn projection_matches_matmul_oracle() {
        let mut store = ParamStore::new();
        let enc = ImageEncoder::new(ImageMode::LinearProjection, 4, 2, 9, &mut store).unwrap();
        let v = [0.3, -1.0, 2.0, 0.25];
        let w = store.get(store.find("image.projection").unwrap()).clone();
        let oracle: Vec<f64> = (0..2)
            .map(|i| (0..4).map(|j| w.values()[i * 4 + j] * v[j]).sum())
            .collect();
        let got = enc.embed(&store, &v).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let taped = enc.encode(&mut tape, &p, &v).unwrap();
        for i in 0..2 {
            assert!((got[i] - oracle[i]).abs() < 1e-12);
            assert!((tape.value(taped).values()[i] - oracle[i]).abs() < 1e-12);
        }
        assert_eq!(enc.embed(&store, &[0.0; 4]).unwrap(), vec![0.0; 2]);
    }
}
