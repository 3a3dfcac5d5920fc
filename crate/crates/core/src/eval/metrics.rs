use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};

/// Default retrieval window.
pub const AP_WINDOW: usize = 50;

/// All candidate images ranked for one text query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRanking {
    pub query: ClassId,
    /// `(image_id, class_id, score)`, score non-increasing; ties by image id.
    pub ranked: Vec<(String, ClassId, f64)>,
}

impl RetrievalRanking {
    /// Sorts candidates by descending score, breaking ties by image id so
    /// the ranking does not depend on presentation order.
    pub fn new(query: ClassId, mut candidates: Vec<(String, ClassId, f64)>) -> Self {
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        Self {
            query,
            ranked: candidates,
        }
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

/// Percent of the top `min(k, len)` images whose class equals the query.
pub fn ap_at_k(ranking: &RetrievalRanking, k: usize) -> Result<f64> {
    if ranking.is_empty() {
        return Err(Error::EmptySequence("ap_at_k ranking"));
    }
    if k == 0 {
        return Err(Error::Contract("ap_at_k window must be positive".into()));
    }
    let k = k.min(ranking.len());
    let hits = ranking.ranked[..k]
        .iter()
        .filter(|(_, c, _)| *c == ranking.query)
        .count();
    Ok(100.0 * hits as f64 / k as f64)
}

/// [`ap_at_k`] with the standard window of 50.
pub fn ap_at_50(ranking: &RetrievalRanking) -> Result<f64> {
    ap_at_k(ranking, AP_WINDOW)
}

/// Percent correct for each of `classes`, in that order. Classes without
/// any instance are an error.
pub fn per_class_accuracy(truth: &[ClassId], predicted: &[ClassId], classes: &[ClassId]) -> Result<Vec<f64>> {
    if truth.len() != predicted.len() {
        return Err(Error::dim("per_class_accuracy", &[truth.len()], &[predicted.len()]));
    }
    classes
        .iter()
        .map(|&c| {
            let (mut n, mut hit) = (0usize, 0usize);
            for (t, p) in truth.iter().zip(predicted) {
                if *t == c {
                    n += 1;
                    hit += usize::from(p == t);
                }
            }
            if n == 0 {
                return Err(Error::Dataset(format!("class {c} has no test images")));
            }
            Ok(100.0 * hit as f64 / n as f64)
        })
        .collect()
}

/// Unweighted mean.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ranking(query: ClassId, classes: &[ClassId]) -> RetrievalRanking {
        let n = classes.len();
        RetrievalRanking::new(
            query,
            classes
                .iter()
                .enumerate()
                .map(|(i, &c)| (format!("img{i:04}"), c, (n - i) as f64))
                .collect(),
        )
    }

    #[test]
    fn all_and_none_correct() {
        assert_eq!(ap_at_50(&ranking(3, &[3; 60])).unwrap(), 100.0);
        assert_eq!(ap_at_50(&ranking(3, &[1; 60])).unwrap(), 0.0);
        let mut mixed = vec![3; 50];
        mixed.extend([1; 10]);
        assert_eq!(ap_at_50(&ranking(3, &mixed)).unwrap(), 100.0);
    }

    #[test]
    fn small_pool_shrinks_window() {
        assert_eq!(ap_at_50(&ranking(0, &[0, 1, 0, 1])).unwrap(), 50.0);
        assert!(ap_at_50(&ranking(0, &[])).is_err());
    }

    #[test]
    fn ranking_is_sorted_and_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mut cands: Vec<(String, ClassId, f64)> = (0..30)
                .map(|i| (format!("i{i:02}"), rng.random_range(0..3), f64::from(rng.random_range(0..5u8))))
                .collect();
            let a = RetrievalRanking::new(1, cands.clone());
            cands.shuffle(&mut rng);
            let b = RetrievalRanking::new(1, cands);
            assert_eq!(a, b);
            assert!(a.ranked.windows(2).all(|w| w[0].2 >= w[1].2));
        }
    }

    #[test]
    fn counting_oracle_on_random_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let cands: Vec<(String, ClassId, f64)> = (0..100)
                .map(|i| (format!("i{i:03}"), i / 20, rng.random_range(-1.0..1.0)))
                .collect();
            let query = rng.random_range(0..5);
            // oracle: count candidates strictly better than each one of the query class
            let scores: Vec<f64> = cands.iter().map(|c| c.2).collect();
            let mut in_top = 0;
            for (i, c) in cands.iter().enumerate() {
                let better = scores.iter().filter(|&&s| s > scores[i]).count();
                if better < 50 && c.1 == query {
                    in_top += 1;
                }
            }
            let got = ap_at_50(&RetrievalRanking::new(query, cands)).unwrap();
            assert_eq!(got, 100.0 * in_top as f64 / 50.0);
        }
    }

    #[test]
    fn degenerate_classifier_scores_one_over_c() {
        let truth: Vec<ClassId> = (0..4).flat_map(|c| [c; 5]).collect();
        let pred = vec![2; truth.len()];
        let acc = per_class_accuracy(&truth, &pred, &[0, 1, 2, 3]).unwrap();
        assert_eq!(acc, vec![0.0, 0.0, 100.0, 0.0]);
        assert_eq!(mean(&acc), 25.0);
        assert!(per_class_accuracy(&truth, &pred, &[9]).is_err());
    }

    #[test]
    fn std_dev_examples() {
        assert_eq!(std_dev(&[4.0]), 0.0);
        assert_eq!(std_dev(&[1.0, 1.0, 1.0]), 0.0);
        assert!((std_dev(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
