//! Retrieval evaluation: repeated-pool MedR and R@K in the image-to-recipe
//! direction.

use crate::data::{ImageSample, RecipeSample};
use crate::encoders::{encode_images_plain, encode_recipes_plain, ModelState};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Stream;
use rand::Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatMetrics {
    pub medr: f64,
    pub r_at: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Mean MedR over repeats.
    pub medr: f64,
    /// Mean R@K over repeats, keyed by K.
    pub r_at: BTreeMap<usize, f64>,
    pub per_repeat: Vec<RepeatMetrics>,
    pub pool_size: usize,
    pub repeats: usize,
}

pub const RECALL_CUTOFFS: [usize; 3] = [1, 5, 10];

/// Rank of each row's own column under descending score, ties broken toward
/// the lower column index. scores[i][j] scores query i against candidate j;
/// the true match of query i is candidate i.
pub fn ranks_from_scores(scores: &Matrix) -> Result<Vec<usize>> {
    if scores.rows() != scores.cols() {
        return Err(Error::Contract(format!(
            "ranks_from_scores expects a square score matrix, got {}x{}",
            scores.rows(),
            scores.cols()
        )));
    }
    let n = scores.rows();
    let mut ranks = Vec::with_capacity(n);
    for i in 0..n {
        let own = scores.at(i, i);
        let mut rank = 1usize;
        for j in 0..n {
            if j == i {
                continue;
            }
            let s = scores.at(i, j);
            if s > own || (s == own && j < i) {
                rank += 1;
            }
        }
        ranks.push(rank);
    }
    Ok(ranks)
}

/// Median with the usual midpoint convention for even counts.
pub fn median_rank(ranks: &[usize]) -> f64 {
    assert!(!ranks.is_empty());
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

pub fn recall_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

fn repeat_metrics(ranks: &[usize]) -> RepeatMetrics {
    let mut r_at = BTreeMap::new();
    for k in RECALL_CUTOFFS {
        r_at.insert(k, recall_at_k(ranks, k));
    }
    RepeatMetrics {
        medr: median_rank(ranks),
        r_at,
    }
}

/// Aggregate per-repeat rank lists into one report.
pub fn report_from_rank_lists(rank_lists: &[Vec<usize>], pool_size: usize) -> MetricsReport {
    let per_repeat: Vec<RepeatMetrics> = rank_lists.iter().map(|r| repeat_metrics(r)).collect();
    let repeats = per_repeat.len();
    let medr = per_repeat.iter().map(|m| m.medr).sum::<f64>() / repeats as f64;
    let mut r_at = BTreeMap::new();
    for k in RECALL_CUTOFFS {
        let mean = per_repeat.iter().map(|m| m.r_at[&k]).sum::<f64>() / repeats as f64;
        r_at.insert(k, mean);
    }
    MetricsReport {
        medr,
        r_at,
        per_repeat,
        pool_size,
        repeats,
    }
}

/// Repeated-pool retrieval evaluation on paired data. Each repeat samples
/// `pool_size` pairs without replacement, embeds them, and ranks every pool
/// recipe against each image query by cosine similarity.
pub fn evaluate(
    state: &ModelState,
    pairs: &[(RecipeSample, ImageSample)],
    pool_size: usize,
    repeats: usize,
    rng: &mut Stream,
) -> Result<MetricsReport> {
    if pool_size == 0 || repeats == 0 {
        return Err(Error::Config(
            "evaluation needs a positive pool size and repeat count".into(),
        ));
    }
    if pool_size > pairs.len() {
        return Err(Error::Config(format!(
            "evaluation pool {} exceeds the {} available test pairs",
            pool_size,
            pairs.len()
        )));
    }

    // Embed every candidate once; pools gather rows.
    let recipes: Vec<&RecipeSample> = pairs.iter().map(|(r, _)| r).collect();
    let images: Vec<&ImageSample> = pairs.iter().map(|(_, v)| v).collect();
    let recipe_emb = encode_recipes_plain(&state.recipe_encoder, &recipes)?;
    let image_emb = encode_images_plain(&state.image_encoder, &images)?;

    let mut rank_lists = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut indices: Vec<usize> = (0..pairs.len()).collect();
        for i in 0..pool_size {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
        }
        indices.truncate(pool_size);

        let pool_recipes = recipe_emb.gather_rows(&indices)?;
        let pool_images = image_emb.gather_rows(&indices)?;
        let scores = pool_images.matmul(&pool_recipes.transpose())?;
        rank_lists.push(ranks_from_scores(&scores)?);
    }

    Ok(report_from_rank_lists(&rank_lists, pool_size))
}

impl MetricsReport {
    /// One-line summary in the CLI's contract format.
    pub fn summary_line(&self) -> String {
        format!(
            "medr={} r1={} r5={} r10={}",
            self.medr, self.r_at[&1], self.r_at[&5], self.r_at[&10]
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(1.0 <= self.medr && self.medr <= self.pool_size as f64) {
            return Err(Error::Contract(format!(
                "MedR {} outside [1, {}]",
                self.medr, self.pool_size
            )));
        }
        let mut last = 0.0;
        for k in RECALL_CUTOFFS {
            let v = self.r_at[&k];
            if !(0.0..=1.0).contains(&v) || v < last {
                return Err(Error::Contract(format!(
                    "R@{k}={v} breaks the recall monotonicity invariant"
                )));
            }
            last = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive ranking by full sort, sharing the tie rule.
    fn ranks_oracle(scores: &Matrix) -> Vec<usize> {
        let n = scores.rows();
        (0..n)
            .map(|i| {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| {
                    scores
                        .at(i, b)
                        .partial_cmp(&scores.at(i, a))
                        .unwrap()
                        .then(a.cmp(&b))
                });
                order.iter().position(|&j| j == i).unwrap() + 1
            })
            .collect()
    }

    #[test]
    fn identity_scores_rank_first() {
        let mut scores = Matrix::filled(5, 5, 0.0);
        for i in 0..5 {
            scores.set(i, i, 1.0);
        }
        let ranks = ranks_from_scores(&scores).unwrap();
        assert_eq!(ranks, vec![1; 5]);
        let report = report_from_rank_lists(&[ranks], 5);
        assert_eq!(report.medr, 1.0);
        assert_eq!(report.r_at[&1], 1.0);
    }

    #[test]
    fn hand_built_5x5_matches_oracle() {
        let scores = Matrix::from_rows(&[
            vec![0.3, 0.9, 0.1, 0.5, 0.2],
            vec![0.3, 0.3, 0.3, 0.3, 0.3],
            vec![0.0, 0.1, 0.2, 0.3, 0.4],
            vec![0.9, 0.8, 0.7, 0.6, 0.5],
            vec![-1.0, -0.5, 0.0, 0.5, 1.0],
        ])
        .unwrap();
        let ranks = ranks_from_scores(&scores).unwrap();
        assert_eq!(ranks, ranks_oracle(&scores));
        // spot checks: query 1 is all ties, own index 1, only index 0 ahead
        assert_eq!(ranks[1], 2);
        // query 4 has its own column as the max
        assert_eq!(ranks[4], 1);
    }

    #[test]
    fn random_matrices_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..200 {
            let n = rng.random_range(1..=50);
            let data = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scores = Matrix::from_vec(n, n, data).unwrap();
            assert_eq!(
                ranks_from_scores(&scores).unwrap(),
                ranks_oracle(&scores)
            );
        }
    }

    #[test]
    fn median_midpoint_convention() {
        assert_eq!(median_rank(&[1, 2, 3]), 2.0);
        assert_eq!(median_rank(&[1, 2, 3, 10]), 2.5);
        assert_eq!(median_rank(&[7]), 7.0);
    }

    #[test]
    fn recall_monotone_in_k() {
        let ranks = vec![1, 3, 8, 20, 2];
        let r1 = recall_at_k(&ranks, 1);
        let r5 = recall_at_k(&ranks, 5);
        let r10 = recall_at_k(&ranks, 10);
        assert!(r1 <= r5 && r5 <= r10);
        assert_eq!(r5, 3.0 / 5.0);
    }
}
