//! Source batch selection and sample re-weighting.
//!
//! Pipeline per adaptation step: cosine similarity matrix between the target
//! batch and the source pool (W1), union of per-target top-K source indices,
//! uniform batch draw from that subset, similarity block for the drawn batch
//! (W2), and finally the per-source weight vector (row sums, min-max
//! normalized, rescaled to sum to the batch size).

use crate::error::{Error, Result};
use crate::matrix::{dot, l2_norm, Matrix};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    /// n_target x n_source cosine similarities.
    pub values: Matrix,
    pub target_ids: Vec<u64>,
    pub source_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedSubset {
    /// Ascending source-pool positions retained by the selector.
    pub indices: Vec<usize>,
    /// For each retained index, the target rows that picked it.
    pub provenance: Vec<(usize, Vec<usize>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn ones(n: usize) -> Self {
        WeightVector {
            weights: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Pairwise cosine similarity between target rows and source rows.
pub fn compute_w1(
    target_feats: &Matrix,
    source_feats: &Matrix,
    target_ids: &[u64],
    source_ids: &[u64],
) -> Result<SimilarityMatrix> {
    if target_feats.cols() != source_feats.cols() {
        return Err(Error::Shape {
            op: "compute_w1",
            lhs: target_feats.shape(),
            rhs: source_feats.shape(),
        });
    }
    if target_ids.len() != target_feats.rows() || source_ids.len() != source_feats.rows() {
        return Err(Error::Contract(
            "compute_w1: id lists must match the feature row counts".into(),
        ));
    }
    let mut tnorm = Vec::with_capacity(target_feats.rows());
    for j in 0..target_feats.rows() {
        let n = l2_norm(target_feats.row(j));
        if n == 0.0 {
            return Err(Error::Degenerate(format!(
                "compute_w1: target row {j} has zero norm"
            )));
        }
        tnorm.push(n);
    }
    let mut snorm = Vec::with_capacity(source_feats.rows());
    for i in 0..source_feats.rows() {
        let n = l2_norm(source_feats.row(i));
        if n == 0.0 {
            return Err(Error::Degenerate(format!(
                "compute_w1: source row {i} has zero norm"
            )));
        }
        snorm.push(n);
    }
    let mut values = Matrix::zeros(target_feats.rows(), source_feats.rows());
    for j in 0..target_feats.rows() {
        for i in 0..source_feats.rows() {
            let sim = dot(target_feats.row(j), source_feats.row(i)) / (tnorm[j] * snorm[i]);
            values.set(j, i, sim);
        }
    }
    Ok(SimilarityMatrix {
        values,
        target_ids: target_ids.to_vec(),
        source_ids: source_ids.to_vec(),
    })
}

/// Union over target rows of their top-K most similar source columns.
/// Ties break toward the lower source index.
pub fn select_topk(w1: &SimilarityMatrix, k: usize) -> Result<SelectedSubset> {
    let n_source = w1.values.cols();
    if k == 0 || k > n_source {
        return Err(Error::Config(format!(
            "top-K out of range: K={k}, source pool has {n_source}"
        )));
    }
    let mut picked: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for j in 0..w1.values.rows() {
        let row = w1.values.row(j);
        let mut order: Vec<usize> = (0..n_source).collect();
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .expect("similarities are finite")
                .then(a.cmp(&b))
        });
        for &idx in order.iter().take(k) {
            picked.entry(idx).or_default().push(j);
        }
    }
    let indices: Vec<usize> = picked.keys().copied().collect();
    let provenance: Vec<(usize, Vec<usize>)> = picked.into_iter().collect();
    Ok(SelectedSubset {
        indices,
        provenance,
    })
}

/// A subset covering the whole pool, used when selection is disabled.
pub fn whole_pool(n_source: usize, n_target: usize) -> SelectedSubset {
    let all: Vec<usize> = (0..n_target).collect();
    SelectedSubset {
        indices: (0..n_source).collect(),
        provenance: (0..n_source).map(|i| (i, all.clone())).collect(),
    }
}

/// Uniform batch draw from the subset: without replacement when the subset is
/// large enough, with replacement otherwise. When the subset size equals the
/// requested batch size the subset is returned in order and the rng is left
/// untouched, which makes the selector-off configuration consume the same
/// random stream as plain batch sampling.
pub fn sample_source_batch(
    subset: &SelectedSubset,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if subset.indices.is_empty() {
        return Err(Error::Selection("empty source subset".into()));
    }
    let m = subset.indices.len();
    if m == n {
        return Ok(subset.indices.clone());
    }
    if m > n {
        // partial Fisher-Yates over a scratch copy
        let mut scratch = subset.indices.clone();
        for i in 0..n {
            let j = rng.random_range(i..m);
            scratch.swap(i, j);
        }
        scratch.truncate(n);
        Ok(scratch)
    } else {
        Ok((0..n)
            .map(|_| subset.indices[rng.random_range(0..m)])
            .collect())
    }
}

/// Similarity block for the drawn batch: row i holds batch member i's
/// similarities to each target row, W2[i][j] = W1[j][batch[i]].
pub fn extract_w2(w1: &SimilarityMatrix, batch: &[usize]) -> Result<Matrix> {
    let n = batch.len();
    if w1.values.rows() != n {
        return Err(Error::Contract(format!(
            "extract_w2: target batch size {} must equal source batch size {n}",
            w1.values.rows()
        )));
    }
    let mut w2 = Matrix::zeros(n, n);
    for (i, &b) in batch.iter().enumerate() {
        if b >= w1.values.cols() {
            return Err(Error::Contract(format!(
                "extract_w2: batch index {b} out of bounds for pool of {}",
                w1.values.cols()
            )));
        }
        for j in 0..n {
            w2.set(i, j, w1.values.at(j, b));
        }
    }
    Ok(w2)
}

/// Row sums, min-max normalized, rescaled so the weights sum to n. When all
/// row sums coincide the weights degenerate to all ones.
pub fn compute_weight_vector(w2: &Matrix) -> Result<WeightVector> {
    let n = w2.rows();
    if n == 0 {
        return Err(Error::Contract("compute_weight_vector: empty W2".into()));
    }
    if w2.cols() != n {
        return Err(Error::Shape {
            op: "compute_weight_vector",
            lhs: w2.shape(),
            rhs: (n, n),
        });
    }
    if !w2.all_finite() {
        return Err(Error::Contract(
            "compute_weight_vector: non-finite entries in W2".into(),
        ));
    }
    let sums: Vec<f64> = (0..n).map(|i| w2.row(i).iter().sum()).collect();
    let min = sums.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(WeightVector::ones(n));
    }
    let normalized: Vec<f64> = sums.iter().map(|s| (s - min) / (max - min)).collect();
    let total: f64 = normalized.iter().sum();
    let weights = normalized
        .iter()
        .map(|u| n as f64 * u / total)
        .collect();
    Ok(WeightVector { weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sim(values: Matrix) -> SimilarityMatrix {
        let t = (0..values.rows() as u64).collect();
        let s = (0..values.cols() as u64).collect();
        SimilarityMatrix {
            values,
            target_ids: t,
            source_ids: s,
        }
    }

    #[test]
    fn w1_of_identical_vectors_is_one() {
        let t = Matrix::from_rows(&[vec![1.0, 2.0, 2.0]]).unwrap();
        let s = t.clone();
        let w1 = compute_w1(&t, &s, &[0], &[0]).unwrap();
        assert!((w1.values.at(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w1_of_orthogonal_vectors_is_zero() {
        let t = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let s = Matrix::from_rows(&[vec![0.0, 5.0]]).unwrap();
        let w1 = compute_w1(&t, &s, &[0], &[0]).unwrap();
        assert_eq!(w1.values.at(0, 0), 0.0);
    }

    #[test]
    fn w1_hand_value() {
        // [1,2] vs [2,1]: 4 / (sqrt5 * sqrt5) = 0.8
        let t = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let s = Matrix::from_rows(&[vec![2.0, 1.0]]).unwrap();
        let w1 = compute_w1(&t, &s, &[0], &[0]).unwrap();
        assert!((w1.values.at(0, 0) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn w1_zero_norm_row_names_the_row() {
        let t = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let s = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let err = compute_w1(&t, &s, &[0, 1], &[0]).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn topk_with_full_k_selects_everything() {
        let w1 = sim(Matrix::from_rows(&[vec![0.3, 0.1, 0.9, -0.2]]).unwrap());
        let subset = select_topk(&w1, 4).unwrap();
        assert_eq!(subset.indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn topk_identity_peaks_select_exact_columns() {
        let mut m = Matrix::filled(3, 5, -0.5);
        m.set(0, 4, 0.9);
        m.set(1, 2, 0.9);
        m.set(2, 0, 0.9);
        let subset = select_topk(&sim(m), 1).unwrap();
        assert_eq!(subset.indices, vec![0, 2, 4]);
    }

    #[test]
    fn topk_k_out_of_range_is_config_error() {
        let w1 = sim(Matrix::zeros(2, 3));
        assert!(matches!(select_topk(&w1, 0), Err(Error::Config(_))));
        assert!(matches!(select_topk(&w1, 4), Err(Error::Config(_))));
    }

    /// Exhaustive-sort reference for the union-of-top-K rule.
    fn topk_oracle(values: &Matrix, k: usize) -> Vec<usize> {
        let mut keep = std::collections::BTreeSet::new();
        for j in 0..values.rows() {
            let mut cols: Vec<usize> = (0..values.cols()).collect();
            cols.sort_by(|&a, &b| {
                values
                    .at(j, b)
                    .partial_cmp(&values.at(j, a))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for &c in cols.iter().take(k) {
                keep.insert(c);
            }
        }
        keep.into_iter().collect()
    }

    #[test]
    fn topk_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let rows = rng.random_range(1..=8);
            let cols = rng.random_range(2..=64);
            let k = rng.random_range(1..=cols.min(4));
            let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = Matrix::from_vec(rows, cols, data).unwrap();
            let subset = select_topk(&sim(m.clone()), k).unwrap();
            assert_eq!(subset.indices, topk_oracle(&m, k));
        }
    }

    #[test]
    fn provenance_lists_every_selector() {
        let m = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.8, 0.2]]).unwrap();
        let subset = select_topk(&sim(m), 1).unwrap();
        assert_eq!(subset.indices, vec![0]);
        assert_eq!(subset.provenance, vec![(0, vec![0, 1])]);
    }

    #[test]
    fn batch_of_subset_size_is_the_subset() {
        let subset = SelectedSubset {
            indices: vec![3, 5, 9],
            provenance: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_source_batch(&subset, 3, &mut rng).unwrap();
        assert_eq!(batch, vec![3, 5, 9]);
    }

    #[test]
    fn fixed_seed_fixes_the_batch() {
        let subset = SelectedSubset {
            indices: (0..20).collect(),
            provenance: vec![],
        };
        let a = sample_source_batch(&subset, 6, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_source_batch(&subset, 6, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oversampling_draws_uniformly_with_replacement() {
        let subset = SelectedSubset {
            indices: vec![2, 7, 11],
            provenance: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut counts = std::collections::HashMap::new();
        let draws = 10_000usize;
        for _ in 0..draws / 8 {
            let batch = sample_source_batch(&subset, 8, &mut rng).unwrap();
            for b in batch {
                assert!(subset.indices.contains(&b));
                *counts.entry(b).or_insert(0usize) += 1;
            }
        }
        // each index should see ~ draws/3; allow 3 sigma of binomial noise
        let expected = draws as f64 / 3.0;
        let sigma = (draws as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for (_, c) in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn empty_subset_is_selection_error() {
        let subset = SelectedSubset {
            indices: vec![],
            provenance: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_source_batch(&subset, 4, &mut rng),
            Err(Error::Selection(_))
        ));
    }

    #[test]
    fn w2_of_leading_columns_is_transposed_block() {
        let m = Matrix::from_rows(&[
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.5, 0.6, 0.7, 0.8],
        ])
        .unwrap();
        let w1 = sim(m.clone());
        let w2 = extract_w2(&w1, &[0, 1]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(w2.at(i, j), m.at(j, i));
            }
        }
    }

    #[test]
    fn w2_repeated_index_gives_equal_rows() {
        let m = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.4, 0.6]]).unwrap();
        let w2 = extract_w2(&sim(m), &[1, 1]).unwrap();
        assert_eq!(w2.row(0), w2.row(1));
    }

    #[test]
    fn w2_random_case_matches_direct_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 5;
        let pool = 12;
        let data = (0..n * pool).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = Matrix::from_vec(n, pool, data).unwrap();
        let batch: Vec<usize> = (0..n).map(|_| rng.random_range(0..pool)).collect();
        let w2 = extract_w2(&sim(m.clone()), &batch).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(w2.at(i, j), m.at(j, batch[i]));
            }
        }
    }

    #[test]
    fn weights_degenerate_to_ones() {
        let w2 = Matrix::filled(3, 3, 0.4);
        let w = compute_weight_vector(&w2).unwrap();
        assert_eq!(w.weights, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn weights_hand_case_n2() {
        // row sums (0, 1) -> normalized (0, 1) -> weights (0, 2)
        let w2 = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let w = compute_weight_vector(&w2).unwrap();
        assert_eq!(w.weights, vec![0.0, 2.0]);
    }

    #[test]
    fn weight_vector_empty_is_contract_error() {
        let w2 = Matrix::zeros(0, 0);
        assert!(matches!(
            compute_weight_vector(&w2),
            Err(Error::Contract(_))
        ));
    }

    proptest! {
        #[test]
        fn weights_sum_to_n_and_hit_zero_min(
            n in 2usize..16,
            seed in 0u64..500,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w2 = Matrix::from_vec(n, n, data).unwrap();
            let sums: Vec<f64> = (0..n).map(|i| w2.row(i).iter().sum()).collect();
            let w = compute_weight_vector(&w2).unwrap();
            let total: f64 = w.weights.iter().sum();
            prop_assert!((total - n as f64).abs() < 1e-6);
            prop_assert!(w.weights.iter().all(|&x| x >= 0.0));

            let min_sum = sums.iter().cloned().fold(f64::INFINITY, f64::min);
            let max_sum = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max_sum > min_sum {
                // minimal row sum gets exactly zero weight
                let argmin = sums
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                prop_assert_eq!(w.weights[argmin], 0.0);
                // monotone in row sums
                for i in 0..n {
                    for j in 0..n {
                        if sums[i] > sums[j] {
                            prop_assert!(w.weights[i] > w.weights[j]);
                        }
                    }
                }
            }
        }
    }
}
