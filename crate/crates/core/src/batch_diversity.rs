//! Diverse batch selection over score-change vectors.
//!
//! Each pool candidate carries the vector of its point-wise gains over the
//! estimation pool. A batch is built by keeping the top fraction of the pool
//! by total gain, clustering those candidates' vectors with k-means into `B`
//! clusters, and taking the candidate nearest to each centroid.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::AcquisitionScores;

pub const DEFAULT_TOP_FRACTION: f64 = 0.5;
pub const DEFAULT_KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BatchError {
    #[error("top fraction must lie in (0, 1], got {0}")]
    InvalidTopFraction(f64),
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("k-means needs 1 <= k <= {available}, got k = {k}")]
    InvalidClusterCount { k: usize, available: usize },
    #[error("vectors have inconsistent dimensions")]
    RaggedVectors,
    #[error(
        "batch of {requested} requested but only {available} candidates pass the top-fraction cut"
    )]
    BatchUnderflow { requested: usize, available: usize },
    #[error("scores carry no score-change vectors")]
    MissingPairVectors,
    #[error("no scores to select from")]
    EmptyScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchRequest {
    pub batch_size: usize,
    pub top_fraction: f64,
    pub seed: u64,
    pub kmeans_max_iters: usize,
}

impl BatchRequest {
    pub fn new(batch_size: usize, top_fraction: f64, seed: u64) -> Self {
        Self {
            batch_size,
            top_fraction,
            seed,
            kmeans_max_iters: DEFAULT_KMEANS_MAX_ITERS,
        }
    }
}

/// Number of candidates kept by a top fraction `t` of `n` items, `ceil(t·n)`.
pub fn top_count(n: usize, t: f64) -> Result<usize, BatchError> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(BatchError::InvalidTopFraction(t));
    }
    // guard against products like 0.3 * 10 = 3.0000000000000004
    let count = (t * n as f64 - 1e-9).ceil().max(0.0) as usize;
    Ok(count.clamp(n.min(1), n))
}

/// Pool positions of the `ceil(t·|U|)` best scores, best first; equal scores
/// keep pool order.
pub fn top_fraction(scores: &AcquisitionScores, t: f64) -> Result<Vec<usize>, BatchError> {
    if scores.is_empty() {
        return Err(BatchError::EmptyScores);
    }
    let count = top_count(scores.len(), t)?;
    Ok(ranked_positions(&scores.per_x)
        .into_iter()
        .take(count)
        .collect())
}

fn ranked_positions(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Result of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (lowest index on ties) and its distance.
fn nearest(vector: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(vector, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops when assignments no longer change or after `max_iters` updates. An
/// empty cluster is re-seeded at the vector farthest from its nearest
/// centroid.
pub fn kmeans<V: AsRef<[f64]> + Sync>(
    vectors: &[V],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Clustering, BatchError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(BatchError::InvalidClusterCount { k, available: n });
    }
    let dim = vectors[0].as_ref().len();
    if vectors.iter().any(|v| v.as_ref().len() != dim) {
        return Err(BatchError::RaggedVectors);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(vectors, k, &mut rng);

    let mut assignments: Vec<usize> = Vec::new();
    let mut iterations = 0;
    loop {
        let next: Vec<usize> = vectors
            .par_iter()
            .map(|v| nearest(v.as_ref(), &centroids).0)
            .collect();
        if next == assignments || iterations >= max_iters {
            assignments = next;
            break;
        }
        assignments = next;
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (v, &c) in vectors.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(v.as_ref()) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let farthest = farthest_from_centroids(vectors, &centroids);
                centroids[c] = vectors[farthest].as_ref().to_vec();
            }
        }
    }
    Ok(Clustering {
        centroids,
        assignments,
        iterations,
    })
}

fn farthest_from_centroids<V: AsRef<[f64]>>(vectors: &[V], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in vectors.iter().enumerate() {
        let d = nearest(v.as_ref(), centroids).1;
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn plus_plus_seeds<V: AsRef<[f64]>, R: Rng>(vectors: &[V], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![vectors[first].as_ref().to_vec()];
    let mut d2: Vec<f64> = vectors
        .iter()
        .map(|v| squared_distance(v.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every remaining vector coincides with a centroid
            Err(_) => chosen.iter().position(|c| !c).unwrap_or(0),
        };
        chosen[next] = true;
        let centroid = vectors[next].as_ref().to_vec();
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(squared_distance(v.as_ref(), &centroid));
        }
        centroids.push(centroid);
    }
    centroids
}

/// Diverse batch of pool positions, one per k-means cluster of the top
/// candidates' score-change vectors.
///
/// When two centroids share a nearest candidate, the later centroid takes its
/// next-nearest unused candidate, so the batch always has exactly
/// `batch_size` distinct members.
pub fn select_batch(
    scores: &AcquisitionScores,
    req: &BatchRequest,
) -> Result<Vec<usize>, BatchError> {
    if req.batch_size == 0 {
        return Err(BatchError::ZeroBatch);
    }
    let pairs = scores
        .per_pair
        .as_ref()
        .ok_or(BatchError::MissingPairVectors)?;
    let mut candidates = top_fraction(scores, req.top_fraction)?;
    if candidates.len() < req.batch_size {
        return Err(BatchError::BatchUnderflow {
            requested: req.batch_size,
            available: candidates.len(),
        });
    }
    candidates.sort_unstable();
    let vectors: Vec<&[f64]> = candidates.iter().map(|&p| pairs.row(p)).collect();
    let clustering = kmeans(&vectors, req.batch_size, req.seed, req.kmeans_max_iters)?;

    let mut used = vec![false; candidates.len()];
    let mut batch = Vec::with_capacity(req.batch_size);
    for centroid in &clustering.centroids {
        let mut best: Option<(f64, usize)> = None;
        for (i, v) in vectors.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = squared_distance(v, centroid);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        let (_, i) = best.expect("batch size never exceeds candidate count");
        used[i] = true;
        batch.push(candidates[i]);
    }
    Ok(batch)
}

/// The `batch_size` best pool positions by total score, best first.
pub fn select_top(scores: &AcquisitionScores, batch_size: usize) -> Result<Vec<usize>, BatchError> {
    if batch_size == 0 {
        return Err(BatchError::ZeroBatch);
    }
    if scores.len() < batch_size {
        return Err(BatchError::BatchUnderflow {
            requested: batch_size,
            available: scores.len(),
        });
    }
    Ok(ranked_positions(&scores.per_x)
        .into_iter()
        .take(batch_size)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::PairMatrix;
    use proptest::prelude::*;
    use rand_distr::Normal;

    fn scores_from(per_x: Vec<f64>) -> AcquisitionScores {
        AcquisitionScores {
            inputs: (0..per_x.len()).collect(),
            per_x,
            per_pair: None,
        }
    }

    fn scores_with_vectors(vectors: Vec<Vec<f64>>) -> AcquisitionScores {
        AcquisitionScores {
            inputs: (0..vectors.len()).collect(),
            per_x: vectors.iter().map(|v| v.iter().sum()).collect(),
            per_pair: Some(PairMatrix::from_rows(vectors)),
        }
    }

    #[test]
    fn top_fraction_examples() {
        let s = scores_from(vec![0.3, 0.9, 0.1, 0.5, 0.7, 0.2, 0.8, 0.0, 0.6, 0.4]);
        let mut all = top_fraction(&s, 1.0).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(top_fraction(&s, 0.05).unwrap(), vec![1]);
        // sort oracle
        let mut sorted: Vec<(f64, usize)> = s.per_x.iter().copied().zip(0..).collect();
        sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let expected: Vec<usize> = sorted.iter().take(5).map(|p| p.1).collect();
        assert_eq!(top_fraction(&s, 0.5).unwrap(), expected);
        assert_eq!(expected, vec![1, 6, 4, 8, 3]);
    }

    #[test]
    fn top_fraction_boundary_ties_and_errors() {
        let s = scores_from(vec![1.0, 2.0, 2.0, 2.0]);
        assert_eq!(top_fraction(&s, 0.5).unwrap(), vec![1, 2]);
        assert_eq!(top_count(10, 0.3).unwrap(), 3);
        assert_eq!(top_count(7, 0.5).unwrap(), 4);
        assert_eq!(top_count(3, 1e-6).unwrap(), 1);
        for t in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                top_fraction(&s, t),
                Err(BatchError::InvalidTopFraction(_))
            ));
        }
    }

    #[test]
    fn kmeans_with_k_equal_to_n_recovers_points() {
        let vectors = vec![
            vec![0.0, 0.0],
            vec![1.0, 5.0],
            vec![-3.0, 2.0],
            vec![4.0, 4.0],
        ];
        let result = kmeans(&vectors, 4, 3, 100).unwrap();
        let mut got = result.centroids.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = vectors.clone();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn kmeans_identical_vectors() {
        let vectors = vec![vec![2.5, -1.0]; 6];
        let result = kmeans(&vectors, 1, 0, 100).unwrap();
        assert_eq!(result.centroids, vec![vec![2.5, -1.0]]);
        // more clusters than distinct points still yields k centroids
        assert_eq!(kmeans(&vectors, 3, 0, 100).unwrap().centroids.len(), 3);
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let centers = [[0.0, 0.0], [10.0, 10.0]];
        let vectors: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let c = centers[i % 2];
                vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]
            })
            .collect();
        for seed in 0..20 {
            let result = kmeans(&vectors, 2, seed, 100).unwrap();
            // purity: each blob maps to a single cluster, different per blob
            let a = result.assignments[0];
            let b = result.assignments[1];
            assert_ne!(a, b);
            for (i, &c) in result.assignments.iter().enumerate() {
                assert_eq!(c, if i % 2 == 0 { a } else { b });
            }
            for (c, centre) in [(a, centers[0]), (b, centers[1])] {
                let members: Vec<&Vec<f64>> = vectors
                    .iter()
                    .filter(|v| (v[0] - centre[0]).abs() < 1.0)
                    .collect();
                let (lo_x, hi_x) = members
                    .iter()
                    .fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(v[0]), h.max(v[0])));
                let (lo_y, hi_y) = members
                    .iter()
                    .fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(v[1]), h.max(v[1])));
                let centroid = &result.centroids[c];
                assert!(centroid[0] >= lo_x && centroid[0] <= hi_x);
                assert!(centroid[1] >= lo_y && centroid[1] <= hi_y);
            }
        }
    }

    #[test]
    fn kmeans_errors() {
        let vectors = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            kmeans(&vectors, 3, 0, 10),
            Err(BatchError::InvalidClusterCount { .. })
        ));
        assert!(matches!(
            kmeans(&vectors, 0, 0, 10),
            Err(BatchError::InvalidClusterCount { .. })
        ));
        let ragged = vec![vec![0.0], vec![1.0, 2.0]];
        assert_eq!(
            kmeans(&ragged, 1, 0, 10).unwrap_err(),
            BatchError::RaggedVectors
        );
    }

    #[test]
    fn batch_of_all_candidates_is_the_candidate_set() {
        let vectors: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let scores = scores_with_vectors(vectors);
        let mut batch = select_batch(&scores, &BatchRequest::new(6, 1.0, 9)).unwrap();
        batch.sort_unstable();
        assert_eq!(batch, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn single_member_batch_of_identical_vectors_is_lowest_index() {
        let scores = scores_with_vectors(vec![vec![1.0, 1.0]; 5]);
        for seed in 0..10 {
            assert_eq!(
                select_batch(&scores, &BatchRequest::new(1, 1.0, seed)).unwrap(),
                vec![0]
            );
        }
    }

    #[test]
    fn colliding_representatives_take_next_nearest() {
        // all candidates identical: every centroid lands on the same point
        let scores = scores_with_vectors(vec![vec![3.0]; 4]);
        let batch = select_batch(&scores, &BatchRequest::new(3, 1.0, 1)).unwrap();
        assert_eq!(batch, vec![0, 1, 2]);
    }

    #[test]
    fn planted_clusters_each_get_a_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let centres = [
            [8.0, 8.0, 0.0, 0.0],
            [0.0, 0.0, 7.0, 7.0],
            [7.0, 0.0, 0.0, 7.0],
        ];
        let mut labels = Vec::new();
        let vectors: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                labels.push(i % 3);
                centres[i % 3]
                    .iter()
                    .map(|c| c + noise.sample(&mut rng))
                    .collect()
            })
            .collect();
        let scores = scores_with_vectors(vectors);
        let batch = select_batch(&scores, &BatchRequest::new(3, 1.0, 4)).unwrap();
        let mut covered: Vec<usize> = batch.iter().map(|&p| labels[p]).collect();
        covered.sort_unstable();
        assert_eq!(covered, vec![0, 1, 2]);
    }

    #[test]
    fn batch_errors() {
        let scores = scores_with_vectors(vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        assert_eq!(
            select_batch(&scores, &BatchRequest::new(3, 0.5, 0)).unwrap_err(),
            BatchError::BatchUnderflow {
                requested: 3,
                available: 2
            }
        );
        assert_eq!(
            select_batch(&scores, &BatchRequest::new(0, 0.5, 0)).unwrap_err(),
            BatchError::ZeroBatch
        );
        let bare = scores_from(vec![1.0, 2.0]);
        assert_eq!(
            select_batch(&bare, &BatchRequest::new(1, 0.5, 0)).unwrap_err(),
            BatchError::MissingPairVectors
        );
        assert_eq!(select_top(&bare, 2).unwrap(), vec![1, 0]);
        assert!(select_top(&bare, 3).is_err());
    }

    proptest! {
        #[test]
        fn batch_invariants(
            raw in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 4..40),
            b in 1usize..4,
            t in 0.3f64..=1.0,
            seed in 0u64..1000,
        ) {
            let scores = scores_with_vectors(raw);
            let req = BatchRequest::new(b, t, seed);
            let v = top_fraction(&scores, t).unwrap();
            match select_batch(&scores, &req) {
                Ok(batch) => {
                    prop_assert_eq!(batch.len(), b);
                    let mut dedup = batch.clone();
                    dedup.sort_unstable();
                    dedup.dedup();
                    prop_assert_eq!(dedup.len(), b);
                    prop_assert!(batch.iter().all(|p| v.contains(p)));
                    prop_assert_eq!(select_batch(&scores, &req).unwrap(), batch);
                }
                Err(BatchError::BatchUnderflow { .. }) => prop_assert!(v.len() < b),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
