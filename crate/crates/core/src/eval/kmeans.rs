//! k-means++ seeding followed by Lloyd iterations.

use super::{EvalError, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_ITERATIONS: usize = 300;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    pub centroids: Tensor,
    pub iterations: usize,
    /// Inertia after every assignment step, ending with the final value.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid for every point (ties go to the lower index) and the
/// resulting inertia.
fn assign(points: &Tensor, centroids: &Tensor, labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for i in 0..points.rows() {
        let p = points.row(i);
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for c in 0..centroids.rows() {
            let d = sq_dist(p, centroids.row(c));
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        labels[i] = best;
        dists[i] = best_d;
        inertia += best_d;
    }
    inertia
}

/// D²-weighted seeding. When every remaining point coincides with a chosen
/// centre the lowest-index unchosen point is taken.
fn seed_centroids<R: Rng>(points: &Tensor, k: usize, rng: &mut R) -> Tensor {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.gen_range(0..n));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just above the final sum.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k ≤ n")
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    let mut c = Tensor::zeros(k, points.cols());
    for (r, &i) in chosen.iter().enumerate() {
        c.row_mut(r).copy_from_slice(points.row(i));
    }
    c
}

/// Clusters the rows of `points` into `k` groups. Deterministic per `seed`.
pub fn kmeanspp(points: &Tensor, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(EvalError::ClusterCount { k, n });
    }
    if !points.is_finite() {
        return Err(EvalError::NonFinite("k-means input"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut previous: Option<Vec<usize>> = None;
    // Whether `labels` and the last trace entry reflect the current centroids.
    let mut fresh = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        trace.push(assign(points, &centroids, &mut labels, &mut dists));
        fresh = true;
        if previous.as_deref() == Some(&labels[..]) {
            break;
        }
        let mut sums = Tensor::zeros(k, points.cols());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            sums.row_mut(l).iter_mut().zip(points.row(i)).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            // Move the point farthest from its centroid into the empty cluster.
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("k ≤ n leaves a cluster with two points");
            let old = labels[far];
            counts[old] -= 1;
            sums.row_mut(old).iter_mut().zip(points.row(far)).for_each(|(s, v)| *s -= v);
            counts[c] = 1;
            sums.row_mut(c).copy_from_slice(points.row(far));
            labels[far] = c;
            dists[far] = 0.0;
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            let new: Vec<f64> = sums.row(c).iter().map(|s| s * inv).collect();
            shift = shift.max(sq_dist(&new, centroids.row(c)).sqrt());
            centroids.row_mut(c).copy_from_slice(&new);
        }
        previous = Some(labels.clone());
        fresh = false;
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    if !fresh {
        trace.push(assign(points, &centroids, &mut labels, &mut dists));
    }
    let inertia = *trace.last().expect("at least one assignment");
    Ok(ClusterAssignment {
        labels,
        k,
        inertia,
        centroids,
        iterations,
        inertia_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blobs(seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Tensor::random_normal(40, 2, 0.3, &mut rng);
        let truth: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let pts = Tensor::from_fn(40, 2, |r, c| noise.get(r, c) + if truth[r] == 0 { -5.0 } else { 5.0 });
        (pts, truth)
    }

    #[test]
    fn k_equals_n_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = Tensor::random_normal(7, 3, 1.0, &mut rng);
        let a = kmeanspp(&pts, 7, 9).unwrap();
        assert_eq!(a.inertia, 0.0);
        let mut l = a.labels.clone();
        l.sort_unstable();
        assert_eq!(l, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_too_many_clusters() {
        let pts = Tensor::zeros(3, 2);
        assert!(matches!(kmeanspp(&pts, 4, 0), Err(EvalError::ClusterCount { k: 4, n: 3 })));
        assert!(kmeanspp(&pts, 0, 0).is_err());
    }

    #[test]
    fn duplicate_points_still_seed() {
        let pts = Tensor::zeros(5, 2);
        let a = kmeanspp(&pts, 3, 0).unwrap();
        assert_eq!(a.inertia, 0.0);
        assert!(a.labels.iter().all(|&l| l < 3));
    }

    #[test]
    fn separated_blobs_recovered() {
        let mut hits = 0;
        for seed in 0..100 {
            let (pts, truth) = blobs(seed);
            let a = kmeanspp(&pts, 2, seed).unwrap();
            let same = a.labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
            if same == 40 || same == 0 {
                hits += 1;
            }
        }
        assert!(hits >= 99, "{hits}");
    }

    proptest! {
        #[test]
        fn inertia_never_increases(seed in 0u64..500, k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = Tensor::random_normal(30, 3, 1.0, &mut rng);
            let a = kmeanspp(&pts, k, seed).unwrap();
            for w in a.inertia_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", a.inertia_trace);
            }
            prop_assert!(a.inertia >= 0.0);
            prop_assert!(a.labels.iter().all(|&l| l < k));
        }

        #[test]
        fn labels_invariant_under_scaling(
            coords in proptest::collection::vec(-8i32..8, 40),
            k in 1usize..5,
            seed in 0u64..100,
        ) {
            // Scaling by a power of two is exact, so even ties resolve alike.
            let pts = Tensor::from_fn(20, 2, |r, c| f64::from(coords[2 * r + c]));
            let a = kmeanspp(&pts, k, seed).unwrap();
            let b = kmeanspp(&pts.map(|v| 4.0 * v), k, seed).unwrap();
            prop_assert_eq!(a.labels, b.labels);
        }

        #[test]
        fn labels_invariant_under_translation(seed in 0u64..200, k in 1usize..5, t in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = Tensor::random_normal(25, 3, 1.0, &mut rng);
            let a = kmeanspp(&pts, k, seed).unwrap();
            let b = kmeanspp(&pts.map(|v| v + t), k, seed).unwrap();
            prop_assert_eq!(a.labels, b.labels);
        }
    }
}
