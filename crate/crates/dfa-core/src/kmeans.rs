//! Lloyd's k-means with distance-weighted seeding.
//!
//! Deterministic given the caller's RNG: seeding draws from the data with
//! probability proportional to squared distance from the already-chosen
//! centers, then Lloyd alternates assignment and center updates until the
//! assignment reaches a fixpoint or an iteration cap. The per-iteration
//! objective (sum of squared distances to assigned centers) is recorded so
//! callers can audit monotonicity.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KmeansError {
    #[error("need at least {k} points to fit {k} clusters, got {points}")]
    TooFewPoints { points: usize, k: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("points must share one dimension; point {index} has {got}, expected {expected}")]
    RaggedPoints {
        index: usize,
        got: usize,
        expected: usize,
    },
}

/// Fitted centers plus the final assignment and the objective trace.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub centers: Vec<Vec<f64>>,
    /// Index of the nearest center per input point (lowest index on ties).
    pub assignments: Vec<usize>,
    /// Objective after each Lloyd iteration, starting from the seeding.
    pub objective_trace: Vec<f64>,
}

impl KmeansFit {
    pub fn objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("trace always has at least one entry")
    }
}

const MAX_ITERATIONS: usize = 300;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

fn nearest_center(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = squared_distance(point, &centers[0]);
    for (i, c) in centers.iter().enumerate().skip(1) {
        let d = squared_distance(point, c);
        // Strict improvement keeps the lowest index on exact ties.
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    (best, best_d)
}

fn validate(points: &[Vec<f64>], k: usize) -> Result<usize, KmeansError> {
    if k == 0 {
        return Err(KmeansError::ZeroK);
    }
    if points.len() < k {
        return Err(KmeansError::TooFewPoints {
            points: points.len(),
            k,
        });
    }
    let dim = points[0].len();
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(KmeansError::RaggedPoints {
                index: i,
                got: p.len(),
                expected: dim,
            });
        }
    }
    Ok(dim)
}

/// Distance-weighted seeding: first center uniform from the data, each
/// subsequent center drawn with probability proportional to its squared
/// distance from the nearest already-chosen center.
fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All remaining mass at distance zero (duplicate points): any
            // point works; keep the draw deterministic.
            rng.gen_range(0..points.len())
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, centers.last().expect("just pushed")));
        }
    }
    centers
}

/// Fits k-means with distance-weighted seeding from `rng`.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha20Rng) -> Result<KmeansFit, KmeansError> {
    validate(points, k)?;
    let centers = seed_centers(points, k, rng);
    Ok(lloyd(points, centers))
}

/// Fits k-means from explicit initial centers (used by the exhaustive
/// all-pairs verification and by restart strategies).
pub fn kmeans_from_centers(
    points: &[Vec<f64>],
    initial_centers: Vec<Vec<f64>>,
) -> Result<KmeansFit, KmeansError> {
    let k = initial_centers.len();
    let dim = validate(points, k)?;
    for (i, c) in initial_centers.iter().enumerate() {
        if c.len() != dim {
            return Err(KmeansError::RaggedPoints {
                index: i,
                got: c.len(),
                expected: dim,
            });
        }
    }
    Ok(lloyd(points, initial_centers))
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> KmeansFit {
    let k = centers.len();
    let dim = points[0].len();
    let mut assignments = vec![0usize; points.len()];
    let mut objective_trace = Vec::new();

    for _ in 0..MAX_ITERATIONS {
        // Assignment step.
        let mut objective = 0.0;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (a, d) = nearest_center(p, &centers);
            objective += d;
            if assignments[i] != a {
                assignments[i] = a;
                changed = true;
            }
        }
        objective_trace.push(objective);
        if !changed && objective_trace.len() > 1 {
            break;
        }
        // Update step: mean of assigned points; empty clusters keep their center.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centers[c][d] = sums[c][d] / counts[c] as f64;
                }
            }
        }
    }

    KmeansFit {
        centers,
        assignments,
        objective_trace,
    }
}

/// Exhaustive optimum over all assignments of `points` into at most `k`
/// nonempty-or-empty groups, scoring each grouping by sum of squared
/// distances to group means. Exponential; intended for tiny verification
/// instances only.
pub fn exhaustive_optimum(points: &[Vec<f64>], k: usize) -> Result<f64, KmeansError> {
    let dim = validate(points, k)?;
    let n = points.len();
    assert!(
        k.pow(n as u32) <= 1 << 24,
        "exhaustive enumeration only supports tiny instances"
    );
    let mut best = f64::INFINITY;
    let mut assignment = vec![0usize; n];
    loop {
        // Score the current assignment.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut objective = 0.0;
        for (p, &a) in points.iter().zip(&assignment) {
            for d in 0..dim {
                let mean = sums[a][d] / counts[a] as f64;
                let diff = p[d] - mean;
                objective += diff * diff;
            }
        }
        best = best.min(objective);
        // Next assignment in base-k counting order.
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(best);
            }
            assignment[pos] += 1;
            if assignment[pos] < k {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_for;

    #[test]
    fn two_far_points_become_their_own_centers() {
        let points = vec![vec![0.0], vec![10.0]];
        let mut rng = rng_for(1, "kmeans-test", 0);
        let fit = kmeans(&points, 2, &mut rng).unwrap();
        let mut centers: Vec<f64> = fit.centers.iter().map(|c| c[0]).collect();
        centers.sort_by(f64::total_cmp);
        assert_eq!(centers, vec![0.0, 10.0]);
        assert_eq!(fit.objective(), 0.0);
    }

    #[test]
    fn identical_points_single_cluster() {
        let points = vec![vec![3.0, -1.0]; 5];
        let mut rng = rng_for(1, "kmeans-test", 1);
        let fit = kmeans(&points, 1, &mut rng).unwrap();
        assert_eq!(fit.centers[0], vec![3.0, -1.0]);
        assert_eq!(fit.objective(), 0.0);
    }

    #[test]
    fn rejects_more_clusters_than_points() {
        let points = vec![vec![0.0], vec![1.0]];
        let mut rng = rng_for(1, "kmeans-test", 2);
        assert!(matches!(
            kmeans(&points, 3, &mut rng),
            Err(KmeansError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn objective_trace_is_monotone_non_increasing() {
        let mut rng = rng_for(1, "kmeans-test", 3);
        for run in 0..20 {
            let n = 10 + (run % 7) * 5;
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let fit = kmeans(&points, 4, &mut rng).unwrap();
            for w in fit.objective_trace.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-12,
                    "objective increased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn all_pairs_restarts_reach_exhaustive_optimum() {
        // On tiny instances, the best Lloyd fit over all distinct point-pair
        // seedings must equal the true optimum found by enumerating every
        // 2-partition.
        let mut rng = rng_for(1, "kmeans-test", 4);
        for _ in 0..5 {
            let points: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let mut best = f64::INFINITY;
            for i in 0..points.len() {
                for j in (i + 1)..points.len() {
                    let fit = kmeans_from_centers(
                        &points,
                        vec![points[i].clone(), points[j].clone()],
                    )
                    .unwrap();
                    best = best.min(fit.objective());
                }
            }
            let optimum = exhaustive_optimum(&points, 2).unwrap();
            assert!(
                (best - optimum).abs() < 1e-9,
                "lloyd best {best} vs exhaustive {optimum}"
            );
        }
    }

    #[test]
    fn assignments_use_lowest_index_on_ties() {
        // A point equidistant from two identical centers goes to index 0.
        let points = vec![vec![0.0], vec![2.0], vec![1.0]];
        let fit = kmeans_from_centers(&points, vec![vec![1.0], vec![1.0]]).unwrap();
        assert!(fit.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn seeding_is_deterministic_per_rng_stream() {
        let mut rng_a = rng_for(9, "kmeans-test", 5);
        let mut rng_b = rng_for(9, "kmeans-test", 5);
        let points: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.71).cos()])
            .collect();
        let a = kmeans(&points, 5, &mut rng_a).unwrap();
        let b = kmeans(&points, 5, &mut rng_b).unwrap();
        assert_eq!(a.centers, b.centers);
        assert_eq!(a.assignments, b.assignments);
    }
}
