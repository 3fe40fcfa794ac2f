//! Seeded weighted k-means (Lloyd's algorithm with k-means++ seeding).
//!
//! Shared by the mixture-fit initialisation (pixels weighted by
//! radiance) and the user-to-cell partition (unit weights). Fully
//! deterministic for a given seed.

use crate::geometry::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub centers: Vec<Point2>,
    /// Index of the assigned centre for each input point.
    pub assignment: Vec<usize>,
}

/// Weighted Lloyd iterations to convergence (or `max_iters`).
///
/// Points with larger weight pull centres harder and are preferred by
/// the k-means++ seeding. Weights must be non-negative with a positive
/// sum; `k` must satisfy `1 <= k <= points.len()`.
pub fn weighted_kmeans(
    points: &[Point2],
    weights: &[f64],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> KmeansResult {
    assert!(k >= 1 && k <= points.len());
    assert_eq!(points.len(), weights.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(points, weights, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = nearest(*p, &centers);
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        // weighted means per cluster
        let mut sums = vec![(0.0f64, 0.0f64, 0.0f64); k]; // (wx, wy, w)
        for (i, p) in points.iter().enumerate() {
            let s = &mut sums[assignment[i]];
            s.0 += weights[i] * p.x;
            s.1 += weights[i] * p.y;
            s.2 += weights[i];
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.2 > 0.0 {
                *c = Point2::new(s.0 / s.2, s.1 / s.2);
            }
        }
        // a cluster with no weight gets reseeded at the point farthest
        // from its current centre assignment
        for c_idx in 0..k {
            if sums[c_idx].2 == 0.0 {
                if let Some(far) = farthest_point(points, weights, &centers, &assignment) {
                    centers[c_idx] = points[far];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    // final assignment against the settled centres
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest(*p, &centers);
    }
    KmeansResult { centers, assignment }
}

fn nearest(p: Point2, centers: &[Point2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = p.dist2(*c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn farthest_point(
    points: &[Point2],
    weights: &[f64],
    centers: &[Point2],
    assignment: &[usize],
) -> Option<usize> {
    let mut best = None;
    let mut best_d = -1.0;
    for (i, p) in points.iter().enumerate() {
        if weights[i] <= 0.0 {
            continue;
        }
        let d = weights[i] * p.dist2(centers[assignment[i]]);
        if d > best_d {
            best_d = d;
            best = Some(i);
        }
    }
    best
}

/// k-means++ seeding: first centre sampled by weight, each further
/// centre by weight times squared distance to the nearest chosen one.
fn seed_plus_plus(
    points: &[Point2],
    weights: &[f64],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Point2> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[sample_index(weights, rng)]);
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist2(centers[0])).collect();
    while centers.len() < k {
        let scores: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        let idx = if scores.iter().sum::<f64>() > 0.0 {
            sample_index(&scores, rng)
        } else {
            // all remaining mass sits on the chosen centres; spread anyway
            sample_index(weights, rng)
        };
        let c = points[idx];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.dist2(c));
        }
    }
    centers
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0, "cannot sample from zero mass");
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_cluster(cx: f64, cy: f64) -> Vec<Point2> {
        let mut v = Vec::new();
        for dx in [-0.5, 0.0, 0.5] {
            for dy in [-0.5, 0.0, 0.5] {
                v.push(Point2::new(cx + dx, cy + dy));
            }
        }
        v
    }

    #[test]
    fn recovers_separated_clusters() {
        let mut points = square_cluster(2.0, 2.0);
        points.extend(square_cluster(15.0, 3.0));
        points.extend(square_cluster(8.0, 17.0));
        let weights = vec![1.0; points.len()];
        let res = weighted_kmeans(&points, &weights, 3, 9, 100);
        // every cluster of 9 points maps to a single centre
        for chunk in res.assignment.chunks(9) {
            assert!(chunk.iter().all(|&c| c == chunk[0]));
        }
        for c in &res.centers {
            let near_any = [(2.0, 2.0), (15.0, 3.0), (8.0, 17.0)]
                .iter()
                .any(|&(x, y)| c.dist(Point2::new(x, y)) < 0.3);
            assert!(near_any, "centre {c:?} far from every planted cluster");
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let points = square_cluster(1.0, 1.0)
            .into_iter()
            .chain(square_cluster(9.0, 9.0))
            .collect::<Vec<_>>();
        let weights = vec![1.0; points.len()];
        let a = weighted_kmeans(&points, &weights, 2, 5, 100);
        let b = weighted_kmeans(&points, &weights, 2, 5, 100);
        assert_eq!(a.assignment, b.assignment);
        for (x, y) in a.centers.iter().zip(&b.centers) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn heavy_weight_dominates_centre() {
        let points = vec![Point2::new(0.0, 0.0), Point2::new(10.0, 0.0)];
        let weights = vec![99.0, 1.0];
        let res = weighted_kmeans(&points, &weights, 1, 0, 100);
        assert!((res.centers[0].x - 0.1).abs() < 1e-9);
    }
}
