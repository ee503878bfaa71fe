//! Lloyd's algorithm with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_points, euclidean_sq, ClusterAssignment, ClusteringError, UpdateVector};

const MAX_ITERATIONS: usize = 300;
const RESTARTS: usize = 10;

/// Partitions the update vectors into at most `m` clusters, minimizing the
/// within-cluster sum of squares. Deterministic for a fixed seed: ten
/// seeded k-means++ restarts, keeping the lowest-cost run.
pub fn kmeans(
    points: &[UpdateVector],
    m: usize,
    seed: u64,
) -> Result<ClusterAssignment, ClusteringError> {
    check_points(points, m)?;
    let coords: Vec<Vec<f64>> = points.iter().map(|p| p.values.clone()).collect();
    let ids: Vec<u16> = points.iter().map(|p| p.client_id).collect();
    let (labels, _) = lloyd_best(&coords, m, seed);
    Ok(ClusterAssignment::from_point_labels(&ids, &labels))
}

/// Best of several independently seeded Lloyd runs, by final WCSS.
pub(crate) fn lloyd_best(points: &[Vec<f64>], m: usize, seed: u64) -> (Vec<usize>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..RESTARTS {
        let (labels, trace) = lloyd(points, m, rng.random());
        let cost = *trace.last().expect("lloyd always iterates at least once");
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((labels, cost));
        }
    }
    best.expect("at least one restart")
}

/// Core iteration over raw coordinates; also used on spectral embeddings.
/// Returns final labels and the WCSS recorded after every iteration.
pub(crate) fn lloyd(points: &[Vec<f64>], m: usize, seed: u64) -> (Vec<usize>, Vec<f64>) {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(points, m, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut trace = Vec::new();

    for _ in 0..MAX_ITERATIONS {
        let mut new_labels: Vec<usize> = points
            .iter()
            .map(|p| nearest_center(p, &centers))
            .collect();
        repair_empty_clusters(points, &mut new_labels, &mut centers);
        let converged = new_labels == labels;
        labels = new_labels;
        centers = cluster_means(points, &labels, m, &centers);
        trace.push(wcss(points, &labels, &centers));
        if converged {
            break;
        }
    }
    (labels, trace)
}

fn seed_plus_plus(points: &[Vec<f64>], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = Vec::with_capacity(m);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut dist2: Vec<f64> = points
        .iter()
        .map(|p| euclidean_sq(p, &centers[0]))
        .collect();
    while centers.len() < m {
        let total: f64 = dist2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut index = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                if target < d {
                    index = i;
                    break;
                }
                target -= d;
            }
            index
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[chosen].clone());
        for (i, p) in points.iter().enumerate() {
            let d = euclidean_sq(p, centers.last().unwrap());
            if d < dist2[i] {
                dist2[i] = d;
            }
        }
    }
    centers
}

fn nearest_center(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = euclidean_sq(point, &centers[0]);
    for (k, center) in centers.iter().enumerate().skip(1) {
        let d = euclidean_sq(point, center);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Hands each empty cluster the point currently farthest from its own center;
/// that point becomes the cluster's new center.
fn repair_empty_clusters(points: &[Vec<f64>], labels: &mut [usize], centers: &mut [Vec<f64>]) {
    let m = centers.len();
    let mut sizes = vec![0usize; m];
    for &label in labels.iter() {
        sizes[label] += 1;
    }
    for k in 0..m {
        if sizes[k] > 0 {
            continue;
        }
        let mut farthest: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = euclidean_sq(p, &centers[labels[i]]);
            if farthest.map_or(true, |(_, best)| d > best) {
                farthest = Some((i, d));
            }
        }
        if let Some((i, _)) = farthest {
            sizes[labels[i]] -= 1;
            labels[i] = k;
            sizes[k] = 1;
            centers[k] = points[i].clone();
        }
    }
}

fn cluster_means(
    points: &[Vec<f64>],
    labels: &[usize],
    m: usize,
    previous: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; m];
    let mut counts = vec![0usize; m];
    for (p, &label) in points.iter().zip(labels) {
        counts[label] += 1;
        for (s, &x) in sums[label].iter_mut().zip(p) {
            *s += x;
        }
    }
    for k in 0..m {
        if counts[k] == 0 {
            sums[k] = previous[k].clone();
            continue;
        }
        let inv = 1.0 / counts[k] as f64;
        sums[k].iter_mut().for_each(|s| *s *= inv);
    }
    sums
}

pub(crate) fn wcss(points: &[Vec<f64>], labels: &[usize], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &label)| euclidean_sq(p, &centers[label]))
        .sum()
}

/// Cost of an arbitrary labeling with centroids at the cluster means.
#[cfg(test)]
pub(crate) fn partition_cost(points: &[Vec<f64>], labels: &[usize], m: usize) -> f64 {
    let zeros = vec![vec![0.0; points[0].len()]; m];
    let centers = cluster_means(points, labels, m, &zeros);
    wcss(points, labels, &centers)
}
