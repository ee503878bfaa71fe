//! Single-linkage agglomerative clustering.
//!
//! Cluster-pair distance is the minimum Euclidean distance over cross pairs,
//! maintained with the min-rule update as clusters merge. Ties pick the
//! lexicographically lowest pair of active cluster positions.

use super::{check_points, euclidean_sq, ClusterAssignment, ClusteringError, UpdateVector};

pub fn agglomerative(
    points: &[UpdateVector],
    m: usize,
) -> Result<ClusterAssignment, ClusteringError> {
    check_points(points, m)?;
    let coords: Vec<Vec<f64>> = points.iter().map(|p| p.values.clone()).collect();
    let ids: Vec<u16> = points.iter().map(|p| p.client_id).collect();
    let labels = single_linkage(&coords, m);
    Ok(ClusterAssignment::from_point_labels(&ids, &labels))
}

pub(crate) fn single_linkage(points: &[Vec<f64>], m: usize) -> Vec<usize> {
    let n = points.len();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| euclidean_sq(&points[i], &points[j]).sqrt()).collect())
        .collect();

    while members.len() > m {
        let active = members.len();
        let (mut best_a, mut best_b, mut best_d) = (0, 1, f64::INFINITY);
        for a in 0..active - 1 {
            for b in (a + 1)..active {
                if dist[a][b] < best_d {
                    best_a = a;
                    best_b = b;
                    best_d = dist[a][b];
                }
            }
        }
        let absorbed = members.remove(best_b);
        members[best_a].extend(absorbed);
        for k in 0..active {
            if k == best_a || k == best_b {
                continue;
            }
            let merged = dist[best_a][k].min(dist[best_b][k]);
            dist[best_a][k] = merged;
            dist[k][best_a] = merged;
        }
        dist.remove(best_b);
        for row in dist.iter_mut() {
            row.remove(best_b);
        }
    }

    let mut labels = vec![0usize; n];
    for (cluster, group) in members.iter().enumerate() {
        for &point in group {
            labels[point] = cluster;
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::super::planar;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn as_set_of_sets(assignment: &ClusterAssignment) -> BTreeSet<BTreeSet<u16>> {
        (0..assignment.num_clusters())
            .map(|k| assignment.members_of(k))
            .collect()
    }

    #[test]
    fn one_dimensional_gap_splits_cleanly() {
        let points = planar(&[(0.0, 0.0), (1.0, 0.0), (10.0, 0.0), (11.0, 0.0)]);
        let assignment = agglomerative(&points, 2).unwrap();
        let groups = as_set_of_sets(&assignment);
        let expected: BTreeSet<BTreeSet<u16>> = [
            [0u16, 1].iter().copied().collect(),
            [2u16, 3].iter().copied().collect(),
        ]
        .into_iter()
        .collect();
        assert_eq!(groups, expected);
    }

    #[test]
    fn m_equals_n_leaves_singletons() {
        let points = planar(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let assignment = agglomerative(&points, 3).unwrap();
        assert_eq!(assignment.num_clusters(), 3);
        for k in 0..3 {
            assert_eq!(assignment.members_of(k).len(), 1);
        }
    }

    /// Recomputes single linkage from scratch each merge step: every cluster
    /// pair distance is a fresh scan over all cross point pairs.
    fn naive_single_linkage(points: &[Vec<f64>], m: usize) -> BTreeSet<BTreeSet<usize>> {
        let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
        while clusters.len() > m {
            let mut best = (0usize, 1usize, f64::INFINITY);
            for a in 0..clusters.len() - 1 {
                for b in (a + 1)..clusters.len() {
                    let mut d = f64::INFINITY;
                    for &x in &clusters[a] {
                        for &y in &clusters[b] {
                            d = d.min(euclidean_sq(&points[x], &points[y]).sqrt());
                        }
                    }
                    if d < best.2 {
                        best = (a, b, d);
                    }
                }
            }
            let taken = clusters.remove(best.1);
            clusters[best.0].extend(taken);
        }
        clusters
            .into_iter()
            .map(|c| c.into_iter().collect())
            .collect()
    }

    #[test]
    fn matches_naive_rescan_oracle_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let raw: Vec<(f64, f64)> = (0..8)
                .map(|_| (rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0))
                .collect();
            let points = planar(&raw);
            let coords: Vec<Vec<f64>> = points.iter().map(|p| p.values.clone()).collect();

            let assignment = agglomerative(&points, 3).unwrap();
            let ours: BTreeSet<BTreeSet<usize>> = (0..assignment.num_clusters())
                .map(|k| assignment.members_of(k).into_iter().map(usize::from).collect())
                .collect();
            assert_eq!(ours, naive_single_linkage(&coords, 3));
        }
    }

    #[test]
    fn input_order_does_not_change_the_partition() {
        let raw = [(0.0, 0.0), (0.4, 0.1), (5.0, 5.0), (5.3, 4.8), (9.0, 0.0), (8.8, 0.3)];
        let points = planar(&raw);
        let mut reversed = points.clone();
        reversed.reverse();

        let a = as_set_of_sets(&agglomerative(&points, 3).unwrap());
        let b = as_set_of_sets(&agglomerative(&reversed, 3).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_clusters_is_an_arg_error() {
        let points = planar(&[(0.0, 0.0)]);
        assert!(matches!(
            agglomerative(&points, 2),
            Err(ClusteringError::Arg(_))
        ));
    }
}
