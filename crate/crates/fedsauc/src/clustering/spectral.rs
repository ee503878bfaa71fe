//! Spectral clustering: Gaussian affinity, symmetric normalized Laplacian,
//! row-normalized embedding from the smallest eigenvectors, then k-means.

use super::eigen::eigh_jacobi;
use super::kmeans::lloyd_best;
use super::{check_points, euclidean_sq, ClusterAssignment, ClusteringError, UpdateVector};

pub fn spectral(
    points: &[UpdateVector],
    m: usize,
    sigma: Option<f64>,
    seed: u64,
) -> Result<ClusterAssignment, ClusteringError> {
    if m < 2 {
        return Err(ClusteringError::Arg(
            "spectral clustering needs at least 2 clusters".into(),
        ));
    }
    check_points(points, m)?;
    let coords: Vec<Vec<f64>> = points.iter().map(|p| p.values.clone()).collect();
    let ids: Vec<u16> = points.iter().map(|p| p.client_id).collect();
    let embedding = embedding(&coords, m, sigma)?;
    let (labels, _) = lloyd_best(&embedding, m, seed);
    Ok(ClusterAssignment::from_point_labels(&ids, &labels))
}

/// Unit-norm rows of the n x m matrix of the Laplacian's smallest eigenvectors.
pub(crate) fn embedding(
    points: &[Vec<f64>],
    m: usize,
    sigma: Option<f64>,
) -> Result<Vec<Vec<f64>>, ClusteringError> {
    let sigma = match sigma {
        Some(s) if s > 0.0 => s,
        Some(s) => {
            return Err(ClusteringError::Arg(format!(
                "sigma must be positive, got {s}"
            )))
        }
        None => median_pairwise_distance(points),
    };
    if sigma == 0.0 {
        return Err(ClusteringError::DegenerateAffinity);
    }

    let laplacian = normalized_laplacian(points, sigma);
    let (_, vectors) = eigh_jacobi(&laplacian)?;

    let n = points.len();
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..m).map(|k| vectors[k][i]).collect())
        .collect();
    for row in rows.iter_mut() {
        let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    Ok(rows)
}

pub(crate) fn normalized_laplacian(points: &[Vec<f64>], sigma: f64) -> Vec<Vec<f64>> {
    let n = points.len();
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let mut affinity = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let w = (-euclidean_sq(&points[i], &points[j]) * inv_two_sigma_sq).exp();
            affinity[i][j] = w;
            affinity[j][i] = w;
        }
    }
    let inv_sqrt_degree: Vec<f64> = affinity
        .iter()
        .map(|row| {
            let d: f64 = row.iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();

    let mut laplacian = vec![vec![0.0; n]; n];
    for i in 0..n {
        laplacian[i][i] = 1.0;
        for j in (i + 1)..n {
            let value = -inv_sqrt_degree[i] * affinity[i][j] * inv_sqrt_degree[j];
            laplacian[i][j] = value;
            laplacian[j][i] = value;
        }
    }
    laplacian
}

pub(crate) fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut distances = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            distances.push(euclidean_sq(&points[i], &points[j]).sqrt());
        }
    }
    distances.sort_by(f64::total_cmp);
    let mid = distances.len() / 2;
    if distances.len() % 2 == 1 {
        distances[mid]
    } else {
        0.5 * (distances[mid - 1] + distances[mid])
    }
}

#[cfg(test)]
mod tests {
    use super::super::planar;
    use super::*;

    fn blob_points() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.0],
            vec![0.3, 0.1],
            vec![0.1, 0.4],
            vec![20.0, 20.0],
            vec![20.3, 19.8],
            vec![19.9, 20.2],
        ]
    }

    #[test]
    fn two_blobs_are_recovered_exactly() {
        let points = planar(&[
            (0.0, 0.0),
            (0.3, 0.1),
            (0.1, 0.4),
            (20.0, 20.0),
            (20.3, 19.8),
            (19.9, 20.2),
        ]);
        let assignment = spectral(&points, 2, None, 11).unwrap();
        let a = assignment.label_of(0).unwrap();
        assert_eq!(assignment.label_of(1).unwrap(), a);
        assert_eq!(assignment.label_of(2).unwrap(), a);
        let b = assignment.label_of(3).unwrap();
        assert_ne!(a, b);
        assert_eq!(assignment.label_of(4).unwrap(), b);
        assert_eq!(assignment.label_of(5).unwrap(), b);
    }

    #[test]
    fn laplacian_is_positive_semidefinite() {
        let points = blob_points();
        let laplacian = normalized_laplacian(&points, median_pairwise_distance(&points));
        let (values, _) = eigh_jacobi(&laplacian).unwrap();
        assert!(values.iter().all(|&v| v >= -1e-8), "eigenvalues {values:?}");
    }

    #[test]
    fn sqrt_degree_vector_is_in_the_null_space() {
        let points = blob_points();
        let sigma = median_pairwise_distance(&points);
        let n = points.len();
        let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
        let mut degree = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    degree[i] += (-euclidean_sq(&points[i], &points[j]) * inv_two_sigma_sq).exp();
                }
            }
        }
        let v: Vec<f64> = degree.iter().map(|d| d.sqrt()).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();

        let laplacian = normalized_laplacian(&points, sigma);
        for i in 0..n {
            let residual: f64 = (0..n).map(|j| laplacian[i][j] * v[j] / norm).sum();
            assert!(residual.abs() <= 1e-8, "row {i} residual {residual}");
        }
    }

    #[test]
    fn embedding_rows_have_unit_norm() {
        let points = blob_points();
        let rows = embedding(&points, 2, None).unwrap();
        for row in &rows {
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-10 || norm == 0.0);
        }
    }

    #[test]
    fn identical_points_degenerate() {
        let points = planar(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]);
        assert!(matches!(
            spectral(&points, 2, None, 0),
            Err(ClusteringError::DegenerateAffinity)
        ));
    }

    #[test]
    fn argument_errors() {
        let points = planar(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        assert!(matches!(
            spectral(&points, 1, None, 0),
            Err(ClusteringError::Arg(_))
        ));
        assert!(matches!(
            spectral(&points, 2, Some(-0.5), 0),
            Err(ClusteringError::Arg(_))
        ));
        assert!(matches!(
            spectral(&points, 4, None, 0),
            Err(ClusteringError::Arg(_))
        ));
    }
}
