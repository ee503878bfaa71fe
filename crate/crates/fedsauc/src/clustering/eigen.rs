//! Cyclic Jacobi eigendecomposition for small symmetric matrices.
//!
//! Cluster counts here never exceed the client count, so plane rotations are
//! plenty fast and keep the dependency surface empty.

use super::ClusteringError;

const SYMMETRY_TOL: f64 = 1e-10;
const OFF_DIAG_TARGET: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.
/// `vectors[k]` is the eigenvector paired with `values[k]`.
pub fn eigh_jacobi(a: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>), ClusteringError> {
    let n = a.len();
    if n == 0 {
        return Err(ClusteringError::Arg("empty matrix".into()));
    }
    for (i, row) in a.iter().enumerate() {
        if row.len() != n {
            return Err(ClusteringError::Arg(format!(
                "row {i} has {} entries in a {n}x{n} matrix",
                row.len()
            )));
        }
        for j in 0..n {
            if (a[i][j] - a[j][i]).abs() > SYMMETRY_TOL {
                return Err(ClusteringError::Arg(format!(
                    "matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }

    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let norm: f64 = a
        .iter()
        .flat_map(|row| row.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= OFF_DIAG_TARGET * norm {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = m[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                let app = m[p][p];
                let aqq = m[q][q];
                m[p][p] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                m[q][q] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                m[p][q] = 0.0;
                m[q][p] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[k][p];
                    let akq = m[k][q];
                    m[k][p] = c * akp - s * akq;
                    m[p][k] = m[k][p];
                    m[k][q] = s * akp + c * akq;
                    m[q][k] = m[k][q];
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i][i].total_cmp(&m[j][j]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| m[i][i]).collect();
    let vectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&col| (0..n).map(|row| v[row][col]).collect())
        .collect();
    Ok((values, vectors))
}
