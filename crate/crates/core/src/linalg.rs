use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Inverse of a symmetric positive-definite matrix, or `None`.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    sym.cholesky().map(|c| c.inverse())
}

pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    sym.cholesky().map(|c| c.solve(rhs))
}

/// Symmetric square root via eigen-decomposition. Eigenvalues slightly
/// below zero are clipped; returns the most negative eigenvalue seen.
pub fn symmetric_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&roots) * v.transpose(), min)
}

/// Checks the stacked design for linear dependence by modified Gram–Schmidt
/// and names the first offending column.
pub fn check_full_rank(data: &Dataset) -> Result<()> {
    let p = data.n_params();
    let n = data.n_obs();
    let mut cols: Vec<DVector<f64>> = (0..p)
        .map(|k| {
            DVector::from_iterator(
                n,
                data.clusters
                    .iter()
                    .flat_map(|c| (0..c.size()).map(move |j| c.x[(j, k)])),
            )
        })
        .collect();
    let mut basis: Vec<(usize, DVector<f64>)> = Vec::new();
    for (k, col) in cols.iter_mut().enumerate() {
        let norm0 = col.norm();
        let mut coeffs = Vec::new();
        for (idx, q) in &basis {
            let c = q.dot(col);
            *col -= q * c;
            coeffs.push((*idx, c));
        }
        let norm = col.norm();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            let others = coeffs
                .iter()
                .filter(|(_, c)| c.abs() > 1e-12 * norm0.max(1.0))
                .map(|(i, _)| data.column_names[*i].clone())
                .collect();
            return Err(Error::RankDeficient {
                column: data.column_names[k].clone(),
                others,
            });
        }
        basis.push((k, col.clone() / norm));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClusterData;

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let (s, min) = symmetric_sqrt(&m);
        assert!(min > 0.0);
        assert!((&s * &s - &m).abs().max() < 1e-12);
        assert!((&s - s.transpose()).abs().max() < 1e-14);
    }

    #[test]
    fn names_collinear_column() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 4.0, 1.0, 3.0, 6.0, 1.0, 5.0, 10.0]);
        let c = ClusterData::new("a", vec![1, 2, 3], x, vec![0.0; 3]).unwrap();
        let d = Dataset::new(vec![c], vec!["intercept".into(), "u".into(), "v".into()]).unwrap();
        match check_full_rank(&d) {
            Err(Error::RankDeficient { column, others }) => {
                assert_eq!(column, "v");
                assert!(others.contains(&"u".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }
}
