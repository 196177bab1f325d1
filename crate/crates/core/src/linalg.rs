//! Small shared linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and eigenvectors as matching columns.
pub(crate) fn symmetric_eigen_desc(matrix: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = matrix.nrows();
    let eigen = nalgebra::SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let values = DVector::from_fn(n, |i, _| eigen.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(n, n, |i, j| eigen.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Largest absolute entry; zero for empty matrices.
pub(crate) fn max_abs(matrix: &DMatrix<f64>) -> f64 {
    matrix.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Symmetry defect `max |M - M^T|`.
pub(crate) fn symmetry_defect(matrix: &DMatrix<f64>) -> f64 {
    let n = matrix.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    worst
}

/// Force exact symmetry by averaging with the transpose.
pub(crate) fn symmetrize(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    (matrix + matrix.transpose()) * 0.5
}

/// LDL^T positive-definiteness test with a relative pivot tolerance.
///
/// Returns `true` when every pivot exceeds `pivot_rtol * trace / n`.
pub(crate) fn is_positive_definite(matrix: &DMatrix<f64>, pivot_rtol: f64) -> bool {
    let n = matrix.nrows();
    if n == 0 {
        return true;
    }
    let tol = pivot_rtol * matrix.trace().abs() / n as f64;
    let mut work = matrix.clone();
    for k in 0..n {
        let pivot = work[(k, k)];
        if !pivot.is_finite() || pivot <= tol {
            return false;
        }
        for i in (k + 1)..n {
            let factor = work[(i, k)] / pivot;
            for j in (k + 1)..n {
                work[(i, j)] -= factor * work[(k, j)];
            }
        }
    }
    true
}

/// Solve a symmetric positive definite system via Cholesky.
pub(crate) fn solve_spd(matrix: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    nalgebra::Cholesky::new(matrix.clone()).map(|chol| chol.solve(rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigen_sorted_descending_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let (values, vectors) = symmetric_eigen_desc(&m);
        assert!(values[0] >= values[1] && values[1] >= values[2]);
        let rebuilt = &vectors * DMatrix::from_diagonal(&values) * vectors.transpose();
        assert_relative_eq!(rebuilt, m, epsilon = 1e-12);
    }

    #[test]
    fn pd_test_accepts_spd_and_rejects_indefinite() {
        let spd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(is_positive_definite(&spd, 1e-12));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(!is_positive_definite(&indef, 1e-12));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(!is_positive_definite(&singular, 1e-12));
    }
}
