//! Cyclic Jacobi eigenvalue iteration for symmetric matrices.
//!
//! Kept deliberately separate from the eigensolver used by the feasibility
//! search so certificate rechecks do not share an algorithm with the solver.

use nalgebra::DMatrix;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// ascending order.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "jacobi_eigenvalues needs a square matrix");
    if n == 0 {
        return Vec::new();
    }
    let mut a = (m + m.transpose()) * 0.5;
    let frob = a.norm().max(f64::MIN_POSITIVE);
    let tol = 1e-15 * frob;

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let apq = a[(i, j)];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = a[(i, i)];
                let aqq = a[(j, j)];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let aki = a[(k, i)];
                    let akj = a[(k, j)];
                    a[(k, i)] = c * aki - s * akj;
                    a[(k, j)] = s * aki + c * akj;
                }
                for k in 0..n {
                    let aik = a[(i, k)];
                    let ajk = a[(j, k)];
                    a[(i, k)] = c * aik - s * ajk;
                    a[(j, k)] = s * aik + c * ajk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn diagonal_matrix() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[3.0, -1.0, 2.0]));
        let e = jacobi_eigenvalues(&m);
        assert_eq!(e, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn known_2x2() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = jacobi_eigenvalues(&m);
        assert_relative_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(e[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn agrees_with_symmetric_eigen() {
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[
                4.0, 1.0, -2.0, 0.5, 1.0, 3.0, 0.0, -1.0, -2.0, 0.0, 1.0, 0.3, 0.5, -1.0, 0.3,
                -2.0,
            ],
        );
        let mine = jacobi_eigenvalues(&m);
        let mut theirs: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        theirs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (a, b) in mine.iter().zip(&theirs) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }
}
