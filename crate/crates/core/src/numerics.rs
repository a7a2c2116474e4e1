//! Dense kernels for pursuit and dictionary updates: thin SVD, minimum-norm
//! least squares, and symmetric positive semidefinite solves.
//!
//! Decompositions are delegated to `nalgebra`; this module fixes the rank
//! tolerance and the minimum-norm conventions on top of them.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// `M = left * diag(singular) * right^T`, keeping only singular values above
/// the rank tolerance `max(p, q) * eps * sigma_max`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// p x r, orthonormal columns.
    pub left: DMatrix<f64>,
    /// Descending, strictly positive.
    pub singular: DVector<f64>,
    /// q x r, orthonormal columns.
    pub right: DMatrix<f64>,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.singular.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (j, s) in self.singular.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        scaled * self.right.transpose()
    }

    /// Moore-Penrose pseudo-inverse `right * diag(1/singular) * left^T`.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        let mut scaled = self.right.clone();
        for (j, s) in self.singular.iter().enumerate() {
            scaled.column_mut(j).scale_mut(1.0 / s);
        }
        scaled * self.left.transpose()
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::arg(format!("{what} contains non-finite entries")))
    }
}

pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    check_finite(m, "matrix")?;
    let (p, q) = m.shape();
    let empty = || ThinSvd {
        left: DMatrix::zeros(p, 0),
        singular: DVector::zeros(0),
        right: DMatrix::zeros(q, 0),
    };
    if p == 0 || q == 0 || m.iter().all(|&v| v == 0.0) {
        return Ok(empty());
    }
    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.expect("left vectors requested");
    let v_t = svd.v_t.expect("right vectors requested");
    let sigma = svd.singular_values;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let sigma_max = sigma[order[0]];
    let tol = rank_tolerance(p, q, sigma_max);
    order.retain(|&k| sigma[k] > tol);
    if order.is_empty() {
        return Ok(empty());
    }

    let r = order.len();
    let mut left = DMatrix::zeros(p, r);
    let mut right = DMatrix::zeros(q, r);
    let mut singular = DVector::zeros(r);
    for (j, &k) in order.iter().enumerate() {
        left.set_column(j, &u.column(k));
        right.set_column(j, &v_t.row(k).transpose());
        singular[j] = sigma[k];
    }
    Ok(ThinSvd {
        left,
        singular,
        right,
    })
}

/// Minimum-norm minimizer of `||b - A w||_2`.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::arg(format!(
            "least squares shape mismatch: A is {}x{}, b has {} entries",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::arg("right-hand side contains non-finite entries"));
    }
    let svd = thin_svd(a)?;
    let mut coeffs = svd.left.tr_mul(b);
    for (c, s) in coeffs.iter_mut().zip(svd.singular.iter()) {
        *c /= s;
    }
    Ok(&svd.right * coeffs)
}

/// Minimum-Frobenius-norm `D` minimizing `||B - D C||_F`, i.e.
/// `D = B * right * diag(1/sigma) * left^T` from the thin SVD of `C`.
pub fn min_norm_right_solve(b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.ncols() != c.ncols() {
        return Err(Error::arg(format!(
            "right solve shape mismatch: B is {}x{}, C is {}x{}",
            b.nrows(),
            b.ncols(),
            c.nrows(),
            c.ncols()
        )));
    }
    check_finite(b, "data matrix")?;
    let svd = thin_svd(c)?;
    if svd.rank() == 0 {
        return Err(Error::EmptyCodeMatrix);
    }
    let mut projected = b * &svd.right;
    for (j, s) in svd.singular.iter().enumerate() {
        projected.column_mut(j).scale_mut(1.0 / s);
    }
    Ok(projected * svd.left.transpose())
}

/// Solves `A x = c` for symmetric positive semidefinite `A`.
///
/// Fails with `None` when `A` is singular below the rank tolerance. A positive
/// `ridge` adds `ridge * trace(A) / dim` to the diagonal first.
pub fn solve_psd(a: &DMatrix<f64>, c: &DVector<f64>, ridge: Option<f64>) -> Option<DVector<f64>> {
    let dim = a.nrows();
    if dim == 0 {
        return Some(DVector::zeros(0));
    }
    let mut a = a.clone();
    if let Some(ridge) = ridge {
        let shift = ridge * a.trace() / dim as f64;
        for i in 0..dim {
            a[(i, i)] += shift;
        }
    }
    let eig = SymmetricEigen::new(a);
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let lambda_min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &l| m.min(l));
    if lambda_max == 0.0 || lambda_min <= rank_tolerance(dim, dim, lambda_max) {
        return None;
    }
    let mut coeffs = eig.eigenvectors.tr_mul(c);
    for (x, l) in coeffs.iter_mut().zip(eig.eigenvalues.iter()) {
        *x /= l;
    }
    Some(&eig.eigenvectors * coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn assert_orthonormal(m: &DMatrix<f64>) {
        let gram = m.transpose() * m;
        let eye = DMatrix::<f64>::identity(m.ncols(), m.ncols());
        assert!((gram - eye).norm() < 1e-10);
    }

    #[test]
    fn svd_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let svd = thin_svd(&m).unwrap();
        assert_eq!(svd.rank(), 2);
        assert!((svd.singular[0] - 3.0).abs() < 1e-14);
        assert!((svd.singular[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn svd_of_zero_matrix_is_empty() {
        let svd = thin_svd(&DMatrix::zeros(3, 4)).unwrap();
        assert_eq!(svd.rank(), 0);
        assert_eq!(svd.left.shape(), (3, 0));
        assert_eq!(svd.right.shape(), (4, 0));
    }

    #[test]
    fn svd_reconstructs_random_matrices() {
        for (seed, (p, q)) in [(5, 3), (3, 5), (7, 7), (1, 4)].into_iter().enumerate() {
            let m = random_matrix(p, q, seed as u64);
            let svd = thin_svd(&m).unwrap();
            assert!((svd.reconstruct() - &m).norm() <= 1e-9 * m.norm());
            assert_orthonormal(&svd.left);
            assert_orthonormal(&svd.right);
            assert!(svd.singular.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_drops_null_directions() {
        let mut m = random_matrix(4, 3, 11);
        let dup = m.column(0).into_owned();
        m.set_column(2, &dup);
        assert_eq!(thin_svd(&m).unwrap().rank(), 2);
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, f64::INFINITY]);
        assert!(thin_svd(&m).is_err());
        let a = DMatrix::identity(2, 2);
        assert!(least_squares(&a, &DVector::from_vec(vec![f64::NAN, 0.0])).is_err());
    }

    #[test]
    fn least_squares_small_cases() {
        let w =
            least_squares(&DMatrix::identity(2, 2), &DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert!((w - DVector::from_vec(vec![3.0, 4.0])).norm() < 1e-14);
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let w = least_squares(&a, &DVector::from_vec(vec![1.0, 3.0])).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn least_squares_residual_orthogonal_to_columns() {
        let a = random_matrix(8, 3, 3);
        let b = DVector::from_column_slice(random_matrix(8, 1, 4).as_slice());
        let w = least_squares(&a, &b).unwrap();
        let normal = a.transpose() * (&a * &w - &b);
        assert!(normal.norm() < 1e-9);
    }

    #[test]
    fn least_squares_picks_minimum_norm() {
        // x + y = 2 has minimum-norm solution (1, 1)
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let w = least_squares(&a, &DVector::from_vec(vec![2.0])).unwrap();
        assert!((w - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-14);
    }

    #[test]
    fn right_solve_with_identity_codes() {
        let b = random_matrix(3, 4, 9);
        let d = min_norm_right_solve(&b, &DMatrix::identity(4, 4)).unwrap();
        assert!((d - b).norm() < 1e-12);
    }

    #[test]
    fn right_solve_matches_normal_equations() {
        let c = random_matrix(4, 50, 21);
        let b = random_matrix(6, 50, 22);
        let d = min_norm_right_solve(&b, &c).unwrap();
        let gram = &c * c.transpose();
        let oracle = &b * c.transpose() * gram.try_inverse().unwrap();
        assert!((d - oracle).norm() < 1e-9);
    }

    #[test]
    fn right_solve_rank_deficient_is_minimum_norm() {
        // C has two identical rows, so D = [d1 d2] only enters through d1 + d2.
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 1.0, 2.0, -1.0]);
        let b = DMatrix::from_row_slice(2, 3, &[0.5, 2.0, 1.0, -1.0, 0.3, 2.0]);
        let d = min_norm_right_solve(&b, &c).unwrap();

        // Brute force: D = [s + a, s - a] per row, scan the null-space parameter a
        // at the optimal s and keep the smallest-norm minimizer.
        let residual = |dm: &DMatrix<f64>| (&b - dm * &c).norm();
        let best = residual(&d);
        let mut oracle_norm = f64::INFINITY;
        let base = &b * c.row(0).transpose() / c.row(0).norm_squared();
        for step in -2000..=2000 {
            let a = step as f64 * 1e-3;
            let mut cand = DMatrix::zeros(2, 2);
            for r in 0..2 {
                cand[(r, 0)] = base[r] / 2.0 + a;
                cand[(r, 1)] = base[r] / 2.0 - a;
            }
            if residual(&cand) <= best + 1e-12 {
                oracle_norm = oracle_norm.min(cand.norm());
            }
        }
        assert!((residual(&d) - best).abs() < 1e-12);
        assert!(d.norm() <= oracle_norm + 1e-12);
        assert!((d.norm() - oracle_norm).abs() < 1e-9);
    }

    #[test]
    fn right_solve_rejects_zero_codes() {
        let err = min_norm_right_solve(&DMatrix::zeros(2, 3), &DMatrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::EmptyCodeMatrix));
        assert_eq!(err.to_string(), "empty code matrix");
    }

    #[test]
    fn right_solve_row_permutation_invariance() {
        let c = random_matrix(3, 20, 31);
        let b = random_matrix(4, 20, 32);
        let d = min_norm_right_solve(&b, &c).unwrap();
        let perm = [2usize, 0, 1];
        let c_perm = DMatrix::from_fn(3, 20, |r, k| c[(perm[r], k)]);
        let d_perm = min_norm_right_solve(&b, &c_perm).unwrap();
        for (j, &p) in perm.iter().enumerate() {
            assert!((d_perm.column(j) - d.column(p)).norm() < 1e-9);
        }
    }

    #[test]
    fn psd_solve_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = DVector::from_vec(vec![1.0, 1.0]);
        assert!(solve_psd(&a, &c, None).is_none());
        let x = solve_psd(&a, &c, Some(1e-8)).unwrap();
        assert!((&a * &x - &c).norm() < 1e-6);
        let spd = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let x = solve_psd(&spd, &c, None).unwrap();
        assert!((spd * x - c).norm() < 1e-13);
    }
}
