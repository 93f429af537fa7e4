//! Covariance matrices and the Mahalanobis-norm kernels built on them.
//!
//! Every application of an inverse covariance goes through a Cholesky
//! factorization; no explicit inverse is ever formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix, Storage, U1};

use crate::error::{Result, SclbError};
use crate::model::{BanditInstance, Design, SampleLog};

const SYMMETRY_TOL: f64 = 1e-10;

/// Symmetric `d x d` matrix together with the ridge shift it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    matrix: DMatrix<f64>,
    shift: f64,
}

impl CovarianceMatrix {
    pub fn new(matrix: DMatrix<f64>, shift: f64) -> Result<Self> {
        if !matrix.is_square() {
            return Err(SclbError::Shape(format!(
                "covariance must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !(shift >= 0.0) || !shift.is_finite() {
            return Err(SclbError::Domain(format!(
                "covariance shift must be nonnegative, got {shift}"
            )));
        }
        let scale = matrix.amax().max(1.0);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(SclbError::Domain(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(Self::symmetrized(matrix, shift))
    }

    fn symmetrized(matrix: DMatrix<f64>, shift: f64) -> Self {
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Self { matrix, shift }
    }

    /// `c * I`.
    pub fn scaled_identity(dim: usize, c: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * c, c.max(0.0))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `c * Sigma`, with the shift scaled alike.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(SclbError::Domain(format!("scale must be positive, got {c}")));
        }
        Ok(Self {
            matrix: &self.matrix * c,
            shift: self.shift * c,
        })
    }

    pub fn factor(&self) -> Result<CovFactor> {
        CovFactor::new(self.matrix.clone())
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.matrix.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// Cholesky factor `Sigma = L L^T` of a positive definite covariance.
#[derive(Debug, Clone)]
pub struct CovFactor {
    chol: Cholesky<f64, Dyn>,
}

impl CovFactor {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let d = matrix.nrows();
        let min_diag = matrix.diagonal().min();
        Cholesky::new(matrix)
            .map(|chol| Self { chol })
            .ok_or_else(|| {
                SclbError::Numerical(format!(
                    "covariance is not positive definite (d = {d}, smallest diagonal entry {min_diag:e}); \
                     use a positive ridge shift or a design spanning all directions"
                ))
            })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Lower-triangular factor `L`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `v^T Sigma^{-1} v`.
    pub fn norm_sq<S: Storage<f64, Dyn, U1>>(&self, v: &Matrix<f64, Dyn, U1, S>) -> f64 {
        let z = self.whiten(v);
        z.norm_squared()
    }

    /// `L^{-1} v`.
    pub fn whiten<S: Storage<f64, Dyn, U1>>(&self, v: &Matrix<f64, Dyn, U1, S>) -> DVector<f64> {
        let mut z = v.clone_owned();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut z);
        z
    }

    /// `L^{-1} M` for a `d x k` matrix.
    pub fn whiten_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = m.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut z);
        z
    }

    /// `m_j^T Sigma^{-1} m_j` for every column `m_j`.
    pub fn column_norms_sq(&self, m: &DMatrix<f64>) -> Vec<f64> {
        self.whiten_columns(m)
            .column_iter()
            .map(|c| c.norm_squared())
            .collect()
    }

    /// `Sigma^{-1} v`.
    pub fn solve<S: Storage<f64, Dyn, U1>>(&self, v: &Matrix<f64, Dyn, U1, S>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// Replaces the factor of `Sigma` by that of `Sigma + v v^T`.
    pub fn rank_one_update<S: Storage<f64, Dyn, U1>>(&mut self, v: &Matrix<f64, Dyn, U1, S>) {
        self.chol.rank_one_update(v, 1.0);
    }
}

/// `shift * I + sum_j weights[j] * phi_j phi_j^T` over the columns of `columns`.
pub(crate) fn weighted_gram(columns: &DMatrix<f64>, weights: &[f64], shift: f64) -> DMatrix<f64> {
    let d = columns.nrows();
    let support: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] != 0.0).collect();
    let mut scaled = DMatrix::zeros(d, support.len());
    let mut plain = DMatrix::zeros(d, support.len());
    for (k, &j) in support.iter().enumerate() {
        plain.set_column(k, &columns.column(j));
        scaled.set_column(k, &(columns.column(j) * weights[j]));
    }
    let mut g = scaled * plain.transpose();
    for i in 0..d {
        g[(i, i)] += shift;
    }
    (&g + g.transpose()) * 0.5
}

/// `Sigma_w = (lambda/T) I + sum w(x,a) phi phi^T`, with the shift stored on the design.
pub fn covariance_of_design(instance: &BanditInstance, design: &Design) -> Result<CovarianceMatrix> {
    if design.len() != instance.n_pairs() {
        return Err(SclbError::Shape(format!(
            "design has {} weights, instance has {} pairs",
            design.len(),
            instance.n_pairs()
        )));
    }
    let matrix = weighted_gram(instance.feature_columns(), design.weights(), design.shift());
    Ok(CovarianceMatrix::symmetrized(matrix, design.shift()))
}

/// `Sigma_S = lambda I + sum over log entries of phi phi^T`.
pub fn covariance_of_log(
    instance: &BanditInstance,
    log: &SampleLog,
    lambda: f64,
) -> Result<CovarianceMatrix> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SclbError::Domain(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    log.validate(instance)?;
    let mut counts = vec![0.0; instance.n_pairs()];
    for s in log.iter() {
        counts[instance.pair_index(s.context, s.action)] += 1.0;
    }
    covariance_of_counts(instance, &counts, lambda)
}

/// `shift * I + sum_j counts[j] phi_j phi_j^T`; counts may be fractional.
pub fn covariance_of_counts(
    instance: &BanditInstance,
    counts: &[f64],
    shift: f64,
) -> Result<CovarianceMatrix> {
    if counts.len() != instance.n_pairs() {
        return Err(SclbError::Shape(format!(
            "count vector has length {}, instance has {} pairs",
            counts.len(),
            instance.n_pairs()
        )));
    }
    let matrix = weighted_gram(instance.feature_columns(), counts, shift);
    Ok(CovarianceMatrix::symmetrized(matrix, shift))
}

/// `v^T Sigma^{-1} v` through a Cholesky solve.
pub fn weighted_norm_sq<S: Storage<f64, Dyn, U1>>(
    v: &Matrix<f64, Dyn, U1, S>,
    cov: &CovarianceMatrix,
) -> Result<f64> {
    check_len(v.len(), cov.dim())?;
    Ok(cov.factor()?.norm_sq(v))
}

/// Whether `[[t, b^T], [b, C]]` is PSD, via the Schur complement `t - b^T C^{-1} b >= -1e-10`.
pub fn schur_psd<S: Storage<f64, Dyn, U1>>(
    t: f64,
    b: &Matrix<f64, Dyn, U1, S>,
    c: &CovarianceMatrix,
) -> Result<bool> {
    check_len(b.len(), c.dim())?;
    Ok(t - c.factor()?.norm_sq(b) >= -1e-10)
}

fn check_len(len: usize, dim: usize) -> Result<()> {
    if len == dim {
        Ok(())
    } else {
        Err(SclbError::Shape(format!(
            "vector has length {len}, covariance is {dim}x{dim}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::hard_instance;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spd_from(entries: &[f64], d: usize, ridge: f64) -> CovarianceMatrix {
        let a = DMatrix::from_row_slice(d, d, entries);
        let m = &a * a.transpose() + DMatrix::identity(d, d) * ridge;
        CovarianceMatrix::new(m, 0.0).unwrap()
    }

    #[test]
    fn norm_examples() {
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let id = CovarianceMatrix::scaled_identity(2, 1.0).unwrap();
        assert_relative_eq!(weighted_norm_sq(&e1, &id).unwrap(), 1.0);
        let diag = CovarianceMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])), 0.0)
            .unwrap();
        assert_relative_eq!(weighted_norm_sq(&e1, &diag).unwrap(), 0.25, epsilon = 1e-15);
        let zero = DVector::zeros(2);
        assert_eq!(weighted_norm_sq(&zero, &diag).unwrap(), 0.0);
    }

    #[test]
    fn singular_covariance_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let cov = CovarianceMatrix::new(m, 0.0).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(weighted_norm_sq(&e1, &cov), Err(SclbError::Numerical(_))));
    }

    #[test]
    fn design_covariance_examples() {
        let inst = hard_instance(2, 2).unwrap();
        // point mass on (x=0, a=0), phi = e_0
        let w = Design::point_mass(4, 0, 0.0).unwrap();
        let cov = covariance_of_design(&inst, &w).unwrap();
        assert_eq!(cov.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));

        let (z1, z2) = (0.3, 0.7);
        let w = Design::new(vec![z1, 0.0, z2, 0.0], 0.0).unwrap();
        let cov = covariance_of_design(&inst, &w).unwrap();
        assert_relative_eq!(cov.matrix()[(0, 0)], z1, epsilon = 1e-15);
        assert_relative_eq!(cov.matrix()[(1, 1)], z2, epsilon = 1e-15);
        assert_eq!(cov.matrix()[(0, 1)], 0.0);

        // uniform over d orthonormal features: (x, a=0) pairs carry e_x
        let w = Design::new(vec![0.5, 0.0, 0.5, 0.0], 0.0).unwrap();
        let cov = covariance_of_design(&inst, &w).unwrap();
        assert_relative_eq!(cov.matrix(), &(DMatrix::identity(2, 2) * 0.5), epsilon = 1e-15);
    }

    #[test]
    fn log_covariance_examples() {
        let inst = hard_instance(2, 2).unwrap();
        let empty = SampleLog::new();
        let cov = covariance_of_log(&inst, &empty, 1.0).unwrap();
        assert_eq!(cov.matrix(), &DMatrix::identity(2, 2));
        let mut log = SampleLog::new();
        for _ in 0..7 {
            log.push(0, 1, 0.0);
        }
        let cov = covariance_of_log(&inst, &log, 0.0).unwrap();
        assert_eq!(cov.matrix()[(0, 0)], 7.0);
        assert_eq!(cov.matrix().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn schur_examples() {
        let id = CovarianceMatrix::scaled_identity(2, 1.0).unwrap();
        let zero = DVector::zeros(2);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert!(schur_psd(1.0, &zero, &id).unwrap());
        assert!(!schur_psd(0.5, &e1, &id).unwrap());
        assert!(schur_psd(1.0, &e1, &id).unwrap());
    }

    proptest! {
        #[test]
        fn norm_is_bracketed_by_extreme_eigenvalues(
            entries in proptest::collection::vec(-2.0f64..2.0, 9),
            v in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let cov = spd_from(&entries, 3, 0.1);
            let v = DVector::from_vec(v);
            let ev = cov.eigenvalues();
            let n = weighted_norm_sq(&v, &cov).unwrap();
            let sq = v.norm_squared();
            prop_assert!(n >= sq / ev[2] * (1.0 - 1e-9) - 1e-12);
            prop_assert!(n <= sq / ev[0] * (1.0 + 1e-9) + 1e-12);
        }

        #[test]
        fn schur_agrees_with_block_eigenvalue(
            entries in proptest::collection::vec(-2.0f64..2.0, 9),
            b in proptest::collection::vec(-2.0f64..2.0, 3),
            t in 0.0f64..20.0,
        ) {
            let cov = spd_from(&entries, 3, 0.1);
            let b = DVector::from_vec(b);
            let mut block = DMatrix::zeros(4, 4);
            block[(0, 0)] = t;
            for i in 0..3 {
                block[(0, i + 1)] = b[i];
                block[(i + 1, 0)] = b[i];
            }
            block.view_mut((1, 1), (3, 3)).copy_from(cov.matrix());
            let min_ev = block.symmetric_eigenvalues().min();
            let schur = t - weighted_norm_sq(&b, &cov).unwrap();
            // skip cases too close to the boundary to decide in floating point
            prop_assume!(schur.abs() > 1e-6);
            prop_assert_eq!(schur_psd(t, &b, &cov).unwrap(), min_ev >= -1e-9);
        }
    }
}
