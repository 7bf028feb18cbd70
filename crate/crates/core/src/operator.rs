//! Dense linear-operator utilities for overdetermined systems.
//!
//! Everything here is desk-scale and SVD-backed: pseudoinverse application,
//! spectral norms, condition numbers, and the injectivity bound for a perturbed
//! operator. The pseudoinverse contract is the least-squares one,
//! `A^+ y = argmin ||A x - y||` with `A^T (A x - y) = 0`, but it is applied
//! through the SVD rather than by forming the normal equations.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative rank tolerance: singular values at or below
/// `factor * sigma_max` are treated as zero.
pub const DEFAULT_RANK_TOL_FACTOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("operator is rank deficient (sigma_min = {sigma_min:e}, tolerance = {tol:e})")]
    RankDeficient { sigma_min: f64, tol: f64 },
    #[error("matrix is singular (sigma_min = {sigma_min:e}, tolerance = {tol:e})")]
    Singular { sigma_min: f64, tol: f64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("operator must have rows >= cols, got {rows}x{cols}")]
    Underdetermined { rows: usize, cols: usize },
    #[error("operator entries must be finite")]
    NonFinite,
}

/// A real `m x n` matrix with `m >= n`, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    entries: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(entries: DMatrix<f64>) -> Result<Self, OperatorError> {
        if entries.nrows() < entries.ncols() {
            return Err(OperatorError::Underdetermined {
                rows: entries.nrows(),
                cols: entries.ncols(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(OperatorError::NonFinite);
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Self, OperatorError> {
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn identity(n: usize) -> Self {
        Self { entries: DMatrix::identity(n, n) }
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// Gram matrix `A^T A` (`n x n`, positive semidefinite).
    pub fn gram(&self) -> DMatrix<f64> {
        self.entries.transpose() * &self.entries
    }

    /// `A^T y`.
    pub fn tr_apply(&self, y: &DVector<f64>) -> DVector<f64> {
        self.entries.transpose() * y
    }

    /// Singular value decomposition with values sorted nonincreasing.
    pub fn spectral(&self) -> SpectralData {
        SpectralData::new(self)
    }
}

/// SVD factors of a [`DenseOperator`], enough to apply the pseudoinverse and
/// read off spectral quantities. Singular values are sorted nonincreasing.
#[derive(Debug, Clone)]
pub struct SpectralData {
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl SpectralData {
    pub fn new(op: &DenseOperator) -> Self {
        let svd = op.entries.clone().svd(true, true);
        let u = svd.u.expect("svd requested u");
        let v_t = svd.v_t.expect("svd requested v_t");
        let singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
        debug_assert!(singular_values.windows(2).all(|w| w[0] >= w[1]));
        Self { u, v_t, singular_values }
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn sigma_min(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(0.0)
    }

    /// Rank threshold `factor * sigma_max`.
    pub fn rank_tol(&self, factor: f64) -> f64 {
        factor * self.sigma_max()
    }

    /// Injective iff the smallest singular value clears the rank tolerance.
    pub fn is_injective(&self) -> bool {
        self.is_injective_with(DEFAULT_RANK_TOL_FACTOR)
    }

    pub fn is_injective_with(&self, tol_factor: f64) -> bool {
        let tol = self.rank_tol(tol_factor);
        self.sigma_min() > tol && self.sigma_min() > 0.0
    }

    /// Applies the pseudoinverse: `x = V diag(1/sigma) U^T y`.
    pub fn pinv_apply(&self, y: &DVector<f64>) -> Result<DVector<f64>, OperatorError> {
        self.require_injective()?;
        let mut coeffs = self.u.transpose() * y;
        for (c, sigma) in coeffs.iter_mut().zip(&self.singular_values) {
            *c /= sigma;
        }
        Ok(self.v_t.transpose() * coeffs)
    }

    /// `||A^+|| = 1 / sigma_min` in the spectral norm.
    pub fn pinv_norm(&self) -> Result<f64, OperatorError> {
        self.require_injective()?;
        Ok(1.0 / self.sigma_min())
    }

    fn require_injective(&self) -> Result<(), OperatorError> {
        if self.is_injective() {
            Ok(())
        } else {
            Err(OperatorError::RankDeficient {
                sigma_min: self.sigma_min(),
                tol: self.rank_tol(DEFAULT_RANK_TOL_FACTOR),
            })
        }
    }
}

/// Least-squares solution `x = A^+ y` for injective `A`.
pub fn pinv_apply(a: &DenseOperator, y: &DVector<f64>) -> Result<DVector<f64>, OperatorError> {
    if y.len() != a.rows() {
        return Err(OperatorError::ShapeMismatch {
            expected: format!("vector of length {}", a.rows()),
            got: format!("length {}", y.len()),
        });
    }
    a.spectral().pinv_apply(y)
}

/// Spectral norm of the pseudoinverse, `1 / sigma_min(A)`.
pub fn pinv_norm(a: &DenseOperator) -> Result<f64, OperatorError> {
    a.spectral().pinv_norm()
}

/// Spectral norm `sigma_max(A)` (also accepts plain matrices).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let svd = m.clone().svd(false, false);
    svd.singular_values.iter().copied().fold(0.0, f64::max)
}

/// Condition number `sigma_max / sigma_min` of a square invertible matrix.
pub fn cond_number(m: &DenseOperator) -> Result<f64, OperatorError> {
    if m.rows() != m.cols() {
        return Err(OperatorError::ShapeMismatch {
            expected: "square matrix".into(),
            got: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    let spec = m.spectral();
    let tol = spec.rank_tol(DEFAULT_RANK_TOL_FACTOR);
    if spec.sigma_min() <= tol || spec.sigma_min() == 0.0 {
        return Err(OperatorError::Singular { sigma_min: spec.sigma_min(), tol });
    }
    Ok(spec.sigma_max() / spec.sigma_min())
}

/// Condition number of a square matrix given as a plain `DMatrix`.
pub fn cond_number_mat(m: &DMatrix<f64>) -> Result<f64, OperatorError> {
    cond_number(&DenseOperator::new(m.clone())?)
}

/// Outcome of the perturbed-pseudoinverse bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbationBound {
    /// The perturbed operator is certified injective with
    /// `||B^+|| <= bound = ||A^+|| / (1 - ||A^+|| ||A - B||)`.
    Injective { bound: f64 },
    /// `||A^+|| ||A - B|| >= 1`: the hypothesis fails and no claim is made.
    Infeasible,
}

/// Certifies injectivity of `B` from an injective `A` with
/// `||A^+|| ||A - B|| < 1`, returning the pseudoinverse bound.
pub fn perturbed_pinv_bound(
    a: &DenseOperator,
    b: &DenseOperator,
) -> Result<PerturbationBound, OperatorError> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(OperatorError::ShapeMismatch {
            expected: format!("{}x{}", a.rows(), a.cols()),
            got: format!("{}x{}", b.rows(), b.cols()),
        });
    }
    let a_pinv_norm = pinv_norm(a)?;
    let diff_norm = spectral_norm(&(a.matrix() - b.matrix()));
    let product = a_pinv_norm * diff_norm;
    if product < 1.0 {
        Ok(PerturbationBound::Injective { bound: a_pinv_norm / (1.0 - product) })
    } else {
        Ok(PerturbationBound::Infeasible)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn op(rows: usize, cols: usize, data: &[f64]) -> DenseOperator {
        DenseOperator::from_rows(rows, cols, data).unwrap()
    }

    #[test]
    fn rejects_underdetermined_and_nonfinite() {
        assert!(DenseOperator::from_rows(1, 2, &[1.0, 2.0]).is_err());
        assert!(DenseOperator::from_rows(2, 1, &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn pinv_apply_column_operator() {
        let a = op(2, 1, &[1.0, 0.0]);
        let x = pinv_apply(&a, &DVector::from_vec(vec![3.0, 7.0])).unwrap();
        assert_relative_eq!(x[0], 3.0, max_relative = 1e-14);
    }

    #[test]
    fn pinv_apply_identity() {
        let a = DenseOperator::identity(4);
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5, 4.0]);
        let x = pinv_apply(&a, &y).unwrap();
        assert_relative_eq!((x - y).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn pinv_apply_matches_normal_equations_solve() {
        // 3x2 with rows (1,0),(0,1),(1,1); normal equations give (1/3, 1/3)
        // for y = (1,1,0).
        let a = op(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        let x = pinv_apply(&a, &y).unwrap();
        assert_relative_eq!(x[0], 1.0 / 3.0, max_relative = 1e-13);
        assert_relative_eq!(x[1], 1.0 / 3.0, max_relative = 1e-13);
        // residual orthogonality: A^T (A x - y) = 0
        let resid = a.matrix() * &x - &y;
        assert!(a.tr_apply(&resid).norm() <= 1e-10 * spectral_norm(a.matrix()) * y.norm());
    }

    #[test]
    fn pinv_norm_examples() {
        assert_relative_eq!(pinv_norm(&DenseOperator::identity(3)).unwrap(), 1.0);
        let col = op(2, 1, &[3.0, 4.0]);
        assert_relative_eq!(pinv_norm(&col).unwrap(), 0.2, max_relative = 1e-14);
        let diag = op(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        assert_relative_eq!(pinv_norm(&diag).unwrap(), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn pinv_norm_rank_deficient() {
        let a = op(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(pinv_norm(&a), Err(OperatorError::RankDeficient { .. })));
    }

    #[test]
    fn cond_number_examples() {
        assert_relative_eq!(cond_number(&DenseOperator::identity(5)).unwrap(), 1.0);
        let d = op(2, 2, &[10.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(cond_number(&d).unwrap(), 10.0, max_relative = 1e-14);
        let d3 = op(3, 3, &[4.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(cond_number(&d3).unwrap(), 4.0, max_relative = 1e-14);
        // scalar multiples of the identity stay perfectly conditioned
        for c in [3.0, -0.25, 1e6] {
            let m = DenseOperator::new(DMatrix::identity(3, 3) * c).unwrap();
            assert_relative_eq!(cond_number(&m).unwrap(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn cond_number_singular() {
        let m = op(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(cond_number(&m), Err(OperatorError::Singular { .. })));
    }

    #[test]
    fn perturbation_bound_examples() {
        let a = DenseOperator::identity(2);
        // zero perturbation: bound is ||A^+||
        match perturbed_pinv_bound(&a, &a).unwrap() {
            PerturbationBound::Injective { bound } => assert_relative_eq!(bound, 1.0),
            other => panic!("unexpected {other:?}"),
        }
        // B = diag(1, 0.5): product 0.5 < 1, bound 2, and ||B^+|| = 2 <= 2
        let b = op(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        match perturbed_pinv_bound(&a, &b).unwrap() {
            PerturbationBound::Injective { bound } => {
                assert_relative_eq!(bound, 2.0, max_relative = 1e-14);
                assert!(pinv_norm(&b).unwrap() <= bound + 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        // ||E|| = 1.5 violates the hypothesis
        let b2 = op(2, 2, &[1.0 + 1.5, 0.0, 0.0, 1.0]);
        assert_eq!(perturbed_pinv_bound(&a, &b2).unwrap(), PerturbationBound::Infeasible);
    }

    #[test]
    fn randomized_perturbation_suite_small() {
        // smaller cousin of the acceptance-suite run
        let mut rng = crate::util::stream_rng(2024, 1);
        let mut checked = 0;
        while checked < 200 {
            let n = rng.random_range(1..=5usize);
            let m = rng.random_range(n..=8usize);
            let a_mat = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let a = match DenseOperator::new(a_mat.clone()) {
                Ok(a) => a,
                Err(_) => continue,
            };
            let a_spec = a.spectral();
            if !a_spec.is_injective() {
                continue;
            }
            let scale = 0.9 * rng.random_range(0.0..1.0) / a_spec.pinv_norm().unwrap();
            let mut e = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let e_norm = spectral_norm(&e);
            if e_norm == 0.0 {
                continue;
            }
            e *= scale / e_norm;
            let b = DenseOperator::new(&a_mat + e).unwrap();
            match perturbed_pinv_bound(&a, &b).unwrap() {
                PerturbationBound::Injective { bound } => {
                    let b_spec = b.spectral();
                    assert!(b_spec.is_injective(), "certified injective but sigma_min = 0");
                    assert!(
                        b_spec.pinv_norm().unwrap() <= bound * (1.0 + 1e-12) + 1e-12,
                        "bound {} < actual {}",
                        bound,
                        b_spec.pinv_norm().unwrap()
                    );
                }
                PerturbationBound::Infeasible => panic!("scaled to stay feasible"),
            }
            checked += 1;
        }
    }

    #[test]
    fn pinv_properties_random() {
        let mut rng = crate::util::stream_rng(99, 2);
        for _ in 0..100 {
            let n = rng.random_range(1..=5usize);
            let m = rng.random_range(n..=8usize);
            let a_mat = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
            let a = DenseOperator::new(a_mat).unwrap();
            let spec = a.spectral();
            if !spec.is_injective() {
                continue;
            }
            // normal equations hold at the least-squares solution
            let y = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
            let x = spec.pinv_apply(&y).unwrap();
            let resid = a.matrix() * &x - &y;
            let scale = spec.sigma_max() * y.norm();
            assert!(a.tr_apply(&resid).norm() <= 1e-10 * scale.max(1e-30));
            // pinv_norm * sigma_min = 1
            let prod = spec.pinv_norm().unwrap() * spec.sigma_min();
            assert!((prod - 1.0).abs() <= 1e-12);
        }
    }
}
