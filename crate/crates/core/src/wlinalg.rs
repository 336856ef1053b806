//! Dense weighted linear algebra.
//!
//! Everything in this crate treats coordinate space as a Hilbert space whose
//! inner product is induced by a symmetric positive definite Gram matrix.
//! Adjoints then differ from plain transposes, which is what makes feedback
//! laws and coercivity estimates come out right on non-Euclidean
//! discretizations. This module supplies the shared kernels: linear and
//! Sylvester solves, Gram-weighted adjoints, matrix exponentials, and
//! surjectivity margins.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Pivot magnitudes below `PIVOT_REL_TOL * ||A||_inf` are treated as singular.
pub const PIVOT_REL_TOL: f64 = 1e-12;
/// A map is surjective when its smallest weighted singular value exceeds
/// `SURJECTIVITY_REL_TOL` times the largest. Separates discretization noise
/// from genuine rank deficiency.
pub const SURJECTIVITY_REL_TOL: f64 = 1e-8;
/// Hard cap on unknowns in the vectorized Sylvester solve.
pub const SYLVESTER_MAX_UNKNOWNS: usize = 10_000;
/// Hard cap on the dimension of dense matrix exponentials.
pub const EXP_MAX_DIM: usize = 50;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("singular matrix: pivot {pivot:.3e} below threshold {threshold:.3e}")]
    SingularMatrix { pivot: f64, threshold: f64 },
    #[error("Sylvester spectra overlap: vectorized system is singular")]
    SpectraOverlap,
    #[error("problem size {size} exceeds limit {limit}")]
    TooLarge { size: usize, limit: usize },
    #[error("Gram matrix is not positive definite (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { min_eig: f64 },
}

/// Symmetric positive definite inner-product weights, together with the
/// spectral factors (square root, inverse, inverse square root) that adjoints
/// and norm computations need. Factors are computed once and cached.
#[derive(Debug, Clone)]
pub struct GramForm {
    q: Matrix,
    sqrt: Matrix,
    inv: Matrix,
    inv_sqrt: Matrix,
    min_eig: f64,
    is_identity: bool,
}

impl GramForm {
    /// Build a Gram form from a (nearly) symmetric positive definite matrix.
    /// The input is symmetrized exactly; positive definiteness is checked via
    /// a symmetric eigendecomposition.
    pub fn new(q: Matrix) -> Result<Self, LinalgError> {
        assert!(q.is_square(), "Gram matrix must be square");
        let q = 0.5 * (&q + q.transpose());
        let eig = q.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min_eig > 0.0) {
            return Err(LinalgError::NotPositiveDefinite { min_eig });
        }
        let rebuild = |f: &dyn Fn(f64) -> f64| -> Matrix {
            let d = Matrix::from_diagonal(&eig.eigenvalues.map(f));
            let m = &eig.eigenvectors * d * eig.eigenvectors.transpose();
            0.5 * (&m + m.transpose())
        };
        let sqrt = rebuild(&f64::sqrt);
        let inv = rebuild(&|x| 1.0 / x);
        let inv_sqrt = rebuild(&|x| 1.0 / x.sqrt());
        let is_identity = q == Matrix::identity(q.nrows(), q.ncols());
        Ok(Self { q, sqrt, inv, inv_sqrt, min_eig, is_identity })
    }

    /// Euclidean inner product (Q = I); all factors are trivial.
    pub fn identity(n: usize) -> Self {
        let id = Matrix::identity(n, n);
        Self {
            q: id.clone(),
            sqrt: id.clone(),
            inv: id.clone(),
            inv_sqrt: id,
            min_eig: 1.0,
            is_identity: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.q
    }

    /// Q^{1/2}, symmetric.
    pub fn sqrt_matrix(&self) -> &Matrix {
        &self.sqrt
    }

    /// Q^{-1/2}, symmetric.
    pub fn inv_sqrt_matrix(&self) -> &Matrix {
        &self.inv_sqrt
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eig
    }

    pub fn is_identity(&self) -> bool {
        self.is_identity
    }

    /// Q x.
    pub fn apply(&self, x: &Vector) -> Vector {
        if self.is_identity {
            x.clone()
        } else {
            &self.q * x
        }
    }

    /// Q^{-1} b.
    pub fn solve(&self, b: &Vector) -> Vector {
        if self.is_identity {
            b.clone()
        } else {
            &self.inv * b
        }
    }

    /// Q^{-1} B, columnwise.
    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        if self.is_identity {
            b.clone()
        } else {
            &self.inv * b
        }
    }

    /// <x, y> in the weighted metric.
    pub fn inner(&self, x: &Vector, y: &Vector) -> f64 {
        if self.is_identity {
            x.dot(y)
        } else {
            x.dot(&(&self.q * y))
        }
    }

    /// ||x|| in the weighted metric.
    pub fn norm(&self, x: &Vector) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }
}

/// Solve A x = b by partial-pivot LU, rejecting systems whose pivots fall
/// below `PIVOT_REL_TOL * ||A||_inf`.
pub fn solve_linear(a: &Matrix, b: &Vector) -> Result<Vector, LinalgError> {
    Ok(solve_linear_multi(a, &Matrix::from_column_slice(b.len(), 1, b.as_slice()))?
        .column(0)
        .into_owned())
}

/// Solve A X = B for a matrix right-hand side.
pub fn solve_linear_multi(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    assert!(a.is_square(), "solve_linear: matrix must be square");
    assert_eq!(a.nrows(), b.nrows(), "solve_linear: rhs dimension mismatch");
    let norm_inf = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    if norm_inf == 0.0 {
        return Err(LinalgError::SingularMatrix { pivot: 0.0, threshold: 0.0 });
    }
    let threshold = PIVOT_REL_TOL * norm_inf;
    let lu = a.clone().lu();
    let min_pivot = lu
        .u()
        .diagonal()
        .iter()
        .map(|v| v.abs())
        .fold(f64::INFINITY, f64::min);
    if min_pivot < threshold {
        return Err(LinalgError::SingularMatrix { pivot: min_pivot, threshold });
    }
    lu.solve(b)
        .ok_or(LinalgError::SingularMatrix { pivot: min_pivot, threshold })
}

/// Solve the Sylvester equation  M A - S M = C  for M (sizes: A n-by-n,
/// S m-by-m, C m-by-n) by Kronecker vectorization.
///
/// The vectorized system is (A^T (x) I - I (x) S) vec(M) = vec(C); a unique
/// solution exists exactly when the spectra of A and S are disjoint, which
/// holds in particular for Hurwitz A and skew-adjoint S. Sizes are capped at
/// `SYLVESTER_MAX_UNKNOWNS` unknowns: at that scale the dense vectorized
/// solve is both simpler and more robust than a Schur-based method.
///
/// ```
/// use fcascade_core::wlinalg::{solve_sylvester, Matrix};
///
/// // S = 0 reduces the equation to M = C A^{-1}
/// let a = Matrix::from_row_slice(1, 1, &[-2.0]);
/// let s = Matrix::zeros(1, 1);
/// let c = Matrix::from_row_slice(1, 1, &[1.0]);
/// let m = solve_sylvester(&a, &s, &c).unwrap();
/// assert!((m[(0, 0)] + 0.5).abs() < 1e-12);
/// ```
pub fn solve_sylvester(a: &Matrix, s: &Matrix, c: &Matrix) -> Result<Matrix, LinalgError> {
    assert!(a.is_square() && s.is_square(), "solve_sylvester: A and S must be square");
    let (n, m) = (a.nrows(), s.nrows());
    assert_eq!((c.nrows(), c.ncols()), (m, n), "solve_sylvester: C must be m-by-n");
    let unknowns = n * m;
    if unknowns > SYLVESTER_MAX_UNKNOWNS {
        return Err(LinalgError::TooLarge { size: unknowns, limit: SYLVESTER_MAX_UNKNOWNS });
    }
    let id_m = Matrix::identity(m, m);
    let id_n = Matrix::identity(n, n);
    let k = a.transpose().kronecker(&id_m) - id_n.kronecker(s);
    let rhs = Vector::from_column_slice(c.as_slice());
    let x = solve_linear(&k, &rhs).map_err(|e| match e {
        LinalgError::SingularMatrix { .. } => LinalgError::SpectraOverlap,
        other => other,
    })?;
    Ok(Matrix::from_column_slice(m, n, x.as_slice()))
}

/// Residual ||M A - S M - C||_F of a candidate Sylvester solution.
pub fn sylvester_residual(m0: &Matrix, a: &Matrix, s: &Matrix, c: &Matrix) -> f64 {
    (m0 * a - s * m0 - c).norm()
}

/// Gram-weighted adjoint of L : (dom, Qdom) -> (cod, Qcod), i.e. the unique
/// L* with <L x, y>_Qcod = <x, L* y>_Qdom, given by Qdom^{-1} L^T Qcod.
pub fn weighted_adjoint(l: &Matrix, qdom: &GramForm, qcod: &GramForm) -> Matrix {
    assert_eq!(l.nrows(), qcod.dim(), "weighted_adjoint: codomain dimension mismatch");
    assert_eq!(l.ncols(), qdom.dim(), "weighted_adjoint: domain dimension mismatch");
    if qdom.is_identity() && qcod.is_identity() {
        return l.transpose();
    }
    qdom.solve_matrix(&(l.transpose() * qcod.matrix()))
}

/// Dense matrix exponential by scaling and squaring (Pade), for small
/// operators such as the neutrally stable output dynamics. Dimension capped
/// at `EXP_MAX_DIM`.
pub fn matrix_exp(s: &Matrix) -> Result<Matrix, LinalgError> {
    assert!(s.is_square(), "matrix_exp: matrix must be square");
    if s.nrows() > EXP_MAX_DIM {
        return Err(LinalgError::TooLarge { size: s.nrows(), limit: EXP_MAX_DIM });
    }
    Ok(s.exp())
}

/// e^{tS} y. When S is skew-adjoint in the relevant Gram metric this is an
/// isometry for every t.
pub fn matrix_exp_action(s: &Matrix, t: f64, y: &Vector) -> Result<Vector, LinalgError> {
    assert_eq!(s.nrows(), y.len(), "matrix_exp_action: dimension mismatch");
    Ok(matrix_exp(&(s * t))? * y)
}

/// Surjectivity margin of L : R^n -> (cod, Qcod).
///
/// Returns `(surjective, sigma_min)` where `sigma_min` is the smallest
/// singular value of Qcod^{1/2} L. Its square is a usable coercivity
/// constant: ||L* y||^2 >= sigma_min^2 ||y||_Qcod^2 for the adjoint taken
/// with a Euclidean domain. Degenerate maps are reported as non-surjective
/// rather than as errors.
pub fn surjectivity_margin(l: &Matrix, qcod: &GramForm) -> (bool, f64) {
    assert_eq!(l.nrows(), qcod.dim(), "surjectivity_margin: codomain dimension mismatch");
    let weighted = qcod.sqrt_matrix() * l;
    let svs = weighted.singular_values();
    let sigma_max = svs.iter().cloned().fold(0.0f64, f64::max);
    let sigma_min = if l.ncols() < l.nrows() {
        // rank < codomain dimension, cannot be onto
        0.0
    } else {
        svs.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let surjective = sigma_max > 0.0 && sigma_min > SURJECTIVITY_REL_TOL * sigma_max;
    (surjective, sigma_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::Prng;
    use approx::assert_relative_eq;

    #[test]
    fn solve_linear_identity_and_diagonal() {
        let i2 = Matrix::identity(2, 2);
        let b = Vector::from_vec(vec![3.0, -1.0]);
        let x = solve_linear(&i2, &b).unwrap();
        assert_eq!(x, b);

        let d = Matrix::from_diagonal(&Vector::from_vec(vec![-2.0, -3.0]));
        let b = Vector::from_vec(vec![1.0, 1.0]);
        let x = solve_linear(&d, &b).unwrap();
        assert_relative_eq!(x[0], -0.5, max_relative = 1e-14);
        assert_relative_eq!(x[1], -1.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn solve_linear_dense_2x2() {
        // A = [[2,1],[1,3]], det = 5, A^{-1} (1,0) = (3/5, -1/5)
        let a = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = Vector::from_vec(vec![1.0, 0.0]);
        let x = solve_linear(&a, &b).unwrap();
        assert_relative_eq!(x[0], 0.6, max_relative = 1e-14);
        assert_relative_eq!(x[1], -0.2, max_relative = 1e-14);
    }

    #[test]
    fn solve_linear_rejects_singular() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = Vector::from_vec(vec![1.0, 1.0]);
        match solve_linear(&a, &b) {
            Err(LinalgError::SingularMatrix { .. }) => {}
            other => panic!("expected SingularMatrix, got {other:?}"),
        }
    }

    #[test]
    fn solve_linear_residual_bound() {
        let mut rng = Prng::new(7);
        for _ in 0..50 {
            let n = 2 + (rng.uniform() * 20.0) as usize;
            let a = rng.hurwitz(n, 0.5);
            let b = rng.vector(n);
            let x = solve_linear(&a, &b).unwrap();
            let res = (&a * &x - &b).norm();
            assert!(res <= 1e-10 * (a.norm() * x.norm() + b.norm()));
        }
    }

    #[test]
    fn sylvester_scalar_and_diagonal() {
        let m0 = solve_sylvester(
            &Matrix::from_element(1, 1, -1.0),
            &Matrix::zeros(1, 1),
            &Matrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_relative_eq!(m0[(0, 0)], -1.0, max_relative = 1e-14);

        let a = Matrix::from_diagonal(&Vector::from_vec(vec![-2.0, -3.0]));
        let c = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let m0 = solve_sylvester(&a, &Matrix::zeros(1, 1), &c).unwrap();
        assert_relative_eq!(m0[(0, 0)], -0.5, max_relative = 1e-13);
        assert_relative_eq!(m0[(0, 1)], -1.0 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn sylvester_rotation_coupling() {
        // A = -I, S planar rotation generator, C = I  =>  M0 = -(I + S)^{-1}.
        let a = -Matrix::identity(2, 2);
        let s = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let c = Matrix::identity(2, 2);
        let m0 = solve_sylvester(&a, &s, &c).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[-0.5, 0.5, -0.5, -0.5]);
        assert!((&m0 - &expected).norm() < 1e-13, "m0 = {m0}");
        assert!(sylvester_residual(&m0, &a, &s, &c) <= 1e-10 * c.norm());
    }

    #[test]
    fn sylvester_rejects_overlapping_spectra() {
        // A and S both have eigenvalue 0.
        let a = Matrix::zeros(2, 2);
        let s = Matrix::zeros(1, 1);
        let c = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        match solve_sylvester(&a, &s, &c) {
            Err(LinalgError::SpectraOverlap) => {}
            other => panic!("expected SpectraOverlap, got {other:?}"),
        }
    }

    #[test]
    fn sylvester_rejects_oversized() {
        let a = -Matrix::identity(101, 101);
        let s = Matrix::zeros(101, 101);
        let c = Matrix::zeros(101, 101);
        match solve_sylvester(&a, &s, &c) {
            Err(LinalgError::TooLarge { .. }) => {}
            other => panic!("expected TooLarge, got {other:?}"),
        }
    }

    #[test]
    fn sylvester_random_residuals() {
        let mut rng = Prng::new(11);
        for _ in 0..100 {
            let n = 1 + (rng.uniform() * 30.0) as usize;
            let m = 1 + (rng.uniform() * 4.0) as usize;
            let a = rng.hurwitz(n, 0.5);
            let s = rng.skew(m);
            let c = rng.matrix(m, n);
            let m0 = solve_sylvester(&a, &s, &c).unwrap();
            assert!(sylvester_residual(&m0, &a, &s, &c) <= 1e-10 * c.norm());
        }
    }

    #[test]
    fn adjoint_examples() {
        let mut rng = Prng::new(3);
        let l = rng.matrix(2, 3);
        let qi3 = GramForm::identity(3);
        let qi2 = GramForm::identity(2);
        assert_eq!(weighted_adjoint(&l, &qi3, &qi2), l.transpose());

        // L = [[1, 0]], Qdom = diag(4,1), Qcod = 1  =>  L* = (1/4, 0)
        let l = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let qdom = GramForm::new(Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 1.0]))).unwrap();
        let qcod = GramForm::identity(1);
        let adj = weighted_adjoint(&l, &qdom, &qcod);
        assert_relative_eq!(adj[(0, 0)], 0.25, max_relative = 1e-14);
        assert_relative_eq!(adj[(1, 0)], 0.0);

        // Q-self-adjoint operators are fixed points of the adjoint.
        let q = GramForm::new(rng.spd(3, 0.8)).unwrap();
        let b = rng.matrix(3, 3);
        let sym = q.solve_matrix(&(0.5 * (q.matrix() * &b + b.transpose() * q.matrix())));
        let adj = weighted_adjoint(&sym, &q, &q);
        assert!((adj - &sym).norm() <= 1e-12 * (1.0 + sym.norm()));
    }

    #[test]
    fn adjoint_pairing_identity() {
        let mut rng = Prng::new(5);
        for _ in 0..100 {
            let (nd, nc) = (1 + (rng.uniform() * 6.0) as usize, 1 + (rng.uniform() * 6.0) as usize);
            let qdom = GramForm::new(rng.spd(nd, 0.9)).unwrap();
            let qcod = GramForm::new(rng.spd(nc, 0.9)).unwrap();
            let l = rng.matrix(nc, nd);
            let adj = weighted_adjoint(&l, &qdom, &qcod);
            let x = rng.vector(nd);
            let y = rng.vector(nc);
            let lhs = qcod.inner(&(&l * &x), &y);
            let rhs = qdom.inner(&x, &(&adj * &y));
            assert!(
                (lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())),
                "pairing violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn exp_action_examples() {
        let y = Vector::from_vec(vec![1.0, 0.0]);
        let z = matrix_exp_action(&Matrix::zeros(2, 2), 3.7, &y).unwrap();
        assert_eq!(z, y);

        // planar rotation: e^{tS} with S = [[0,1],[-1,0]] rotates by -t
        let s = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let z = matrix_exp_action(&s, std::f64::consts::FRAC_PI_2, &y).unwrap();
        assert_relative_eq!(z[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(z[1], -1.0, max_relative = 1e-12);
    }

    #[test]
    fn exp_action_matches_series() {
        // independent oracle: plain Taylor series summation
        let mut rng = Prng::new(13);
        let s = rng.skew(4);
        let t = 0.9;
        let y = rng.vector(4);
        let mut series = y.clone();
        let mut term = y.clone();
        for k in 1..60 {
            term = (&s * &term) * (t / k as f64);
            series += &term;
        }
        let direct = matrix_exp_action(&s, t, &y).unwrap();
        assert!((direct - series).norm() < 1e-12);
    }

    #[test]
    fn exp_action_skew_isometry() {
        let mut rng = Prng::new(17);
        for _ in 0..100 {
            let m = 1 + (rng.uniform() * 4.0) as usize;
            let s = rng.skew(m);
            let y = rng.vector(m);
            let t = rng.uniform() * 100.0;
            let z = matrix_exp_action(&s, t, &y).unwrap();
            assert_relative_eq!(z.norm(), y.norm(), max_relative = 1e-10);
        }
    }

    #[test]
    fn exp_rejects_oversized() {
        let s = Matrix::zeros(51, 51);
        match matrix_exp(&s) {
            Err(LinalgError::TooLarge { .. }) => {}
            other => panic!("expected TooLarge, got {other:?}"),
        }
    }

    #[test]
    fn surjectivity_examples() {
        let q1 = GramForm::identity(1);
        let (ok, smin) = surjectivity_margin(&Matrix::from_row_slice(1, 2, &[1.0, 0.0]), &q1);
        assert!(ok);
        assert_relative_eq!(smin, 1.0, max_relative = 1e-14);

        let (ok, smin) = surjectivity_margin(&Matrix::zeros(1, 2), &q1);
        assert!(!ok);
        assert_eq!(smin, 0.0);

        // tall maps cannot be onto
        let (ok, smin) = surjectivity_margin(&Matrix::from_column_slice(2, 1, &[1.0, 1.0]), &GramForm::identity(2));
        assert!(!ok);
        assert_eq!(smin, 0.0);
    }

    #[test]
    fn surjectivity_margin_lower_bounds_adjoint_gain() {
        // sigma_min^2 <= ||L* y||^2 / ||y||_Qcod^2 with Euclidean domain
        let mut rng = Prng::new(23);
        let qcod = GramForm::new(rng.spd(3, 0.7)).unwrap();
        let l = rng.matrix(3, 5);
        let (_, smin) = surjectivity_margin(&l, &qcod);
        let qdom = GramForm::identity(5);
        let adj = weighted_adjoint(&l, &qdom, &qcod);
        for _ in 0..100 {
            let y = rng.vector(3);
            let gain = (&adj * &y).norm_squared();
            let bound = smin * smin * qcod.inner(&y, &y);
            assert!(gain >= bound - 1e-10 * (1.0 + bound));
        }
    }

    #[test]
    fn gram_rejects_indefinite() {
        let q = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        match GramForm::new(q) {
            Err(LinalgError::NotPositiveDefinite { .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn gram_factors_consistent() {
        let mut rng = Prng::new(29);
        let q = GramForm::new(rng.spd(6, 0.8)).unwrap();
        let n = q.dim();
        let id = Matrix::identity(n, n);
        assert!((q.sqrt_matrix() * q.sqrt_matrix() - q.matrix()).norm() < 1e-12 * q.matrix().norm());
        assert!((q.matrix() * &q.inv * &id - &id).norm() < 1e-10);
        assert!((q.sqrt_matrix() * q.inv_sqrt_matrix() - &id).norm() < 1e-11);
    }
}
