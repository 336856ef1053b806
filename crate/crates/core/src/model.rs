//! Finite-dimensional cascade realizations.
//!
//! A cascade couples a semilinear, internally stable subsystem
//! `x' = A x + f(x) + g(x) u` to a neutrally stable linear one
//! `z' = S z + C x + h(x)`. The realization stores the operators as dense
//! matrices, the nonlinearities as closures with analytic Jacobians, and the
//! Gram forms that give the state, output, and input spaces their inner
//! products. `validate` checks every structural hypothesis that is checkable
//! numerically.

use crate::probe::Prng;
use crate::wlinalg::{GramForm, Matrix, Vector};
use thiserror::Error;

/// Tolerance on df(0) and dh(0) vanishing.
pub const JACOBIAN_ORIGIN_TOL: f64 = 1e-10;
/// Relative tolerance on skew-adjointness of S.
pub const SKEW_REL_TOL: f64 = 1e-12;
/// Slack on the dissipativity Rayleigh quotient of A.
pub const DISSIPATIVITY_TOL: f64 = 1e-10;
/// Relative tolerance for Jacobians against central finite differences.
pub const JACOBIAN_FD_REL_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operation requires S = 0, but S is nonzero")]
    NonzeroS,
}

pub type StateMap = Box<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type StateJacobian = Box<dyn Fn(&Vector) -> Matrix + Send + Sync>;

/// State of the semilinear subsystem; its norm is the one induced by the
/// model's `qx` Gram form.
#[derive(Debug, Clone, PartialEq)]
pub struct StateX(pub Vector);

/// State of the driven output subsystem, normed by `qy`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputY(pub Vector);

impl StateX {
    pub fn zero(n: usize) -> Self {
        Self(Vector::zeros(n))
    }

    pub fn norm(&self, qx: &GramForm) -> f64 {
        qx.norm(&self.0)
    }
}

impl OutputY {
    pub fn zero(m: usize) -> Self {
        Self(Vector::zeros(m))
    }

    pub fn norm(&self, qy: &GramForm) -> f64 {
        qy.norm(&self.0)
    }
}

impl From<Vector> for StateX {
    fn from(v: Vector) -> Self {
        Self(v)
    }
}

impl From<Vector> for OutputY {
    fn from(v: Vector) -> Self {
        Self(v)
    }
}

/// Finite-dimensional realization of the cascade.
///
/// Contract on the closures: pure functions of their argument (no hidden
/// state), `f(0) = 0`, `h(0) = 0`, and `df`/`dh` are the analytic Jacobians
/// of `f`/`h`. `validate` cross-checks all of this.
pub struct CascadeRealization {
    pub a: Matrix,
    pub f: StateMap,
    pub df: StateJacobian,
    /// State-dependent input operator x -> g(x), an n-by-r matrix.
    pub g: StateJacobian,
    pub c: Matrix,
    pub h: StateMap,
    pub dh: StateJacobian,
    pub s: Matrix,
    pub qx: GramForm,
    pub qy: GramForm,
    pub qu: GramForm,
}

impl CascadeRealization {
    /// State dimension n.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Output dimension m.
    pub fn m(&self) -> usize {
        self.s.nrows()
    }

    /// Input dimension r.
    pub fn r(&self) -> usize {
        self.qu.dim()
    }

    /// Purely linear cascade: f = h = 0, constant input operator.
    pub fn linear(a: Matrix, b: Matrix, c: Matrix, s: Matrix) -> Self {
        let n = a.nrows();
        let m = s.nrows();
        let r = b.ncols();
        assert_eq!(b.nrows(), n);
        assert_eq!((c.nrows(), c.ncols()), (m, n));
        Self {
            a,
            f: Box::new(move |_| Vector::zeros(n)),
            df: Box::new(move |_| Matrix::zeros(n, n)),
            g: Box::new(move |_| b.clone()),
            c,
            h: Box::new(move |_| Vector::zeros(m)),
            dh: Box::new(move |_| Matrix::zeros(m, n)),
            s,
            qx: GramForm::identity(n),
            qy: GramForm::identity(m),
            qu: GramForm::identity(r),
        }
    }

    pub fn is_s_zero(&self) -> bool {
        self.s.iter().all(|v| *v == 0.0)
    }

    /// Cascade right-hand side: dx = A x + f(x) + g(x) u, dz = S z + C x + h(x).
    pub fn rhs(&self, x: &StateX, z: &OutputY, u: &Vector) -> Result<(Vector, Vector), ModelError> {
        self.check_dims(x, z, u)?;
        let dx = &self.a * &x.0 + (self.f)(&x.0) + (self.g)(&x.0) * u;
        let dz = &self.s * &z.0 + &self.c * &x.0 + (self.h)(&x.0);
        Ok((dx, dz))
    }

    /// Integral-action right-hand side: dz = C x + h(x) - y_ref. Requires S = 0.
    pub fn rhs_regulated(
        &self,
        x: &StateX,
        z: &OutputY,
        u: &Vector,
        y_ref: &OutputY,
    ) -> Result<(Vector, Vector), ModelError> {
        if !self.is_s_zero() {
            return Err(ModelError::NonzeroS);
        }
        self.check_dims(x, z, u)?;
        if y_ref.0.len() != self.m() {
            return Err(ModelError::DimensionMismatch { expected: self.m(), got: y_ref.0.len() });
        }
        let dx = &self.a * &x.0 + (self.f)(&x.0) + (self.g)(&x.0) * u;
        let dz = &self.c * &x.0 + (self.h)(&x.0) - &y_ref.0;
        Ok((dx, dz))
    }

    fn check_dims(&self, x: &StateX, z: &OutputY, u: &Vector) -> Result<(), ModelError> {
        if x.0.len() != self.n() {
            return Err(ModelError::DimensionMismatch { expected: self.n(), got: x.0.len() });
        }
        if z.0.len() != self.m() {
            return Err(ModelError::DimensionMismatch { expected: self.m(), got: z.0.len() });
        }
        if u.len() != self.r() {
            return Err(ModelError::DimensionMismatch { expected: self.r(), got: u.len() });
        }
        Ok(())
    }
}

/// Outcome of one structural check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of `validate`: one entry per hypothesis, never an error.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {:<26} {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Check every structural hypothesis of the cascade that is numerically
/// decidable: vanishing of f, h and their Jacobians at the origin,
/// skew-adjointness of S in the output metric, dissipativity and exponential
/// stability of A in the state metric, and consistency of the analytic
/// Jacobians with central finite differences at seeded random points.
pub fn validate(model: &CascadeRealization, seed: u64) -> ValidationReport {
    let mut rng = Prng::new(seed);
    let n = model.n();
    let mut checks = Vec::new();

    let f0 = (model.f)(&Vector::zeros(n)).norm();
    checks.push(CheckResult {
        name: "f(0) = 0",
        passed: f0 == 0.0,
        detail: format!("|f(0)| = {f0:.3e}"),
    });
    let h0 = (model.h)(&Vector::zeros(n)).norm();
    checks.push(CheckResult {
        name: "h(0) = 0",
        passed: h0 == 0.0,
        detail: format!("|h(0)| = {h0:.3e}"),
    });

    let df0 = (model.df)(&Vector::zeros(n)).norm();
    checks.push(CheckResult {
        name: "df(0) = 0",
        passed: df0 <= JACOBIAN_ORIGIN_TOL,
        detail: format!("|df(0)| = {df0:.3e}"),
    });
    let dh0 = (model.dh)(&Vector::zeros(n)).norm();
    checks.push(CheckResult {
        name: "dh(0) = 0",
        passed: dh0 <= JACOBIAN_ORIGIN_TOL,
        detail: format!("|dh(0)| = {dh0:.3e}"),
    });

    // S skew-adjoint in the qy metric: Qy S + S^T Qy = 0.
    let qys = model.qy.matrix() * &model.s;
    let skew_defect = (&qys + qys.transpose()).norm();
    checks.push(CheckResult {
        name: "S skew-adjoint (qy)",
        passed: skew_defect <= SKEW_REL_TOL * qys.norm(),
        detail: format!("|Qy S + S^T Qy| = {skew_defect:.3e}"),
    });

    // Dissipativity of A in the qx metric: the symmetric part of
    // Qx^{1/2} A Qx^{-1/2} must be negative semidefinite.
    let sim = model.qx.sqrt_matrix() * &model.a * model.qx.inv_sqrt_matrix();
    let sym = 0.5 * (&sim + sim.transpose());
    let max_rayleigh = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(CheckResult {
        name: "A dissipative (qx)",
        passed: max_rayleigh <= DISSIPATIVITY_TOL,
        detail: format!("max Rayleigh quotient = {max_rayleigh:.3e}"),
    });

    // Exponential stability of the linear semigroup.
    let max_re = model
        .a
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(CheckResult {
        name: "A Hurwitz",
        passed: max_re < 0.0,
        detail: format!("max Re eig(A) = {max_re:.3e}"),
    });

    // Analytic Jacobians against central finite differences.
    let fd_check = |map: &StateMap, jac: &StateJacobian, rng: &mut Prng| -> (bool, f64) {
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let x = rng.vector(n) / (n as f64).sqrt();
            let step = 1e-5 * (1.0 + x.norm());
            let analytic = jac(&x);
            let mut fd = Matrix::zeros(analytic.nrows(), n);
            for j in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += step;
                xm[j] -= step;
                let col = (map(&xp) - map(&xm)) / (2.0 * step);
                fd.set_column(j, &col);
            }
            let rel = (&fd - &analytic).norm() / (1.0 + analytic.norm());
            worst = worst.max(rel);
        }
        (worst <= JACOBIAN_FD_REL_TOL, worst)
    };
    let (ok, worst) = fd_check(&model.f, &model.df, &mut rng);
    checks.push(CheckResult {
        name: "df matches finite diff",
        passed: ok,
        detail: format!("worst relative error = {worst:.3e}"),
    });
    let (ok, worst) = fd_check(&model.h, &model.dh, &mut rng);
    checks.push(CheckResult {
        name: "dh matches finite diff",
        passed: ok,
        detail: format!("worst relative error = {worst:.3e}"),
    });

    ValidationReport { checks }
}

/// The one-dimensional benchmark cascade `x' = -x - x^3 + u`, `z' = x`, with
/// Euclidean metrics. Its invariant-graph map has the closed form
/// `M(x) = -atan(x)`, which makes it the reference oracle for the quadrature
/// engine.
pub fn scalar_cubic() -> CascadeRealization {
    CascadeRealization {
        a: Matrix::from_element(1, 1, -1.0),
        f: Box::new(|x| Vector::from_element(1, -x[0].powi(3))),
        df: Box::new(|x| Matrix::from_element(1, 1, -3.0 * x[0] * x[0])),
        g: Box::new(|_| Matrix::from_element(1, 1, 1.0)),
        c: Matrix::from_element(1, 1, 1.0),
        h: Box::new(|_| Vector::zeros(1)),
        dh: Box::new(|_| Matrix::zeros(1, 1)),
        s: Matrix::zeros(1, 1),
        qx: GramForm::identity(1),
        qy: GramForm::identity(1),
        qu: GramForm::identity(1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rotation_cascade() -> CascadeRealization {
        // Hurwitz A, skew S: a linear cascade that passes every check.
        let a = -Matrix::identity(2, 2);
        let b = Matrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let c = Matrix::identity(2, 2);
        let s = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        CascadeRealization::linear(a, b, c, s)
    }

    #[test]
    fn validate_passes_linear_cascade() {
        let report = validate(&rotation_cascade(), 42);
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn validate_passes_scalar_cubic() {
        let report = validate(&scalar_cubic(), 42);
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn validate_flags_symmetric_s() {
        let mut model = rotation_cascade();
        model.s = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let report = validate(&model, 42);
        assert!(!report.all_passed());
        assert!(report.failed().iter().any(|c| c.name.contains("skew")));
    }

    #[test]
    fn validate_flags_wrong_jacobian() {
        let mut model = scalar_cubic();
        model.df = Box::new(|x| Matrix::from_element(1, 1, -2.0 * x[0] * x[0]));
        let report = validate(&model, 42);
        assert!(report.failed().iter().any(|c| c.name == "df matches finite diff"));
    }

    #[test]
    fn rhs_equilibrium_is_exact_zero() {
        for model in [scalar_cubic(), rotation_cascade()] {
            let (dx, dz) = model
                .rhs(&StateX::zero(model.n()), &OutputY::zero(model.m()), &Vector::zeros(model.r()))
                .unwrap();
            assert_eq!(dx.norm(), 0.0);
            assert_eq!(dz.norm(), 0.0);
        }
    }

    #[test]
    fn rhs_scalar_example() {
        let model = scalar_cubic();
        let (dx, dz) = model
            .rhs(
                &StateX(Vector::from_element(1, 2.0)),
                &OutputY(Vector::zeros(1)),
                &Vector::zeros(1),
            )
            .unwrap();
        assert_relative_eq!(dx[0], -10.0, max_relative = 1e-14);
        assert_relative_eq!(dz[0], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn rhs_linear_superposition() {
        let model = rotation_cascade();
        let mut rng = crate::probe::Prng::new(9);
        for _ in 0..20 {
            let (x1, x2) = (rng.vector(2), rng.vector(2));
            let (z1, z2) = (rng.vector(2), rng.vector(2));
            let (u1, u2) = (rng.vector(2), rng.vector(2));
            let (a1, a2) = (rng.normal(), rng.normal());
            let (dx1, dz1) = model.rhs(&StateX(x1.clone()), &OutputY(z1.clone()), &u1).unwrap();
            let (dx2, dz2) = model.rhs(&StateX(x2.clone()), &OutputY(z2.clone()), &u2).unwrap();
            let (dxc, dzc) = model
                .rhs(
                    &StateX(&x1 * a1 + &x2 * a2),
                    &OutputY(&z1 * a1 + &z2 * a2),
                    &(&u1 * a1 + &u2 * a2),
                )
                .unwrap();
            let scale = 1.0 + dxc.norm() + dzc.norm();
            assert!((&dxc - (&dx1 * a1 + &dx2 * a2)).norm() <= 1e-12 * scale);
            assert!((&dzc - (&dz1 * a1 + &dz2 * a2)).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn rhs_dimension_guard() {
        let model = scalar_cubic();
        let err = model
            .rhs(&StateX(Vector::zeros(2)), &OutputY::zero(1), &Vector::zeros(1))
            .unwrap_err();
        match err {
            ModelError::DimensionMismatch { expected: 1, got: 2 } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn regulated_rhs_reduces_and_guards() {
        let model = scalar_cubic();
        let x = StateX(Vector::from_element(1, 1.0));
        let z = OutputY(Vector::from_element(1, 0.3));
        let u = Vector::zeros(1);

        let (_, dz_plain) = model.rhs(&x, &z, &u).unwrap();
        let (_, dz_reg) = model.rhs_regulated(&x, &z, &u, &OutputY::zero(1)).unwrap();
        assert_eq!(dz_plain, dz_reg);

        let (_, dz) = model
            .rhs_regulated(&x, &z, &u, &OutputY(Vector::from_element(1, 1.0)))
            .unwrap();
        assert_eq!(dz[0], 0.0);

        let rot = rotation_cascade();
        match rot.rhs_regulated(&StateX::zero(2), &OutputY::zero(2), &Vector::zeros(2), &OutputY::zero(2)) {
            Err(ModelError::NonzeroS) => {}
            other => panic!("expected NonzeroS, got {other:?}"),
        }
    }

    #[test]
    fn dissipativity_probes() {
        let model = scalar_cubic();
        let mut rng = crate::probe::Prng::new(4);
        for _ in 0..100 {
            let x = rng.vector(1) * 3.0;
            let ax = &model.a * &x;
            let pairing = model.qx.inner(&x, &ax);
            assert!(pairing <= 1e-10 * model.qx.inner(&x, &x));
        }
    }
}
