//! Property tests for the algebraic invariants of the weighted kernels.

use fcascade_core::probe::Prng;
use fcascade_core::wlinalg::{
    matrix_exp_action, solve_sylvester, sylvester_residual, weighted_adjoint, GramForm, Matrix,
};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    /// <L x, y>_Qcod = <x, L* y>_Qdom for every operator and probe pair.
    #[test]
    fn adjoint_pairing_holds(seed in 0u64..1_000_000, nd in 1usize..7, nc in 1usize..7) {
        let mut rng = Prng::new(seed);
        let qdom = GramForm::new(rng.spd(nd, 0.9)).unwrap();
        let qcod = GramForm::new(rng.spd(nc, 0.9)).unwrap();
        let l = rng.matrix(nc, nd);
        let adj = weighted_adjoint(&l, &qdom, &qcod);
        let x = rng.vector(nd);
        let y = rng.vector(nc);
        let lhs = qcod.inner(&(&l * &x), &y);
        let rhs = qdom.inner(&x, &(&adj * &y));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())));
    }

    /// e^{tS} is an isometry of the output metric whenever S is skew-adjoint
    /// in that metric, including non-Euclidean Grams.
    #[test]
    fn skew_exponential_is_isometry(seed in 0u64..1_000_000, m in 1usize..5, t in 0.0f64..100.0) {
        let mut rng = Prng::new(seed);
        let qy = GramForm::new(rng.spd(m, 0.7)).unwrap();
        // S = Qy^{-1} K with K skew-symmetric is skew-adjoint w.r.t. Qy
        let s = qy.solve_matrix(&rng.skew(m));
        let y = rng.vector(m);
        let z = matrix_exp_action(&s, t, &y).unwrap();
        prop_assert!((qy.norm(&z) - qy.norm(&y)).abs() <= 1e-10 * (1.0 + qy.norm(&y)));
    }

    /// The vectorized Sylvester solve meets its residual contract on the
    /// Hurwitz/skew family it is specified for.
    #[test]
    fn sylvester_residual_contract(seed in 0u64..1_000_000, n in 1usize..20, m in 1usize..5) {
        let mut rng = Prng::new(seed);
        let a = rng.hurwitz(n, 0.5);
        let s = rng.skew(m);
        let c = rng.matrix(m, n);
        let m0 = solve_sylvester(&a, &s, &c).unwrap();
        prop_assert!(sylvester_residual(&m0, &a, &s, &c) <= 1e-10 * c.norm());
    }

    /// Gram factors: Q^{1/2} Q^{1/2} = Q and norms agree with the quadratic
    /// form, for arbitrary SPD weights.
    #[test]
    fn gram_factor_consistency(seed in 0u64..1_000_000, n in 1usize..8) {
        let mut rng = Prng::new(seed);
        let q = GramForm::new(rng.spd(n, 0.8)).unwrap();
        let x = rng.vector(n);
        let direct = x.dot(&(q.matrix() * &x)).max(0.0).sqrt();
        prop_assert!((q.norm(&x) - direct).abs() <= 1e-10 * (1.0 + direct));
        let half = q.sqrt_matrix() * &x;
        prop_assert!((half.norm() - direct).abs() <= 1e-9 * (1.0 + direct));
        let sq = q.sqrt_matrix() * q.sqrt_matrix();
        prop_assert!((&sq - q.matrix()).norm() <= 1e-11 * (1.0 + q.matrix().norm()));
    }

    /// Matrix of the Kronecker solve equals the diagonal closed form when
    /// both operators are diagonal.
    #[test]
    fn sylvester_diagonal_closed_form(a1 in -5.0f64..-0.1, a2 in -5.0f64..-0.1,
                                      c1 in -3.0f64..3.0, c2 in -3.0f64..3.0) {
        let a = Matrix::from_diagonal(&fcascade_core::Vector::from_vec(vec![a1, a2]));
        let s = Matrix::zeros(1, 1);
        let c = Matrix::from_row_slice(1, 2, &[c1, c2]);
        let m0 = solve_sylvester(&a, &s, &c).unwrap();
        prop_assert!((m0[(0, 0)] - c1 / a1).abs() <= 1e-12 * (1.0 + (c1 / a1).abs()));
        prop_assert!((m0[(0, 1)] - c2 / a2).abs() <= 1e-12 * (1.0 + (c2 / a2).abs()));
    }
}
