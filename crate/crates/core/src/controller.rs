//! Forwarding feedback synthesis.
//!
//! The stabilizer acts through the defect from the invariant graph:
//!
//! ```text
//! u = g(x)* dM(x)* [ z - M(x) ]
//! ```
//!
//! with adjoints taken in the weighted metrics. The Gram factors of the
//! state space cancel in the composition, so the hot path evaluates
//! `u = Qu^{-1} (dM(x) g(x))^T Qy [z - M(x)]` and only needs the directional
//! derivative of M along the input directions, which the quadrature engine
//! produces from a single trajectory solve. The fully general adjoint
//! composition is kept as a reference path and the two are tested to agree.
//!
//! In integral-action mode the same law drives the output integrator
//! `z' = C x + h(x) - y_ref`; the reference enters only through the
//! z-dynamics.

use crate::graph::{GraphError, GraphMap};
use crate::model::{CascadeRealization, OutputY, StateX};
use crate::wlinalg::{surjectivity_margin, weighted_adjoint, Vector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("integral action requires S = 0")]
    NonzeroS,
    #[error("regulated feedback requires a reference in the controller config")]
    MissingReference,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Whether the feedback uses the full quadrature-evaluated graph map or its
/// linear part only. The linear mode is first-class: comparing the two
/// quantifies what the nonlinear compensation terms buy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    FullNonlinear,
    LinearM0,
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub mode: ControlMode,
    /// Sample-and-hold period: the feedback is recomputed this often and held
    /// constant in between (each full-mode evaluation costs a trajectory
    /// solve, so continuous evaluation is not affordable).
    pub sample_period: f64,
    /// Set-point for integral action; `None` for plain stabilization.
    pub y_ref: Option<OutputY>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { mode: ControlMode::FullNonlinear, sample_period: 0.05, y_ref: None }
    }
}

/// Full-nonlinear forwarding feedback `u = g(x)* dM(x)* [z - M(x)]`.
pub fn feedback(
    model: &CascadeRealization,
    graph: &GraphMap,
    x: &StateX,
    z: &OutputY,
) -> Result<Vector, ControllerError> {
    let cfg = ControllerConfig::default();
    Ok(feedback_detailed(model, graph, &cfg, x, z)?.0)
}

/// Feedback under an explicit mode selection.
pub fn feedback_with(
    model: &CascadeRealization,
    graph: &GraphMap,
    cfg: &ControllerConfig,
    x: &StateX,
    z: &OutputY,
) -> Result<Vector, ControllerError> {
    Ok(feedback_detailed(model, graph, cfg, x, z)?.0)
}

/// Feedback plus, in full-nonlinear mode, the evaluated M(x) so callers
/// (monitors) can reuse the trajectory solve.
pub fn feedback_detailed(
    model: &CascadeRealization,
    graph: &GraphMap,
    cfg: &ControllerConfig,
    x: &StateX,
    z: &OutputY,
) -> Result<(Vector, Option<Vector>), ControllerError> {
    let gx = (model.g)(&x.0);
    let (m_val, dmg, shared) = match cfg.mode {
        ControlMode::FullNonlinear => {
            let (m, dmg, _) = graph.eval_m_and_dm_dirs(x, &gx)?;
            (m.0.clone(), dmg, Some(m.0))
        }
        ControlMode::LinearM0 => (graph.m0() * &x.0, graph.m0() * &gx, None),
    };
    let defect = &z.0 - m_val;
    // Qu^{-1} (dM g)^T Qy d  ==  g* dM* d  (the state-space Gram cancels)
    let u = model.qu.solve(&(dmg.transpose() * model.qy.apply(&defect)));
    Ok((u, shared))
}

/// Reference implementation through explicit weighted adjoints,
/// `u = g(x)* (dM(x)* d)`, forming the full differential. Slower but used to
/// cross-check the cancelled hot path on weighted instances.
pub fn feedback_via_adjoints(
    model: &CascadeRealization,
    graph: &GraphMap,
    x: &StateX,
    z: &OutputY,
) -> Result<Vector, ControllerError> {
    let gx = (model.g)(&x.0);
    let (m_val, dm) = graph.eval_m_and_dm(x)?;
    let dm_star = weighted_adjoint(&dm, &model.qx, &model.qy);
    let g_star = weighted_adjoint(&gx, &model.qu, &model.qx);
    let defect = &z.0 - &m_val.0;
    Ok(g_star * (dm_star * defect))
}

/// Feedback for the integral-action loop. The formula is identical to
/// `feedback_with`; the preconditions (S = 0, a reference present) are what
/// change.
pub fn regulated_feedback(
    model: &CascadeRealization,
    graph: &GraphMap,
    cfg: &ControllerConfig,
    x: &StateX,
    z: &OutputY,
) -> Result<Vector, ControllerError> {
    if !model.is_s_zero() {
        return Err(ControllerError::NonzeroS);
    }
    if cfg.y_ref.is_none() {
        return Err(ControllerError::MissingReference);
    }
    feedback_with(model, graph, cfg, x, z)
}

/// Non-resonance verdict: surjectivity of M0 g(0) onto the output space.
#[derive(Debug, Clone, Copy)]
pub struct NonResonance {
    pub ok: bool,
    /// Smallest weighted singular value of M0 g(0).
    pub sigma_min: f64,
    /// Coercivity constant lambda = sigma_min^2 of the feedback gain at the
    /// origin: ||g(0)* dM(0)* y||^2 >= lambda ||y||^2.
    pub lambda: f64,
}

/// Check the non-resonance condition `range M0 g(0) = Y` (for S = 0 this is
/// the classical `range C A^{-1} g(0) = Y`).
pub fn check_non_resonance(model: &CascadeRealization, graph: &GraphMap) -> NonResonance {
    let g0 = (model.g)(&Vector::zeros(model.n()));
    let l = graph.m0() * g0;
    let (ok, sigma_min) = surjectivity_margin(&l, &model.qy);
    NonResonance { ok, sigma_min, lambda: sigma_min * sigma_min }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::QuadConfig;
    use crate::model::scalar_cubic;
    use crate::probe::Prng;
    use crate::wlinalg::{GramForm, Matrix};
    use approx::assert_relative_eq;

    #[test]
    fn feedback_vanishes_on_the_graph() {
        let model = scalar_cubic();
        let graph = GraphMap::build(&model, QuadConfig::default()).unwrap();
        let mut rng = Prng::new(41);
        for _ in 0..20 {
            let x0 = 3.0 * rng.uniform() - 1.5;
            let x = StateX(Vector::from_element(1, x0));
            let m = graph.eval_m(&x).unwrap();
            let u = feedback(&model, &graph, &x, &m).unwrap();
            assert!(u.norm() <= 1e-9, "u = {} at x = {x0}", u.norm());
        }
    }

    #[test]
    fn feedback_scalar_example() {
        // x = 0, z = 1: u = dM(0) (z - 0) = M0 = -1
        let model = scalar_cubic();
        let graph = GraphMap::build(&model, QuadConfig::default()).unwrap();
        let u = feedback(
            &model,
            &graph,
            &StateX::zero(1),
            &OutputY(Vector::from_element(1, 1.0)),
        )
        .unwrap();
        assert_relative_eq!(u[0], -1.0, max_relative = 1e-12);
    }

    #[test]
    fn linear_mode_matches_closed_form() {
        let model = scalar_cubic();
        let graph = GraphMap::build(&model, QuadConfig::default()).unwrap();
        let cfg = ControllerConfig { mode: ControlMode::LinearM0, ..Default::default() };
        let x = StateX(Vector::from_element(1, 0.8));
        let z = OutputY(Vector::from_element(1, 0.5));
        let u = feedback_with(&model, &graph, &cfg, &x, &z).unwrap();
        // u = g^T M0^T (z - M0 x) with all Grams trivial
        let expect = -(0.5 + 0.8);
        assert_relative_eq!(u[0], expect, max_relative = 1e-12);
    }

    #[test]
    fn hot_path_agrees_with_adjoint_path_on_weighted_instance() {
        // weighted linear cascade: the Gram cancellation must be exact
        let mut rng = Prng::new(43);
        let a = rng.hurwitz(3, 0.5);
        let b = rng.matrix(3, 2);
        let c = rng.matrix(2, 3);
        let s = Matrix::zeros(2, 2);
        let mut model = CascadeRealization::linear(a, b, c, s);
        model.qx = GramForm::new(rng.spd(3, 0.6)).unwrap();
        model.qy = GramForm::new(rng.spd(2, 0.6)).unwrap();
        model.qu = GramForm::new(rng.spd(2, 0.6)).unwrap();
        let graph = GraphMap::build(&model, QuadConfig::default()).unwrap();
        let x = StateX(rng.vector(3));
        let z = OutputY(rng.vector(2));
        let fast = feedback(&model, &graph, &x, &z).unwrap();
        let slow = feedback_via_adjoints(&model, &graph, &x, &z).unwrap();
        assert!((fast - slow).norm() < 1e-10);
    }

    #[test]
    fn non_resonance_scalar_and_degenerate() {
        let model = scalar_cubic();
        let graph = GraphMap::build(&model, QuadConfig::default()).unwrap();
        let nr = check_non_resonance(&model, &graph);
        assert!(nr.ok);
        assert_relative_eq!(nr.sigma_min, 1.0, max_relative = 1e-12);
        assert_relative_eq!(nr.lambda, 1.0, max_relative = 1e-12);

        let mut dead = scalar_cubic();
        dead.g = Box::new(|_| Matrix::zeros(1, 1));
        let graph = GraphMap::build(&dead, QuadConfig::default()).unwrap();
        let nr = check_non_resonance(&dead, &graph);
        assert!(!nr.ok);
        assert_eq!(nr.lambda, 0.0);
    }

    #[test]
    fn coercivity_at_origin() {
        // ||g(0)* dM(0)* y||^2 >= lambda ||y||^2 on random outputs
        let a = -Matrix::identity(2, 2);
        let b = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let c = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 1.0]);
        let s = Matrix::from_row_slice(2, 2, &[0.0, 0.7, -0.7, 0.0]);
        let model = CascadeRealization::linear(a, b, c, s);
        let graph = GraphMap::build(&model, QuadConfig::default()).unwrap();
        let nr = check_non_resonance(&model, &graph);
        assert!(nr.ok);
        let dm0 = graph.eval_dm(&StateX::zero(2)).unwrap();
        let g0 = (model.g)(&Vector::zeros(2));
        let gain = weighted_adjoint(&g0, &model.qu, &model.qx)
            * weighted_adjoint(&dm0, &model.qx, &model.qy);
        let mut rng = Prng::new(47);
        for _ in 0..50 {
            let y = rng.vector(2);
            let lhs = model.qu.inner(&(&gain * &y), &(&gain * &y));
            let rhs = nr.lambda * model.qy.inner(&y, &y);
            assert!(lhs >= rhs - 1e-10, "coercivity violated: {lhs} < {rhs}");
        }
    }

    #[test]
    fn regulated_feedback_guards() {
        let model = scalar_cubic();
        let graph = GraphMap::build(&model, QuadConfig::default()).unwrap();
        let cfg = ControllerConfig::default();
        match regulated_feedback(&model, &graph, &cfg, &StateX::zero(1), &OutputY::zero(1)) {
            Err(ControllerError::MissingReference) => {}
            other => panic!("expected MissingReference, got {other:?}"),
        }
        let cfg = ControllerConfig {
            y_ref: Some(OutputY(Vector::from_element(1, 0.0))),
            ..Default::default()
        };
        let u = regulated_feedback(&model, &graph, &cfg, &StateX::zero(1), &OutputY::zero(1)).unwrap();
        assert_eq!(u.norm(), 0.0);
    }
}
