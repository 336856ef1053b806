//! Closed-loop time integration with Lyapunov instrumentation.
//!
//! The workhorse scheme is an IMEX Crank-Nicolson step: the linear cascade
//! operator is treated implicitly (LU-prefactored once per step size, which
//! removes the dt = O(h^4) constraint of the stiff beam), the nonlinearities
//! explicitly at the midpoint with one corrector sweep. A classical RK4 step
//! is kept for nonstiff scalar oracles.
//!
//! Simulations record per-step monitors: the Lyapunov value V, the composite
//! functional W = V + (beta/4) ||z - M(x)||^2, control effort, graph defect,
//! and an energy-balance residual. These traces are what turn the stability
//! theorems into checkable runtime properties.

use crate::controller::{self, ControllerConfig};
use crate::graph::{GraphError, GraphMap};
use crate::model::{CascadeRealization, ModelError, OutputY, StateX};
use crate::wlinalg::{Matrix, Vector};
use thiserror::Error;

/// One step may not grow the state by more than this factor (plus a forcing
/// allowance); larger jumps indicate instability or a bad step size.
pub const STEP_GROWTH_LIMIT: f64 = 10.0;
/// Per-step slack for W-monotonicity: W may increase by at most
/// `W_STEP_TOL * (1 + W)` between records (sampling and discretization
/// permit transient micro-increases of this size).
pub const W_STEP_TOL: f64 = 1e-8;
/// Absolute slack in the integrated dissipation identity.
pub const W_INTEGRATED_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("step rejected at t = {t}: state grew by {growth:.2e}x in one step")]
    StepRejected { t: f64, growth: f64 },
    #[error("implicit step operator is singular (dt too aggressive or model invalid)")]
    BadStepOperator,
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("trace contains non-positive values, cannot fit a decay rate")]
    NonPositiveTrace,
    #[error("trace too short to fit (need at least 10 samples, got {0})")]
    TraceTooShort(usize),
    #[error(transparent)]
    Controller(#[from] controller::ControllerError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ImexCn,
    Rk4,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Outer time step.
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    /// Record monitors every this many steps.
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 1e-3, t_final: 10.0, scheme: Scheme::ImexCn, record_every: 10 }
    }
}

pub type StateFunctional = Box<dyn Fn(&Vector) -> f64 + Send + Sync>;
pub type StateFamilyFunctional = Box<dyn Fn(&Vector, f64) -> f64 + Send + Sync>;

/// Quadratic-like Lyapunov certificate for the x-subsystem, plus the input
/// gain beta in `dV <= beta ||u||^2` and optionally a strictified variant
/// evaluated at a fixed epsilon.
pub struct LyapunovSpec {
    pub v: StateFunctional,
    pub beta: f64,
    /// (epsilon, V_eps) pair; recorded alongside V when present.
    pub v_eps: Option<(f64, StateFamilyFunctional)>,
}

#[derive(Debug, Clone, Default)]
pub struct MonitorRecord {
    pub v: f64,
    pub w: f64,
    pub u_norm: f64,
    pub defect_norm: f64,
    pub x_norm: f64,
    /// | d/dt (1/2 ||x||_qx^2) - <x, x'>_qx | by central differences of the
    /// recorded trace; zero at the endpoints.
    pub energy_residual: f64,
    pub v_eps: Option<f64>,
}

/// Time-stamped closed-loop record with monitor traces.
#[derive(Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateX>,
    pub zs: Vec<OutputY>,
    pub us: Vec<Vector>,
    pub monitors: Vec<MonitorRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &StateX {
        self.states.last().expect("empty trajectory")
    }

    pub fn w_trace(&self) -> Vec<f64> {
        self.monitors.iter().map(|m| m.w).collect()
    }

    pub fn v_trace(&self) -> Vec<f64> {
        self.monitors.iter().map(|m| m.v).collect()
    }

    /// Trapezoidal integral of ||u||^2 over the recorded grid.
    pub fn control_energy(&self) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.len() {
            let dt = self.times[i] - self.times[i - 1];
            let a = self.monitors[i - 1].u_norm.powi(2);
            let b = self.monitors[i].u_norm.powi(2);
            acc += 0.5 * dt * (a + b);
        }
        acc
    }

    /// Write the trace as CSV: `t,V,W,u_norm,defect_norm,x_norm` followed by
    /// any extra columns (e.g. beam angles). The column set and order are
    /// frozen so downstream tooling never breaks.
    pub fn write_csv<W: std::io::Write>(
        &self,
        out: &mut W,
        extra: &[(String, Vec<f64>)],
    ) -> std::io::Result<()> {
        write!(out, "t,V,W,u_norm,defect_norm,x_norm")?;
        for (name, col) in extra {
            assert_eq!(col.len(), self.len(), "extra column length mismatch");
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for i in 0..self.len() {
            let m = &self.monitors[i];
            write!(
                out,
                "{},{},{},{},{},{}",
                self.times[i], m.v, m.w, m.u_norm, m.defect_norm, m.x_norm
            )?;
            for (_, col) in extra {
                write!(out, ",{}", col[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn lu_with_pivot_check(m: Matrix) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, SimError> {
    let norm = m.norm();
    let lu = m.lu();
    let min_pivot = lu.u().diagonal().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-14 * (1.0 + norm)) {
        return Err(SimError::BadStepOperator);
    }
    Ok(lu)
}

/// IMEX Crank-Nicolson / RK4 stepper for the full cascade with a held input.
/// The implicit operator is factored once at construction.
pub struct CascadeStepper<'a> {
    model: &'a CascadeRealization,
    dt: f64,
    scheme: Scheme,
    y_ref: Option<Vector>,
    plus: Matrix,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    t: f64,
}

impl<'a> CascadeStepper<'a> {
    pub fn new(
        model: &'a CascadeRealization,
        dt: f64,
        scheme: Scheme,
        y_ref: Option<Vector>,
    ) -> Result<Self, SimError> {
        if !(dt > 0.0) {
            return Err(SimError::InvalidConfig("dt must be positive".into()));
        }
        let (n, m) = (model.n(), model.m());
        let mut lin = Matrix::zeros(n + m, n + m);
        lin.view_mut((0, 0), (n, n)).copy_from(&model.a);
        lin.view_mut((n, 0), (m, n)).copy_from(&model.c);
        lin.view_mut((n, n), (m, m)).copy_from(&model.s);
        let id = Matrix::identity(n + m, n + m);
        let plus = &id + &lin * (0.5 * dt);
        let lu = match scheme {
            Scheme::ImexCn => Some(lu_with_pivot_check(&id - &lin * (0.5 * dt))?),
            Scheme::Rk4 => None,
        };
        Ok(Self { model, dt, scheme, y_ref, plus, lu, t: 0.0 })
    }

    /// Nonlinear (and forcing) part of the stacked right-hand side.
    fn nonlinear(&self, w: &Vector, u: &Vector) -> Vector {
        let (n, m) = (self.model.n(), self.model.m());
        let x = w.rows(0, n).into_owned();
        let mut out = Vector::zeros(n + m);
        let fx = (self.model.f)(&x) + (self.model.g)(&x) * u;
        out.rows_mut(0, n).copy_from(&fx);
        let mut hz = (self.model.h)(&x);
        if let Some(y_ref) = &self.y_ref {
            hz -= y_ref;
        }
        out.rows_mut(n, m).copy_from(&hz);
        out
    }

    fn full_rhs(&self, w: &Vector, u: &Vector) -> Vector {
        let (n, m) = (self.model.n(), self.model.m());
        let lin = {
            let x = w.rows(0, n).into_owned();
            let z = w.rows(n, m).into_owned();
            let mut out = Vector::zeros(n + m);
            out.rows_mut(0, n).copy_from(&(&self.model.a * &x));
            out.rows_mut(n, m).copy_from(&(&self.model.s * &z + &self.model.c * &x));
            out
        };
        lin + self.nonlinear(w, u)
    }

    /// Advance one step; `u` is held constant across it.
    pub fn step(&mut self, x: &Vector, z: &Vector, u: &Vector) -> Result<(Vector, Vector), SimError> {
        let (n, m) = (self.model.n(), self.model.m());
        let mut w = Vector::zeros(n + m);
        w.rows_mut(0, n).copy_from(x);
        w.rows_mut(n, m).copy_from(z);
        let dt = self.dt;
        let w_next = match self.scheme {
            Scheme::ImexCn => {
                let lu = self.lu.as_ref().expect("imex-cn stepper has a factorization");
                // explicit midpoint predictor, then one corrector sweep
                let lin_w = &self.plus * &w;
                let what0 = &w + self.full_rhs(&w, u) * (0.5 * dt);
                let pred = lu
                    .solve(&(&lin_w + self.nonlinear(&what0, u) * dt))
                    .ok_or(SimError::BadStepOperator)?;
                let what = 0.5 * (&w + pred);
                lu.solve(&(lin_w + self.nonlinear(&what, u) * dt))
                    .ok_or(SimError::BadStepOperator)?
            }
            Scheme::Rk4 => {
                let k1 = self.full_rhs(&w, u);
                let k2 = self.full_rhs(&(&w + &k1 * (0.5 * dt)), u);
                let k3 = self.full_rhs(&(&w + &k2 * (0.5 * dt)), u);
                let k4 = self.full_rhs(&(&w + &k3 * dt), u);
                &w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
            }
        };
        // growth guard in the weighted metric (coordinate norms are
        // meaningless for stiff discretizations)
        let energy_norm = |w: &Vector| {
            let x = w.rows(0, n).into_owned();
            let z = w.rows(n, m).into_owned();
            self.model.qx.norm(&x) + self.model.qy.norm(&z)
        };
        let forcing = self.y_ref.as_ref().map_or(0.0, |y| self.model.qy.norm(y));
        let before = energy_norm(&w);
        let after = energy_norm(&w_next);
        if after > STEP_GROWTH_LIMIT * (before + dt * (1.0 + forcing)) {
            return Err(SimError::StepRejected { t: self.t, growth: after / before.max(1e-300) });
        }
        self.t += dt;
        Ok((w_next.rows(0, n).into_owned(), w_next.rows(n, m).into_owned()))
    }
}

/// Single convenience step of the cascade (factors the operator each call;
/// use `CascadeStepper` in loops).
pub fn step(
    model: &CascadeRealization,
    x: &Vector,
    z: &Vector,
    u: &Vector,
    dt: f64,
    scheme: Scheme,
) -> Result<(Vector, Vector), SimError> {
    CascadeStepper::new(model, dt, scheme, None)?.step(x, z, u)
}

/// IMEX Crank-Nicolson flow of the uncontrolled x-subsystem
/// `x' = A x + f(x)`, optionally propagating variational directions
/// `D' = (A + df(x)) D` alongside.
pub struct XStepper<'a> {
    model: &'a CascadeRealization,
    dt: f64,
    plus: Matrix,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    t: f64,
}

impl<'a> XStepper<'a> {
    pub fn new(model: &'a CascadeRealization, dt: f64) -> Result<Self, SimError> {
        if !(dt > 0.0) {
            return Err(SimError::InvalidConfig("dt must be positive".into()));
        }
        let n = model.n();
        let id = Matrix::identity(n, n);
        let plus = &id + &model.a * (0.5 * dt);
        let lu = lu_with_pivot_check(&id - &model.a * (0.5 * dt))?;
        Ok(Self { model, dt, plus, lu, t: 0.0 })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn step(&mut self, x: &Vector) -> Result<Vector, SimError> {
        let (x_next, _) = self.advance(x, None)?;
        Ok(x_next)
    }

    pub fn step_with_dirs(&mut self, x: &Vector, dirs: &Matrix) -> Result<(Vector, Matrix), SimError> {
        let (x_next, d_next) = self.advance(x, Some(dirs))?;
        Ok((x_next, d_next.expect("dirs propagated")))
    }

    /// One step of size dt taken as two implicit-Euler half-steps (Rannacher
    /// startup). Strongly damps unresolved high-frequency content that plain
    /// Crank-Nicolson would carry forever; used for the first few steps when
    /// the initial data is rough. Reuses the Crank-Nicolson factorization,
    /// since the half-step operator is the same I - (dt/2) A.
    pub fn step_smoothed(
        &mut self,
        x: &Vector,
        dirs: Option<&Matrix>,
    ) -> Result<(Vector, Option<Matrix>), SimError> {
        let h2 = 0.5 * self.dt;
        let f = &self.model.f;
        let df = &self.model.df;
        let mut xc = x.clone();
        let mut dc = dirs.cloned();
        for _ in 0..2 {
            let fx = f(&xc);
            let x_half = self
                .lu
                .solve(&(&xc + fx * h2))
                .ok_or(SimError::BadStepOperator)?;
            if let Some(d) = &mut dc {
                let dfd = df(&xc) * &*d;
                *d = self
                    .lu
                    .solve(&(&*d + dfd * h2))
                    .ok_or(SimError::BadStepOperator)?;
            }
            xc = x_half;
        }
        let before = self.model.qx.norm(x);
        let after = self.model.qx.norm(&xc);
        if after > STEP_GROWTH_LIMIT * (before + self.dt) {
            return Err(SimError::StepRejected { t: self.t, growth: after / before.max(1e-300) });
        }
        self.t += self.dt;
        Ok((xc, dc))
    }

    fn advance(&mut self, x: &Vector, dirs: Option<&Matrix>) -> Result<(Vector, Option<Matrix>), SimError> {
        let dt = self.dt;
        let f = &self.model.f;
        let df = &self.model.df;
        let lin_x = &self.plus * x;
        let xhat0 = x + (&self.model.a * x + f(x)) * (0.5 * dt);
        let x_pred = self.lu.solve(&(&lin_x + f(&xhat0) * dt)).ok_or(SimError::BadStepOperator)?;
        let xhat = 0.5 * (x + x_pred);
        let x_next = self.lu.solve(&(lin_x + f(&xhat) * dt)).ok_or(SimError::BadStepOperator)?;

        let d_next = match dirs {
            None => None,
            Some(d) => {
                let lin_d = &self.plus * d;
                let dhat0 = d + (&self.model.a * d + df(x) * d) * (0.5 * dt);
                let d_pred = self
                    .lu
                    .solve(&(&lin_d + df(&xhat0) * dhat0 * dt))
                    .ok_or(SimError::BadStepOperator)?;
                let dhat = 0.5 * (d + d_pred);
                Some(
                    self.lu
                        .solve(&(lin_d + df(&xhat) * dhat * dt))
                        .ok_or(SimError::BadStepOperator)?,
                )
            }
        };

        let before = self.model.qx.norm(x);
        let after = self.model.qx.norm(&x_next);
        if after > STEP_GROWTH_LIMIT * (before + dt) {
            return Err(SimError::StepRejected { t: self.t, growth: after / before.max(1e-300) });
        }
        self.t += dt;
        Ok((x_next, d_next))
    }
}

/// Integrate the closed loop (or the open loop when `ctrl` is `None`) and
/// record monitors.
///
/// The defect monitor ||z - M(x)|| always uses the full nonlinear graph map,
/// whatever the controller mode, so different controllers are compared on
/// one yardstick. When the controller itself evaluates M at a sample instant
/// that coincides with a record instant, the evaluation is shared.
pub fn simulate(
    model: &CascadeRealization,
    graph: &GraphMap,
    ctrl: Option<&ControllerConfig>,
    x0: &StateX,
    z0: &OutputY,
    cfg: &SimConfig,
    lyap: Option<&LyapunovSpec>,
) -> Result<Trajectory, SimError> {
    if !(cfg.dt > 0.0) || !(cfg.t_final > 0.0) || cfg.record_every == 0 {
        return Err(SimError::InvalidConfig("dt, t_final, record_every must be positive".into()));
    }
    if let Some(c) = ctrl {
        if cfg.dt > c.sample_period * (1.0 + 1e-12) {
            return Err(SimError::InvalidConfig("dt must not exceed sample_period".into()));
        }
        if c.y_ref.is_some() && !model.is_s_zero() {
            return Err(controller::ControllerError::NonzeroS.into());
        }
    }
    let steps = (cfg.t_final / cfg.dt).round().max(1.0) as usize;
    let sample_steps = ctrl.map(|c| ((c.sample_period / cfg.dt).round() as usize).max(1));
    let y_ref = ctrl.and_then(|c| c.y_ref.as_ref()).map(|y| y.0.clone());
    let mut stepper = CascadeStepper::new(model, cfg.dt, cfg.scheme, y_ref)?;

    let mut x = x0.0.clone();
    let mut z = z0.0.clone();
    let mut u = Vector::zeros(model.r());
    let mut traj = Trajectory::default();
    let beta = lyap.map_or(0.5, |l| l.beta);

    // M(x) computed by the full-mode controller at the current step, if any
    let mut shared_m: Option<Vector> = None;

    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        if let (Some(c), Some(ss)) = (ctrl, sample_steps) {
            if k % ss == 0 && k < steps {
                let (u_new, m_full) =
                    controller::feedback_detailed(model, graph, c, &StateX(x.clone()), &OutputY(z.clone()))?;
                u = u_new;
                shared_m = m_full;
            }
        }
        if k % cfg.record_every == 0 || k == steps {
            let m_val = match shared_m.take() {
                Some(m) => m,
                None => graph.eval_m(&StateX(x.clone()))?.0,
            };
            let defect = &z - &m_val;
            let defect_norm = model.qy.norm(&defect);
            let v = lyap.map_or_else(|| 0.5 * model.qx.inner(&x, &x), |l| (l.v)(&x));
            let w = v + 0.25 * beta * defect_norm * defect_norm;
            let v_eps = lyap
                .and_then(|l| l.v_eps.as_ref())
                .map(|(eps, veps)| veps(&x, *eps));
            traj.times.push(t);
            traj.states.push(StateX(x.clone()));
            traj.zs.push(OutputY(z.clone()));
            traj.us.push(u.clone());
            traj.monitors.push(MonitorRecord {
                v,
                w,
                u_norm: model.qu.norm(&u),
                defect_norm,
                x_norm: model.qx.norm(&x),
                energy_residual: 0.0,
                v_eps,
            });
        } else {
            shared_m = None;
        }
        if k < steps {
            let (x_next, z_next) = stepper.step(&x, &z, &u)?;
            x = x_next;
            z = z_next;
        }
    }

    // Energy-balance residual: central difference of E = 1/2 ||x||_qx^2
    // against <x, x'>_qx at interior records.
    let energies: Vec<f64> =
        traj.states.iter().map(|s| 0.5 * model.qx.inner(&s.0, &s.0)).collect();
    for i in 1..traj.len().saturating_sub(1) {
        let dtr = traj.times[i + 1] - traj.times[i - 1];
        let xdot = &model.a * &traj.states[i].0
            + (model.f)(&traj.states[i].0)
            + (model.g)(&traj.states[i].0) * &traj.us[i];
        let analytic = model.qx.inner(&traj.states[i].0, &xdot);
        traj.monitors[i].energy_residual =
            ((energies[i + 1] - energies[i - 1]) / dtr - analytic).abs();
    }
    Ok(traj)
}

/// Least-squares exponential rate of a positive trace over the final half of
/// the record. Returns `(rate, r_squared)`; the rate is the slope of
/// log(trace) against time, so decaying traces give negative rates.
pub fn fit_decay_rate(trace: &[f64], times: &[f64]) -> Result<(f64, f64), SimError> {
    if trace.len() != times.len() || trace.len() < 10 {
        return Err(SimError::TraceTooShort(trace.len()));
    }
    let start = trace.len() / 2;
    let window: Vec<(f64, f64)> = times[start..]
        .iter()
        .zip(&trace[start..])
        .map(|(&t, &y)| (t, y))
        .collect();
    if window.iter().any(|&(_, y)| y <= 0.0) {
        return Err(SimError::NonPositiveTrace);
    }
    let n = window.len() as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for &(t, y) in &window {
        let ly = y.ln();
        st += t;
        sy += ly;
        stt += t * t;
        sty += t * ly;
    }
    let denom = n * stt - st * st;
    if denom.abs() < 1e-300 {
        return Err(SimError::InvalidConfig("degenerate time grid".into()));
    }
    let slope = (n * sty - st * sy) / denom;
    let intercept = (sy - slope * st) / n;
    let mean = sy / n;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &(t, y) in &window {
        let ly = y.ln();
        ss_res += (ly - (intercept + slope * t)).powi(2);
        ss_tot += (ly - mean).powi(2);
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((slope, r2))
}

/// Verdict of the W-decay checks on a recorded trajectory.
#[derive(Debug, Clone)]
pub struct WDecayReport {
    /// W never increases by more than `W_STEP_TOL * (1 + W)` per record.
    pub monotone: bool,
    /// Largest per-record increase of W (negative when strictly decreasing).
    pub max_step_increase: f64,
    /// W(0) - W(T) >= (beta/2) * integral ||u||^2 - `W_INTEGRATED_TOL`.
    pub integrated_ok: bool,
    /// Slack of the integrated inequality (>= -tol when it holds).
    pub integrated_margin: f64,
    /// max_t W(t) <= W(0) + tolerance (sublevel-set invariance).
    pub sublevel_ok: bool,
    pub w_initial: f64,
    pub w_final: f64,
    pub control_energy: f64,
}

impl WDecayReport {
    pub fn all_passed(&self) -> bool {
        self.monotone && self.integrated_ok && self.sublevel_ok
    }
}

/// Check the dissipation structure of a recorded run: monotone decay of W up
/// to per-step tolerance, the integrated energy inequality, and sublevel-set
/// invariance.
pub fn verify_w_decay(traj: &Trajectory, beta: f64) -> WDecayReport {
    let ws = traj.w_trace();
    assert!(!ws.is_empty(), "empty trajectory");
    let mut monotone = true;
    let mut max_step_increase = f64::NEG_INFINITY;
    for i in 1..ws.len() {
        let increase = ws[i] - ws[i - 1];
        max_step_increase = max_step_increase.max(increase);
        if increase > W_STEP_TOL * (1.0 + ws[i - 1]) {
            monotone = false;
        }
    }
    if ws.len() == 1 {
        max_step_increase = 0.0;
    }
    let control_energy = traj.control_energy();
    let w_initial = ws[0];
    let w_final = *ws.last().unwrap();
    let integrated_margin = (w_initial - w_final) - 0.5 * beta * control_energy;
    let integrated_ok = integrated_margin >= -W_INTEGRATED_TOL;
    let w_max = ws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sublevel_ok = w_max <= w_initial + W_STEP_TOL * (1.0 + w_initial);
    WDecayReport {
        monotone,
        max_step_increase,
        integrated_ok,
        integrated_margin,
        sublevel_ok,
        w_initial,
        w_final,
        control_energy,
    }
}
