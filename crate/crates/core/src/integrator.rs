//! Implicit Runge-Kutta integration of the region ODEs and the index-2
//! sliding DAE, with event location on a mesh aligned to control breakpoints.

use serde::Serialize;

use crate::linalg::{self, Factorized};
use crate::model::{ControlGrid, Field, HybridOcp, Matrix, Mode, ModelError, TransitionKind, Vector};
use crate::tableau::ButcherTableau;

#[derive(Debug, Clone, PartialEq, serde::Serialize, thiserror::Error)]
pub enum IntegrationError {
    #[error("Newton iteration diverged at t = {t}, h = {h:e} (residual {residual:e})")]
    NewtonDivergence { t: f64, h: f64, residual: f64 },
    #[error("singular Newton matrix at t = {t}, h = {h:e}")]
    SingularIteration { t: f64, h: f64 },
    #[error("no sign change of the event function on [{t_lo}, {t_hi}]")]
    NoBracket { t_lo: f64, t_hi: f64 },
    #[error("event location stalled at t = {t} with |e| = {residual:e}")]
    EventNotConverged { t: f64, residual: f64 },
    #[error("more than {limit} transitions in control interval {interval}")]
    TooManyTransitions { interval: usize, limit: usize },
    #[error("sliding steps need a stiffly accurate tableau")]
    NotStifflyAccurate,
    #[error("steps_per_interval must be at least 1")]
    InvalidSteps,
    #[error("control grid has {got} intervals of dimension {got_dim}, problem needs {expected} of dimension {expected_dim}")]
    ControlMismatch {
        expected: usize,
        expected_dim: usize,
        got: usize,
        got_dim: usize,
    },
    #[error("at t = {t}: {source}")]
    Model { t: f64, source: ModelError },
}

impl IntegrationError {
    fn model(t: f64) -> impl FnOnce(ModelError) -> IntegrationError {
        move |source| IntegrationError::Model { t, source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorOptions {
    /// Max-norm bound on stage residuals, relative to `max(1, ‖x‖∞)`.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Required `|e(t_t)|` at a located event.
    pub event_tol: f64,
    pub max_event_iters: usize,
    pub max_transitions_per_interval: usize,
    /// How often a step may be halved after a failed Newton solve.
    pub max_step_halvings: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            max_newton_iters: 25,
            event_tol: 1e-10,
            max_event_iters: 80,
            max_transitions_per_interval: 100,
            max_step_halvings: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeStep {
    pub stages: Vec<Vector>,
    pub x_plus: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaeStep {
    pub stages: Vec<Vector>,
    pub z_stages: Vec<f64>,
    pub x_plus: Vector,
    pub z_plus: f64,
}

/// One accepted mesh step from node `k` to node `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub h: f64,
    pub mode: Mode,
    /// Control interval, indexing the control grid.
    pub interval: usize,
    pub stages: Vec<Vector>,
    /// Stage multipliers; empty on ODE steps.
    pub z_stages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub t_t: f64,
    pub kind: TransitionKind,
    pub x_minus: Vector,
    pub x_plus: Vector,
    /// Mesh node at which the transition happens.
    pub k_t: usize,
    /// Forced by a control change at a breakpoint rather than located by an event.
    pub pinned: bool,
    pub interval: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// Endpoint multiplier at nodes reached by (or starting) a sliding step.
    pub z: Vec<Option<f64>>,
    pub steps: Vec<StepRecord>,
    pub transitions: Vec<TransitionRecord>,
    /// `breakpoint_nodes[n]` is the node at control breakpoint `t_n`.
    pub breakpoint_nodes: Vec<usize>,
    pub controls: ControlGrid,
    pub tableau: ButcherTableau,
    pub initial_mode: Mode,
}

impl Trajectory {
    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory has nodes")
    }

    pub fn final_mode(&self) -> Mode {
        self.steps.last().map_or(self.initial_mode, |s| s.mode)
    }

    pub fn node_count(&self) -> usize {
        self.times.len()
    }

    pub fn control_of_step(&self, k: usize) -> &Vector {
        self.controls.value(self.steps[k].interval)
    }

    /// Mode label for node `k`: that of the step leaving it, or the last step.
    pub fn node_mode(&self, k: usize) -> Mode {
        if self.steps.is_empty() {
            self.initial_mode
        } else {
            self.steps[k.min(self.steps.len() - 1)].mode
        }
    }

    pub fn transition_kinds(&self) -> Vec<TransitionKind> {
        self.transitions.iter().map(|t| t.kind).collect()
    }

    pub fn max_step(&self) -> f64 {
        self.steps.iter().fold(0.0, |m, s| m.max(s.h))
    }
}

fn scaled_tol(tol: f64, x: &Vector) -> f64 {
    tol * x.amax().max(1.0)
}

/// Bracketed root finder: Illinois-modified regula falsi with a bisection
/// fallback when the bracket stops shrinking.
fn find_root<F>(
    e: &mut F,
    mut lo: f64,
    mut e_lo: f64,
    mut hi: f64,
    mut e_hi: f64,
    opts: &IntegratorOptions,
) -> Result<f64, IntegrationError>
where
    F: FnMut(f64) -> Result<f64, IntegrationError>,
{
    let fine = opts.event_tol * 1e-5;
    let mut best = if e_lo.abs() < e_hi.abs() { (lo, e_lo) } else { (hi, e_hi) };
    let mut last_side = 0i8;
    // Bracket widths one and two iterations back.
    let mut widths = [f64::INFINITY; 2];
    for _ in 0..opts.max_event_iters {
        if best.1.abs() <= fine || hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
        let mut t = hi - e_hi * (hi - lo) / (e_hi - e_lo);
        if !(t > lo && t < hi) || (hi - lo) > 0.5 * widths[1] {
            t = 0.5 * (lo + hi);
        }
        widths = [hi - lo, widths[0]];
        let et = e(t)?;
        if et.abs() < best.1.abs() {
            best = (t, et);
        }
        if et == 0.0 {
            break;
        }
        if (et < 0.0) == (e_lo < 0.0) {
            lo = t;
            e_lo = et;
            if last_side == -1 {
                e_hi *= 0.5;
            }
            last_side = -1;
        } else {
            hi = t;
            e_hi = et;
            if last_side == 1 {
                e_lo *= 0.5;
            }
            last_side = 1;
        }
    }
    if best.1.abs() > opts.event_tol {
        return Err(IntegrationError::EventNotConverged {
            t: best.0,
            residual: best.1.abs(),
        });
    }
    Ok(best.0)
}

/// Finds `t` in `[t_lo, t_hi]` with `|e(t)| ≤ event_tol`, given a sign change.
pub fn locate_event<F>(
    mut e: F,
    t_lo: f64,
    t_hi: f64,
    opts: &IntegratorOptions,
) -> Result<f64, IntegrationError>
where
    F: FnMut(f64) -> Result<f64, IntegrationError>,
{
    let e_lo = e(t_lo)?;
    if e_lo == 0.0 {
        return Ok(t_lo);
    }
    let e_hi = e(t_hi)?;
    if e_hi == 0.0 {
        return Ok(t_hi);
    }
    if (e_lo < 0.0) == (e_hi < 0.0) {
        return Err(IntegrationError::NoBracket { t_lo, t_hi });
    }
    find_root(&mut e, t_lo, e_lo, t_hi, e_hi, opts)
}

/// Result of a trial step in some mode.
#[derive(Debug, Clone)]
enum Trial {
    Ode(OdeStep),
    Dae(DaeStep),
}

impl Trial {
    fn x_plus(&self) -> &Vector {
        match self {
            Trial::Ode(s) => &s.x_plus,
            Trial::Dae(s) => &s.x_plus,
        }
    }
}

/// A detected event inside a trial step.
#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    /// The region's surface value changed sign.
    Surface,
    /// `α` dropped below 0.
    AlphaLow,
    /// `α` rose above 1.
    AlphaHigh,
}

#[derive(Debug, Clone)]
pub struct Integrator {
    pub tableau: ButcherTableau,
    pub options: IntegratorOptions,
}

impl Default for Integrator {
    fn default() -> Self {
        Self::new(ButcherTableau::radau_iia_3(), IntegratorOptions::default())
    }
}

impl Integrator {
    pub fn new(tableau: ButcherTableau, options: IntegratorOptions) -> Self {
        Self { tableau, options }
    }

    /// One implicit Runge-Kutta step of `x' = f(x, u)` for the chosen field.
    pub fn step_ode(
        &self,
        ocp: &HybridOcp,
        field: Field,
        x: &Vector,
        u: &Vector,
        h: f64,
        t: f64,
    ) -> Result<OdeStep, IntegrationError> {
        let tab = &self.tableau;
        let (s, n) = (tab.stages(), x.len());
        let a = tab.a();
        let tol = scaled_tol(self.options.newton_tol, x);
        let mut stages = vec![x.clone(); s];
        let mut fields: Vec<Vector> = Vec::with_capacity(s);
        let mut last_lu: Option<Factorized> = None;
        let mut iter = 0;
        loop {
            fields.clear();
            for xj in &stages {
                fields.push(ocp.eval_field(field, xj, u).map_err(IntegrationError::model(t))?);
            }
            let mut res = Vector::zeros(s * n);
            for i in 0..s {
                let mut r = &stages[i] - x;
                for j in 0..s {
                    r -= &fields[j] * (h * a[(i, j)]);
                }
                res.rows_mut(i * n, n).copy_from(&r);
            }
            let norm = res.amax();
            if !norm.is_finite() {
                return Err(IntegrationError::NewtonDivergence { t, h, residual: norm });
            }
            if norm <= tol {
                // One extra correction with the last factorization drives the
                // residual to roundoff.
                if let Some(lu) = last_lu.as_ref().filter(|_| norm > 0.0) {
                    if let Some(delta) = lu.solve(&res) {
                        for (i, st) in stages.iter_mut().enumerate() {
                            *st -= delta.rows(i * n, n);
                        }
                    }
                }
                break;
            }
            if iter == self.options.max_newton_iters {
                return Err(IntegrationError::NewtonDivergence { t, h, residual: norm });
            }
            let mut jac = Matrix::identity(s * n, s * n);
            for j in 0..s {
                let fx = ocp.eval_field_x(field, &stages[j], u).map_err(IntegrationError::model(t))?;
                for i in 0..s {
                    linalg::add_block(&mut jac, i * n, j * n, &fx, -h * a[(i, j)]);
                }
            }
            let lu = Factorized::new(jac).ok_or(IntegrationError::SingularIteration { t, h })?;
            let delta = lu.solve(&res).ok_or(IntegrationError::SingularIteration { t, h })?;
            for (i, st) in stages.iter_mut().enumerate() {
                *st -= delta.rows(i * n, n);
            }
            last_lu = Some(lu);
            iter += 1;
        }
        let mut x_plus = x.clone();
        for (i, xi) in stages.iter().enumerate() {
            x_plus += ocp.eval_field(field, xi, u).map_err(IntegrationError::model(t))? * (h * tab.b()[i]);
        }
        Ok(OdeStep { stages, x_plus })
    }

    /// One step of the sliding DAE `x' = f_F + g_xᵀ z`, `0 = g(x)`.
    pub fn step_dae_sliding(
        &self,
        ocp: &HybridOcp,
        x: &Vector,
        u: &Vector,
        h: f64,
        t: f64,
    ) -> Result<DaeStep, IntegrationError> {
        let tab = &self.tableau;
        if !tab.is_stiffly_accurate() {
            return Err(IntegrationError::NotStifflyAccurate);
        }
        let dy = &ocp.dynamics;
        let g0 = dy.surface(x);
        if g0.abs() > ocp.tolerances.surface_tol {
            return Err(IntegrationError::Model {
                t,
                source: ModelError::OffSurface { value: g0.abs() },
            });
        }
        let (s, n) = (tab.stages(), x.len());
        let dim = s * (n + 1);
        let a = tab.a();
        let tol = scaled_tol(self.options.newton_tol, x);
        let (f0, _) = ocp.filippov_field(x, u).map_err(IntegrationError::model(t))?;
        let mut stages: Vec<Vector> = (0..s).map(|i| x + &f0 * (tab.c()[i] * h)).collect();
        let mut zs = vec![0.0; s];
        let mut last_lu: Option<Factorized> = None;
        let mut iter = 0;

        let apply = |delta: &Vector, stages: &mut Vec<Vector>, zs: &mut Vec<f64>| {
            for i in 0..s {
                stages[i] -= delta.rows(i * n, n);
                zs[i] -= delta[s * n + i];
            }
        };

        loop {
            let mut rhs = Vec::with_capacity(s);
            let mut grads = Vec::with_capacity(s);
            for j in 0..s {
                let (f, _) = ocp.filippov_field(&stages[j], u).map_err(IntegrationError::model(t))?;
                let gx = dy.surface_grad(&stages[j]);
                rhs.push(f + &gx * zs[j]);
                grads.push(gx);
            }
            let mut res = Vector::zeros(dim);
            for i in 0..s {
                let mut r = &stages[i] - x;
                for j in 0..s {
                    r -= &rhs[j] * (h * a[(i, j)]);
                }
                res.rows_mut(i * n, n).copy_from(&r);
                res[s * n + i] = dy.surface(&stages[i]);
            }
            let norm = res.amax();
            if !norm.is_finite() {
                return Err(IntegrationError::NewtonDivergence { t, h, residual: norm });
            }
            if norm <= tol {
                if let Some(lu) = last_lu.as_ref().filter(|_| norm > 0.0) {
                    if let Some(delta) = lu.solve(&res) {
                        apply(&delta, &mut stages, &mut zs);
                    }
                }
                break;
            }
            if iter == self.options.max_newton_iters {
                return Err(IntegrationError::NewtonDivergence { t, h, residual: norm });
            }
            let mut jac = Matrix::zeros(dim, dim);
            for i in 0..s * n {
                jac[(i, i)] = 1.0;
            }
            for j in 0..s {
                let fx = ocp
                    .filippov_jacobians(&stages[j], u)
                    .map_err(IntegrationError::model(t))?
                    .field_x;
                let kj = fx + dy.surface_hess(&stages[j]) * zs[j];
                for i in 0..s {
                    linalg::add_block(&mut jac, i * n, j * n, &kj, -h * a[(i, j)]);
                    for r in 0..n {
                        jac[(i * n + r, s * n + j)] = -h * a[(i, j)] * grads[j][r];
                    }
                }
                for c in 0..n {
                    jac[(s * n + j, j * n + c)] = grads[j][c];
                }
            }
            let lu = Factorized::new(jac).ok_or(IntegrationError::SingularIteration { t, h })?;
            let delta = lu.solve(&res).ok_or(IntegrationError::SingularIteration { t, h })?;
            apply(&delta, &mut stages, &mut zs);
            last_lu = Some(lu);
            iter += 1;
        }
        let x_plus = stages[s - 1].clone();
        let z_plus = zs[s - 1];
        Ok(DaeStep {
            stages,
            z_stages: zs,
            x_plus,
            z_plus,
        })
    }

    fn trial(&self, ocp: &HybridOcp, mode: Mode, x: &Vector, u: &Vector, h: f64, t: f64) -> Result<Trial, IntegrationError> {
        match mode.ode_field() {
            Some(field) => self.step_ode(ocp, field, x, u, h, t).map(Trial::Ode),
            None => self.step_dae_sliding(ocp, x, u, h, t).map(Trial::Dae),
        }
    }

    /// Event function value at the end of a trial step; positive means the event fired.
    fn event_value(&self, ocp: &HybridOcp, mode: Mode, kind: EventKind, x: &Vector, u: &Vector, t: f64) -> Result<f64, IntegrationError> {
        match (mode, kind) {
            (Mode::Below, _) => Ok(ocp.dynamics.surface(x)),
            (Mode::Above, _) => Ok(-ocp.dynamics.surface(x)),
            (Mode::Sliding, EventKind::AlphaLow) => Ok(-ocp.alpha(x, u).map_err(IntegrationError::model(t))?),
            (Mode::Sliding, _) => Ok(ocp.alpha(x, u).map_err(IntegrationError::model(t))? - 1.0),
        }
    }

    fn detect(&self, ocp: &HybridOcp, mode: Mode, x0: &Vector, x1: &Vector, u: &Vector, t: f64) -> Result<Option<EventKind>, IntegrationError> {
        match mode {
            Mode::Below | Mode::Above => {
                let e1 = self.event_value(ocp, mode, EventKind::Surface, x1, u, t)?;
                let e0 = self.event_value(ocp, mode, EventKind::Surface, x0, u, t)?;
                // A step starting on the surface has only just left it.
                let fired = if e0 < 0.0 { e1 > 0.0 } else { e1 > ocp.tolerances.surface_tol };
                Ok(fired.then_some(EventKind::Surface))
            }
            Mode::Sliding => {
                let alpha = ocp.alpha(x1, u).map_err(IntegrationError::model(t))?;
                Ok(if alpha < 0.0 {
                    Some(EventKind::AlphaLow)
                } else if alpha > 1.0 {
                    Some(EventKind::AlphaHigh)
                } else {
                    None
                })
            }
        }
    }

    /// Step from `(t, x)` to `t_target`, halving on Newton failure.
    fn advance(&self, ocp: &HybridOcp, mode: Mode, x: &Vector, u: &Vector, t: f64, t_target: f64) -> Result<(f64, Trial), IntegrationError> {
        let mut h = t_target - t;
        let mut end = t_target;
        let mut halvings = 0;
        loop {
            match self.trial(ocp, mode, x, u, h, t) {
                Ok(tr) => return Ok((end, tr)),
                Err(
                    err @ (IntegrationError::NewtonDivergence { .. } | IntegrationError::SingularIteration { .. }),
                ) => {
                    if halvings == self.options.max_step_halvings {
                        return Err(err);
                    }
                    halvings += 1;
                    h *= 0.5;
                    end = t + h;
                }
                Err(err) => return Err(err),
            }
        }
    }

    pub fn integrate(&self, ocp: &HybridOcp, controls: &ControlGrid, steps_per_interval: usize) -> Result<Trajectory, IntegrationError> {
        self.integrate_with_nodes(ocp, controls, steps_per_interval, &[])
    }

    /// Like [`Integrator::integrate`], with additional mesh nodes inserted.
    pub fn integrate_with_nodes(
        &self,
        ocp: &HybridOcp,
        controls: &ControlGrid,
        steps_per_interval: usize,
        extra_nodes: &[f64],
    ) -> Result<Trajectory, IntegrationError> {
        if steps_per_interval == 0 {
            return Err(IntegrationError::InvalidSteps);
        }
        if controls.intervals() != ocp.intervals || controls.control_dim() != ocp.control_dim() {
            return Err(IntegrationError::ControlMismatch {
                expected: ocp.intervals,
                expected_dim: ocp.control_dim(),
                got: controls.intervals(),
                got_dim: controls.control_dim(),
            });
        }
        let bp = ocp.breakpoints();
        let mut extra: Vec<f64> = extra_nodes.to_vec();
        extra.sort_by(f64::total_cmp);

        let u0 = controls.value(0);
        let mut mode = ocp.classify(&ocp.x0, u0).map_err(IntegrationError::model(ocp.t0))?;
        let mut traj = Trajectory {
            times: vec![ocp.t0],
            states: vec![ocp.x0.clone()],
            z: vec![(mode == Mode::Sliding).then_some(0.0)],
            steps: Vec::new(),
            transitions: Vec::new(),
            breakpoint_nodes: vec![0],
            controls: controls.clone(),
            tableau: self.tableau.clone(),
            initial_mode: mode,
        };
        let mut x = ocp.x0.clone();

        for n in 0..ocp.intervals {
            let u = controls.value(n);
            let mut transitions_here = 0;
            if n > 0 {
                if let Some(kind) = self.pinned_transition(ocp, mode, &x, u, bp[n])? {
                    traj.transitions.push(TransitionRecord {
                        t_t: bp[n],
                        kind,
                        x_minus: x.clone(),
                        x_plus: x.clone(),
                        k_t: traj.times.len() - 1,
                        pinned: true,
                        interval: n,
                    });
                    mode = kind.target_mode();
                    if mode == Mode::Sliding {
                        *traj.z.last_mut().unwrap() = Some(0.0);
                    }
                    transitions_here += 1;
                }
            }
            let targets = interval_nodes(bp[n], bp[n + 1], steps_per_interval, &extra);
            let mut t = bp[n];
            for &target in &targets {
                while t < target {
                    if mode == Mode::Sliding {
                        // The exit condition can already hold at the node itself.
                        let alpha = ocp.alpha(&x, u).map_err(IntegrationError::model(t))?;
                        let kind = if alpha <= 0.0 {
                            Some(EventKind::AlphaLow)
                        } else if alpha >= 1.0 {
                            Some(EventKind::AlphaHigh)
                        } else {
                            None
                        };
                        if let Some(kind) = kind {
                            if transitions_here >= self.options.max_transitions_per_interval {
                                return Err(IntegrationError::TooManyTransitions {
                                    interval: n,
                                    limit: self.options.max_transitions_per_interval,
                                });
                            }
                            let (tkind, x_plus) = self.classify_event(ocp, mode, kind, &x, u, t)?;
                            let k_t = traj.times.len() - 1;
                            traj.transitions.push(TransitionRecord {
                                t_t: t,
                                kind: tkind,
                                x_minus: x.clone(),
                                x_plus,
                                k_t,
                                pinned: k_t == 0,
                                interval: n,
                            });
                            mode = tkind.target_mode();
                            transitions_here += 1;
                            continue;
                        }
                    }
                    let (end, trial) = self.advance(ocp, mode, &x, u, t, target)?;
                    let event = self.detect(ocp, mode, &x, trial.x_plus(), u, t)?;
                    let Some(kind) = event else {
                        self.push_step(&mut traj, t, end, mode, n, trial);
                        t = end;
                        x = traj.states.last().unwrap().clone();
                        continue;
                    };
                    if transitions_here >= self.options.max_transitions_per_interval {
                        return Err(IntegrationError::TooManyTransitions {
                            interval: n,
                            limit: self.options.max_transitions_per_interval,
                        });
                    }
                    let (t_t, trial_t) = self.locate(ocp, mode, kind, &x, u, t, end)?;
                    self.push_step(&mut traj, t, t_t, mode, n, trial_t);
                    t = t_t;
                    let x_minus = traj.states.last().unwrap().clone();
                    let (tkind, x_plus) = self.classify_event(ocp, mode, kind, &x_minus, u, t_t)?;
                    traj.transitions.push(TransitionRecord {
                        t_t,
                        kind: tkind,
                        x_minus,
                        x_plus: x_plus.clone(),
                        k_t: traj.times.len() - 1,
                        pinned: false,
                        interval: n,
                    });
                    mode = tkind.target_mode();
                    *traj.states.last_mut().unwrap() = x_plus.clone();
                    if mode == Mode::Sliding {
                        *traj.z.last_mut().unwrap() = Some(0.0);
                    }
                    x = x_plus;
                    transitions_here += 1;
                }
            }
            traj.breakpoint_nodes.push(traj.times.len() - 1);
        }
        Ok(traj)
    }

    fn push_step(&self, traj: &mut Trajectory, t: f64, end: f64, mode: Mode, interval: usize, trial: Trial) {
        let (stages, z_stages, x_plus, z_plus) = match trial {
            Trial::Ode(s) => (s.stages, Vec::new(), s.x_plus, None),
            Trial::Dae(s) => (s.stages, s.z_stages, s.x_plus, Some(s.z_plus)),
        };
        traj.steps.push(StepRecord {
            t,
            h: end - t,
            mode,
            interval,
            stages,
            z_stages,
        });
        traj.times.push(end);
        traj.states.push(x_plus);
        traj.z.push(z_plus);
    }

    /// Locates the event inside `[t, end]` and returns the step that ends on it.
    #[allow(clippy::too_many_arguments)]
    fn locate(&self, ocp: &HybridOcp, mode: Mode, kind: EventKind, x: &Vector, u: &Vector, t: f64, end: f64) -> Result<(f64, Trial), IntegrationError> {
        let mut eval = |tau: f64| -> Result<f64, IntegrationError> {
            let tr = self.trial(ocp, mode, x, u, tau - t, t)?;
            self.event_value(ocp, mode, kind, tr.x_plus(), u, t)
        };
        let e_hi = eval(end)?;
        let mut lo = t;
        let mut e_lo = self.event_value(ocp, mode, kind, x, u, t)?;
        // Starting on the surface: find a point just inside the step with the
        // pre-event sign.
        let mut probe = end - t;
        while e_lo >= 0.0 {
            probe *= 0.5;
            if probe <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
                return Err(IntegrationError::NoBracket { t_lo: t, t_hi: end });
            }
            lo = t + probe;
            e_lo = eval(lo)?;
        }
        let t_t = find_root(&mut eval, lo, e_lo, end, e_hi, &self.options)?;
        let tr = self.trial(ocp, mode, x, u, t_t - t, t)?;
        Ok((t_t, tr))
    }

    /// Transition kind and post-transition state at a located event.
    fn classify_event(&self, ocp: &HybridOcp, mode: Mode, kind: EventKind, x: &Vector, u: &Vector, t: f64) -> Result<(TransitionKind, Vector), IntegrationError> {
        let eps = ocp.tolerances.eps_tan;
        let (a, b) = ocp.surface_rates(x, u);
        let ambiguous = || IntegrationError::Model {
            t,
            source: ModelError::TangentialAmbiguity { rate_f1: a, rate_f2: b },
        };
        match kind {
            EventKind::Surface => {
                let tk = ocp.entry_test(x, u).map_err(IntegrationError::model(t))?;
                let consistent = match mode {
                    Mode::Below => matches!(tk, TransitionKind::Cross12 | TransitionKind::EnterSliding),
                    _ => matches!(tk, TransitionKind::Cross21 | TransitionKind::EnterSliding),
                };
                if !consistent {
                    return Err(ambiguous());
                }
                let mut x_plus = x.clone();
                if tk == TransitionKind::EnterSliding {
                    let g = ocp.dynamics.surface(x);
                    if g.abs() > ocp.tolerances.surface_tol {
                        let gx = ocp.dynamics.surface_grad(x);
                        x_plus -= &gx * (g / gx.norm_squared());
                    }
                }
                Ok((tk, x_plus))
            }
            EventKind::AlphaLow if b < -eps => Ok((TransitionKind::ExitToF1, x.clone())),
            EventKind::AlphaHigh if a > eps => Ok((TransitionKind::ExitToF2, x.clone())),
            _ => Err(ambiguous()),
        }
    }

    /// Mode change forced by the new control value at a breakpoint.
    fn pinned_transition(&self, ocp: &HybridOcp, mode: Mode, x: &Vector, u: &Vector, t: f64) -> Result<Option<TransitionKind>, IntegrationError> {
        match mode {
            Mode::Sliding => Ok(ocp
                .exit_test(x, u)
                .map_err(IntegrationError::model(t))?
                .map(TransitionKind::from)),
            Mode::Below | Mode::Above => {
                if ocp.dynamics.surface(x).abs() > ocp.tolerances.surface_tol {
                    return Ok(None);
                }
                // Only a field pushing into the surface changes the mode.
                let (a, b) = ocp.surface_rates(x, u);
                let inward = if mode == Mode::Below { a } else { -b };
                if inward <= ocp.tolerances.eps_tan {
                    return Ok(None);
                }
                let tk = ocp.entry_test(x, u).map_err(IntegrationError::model(t))?;
                Ok((tk.target_mode() != mode).then_some(tk))
            }
        }
    }
}

/// Mesh nodes of one control interval after `start`, ending exactly at `end`.
fn interval_nodes(start: f64, end: f64, steps: usize, extra: &[f64]) -> Vec<f64> {
    let h = (end - start) / steps as f64;
    let mut nodes: Vec<f64> = (1..steps).map(|j| start + j as f64 * h).collect();
    let gap = 1e-12 * h.max(f64::MIN_POSITIVE);
    for &e in extra {
        if e > start + gap && e < end - gap {
            nodes.push(e);
        }
    }
    nodes.sort_by(f64::total_cmp);
    nodes.dedup_by(|b, a| (*b - *a).abs() <= gap);
    nodes.push(end);
    nodes
}
