//! Exact-penalty descent for terminally constrained control problems.

use serde::Serialize;

use crate::gradient::{self, GradientError};
use crate::integrator::{IntegrationError, Integrator};
use crate::model::{ControlGrid, HybridOcp, Matrix, Vector};
use crate::qp::{self, QpData, QpError, QpSolution};

#[derive(Debug, Clone, PartialEq, serde::Serialize, thiserror::Error)]
pub enum OptimizeError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("direction subproblem failed: {0}")]
    QpFailure(#[from] QpError),
    #[error("penalty test still positive (t_c = {t_c:e}) after {increases} increases of c (c = {c:e})")]
    CFailure { c: f64, t_c: f64, increases: usize },
    #[error("line search found no acceptable step (sigma = {sigma:e}, last alpha = {alpha:e})")]
    LineSearchFailure { sigma: f64, alpha: f64 },
    #[error("line search requires sigma < 0, got {0:e}")]
    NotDescent(f64),
    #[error("control has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
}

/// Functional values at a control.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionValues {
    pub cost: f64,
    pub equalities: Vec<f64>,
    pub inequalities: Vec<f64>,
}

impl FunctionValues {
    pub fn violation(&self) -> f64 {
        constraint_violation(&self.equalities, &self.inequalities)
    }

    pub fn penalty(&self, c: f64) -> f64 {
        penalty_value(self.cost, self.violation(), c)
    }
}

/// Values and gradients at a control.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub values: FunctionValues,
    pub cost_grad: Vector,
    pub eq_grads: Vec<Vector>,
    pub ineq_grads: Vec<Vector>,
}

/// A finite-dimensional problem over a box, as seen by the optimizer.
pub trait ControlProblem {
    fn dim(&self) -> usize;
    fn lower(&self) -> Vector;
    fn upper(&self) -> Vector;
    fn values(&self, u: &Vector) -> Result<FunctionValues, OptimizeError>;
    fn linearize(&self, u: &Vector) -> Result<LocalModel, OptimizeError>;
}

/// A [`HybridOcp`] discretized by an integrator, with controls flattened
/// interval-major.
pub struct OcpObjective<'a> {
    pub ocp: &'a HybridOcp,
    pub integrator: &'a Integrator,
    pub steps_per_interval: usize,
}

impl OcpObjective<'_> {
    fn grid(&self, u: &Vector) -> Result<ControlGrid, OptimizeError> {
        if u.len() != self.dim() {
            return Err(OptimizeError::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        Ok(ControlGrid::from_flat(u.as_slice(), self.ocp.control_dim()))
    }

    fn values_at(&self, x: &Vector) -> FunctionValues {
        FunctionValues {
            cost: self.ocp.cost.value(x),
            equalities: self.ocp.equalities.iter().map(|f| f.value(x)).collect(),
            inequalities: self.ocp.inequalities.iter().map(|f| f.value(x)).collect(),
        }
    }
}

impl ControlProblem for OcpObjective<'_> {
    fn dim(&self) -> usize {
        self.ocp.control_dim() * self.ocp.intervals
    }

    fn lower(&self) -> Vector {
        let lo = &self.ocp.u_lo;
        Vector::from_fn(self.dim(), |i, _| lo[i % lo.len()])
    }

    fn upper(&self) -> Vector {
        let hi = &self.ocp.u_hi;
        Vector::from_fn(self.dim(), |i, _| hi[i % hi.len()])
    }

    fn values(&self, u: &Vector) -> Result<FunctionValues, OptimizeError> {
        let traj = self.integrator.integrate(self.ocp, &self.grid(u)?, self.steps_per_interval)?;
        Ok(self.values_at(traj.final_state()))
    }

    fn linearize(&self, u: &Vector) -> Result<LocalModel, OptimizeError> {
        let traj = self.integrator.integrate(self.ocp, &self.grid(u)?, self.steps_per_interval)?;
        let values = self.values_at(traj.final_state());
        let mut grads = gradient::all_gradients(self.ocp, &traj)?.into_iter().map(|g| g.as_vector());
        let cost_grad = grads.next().expect("cost gradient");
        let eq_grads = grads.by_ref().take(self.ocp.equalities.len()).collect();
        let ineq_grads = grads.collect();
        Ok(LocalModel {
            values,
            cost_grad,
            eq_grads,
            ineq_grads,
        })
    }
}

/// `max(0, |g¹_i|, g²_j)`.
pub fn constraint_violation(equalities: &[f64], inequalities: &[f64]) -> f64 {
    equalities
        .iter()
        .map(|g| g.abs())
        .chain(inequalities.iter().copied())
        .fold(0.0, f64::max)
}

pub fn penalty_value(cost: f64, violation: f64, c: f64) -> f64 {
    cost + c * violation
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltyConfig {
    pub c0: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub max_penalty_increases: usize,
    pub max_line_search: usize,
    /// `H = h_scale · I` unless `hessian` is given.
    pub h_scale: f64,
    #[serde(skip)]
    pub hessian: Option<Matrix>,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            c0: 1.0,
            kappa: 2.0,
            gamma: 0.1,
            eta: 0.5,
            epsilon: 1e-8,
            max_iters: 200,
            max_penalty_increases: 60,
            max_line_search: 60,
            h_scale: 1.0,
            hessian: None,
        }
    }
}

/// `H` together with its verified spectral bounds `ν₁ ≤ ν₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub h: Matrix,
    pub nu1: f64,
    pub nu2: f64,
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |msg: String| Err(OptimizeError::InvalidConfig(msg));
        if !(self.c0 > 0.0) {
            return bad(format!("c0 must be positive, got {}", self.c0));
        }
        if !(self.kappa > 1.0) {
            return bad(format!("kappa must exceed 1, got {}", self.kappa));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.h_scale > 0.0) {
            return bad(format!("h_scale must be positive, got {}", self.h_scale));
        }
        Ok(())
    }

    /// Builds `H` for a problem of dimension `dim` and checks it is
    /// symmetric positive definite.
    pub fn metric(&self, dim: usize) -> Result<Metric, OptimizeError> {
        self.validate()?;
        let h = match &self.hessian {
            Some(h) => h.clone(),
            None => Matrix::identity(dim, dim) * self.h_scale,
        };
        if h.shape() != (dim, dim) {
            return Err(OptimizeError::InvalidConfig(format!(
                "H is {}x{}, expected {dim}x{dim}",
                h.nrows(),
                h.ncols()
            )));
        }
        let asym = (&h - h.transpose()).amax();
        if asym > 1e-12 * h.amax().max(1.0) {
            return Err(OptimizeError::InvalidConfig(format!("H is not symmetric (defect {asym:e})")));
        }
        let eig = h.clone().symmetric_eigenvalues();
        let nu1 = eig.min();
        let nu2 = eig.max();
        if !(nu1 > 0.0) {
            return Err(OptimizeError::InvalidConfig(format!(
                "H must be positive definite, smallest eigenvalue {nu1:e}"
            )));
        }
        Ok(Metric { h, nu1, nu2 })
    }
}

/// Solves the direction-finding subproblem at `u` for penalty `c`.
pub fn direction_subproblem(
    model: &LocalModel,
    u: &Vector,
    lower: &Vector,
    upper: &Vector,
    h: &Matrix,
    c: f64,
) -> Result<QpSolution, OptimizeError> {
    let eq: Vec<(f64, Vector)> = model
        .values
        .equalities
        .iter()
        .copied()
        .zip(model.eq_grads.iter().cloned())
        .collect();
    let ineq: Vec<(f64, Vector)> = model
        .values
        .inequalities
        .iter()
        .copied()
        .zip(model.ineq_grads.iter().cloned())
        .collect();
    let d_lo = lower - u;
    let d_hi = upper - u;
    Ok(qp::solve(&QpData {
        cost_grad: &model.cost_grad,
        eq: &eq,
        ineq: &ineq,
        hessian: h,
        d_lo: &d_lo,
        d_hi: &d_hi,
        penalty: c,
    })?)
}

/// `(σ, t_c)` with `σ = ∇F₀·d + c(β − M)` and `t_c = σ + M/c`.
pub fn descent_and_test(cost_grad: &Vector, d: &Vector, beta: f64, violation: f64, c: f64) -> (f64, f64) {
    let sigma = cost_grad.dot(d) + c * (beta - violation);
    (sigma, sigma + violation / c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyStep {
    pub c: f64,
    pub d: Vector,
    pub beta: f64,
    pub sigma: f64,
    pub t_c: f64,
}

/// Roundoff allowance on `σ ≤ 0` at feasible points.
const SIGMA_TOL: f64 = 1e-12;

/// Smallest `c` in `{c_prev, κ c_prev, κ² c_prev, …}` with `t_c ≤ 0`.
pub fn adjust_penalty(
    model: &LocalModel,
    u: &Vector,
    lower: &Vector,
    upper: &Vector,
    h: &Matrix,
    c_prev: f64,
    config: &PenaltyConfig,
) -> Result<PenaltyStep, OptimizeError> {
    let m = model.values.violation();
    let mut c = c_prev;
    let mut last_t = f64::NAN;
    for _ in 0..=config.max_penalty_increases {
        let sol = direction_subproblem(model, u, lower, upper, h, c)?;
        let (sigma, t_c) = descent_and_test(&model.cost_grad, &sol.d, sol.beta, m, c);
        // At a feasible point t_c = σ, which no choice of c can change.
        if t_c <= 0.0 || (m == 0.0 && sigma <= SIGMA_TOL * model.values.cost.abs().max(1.0)) {
            return Ok(PenaltyStep {
                c,
                d: sol.d,
                beta: sol.beta,
                sigma,
                t_c,
            });
        }
        last_t = t_c;
        c *= config.kappa;
    }
    Err(OptimizeError::CFailure {
        c: c / config.kappa,
        t_c: last_t,
        increases: config.max_penalty_increases,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub u: Vector,
    pub values: FunctionValues,
    pub trials: usize,
}

/// Largest `α ∈ {1, η, η², …}` with `F_c(u + αd) − F_c(u) ≤ γασ`.
pub fn line_search<P: ControlProblem + ?Sized>(
    problem: &P,
    u: &Vector,
    current: &FunctionValues,
    d: &Vector,
    sigma: f64,
    c: f64,
    config: &PenaltyConfig,
) -> Result<LineSearchResult, OptimizeError> {
    if !(sigma < 0.0) {
        return Err(OptimizeError::NotDescent(sigma));
    }
    let (lo, hi) = (problem.lower(), problem.upper());
    let base = current.penalty(c);
    let mut alpha = 1.0;
    for trial in 0..config.max_line_search {
        let mut candidate = u + d * alpha;
        for i in 0..candidate.len() {
            candidate[i] = candidate[i].clamp(lo[i], hi[i]);
        }
        // A failed trial integration counts as a rejected step.
        if let Ok(values) = problem.values(&candidate) {
            if values.penalty(c) - base <= config.gamma * alpha * sigma {
                return Ok(LineSearchResult {
                    alpha,
                    u: candidate,
                    values,
                    trials: trial + 1,
                });
            }
        }
        alpha *= config.eta;
    }
    Err(OptimizeError::LineSearchFailure {
        sigma,
        alpha: alpha / config.eta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateRecord {
    pub k: usize,
    pub u: Vec<f64>,
    pub c: f64,
    pub d: Vec<f64>,
    pub beta: f64,
    pub sigma: f64,
    pub t_c: f64,
    /// `None` on the terminating iterate.
    pub alpha: Option<f64>,
    pub cost: f64,
    pub violation: f64,
    /// `F_c(u_k)`.
    pub penalty: f64,
    /// `F_c(u_{k+1})` with the same `c`, after an accepted step.
    pub penalty_next: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub u: Vector,
    pub history: Vec<IterateRecord>,
    pub termination: Termination,
}

pub fn optimize<P: ControlProblem + ?Sized>(
    problem: &P,
    u0: &Vector,
    config: &PenaltyConfig,
) -> Result<OptimizeOutcome, OptimizeError> {
    let dim = problem.dim();
    if u0.len() != dim {
        return Err(OptimizeError::DimensionMismatch {
            expected: dim,
            got: u0.len(),
        });
    }
    let metric = config.metric(dim)?;
    let (lo, hi) = (problem.lower(), problem.upper());
    let mut u = u0.clone();
    for i in 0..dim {
        u[i] = u[i].clamp(lo[i], hi[i]);
    }
    let mut c = config.c0;
    let mut history = Vec::new();
    for k in 0..config.max_iters {
        let model = problem.linearize(&u)?;
        let step = adjust_penalty(&model, &u, &lo, &hi, &metric.h, c, config)?;
        c = step.c;
        let mut record = IterateRecord {
            k,
            u: u.as_slice().to_vec(),
            c,
            d: step.d.as_slice().to_vec(),
            beta: step.beta,
            sigma: step.sigma,
            t_c: step.t_c,
            alpha: None,
            cost: model.values.cost,
            violation: model.values.violation(),
            penalty: model.values.penalty(c),
            penalty_next: None,
        };
        if step.sigma.abs() <= config.epsilon {
            history.push(record);
            return Ok(OptimizeOutcome {
                u,
                history,
                termination: Termination::Converged,
            });
        }
        let ls = line_search(problem, &u, &model.values, &step.d, step.sigma, c, config)?;
        record.alpha = Some(ls.alpha);
        record.penalty_next = Some(ls.values.penalty(c));
        history.push(record);
        u = ls.u;
    }
    Ok(OptimizeOutcome {
        u,
        history,
        termination: Termination::MaxIters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::Integrator;
    use crate::problems::{ConstrainedToy, Problem, SmoothLinear};

    /// Explicit quadratic test problem: `F₀ = ½|u − a|²` with optional
    /// linear constraints.
    struct Quadratic {
        target: Vector,
        eq: Vec<(Vector, f64)>,
        ineq: Vec<(Vector, f64)>,
        bound: f64,
    }

    impl ControlProblem for Quadratic {
        fn dim(&self) -> usize {
            self.target.len()
        }
        fn lower(&self) -> Vector {
            Vector::from_element(self.dim(), -self.bound)
        }
        fn upper(&self) -> Vector {
            Vector::from_element(self.dim(), self.bound)
        }
        fn values(&self, u: &Vector) -> Result<FunctionValues, OptimizeError> {
            Ok(FunctionValues {
                cost: 0.5 * (u - &self.target).norm_squared(),
                equalities: self.eq.iter().map(|(a, b)| a.dot(u) - b).collect(),
                inequalities: self.ineq.iter().map(|(a, b)| a.dot(u) - b).collect(),
            })
        }
        fn linearize(&self, u: &Vector) -> Result<LocalModel, OptimizeError> {
            Ok(LocalModel {
                values: self.values(u)?,
                cost_grad: u - &self.target,
                eq_grads: self.eq.iter().map(|(a, _)| a.clone()).collect(),
                ineq_grads: self.ineq.iter().map(|(a, _)| a.clone()).collect(),
            })
        }
    }

    #[test]
    fn violation_and_penalty() {
        assert_eq!(constraint_violation(&[], &[-1.0]), 0.0);
        assert_eq!(constraint_violation(&[-0.3], &[]), 0.3);
        assert_eq!(constraint_violation(&[0.1], &[0.4]), 0.4);
        assert_eq!(penalty_value(1.0, 0.5, 10.0), 6.0);
        assert_eq!(penalty_value(2.0, 0.0, 10.0), 2.0);
        assert!(penalty_value(1.0, 0.5, 3.0) > penalty_value(1.0, 0.5, 2.0));
    }

    #[test]
    fn descent_and_test_arithmetic() {
        let g = Vector::from_vec(vec![1.0, 2.0]);
        let (sigma, t) = descent_and_test(&g, &Vector::zeros(2), 0.5, 0.5, 3.0);
        assert_eq!(sigma, 0.0);
        assert_eq!(t, 0.5 / 3.0);
        // σ = −1 from the gradient term alone, M = 0.5, c = 10.
        let d = Vector::from_vec(vec![-1.0, 0.0]);
        let (sigma, t) = descent_and_test(&g, &d, 0.5, 0.5, 10.0);
        assert_eq!(sigma, -1.0);
        assert!((t + 0.95).abs() < 1e-15);
        let (sigma, t) = descent_and_test(&g, &d, 0.0, 0.0, 10.0);
        assert_eq!(sigma, t);
    }

    #[test]
    fn config_validation() {
        assert!(PenaltyConfig::default().validate().is_ok());
        let bad = [
            PenaltyConfig { c0: 0.0, ..Default::default() },
            PenaltyConfig { kappa: 1.0, ..Default::default() },
            PenaltyConfig { gamma: 1.0, ..Default::default() },
            PenaltyConfig { eta: 0.0, ..Default::default() },
            PenaltyConfig { epsilon: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(OptimizeError::InvalidConfig(_))));
        }
        let m = PenaltyConfig { h_scale: 2.5, ..Default::default() }.metric(4).unwrap();
        assert_eq!((m.nu1, m.nu2), (2.5, 2.5));
        let indefinite = PenaltyConfig {
            hessian: Some(Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])),
            ..Default::default()
        };
        assert!(indefinite.metric(2).is_err());
        let spd = PenaltyConfig {
            hessian: Some(Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])),
            ..Default::default()
        };
        let m = spd.metric(2).unwrap();
        assert!((m.nu1 - 1.0).abs() < 1e-14 && (m.nu2 - 3.0).abs() < 1e-14);
    }

    #[test]
    fn penalty_kept_when_test_passes() {
        let p = Quadratic {
            target: Vector::from_vec(vec![1.0, 1.0]),
            eq: vec![],
            ineq: vec![(Vector::from_vec(vec![1.0, 0.0]), 5.0)],
            bound: 10.0,
        };
        let u = Vector::zeros(2);
        let model = p.linearize(&u).unwrap();
        let h = Matrix::identity(2, 2);
        let step = adjust_penalty(&model, &u, &p.lower(), &p.upper(), &h, 1.0, &PenaltyConfig::default()).unwrap();
        assert_eq!(step.c, 1.0);
        assert!(step.sigma <= 0.0);
    }

    #[test]
    fn penalty_grows_until_linearization_is_honoured() {
        // One equality u0 + u1 = 4 starting from u = 0 with cost pulling away.
        let p = Quadratic {
            target: Vector::from_vec(vec![-3.0, -3.0]),
            eq: vec![(Vector::from_vec(vec![1.0, 1.0]), 4.0)],
            ineq: vec![],
            bound: 10.0,
        };
        let u = Vector::zeros(2);
        let model = p.linearize(&u).unwrap();
        let h = Matrix::identity(2, 2);
        let step = adjust_penalty(&model, &u, &p.lower(), &p.upper(), &h, 0.1, &PenaltyConfig::default()).unwrap();
        assert!(step.c > 0.1);
        assert!(step.t_c <= 0.0);
        // Oracle: the smallest admissible c in the geometric sequence.
        let (sigma_prev, t_prev) = {
            let c = step.c / 2.0;
            let sol = direction_subproblem(&model, &u, &p.lower(), &p.upper(), &h, c).unwrap();
            descent_and_test(&model.cost_grad, &sol.d, sol.beta, model.values.violation(), c)
        };
        assert!(sigma_prev <= 0.0);
        assert!(t_prev > 0.0);
    }

    #[test]
    fn vanishing_constraint_gradient_is_c_failure() {
        let p = Quadratic {
            target: Vector::zeros(2),
            eq: vec![(Vector::zeros(2), -0.7)],
            ineq: vec![],
            bound: 10.0,
        };
        let u = Vector::zeros(2);
        let model = p.linearize(&u).unwrap();
        let err = adjust_penalty(
            &model,
            &u,
            &p.lower(),
            &p.upper(),
            &Matrix::identity(2, 2),
            1.0,
            &PenaltyConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, OptimizeError::CFailure { .. }));
    }

    /// One-dimensional problem whose penalty along `d` is `F(u) + ασ + α²`.
    struct Parabola;

    impl ControlProblem for Parabola {
        fn dim(&self) -> usize {
            1
        }
        fn lower(&self) -> Vector {
            Vector::from_element(1, -10.0)
        }
        fn upper(&self) -> Vector {
            Vector::from_element(1, 10.0)
        }
        fn values(&self, u: &Vector) -> Result<FunctionValues, OptimizeError> {
            let a = u[0];
            Ok(FunctionValues {
                cost: -a + a * a,
                equalities: vec![],
                inequalities: vec![],
            })
        }
        fn linearize(&self, u: &Vector) -> Result<LocalModel, OptimizeError> {
            Ok(LocalModel {
                values: self.values(u)?,
                cost_grad: Vector::from_element(1, -1.0 + 2.0 * u[0]),
                eq_grads: vec![],
                ineq_grads: vec![],
            })
        }
    }

    #[test]
    fn armijo_on_parabola() {
        let u = Vector::zeros(1);
        let vals = Parabola.values(&u).unwrap();
        let d = Vector::from_element(1, 1.0);
        let ls = line_search(&Parabola, &u, &vals, &d, -1.0, 1.0, &PenaltyConfig::default()).unwrap();
        assert_eq!(ls.alpha, 0.5);
        assert_eq!(ls.trials, 2);
        assert!(matches!(
            line_search(&Parabola, &u, &vals, &d, 0.0, 1.0, &PenaltyConfig::default()),
            Err(OptimizeError::NotDescent(_))
        ));
    }

    #[test]
    fn armijo_accepts_unit_step_on_linear_decrease() {
        let p = Quadratic {
            target: Vector::zeros(1),
            eq: vec![],
            ineq: vec![],
            bound: 10.0,
        };
        // Along d = −u the cost is ½(1 − α)², slope −1 at α = 0.
        let u = Vector::from_element(1, 1.0);
        let vals = p.values(&u).unwrap();
        let ls = line_search(&p, &u, &vals, &(-&u), -1.0, 1.0, &PenaltyConfig::default()).unwrap();
        assert_eq!(ls.alpha, 1.0);
    }

    #[test]
    fn explicit_quadratic_reaches_kkt_point() {
        // min ½|u − (2, 1)|² s.t. u0 − u1 = 0, u0 ≤ 1.2 → u = (1.2, 1.2).
        let p = Quadratic {
            target: Vector::from_vec(vec![2.0, 1.0]),
            eq: vec![(Vector::from_vec(vec![1.0, -1.0]), 0.0)],
            ineq: vec![(Vector::from_vec(vec![1.0, 0.0]), 1.2)],
            bound: 5.0,
        };
        let out = optimize(&p, &Vector::zeros(2), &PenaltyConfig::default()).unwrap();
        assert_eq!(out.termination, Termination::Converged);
        assert!((out.u[0] - 1.2).abs() < 1e-7 && (out.u[1] - 1.2).abs() < 1e-7);
    }

    #[test]
    fn stationary_start_stops_immediately() {
        let p = Quadratic {
            target: Vector::from_vec(vec![0.5, -0.5]),
            eq: vec![],
            ineq: vec![],
            bound: 1.0,
        };
        let out = optimize(&p, &p.target.clone(), &PenaltyConfig::default()).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].sigma, 0.0);
        assert_eq!(out.termination, Termination::Converged);
    }

    #[test]
    fn smooth_linear_reaches_stationarity() {
        let problem = SmoothLinear::default();
        let ocp = problem.ocp();
        let integrator = Integrator::default();
        let obj = OcpObjective {
            ocp: &ocp,
            integrator: &integrator,
            steps_per_interval: 4,
        };
        let u0 = problem.default_control(ocp.intervals).to_flat();
        // The cost only sees x(tf), so its Hessian is small and rank two; a
        // matching metric keeps unit steps productive.
        let cfg = PenaltyConfig {
            h_scale: 0.05,
            epsilon: 1e-12,
            ..Default::default()
        };
        let out = optimize(&obj, &u0, &cfg).unwrap();
        let grad = obj.linearize(&out.u).unwrap().cost_grad;
        let (lo, hi) = (obj.lower(), obj.upper());
        let projected = Vector::from_fn(grad.len(), |i, _| {
            (out.u[i] - grad[i]).clamp(lo[i], hi[i]) - out.u[i]
        });
        assert!(out.history.len() <= 200);
        assert!(projected.amax() <= 1e-5, "{}", projected.amax());
    }

    #[test]
    fn constrained_toy_contract() {
        let problem = ConstrainedToy;
        let ocp = problem.ocp();
        let integrator = Integrator::default();
        let obj = OcpObjective {
            ocp: &ocp,
            integrator: &integrator,
            steps_per_interval: 4,
        };
        let u0 = problem.default_control(ocp.intervals).to_flat();
        let cfg = PenaltyConfig::default();
        let out = optimize(&obj, &u0, &cfg).unwrap();
        for pair in out.history.windows(2) {
            assert!(pair[1].c >= pair[0].c);
        }
        for r in &out.history {
            assert!(r.sigma <= 1e-10 && r.t_c <= 1e-10);
            if let (Some(alpha), Some(next)) = (r.alpha, r.penalty_next) {
                assert!(next - r.penalty <= cfg.gamma * alpha * r.sigma);
            }
        }
        let last = out.history.last().unwrap();
        assert!(last.violation <= 1e-6 && last.sigma.abs() <= 1e-6, "{last:?}");
    }
}
