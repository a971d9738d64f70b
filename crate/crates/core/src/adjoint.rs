//! Backward discrete-adjoint sweep over a stored forward trajectory.
//!
//! Each step's implicit map `F(X(k+1), X(k), u) = 0` is linearized at the
//! stored stages; the sweep solves `F_X⁺ᵀ R = Λ(k+1)` and sets
//! `Λ(k) = -F_Xᵀ R`. ODE steps also have the equivalent transformed stage
//! form. Located transitions apply a normal-direction jump fixed by
//! Hamiltonian continuity.

use crate::integrator::{StepRecord, Trajectory, TransitionRecord};
use crate::linalg;
use crate::model::{Field, FunctionalId, HybridOcp, Matrix, Mode, ModelError, TransitionKind, Vector};

#[derive(Debug, Clone, PartialEq, serde::Serialize, thiserror::Error)]
pub enum AdjointError {
    #[error("adjoint stage system of step {k} is numerically singular")]
    SingularSystem { k: usize },
    #[error("sliding terminal system is numerically singular")]
    SingularTerminalSystem,
    #[error("jump system at t = {t_t} is singular: e_x f = {coefficient:e}")]
    SingularJumpSystem { t_t: f64, coefficient: f64 },
    #[error("unknown functional {0}")]
    UnknownFunctional(FunctionalId),
    #[error("{0} must be nonzero for the transformed scheme")]
    ZeroWeight(&'static str),
    #[error("step {k}: {source}")]
    Model { k: usize, source: ModelError },
}

fn model_err(k: usize) -> impl FnOnce(ModelError) -> AdjointError {
    move |source| AdjointError::Model { k, source }
}

/// Linearization of one step's implicit map at the stored trajectory.
///
/// ODE steps use `X(k+1) = (x_1, …, x_s, x⁺)` with rows
/// `x_i - x - h Σ_j a_ij f(x_j)` and `x⁺ - x - h Σ_j b_j f(x_j)`.
/// Sliding steps use `X(k+1) = (x_1, …, x_s, z_1, …, z_s, x⁺)` with rows
/// `x_i - x - h Σ_j a_ij (f_F(x_j) + g_x(x_j)ᵀ z_j)`, `g(x_i)` and `x⁺ - x_s`.
pub struct DiscreteStateMap<'a> {
    ocp: &'a HybridOcp,
    traj: &'a Trajectory,
    k: usize,
}

impl<'a> DiscreteStateMap<'a> {
    pub fn new(ocp: &'a HybridOcp, traj: &'a Trajectory, k: usize) -> Self {
        Self { ocp, traj, k }
    }

    fn step(&self) -> &StepRecord {
        &self.traj.steps[self.k]
    }

    fn u(&self) -> &Vector {
        self.traj.control_of_step(self.k)
    }

    pub fn is_sliding(&self) -> bool {
        self.step().mode == Mode::Sliding
    }

    /// Length of `X(k+1)`.
    pub fn dim(&self) -> usize {
        let (s, n) = (self.traj.tableau.stages(), self.ocp.state_dim());
        if self.is_sliding() {
            s * (n + 1) + n
        } else {
            (s + 1) * n
        }
    }

    fn field(&self) -> Field {
        match self.step().mode {
            Mode::Below => Field::F1,
            Mode::Above => Field::F2,
            Mode::Sliding => Field::Filippov,
        }
    }

    /// Right-hand side at stage `j`, including `g_xᵀ z_j` on sliding steps.
    fn stage_rhs(&self, j: usize) -> Result<Vector, AdjointError> {
        let st = self.step();
        let x = &st.stages[j];
        let f = self.ocp.eval_field(self.field(), x, self.u()).map_err(model_err(self.k))?;
        if self.is_sliding() {
            Ok(f + self.ocp.dynamics.surface_grad(x) * st.z_stages[j])
        } else {
            Ok(f)
        }
    }

    /// `∂(rhs)/∂x` at stage `j`.
    fn stage_jacobian(&self, j: usize) -> Result<Matrix, AdjointError> {
        let st = self.step();
        let x = &st.stages[j];
        let fx = self.ocp.eval_field_x(self.field(), x, self.u()).map_err(model_err(self.k))?;
        if self.is_sliding() {
            Ok(fx + self.ocp.dynamics.surface_hess(x) * st.z_stages[j])
        } else {
            Ok(fx)
        }
    }

    pub fn residual(&self) -> Result<Vector, AdjointError> {
        let tab = &self.traj.tableau;
        let (s, n) = (tab.stages(), self.ocp.state_dim());
        let st = self.step();
        let x = &self.traj.states[self.k];
        let x_plus = &self.traj.states[self.k + 1];
        let rhs: Vec<Vector> = (0..s).map(|j| self.stage_rhs(j)).collect::<Result<_, _>>()?;
        let mut out = Vector::zeros(self.dim());
        for i in 0..s {
            let mut r = &st.stages[i] - x;
            for j in 0..s {
                r -= &rhs[j] * (st.h * tab.a()[(i, j)]);
            }
            out.rows_mut(i * n, n).copy_from(&r);
        }
        if self.is_sliding() {
            for i in 0..s {
                out[s * n + i] = self.ocp.dynamics.surface(&st.stages[i]);
            }
            out.rows_mut(s * (n + 1), n).copy_from(&(x_plus - &st.stages[s - 1]));
        } else {
            let mut r = x_plus - x;
            for j in 0..s {
                r -= &rhs[j] * (st.h * tab.b()[j]);
            }
            out.rows_mut(s * n, n).copy_from(&r);
        }
        Ok(out)
    }

    pub fn f_x_plus(&self) -> Result<Matrix, AdjointError> {
        let tab = &self.traj.tableau;
        let (s, n) = (tab.stages(), self.ocp.state_dim());
        let st = self.step();
        let h = st.h;
        let dim = self.dim();
        let mut m = Matrix::identity(dim, dim);
        let end = if self.is_sliding() { s * (n + 1) } else { s * n };
        for j in 0..s {
            let kj = self.stage_jacobian(j)?;
            for i in 0..s {
                linalg::add_block(&mut m, i * n, j * n, &kj, -h * tab.a()[(i, j)]);
            }
            if self.is_sliding() {
                let gx = self.ocp.dynamics.surface_grad(&st.stages[j]);
                for i in 0..s {
                    for r in 0..n {
                        m[(i * n + r, s * n + j)] = -h * tab.a()[(i, j)] * gx[r];
                    }
                }
                let row = s * n + j;
                m[(row, row)] = 0.0;
                for c in 0..n {
                    m[(row, j * n + c)] = gx[c];
                }
            } else {
                linalg::add_block(&mut m, end, j * n, &kj, -h * tab.b()[j]);
            }
        }
        if self.is_sliding() {
            linalg::add_block(&mut m, end, (s - 1) * n, &Matrix::identity(n, n), -1.0);
        }
        Ok(m)
    }

    /// `∂F/∂X(k)` where the previous augmented vector has `prev_stage_dim`
    /// stage entries ahead of `x(k)`; only the `x(k)` columns are nonzero.
    pub fn f_x(&self, prev_stage_dim: usize) -> Matrix {
        let (s, n) = (self.traj.tableau.stages(), self.ocp.state_dim());
        let mut m = Matrix::zeros(self.dim(), prev_stage_dim + n);
        for i in 0..s {
            linalg::set_block(&mut m, i * n, prev_stage_dim, &(-Matrix::identity(n, n)));
        }
        if !self.is_sliding() {
            linalg::set_block(&mut m, s * n, prev_stage_dim, &(-Matrix::identity(n, n)));
        }
        m
    }

    pub fn f_u(&self) -> Result<Matrix, AdjointError> {
        let tab = &self.traj.tableau;
        let (s, n, m) = (tab.stages(), self.ocp.state_dim(), self.ocp.control_dim());
        let st = self.step();
        let fus: Vec<Matrix> = (0..s)
            .map(|j| {
                self.ocp
                    .eval_field_u(self.field(), &st.stages[j], self.u())
                    .map_err(model_err(self.k))
            })
            .collect::<Result<_, _>>()?;
        let mut out = Matrix::zeros(self.dim(), m);
        for i in 0..s {
            for j in 0..s {
                linalg::add_block(&mut out, i * n, 0, &fus[j], -st.h * tab.a()[(i, j)]);
            }
        }
        if !self.is_sliding() {
            for j in 0..s {
                linalg::add_block(&mut out, s * n, 0, &fus[j], -st.h * tab.b()[j]);
            }
        }
        Ok(out)
    }
}

/// Result of one matrix-form adjoint step.
#[derive(Debug, Clone)]
pub struct MatrixStep {
    pub r: Vector,
    /// Full `Λ(k)`, stage block first.
    pub big_lambda: Vector,
    pub lambda: Vector,
}

/// Solves `F_X⁺ᵀ R = Λ(k+1)` and returns `Λ(k) = -F_Xᵀ R` for a previous
/// augmented vector with `prev_stage_dim` stage entries.
pub fn adjoint_step_matrix(
    map: &DiscreteStateMap<'_>,
    big_lambda_plus: &Vector,
    prev_stage_dim: usize,
) -> Result<MatrixStep, AdjointError> {
    let k = map.k;
    let a = map.f_x_plus()?.transpose();
    let r = linalg::solve(a, big_lambda_plus).ok_or(AdjointError::SingularSystem { k })?;
    let big_lambda = -(map.f_x(prev_stage_dim).transpose() * &r);
    let n = map.ocp.state_dim();
    let lambda = big_lambda.rows(prev_stage_dim, n).into_owned();
    Ok(MatrixStep { r, big_lambda, lambda })
}

/// `Λ(k+1)` for a step with `λ⁺` and zero stage multipliers.
pub fn lift_lambda(map: &DiscreteStateMap<'_>, lambda_plus: &Vector) -> Vector {
    let mut v = Vector::zeros(map.dim());
    let n = lambda_plus.len();
    v.rows_mut(map.dim() - n, n).copy_from(lambda_plus);
    v
}

/// Transformed stage form on an ODE step:
/// `λ_i = λ⁺ + h Σ_j (a_ji b_j / b_i) f_x(x_j)ᵀ λ_j`, `λ = λ⁺ + h Σ_i b_i f_x(x_i)ᵀ λ_i`.
pub fn adjoint_step_transformed(
    map: &DiscreteStateMap<'_>,
    lambda_plus: &Vector,
) -> Result<(Vec<Vector>, Vector), AdjointError> {
    let k = map.k;
    let tab = &map.traj.tableau;
    let (s, n) = (tab.stages(), map.ocp.state_dim());
    let (a, b) = (tab.a(), tab.b());
    if b.iter().any(|&bi| bi == 0.0) {
        return Err(AdjointError::ZeroWeight("every weight b_i"));
    }
    let h = map.step().h;
    let jt: Vec<Matrix> = (0..s)
        .map(|j| map.stage_jacobian(j).map(|m| m.transpose()))
        .collect::<Result<_, _>>()?;
    let mut sys = Matrix::identity(s * n, s * n);
    for i in 0..s {
        for j in 0..s {
            linalg::add_block(&mut sys, i * n, j * n, &jt[j], -h * a[(j, i)] * b[j] / b[i]);
        }
    }
    let mut rhs = Vector::zeros(s * n);
    for i in 0..s {
        rhs.rows_mut(i * n, n).copy_from(lambda_plus);
    }
    let sol = linalg::solve(sys, &rhs).ok_or(AdjointError::SingularSystem { k })?;
    let stages: Vec<Vector> = (0..s).map(|i| sol.rows(i * n, n).into_owned()).collect();
    let mut lambda = lambda_plus.clone();
    for i in 0..s {
        lambda += &jt[i] * &stages[i] * (h * b[i]);
    }
    Ok((stages, lambda))
}

/// Adjoint values of one sliding step.
#[derive(Debug, Clone)]
pub struct SlidingAdjointStep {
    pub r: Vector,
    pub lambda: Vector,
    /// Stage values `λ_j = Σ_i a_ij r_i / b_j`.
    pub stages: Vec<Vector>,
    /// `λ_g,i = ρ_i / (h b_i)` from the constraint-row multipliers.
    pub lambda_g: Vec<f64>,
}

pub fn adjoint_step_sliding(
    map: &DiscreteStateMap<'_>,
    lambda_plus: &Vector,
) -> Result<SlidingAdjointStep, AdjointError> {
    let big = lift_lambda(map, lambda_plus);
    let out = adjoint_step_matrix(map, &big, 0)?;
    let tab = &map.traj.tableau;
    let (s, n) = (tab.stages(), map.ocp.state_dim());
    let h = map.step().h;
    let (a, b) = (tab.a(), tab.b());
    let stages = (0..s)
        .map(|j| {
            let mut v = Vector::zeros(n);
            for i in 0..s {
                v += out.r.rows(i * n, n) * a[(i, j)];
            }
            v / b[j]
        })
        .collect();
    let lambda_g = (0..s).map(|i| out.r[s * n + i] / (h * b[i])).collect();
    Ok(SlidingAdjointStep {
        r: out.r,
        lambda: out.lambda,
        stages,
        lambda_g,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalValues {
    pub lambda: Vector,
    /// Present when the trajectory ends in sliding mode.
    pub lambda_g: Option<f64>,
    pub nu1: Option<f64>,
    /// Max residual of the terminal system.
    pub residual: f64,
}

/// `λ(K) = w_x` after an ODE segment. After a sliding segment, solves
/// `λ + ν₁ g_xᵀ = w_x`, `g_x λ = 0` and the differentiated constraint
/// `(g_xx x')ᵀ λ - g_x Kᵀ λ - (g_x g_xᵀ) λ_g = 0` with `K = (f_F)_x + z g_xx`.
pub fn terminal_conditions(
    ocp: &HybridOcp,
    traj: &Trajectory,
    w_x: &Vector,
) -> Result<TerminalValues, AdjointError> {
    if traj.final_mode() != Mode::Sliding {
        return Ok(TerminalValues {
            lambda: w_x.clone(),
            lambda_g: None,
            nu1: None,
            residual: 0.0,
        });
    }
    let kk = traj.steps.len() - 1;
    let n = ocp.state_dim();
    let x = traj.final_state();
    let u = traj.control_of_step(kk);
    let z = traj.z.last().copied().flatten().unwrap_or(0.0);
    let dy = &ocp.dynamics;
    let gx = dy.surface_grad(x);
    let gxx = dy.surface_hess(x);
    let jac = ocp.filippov_jacobians(x, u).map_err(model_err(kk))?;
    let xdot = &jac.field + &gx * z;
    let kmat = &jac.field_x + &gxx * z;
    let hidden = &gxx * &xdot - &kmat * &gx;

    let mut m = Matrix::zeros(n + 2, n + 2);
    linalg::set_block(&mut m, 0, 0, &Matrix::identity(n, n));
    for i in 0..n {
        m[(i, n)] = gx[i];
        m[(n, i)] = gx[i];
        m[(n + 1, i)] = hidden[i];
    }
    m[(n + 1, n + 1)] = -gx.norm_squared();
    let mut rhs = Vector::zeros(n + 2);
    rhs.rows_mut(0, n).copy_from(w_x);
    let sol = linalg::solve(m.clone(), &rhs).ok_or(AdjointError::SingularTerminalSystem)?;
    let residual = (&m * &sol - &rhs).amax();
    Ok(TerminalValues {
        lambda: sol.rows(0, n).into_owned(),
        nu1: Some(sol[n]),
        lambda_g: Some(sol[n + 1]),
        residual,
    })
}

/// Velocity and event derivatives on either side of a transition.
#[derive(Debug, Clone)]
pub struct JumpData {
    /// Field of the mode before the transition (forward time).
    pub f_minus: Vector,
    /// `H⁺ = λ⁺ᵀ f⁺ - λ_g⁺ g(x)` on the mode after the transition.
    pub f_plus: Vector,
    pub lambda_g_plus: f64,
    pub g_value: f64,
    /// Gradient of the event function.
    pub e_x: Vector,
    /// Control derivative of the event function (nonzero for exits).
    pub e_u: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub transition: usize,
    pub t_t: f64,
    pub k_t: usize,
    pub kind: TransitionKind,
    pub pi: f64,
    pub lambda_plus: Vector,
    pub lambda_minus: Vector,
    /// `λ⁻ᵀ f⁻ - H⁺` after the solve.
    pub residual: f64,
    pub interval: usize,
    /// `-π e_u`, added to the gradient of `interval`.
    pub gradient_term: Vector,
}

/// Solves `λ⁻ = λ⁺ - π e_xᵀ` together with `λ⁻ᵀ f⁻ = λ⁺ᵀ f⁺ - λ_g⁺ g`.
pub fn transition_jump(
    ocp: &HybridOcp,
    record: &TransitionRecord,
    data: &JumpData,
    lambda_plus: &Vector,
) -> Result<(Vector, f64, f64), AdjointError> {
    let coefficient = data.e_x.dot(&data.f_minus);
    if coefficient.abs() <= ocp.tolerances.eps_tan {
        return Err(AdjointError::SingularJumpSystem {
            t_t: record.t_t,
            coefficient,
        });
    }
    let h_plus = lambda_plus.dot(&data.f_plus) - data.lambda_g_plus * data.g_value;
    let pi = (lambda_plus.dot(&data.f_minus) - h_plus) / coefficient;
    let lambda_minus = lambda_plus - &data.e_x * pi;
    let residual = (lambda_minus.dot(&data.f_minus) - h_plus).abs();
    Ok((lambda_minus, pi, residual))
}

fn mode_field(ocp: &HybridOcp, mode: Mode, x: &Vector, u: &Vector, z: f64, k: usize) -> Result<Vector, AdjointError> {
    match mode.ode_field() {
        Some(field) => ocp.eval_field(field, x, u).map_err(model_err(k)),
        None => {
            let (f, _) = ocp.filippov_field(x, u).map_err(model_err(k))?;
            Ok(f + ocp.dynamics.surface_grad(x) * z)
        }
    }
}

fn jump_data(
    ocp: &HybridOcp,
    traj: &Trajectory,
    record: &TransitionRecord,
    lambda_g_plus: f64,
) -> Result<JumpData, AdjointError> {
    let k = record.k_t;
    let x = &record.x_minus;
    let before = &traj.steps[k - 1];
    let u_minus = traj.controls.value(before.interval);
    let u_plus = traj.steps.get(k).map_or(u_minus, |s| traj.controls.value(s.interval));
    let mode_plus = record.kind.target_mode();
    let z_minus = traj.z[k].filter(|_| before.mode == Mode::Sliding).unwrap_or(0.0);
    let z_plus = if mode_plus == Mode::Sliding { traj.z[k].unwrap_or(0.0) } else { 0.0 };
    let f_minus = mode_field(ocp, before.mode, x, u_minus, z_minus, k)?;
    let f_plus = mode_field(ocp, mode_plus, &record.x_plus, u_plus, z_plus, k)?;
    let m = ocp.control_dim();
    let (e_x, e_u) = match record.kind {
        TransitionKind::ExitToF1 | TransitionKind::ExitToF2 => {
            let jac = ocp.filippov_jacobians(x, u_minus).map_err(model_err(k))?;
            (jac.alpha_x, jac.alpha_u)
        }
        _ => (ocp.dynamics.surface_grad(x), Vector::zeros(m)),
    };
    Ok(JumpData {
        f_minus,
        f_plus,
        lambda_g_plus: if mode_plus == Mode::Sliding { lambda_g_plus } else { 0.0 },
        g_value: ocp.dynamics.surface(&record.x_plus),
        e_x,
        e_u,
    })
}

#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub functional: FunctionalId,
    /// `λ(k)` at every node; right limits at transition nodes.
    pub lambda: Vec<Vector>,
    /// Stage values `λ_i` per step.
    pub stage_lambda: Vec<Vec<Vector>>,
    /// `λ_g,i` per step; empty on ODE steps.
    pub stage_lambda_g: Vec<Vec<f64>>,
    /// `R(k+1)` on sliding steps, for the `-F_uᵀ R` gradient.
    pub sliding_r: Vec<Option<Vector>>,
    pub terminal: TerminalValues,
    pub jumps: Vec<JumpRecord>,
}

impl AdjointTrajectory {
    /// `λ_g` at node `k`: the last-stage value of the sliding step ending there,
    /// or the terminal value at the final node.
    pub fn node_lambda_g(&self, k: usize) -> Option<f64> {
        if k == self.lambda.len() - 1 {
            if let Some(v) = self.terminal.lambda_g {
                return Some(v);
            }
        }
        k.checked_sub(1)
            .and_then(|j| self.stage_lambda_g.get(j))
            .and_then(|v| v.last().copied())
    }
}

/// Backward sweep for one endpoint functional.
pub fn run_adjoint(
    ocp: &HybridOcp,
    traj: &Trajectory,
    id: FunctionalId,
) -> Result<AdjointTrajectory, AdjointError> {
    let w = ocp.functional(id).ok_or(AdjointError::UnknownFunctional(id))?;
    let w_x = w.gradient(traj.final_state());
    run_adjoint_from(ocp, traj, id, &w_x)
}

/// Backward sweep for an arbitrary terminal gradient `w_x`.
pub fn run_adjoint_from(
    ocp: &HybridOcp,
    traj: &Trajectory,
    id: FunctionalId,
    w_x: &Vector,
) -> Result<AdjointTrajectory, AdjointError> {
    let kk = traj.steps.len();
    let n = ocp.state_dim();
    let m = ocp.control_dim();
    let terminal = terminal_conditions(ocp, traj, w_x)?;
    let mut lambda = vec![Vector::zeros(n); kk + 1];
    let mut stage_lambda = vec![Vec::new(); kk];
    let mut stage_lambda_g = vec![Vec::new(); kk];
    let mut sliding_r = vec![None; kk];
    let mut jumps = Vec::new();
    lambda[kk] = terminal.lambda.clone();

    // Located transitions by node, latest first.
    let mut pending: Vec<(usize, &TransitionRecord)> = traj
        .transitions
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.pinned)
        .collect();

    let mut lambda_plus = terminal.lambda.clone();
    for k in (0..kk).rev() {
        // Jumps at node k + 1 connect step k + 1 (after) to step k (before).
        while let Some(&(idx, rec)) = pending.last() {
            if rec.k_t != k + 1 {
                break;
            }
            pending.pop();
            let lg = stage_lambda_g.get(k + 1).and_then(|v| v.first().copied()).unwrap_or(0.0);
            let data = jump_data(ocp, traj, rec, lg)?;
            let (lambda_minus, pi, residual) = transition_jump(ocp, rec, &data, &lambda_plus)?;
            jumps.push(JumpRecord {
                transition: idx,
                t_t: rec.t_t,
                k_t: rec.k_t,
                kind: rec.kind,
                pi,
                lambda_plus: lambda_plus.clone(),
                lambda_minus: lambda_minus.clone(),
                residual,
                interval: rec.interval,
                gradient_term: if data.e_u.len() == m { -&data.e_u * pi } else { Vector::zeros(m) },
            });
            lambda_plus = lambda_minus;
        }

        let map = DiscreteStateMap::new(ocp, traj, k);
        if map.is_sliding() {
            let out = adjoint_step_sliding(&map, &lambda_plus)?;
            lambda[k] = out.lambda.clone();
            stage_lambda[k] = out.stages;
            stage_lambda_g[k] = out.lambda_g;
            sliding_r[k] = Some(out.r);
            lambda_plus = out.lambda;
        } else {
            let (stages, lam) = adjoint_step_transformed(&map, &lambda_plus)?;
            stage_lambda[k] = stages;
            lambda[k] = lam.clone();
            lambda_plus = lam;
        }
    }
    jumps.reverse();
    Ok(AdjointTrajectory {
        functional: id,
        lambda,
        stage_lambda,
        stage_lambda_g,
        sliding_r,
        terminal,
        jumps,
    })
}

/// One adjoint sweep per functional (cost, equalities, inequalities), sharing
/// the forward trajectory.
pub fn run_all_adjoints(ocp: &HybridOcp, traj: &Trajectory) -> Result<Vec<AdjointTrajectory>, AdjointError> {
    let ids = ocp.functional_ids();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ids.par_iter().map(|&id| run_adjoint(ocp, traj, id)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ids.iter().map(|&id| run_adjoint(ocp, traj, id)).collect()
    }
}
