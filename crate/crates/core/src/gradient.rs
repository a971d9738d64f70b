//! Reduced gradients with respect to the piecewise-constant control values.

use serde::Serialize;

use crate::adjoint::{self, AdjointError, AdjointTrajectory, DiscreteStateMap};
use crate::integrator::Trajectory;
use crate::model::{Field, FunctionalId, HybridOcp, Mode, Vector};

#[derive(Debug, Clone, PartialEq, serde::Serialize, thiserror::Error)]
pub enum GradientError {
    #[error("adjoint mesh has {adjoint} nodes, forward mesh has {forward}")]
    MeshMismatch { forward: usize, adjoint: usize },
    #[error("direction has length {got}, gradient has length {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Adjoint(#[from] AdjointError),
}

/// `∂w/∂u_n` for every interval, flattened interval-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientVector {
    pub control_dim: usize,
    pub intervals: usize,
    pub data: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(control_dim: usize, intervals: usize) -> Self {
        Self {
            control_dim,
            intervals,
            data: vec![0.0; control_dim * intervals],
        }
    }

    pub fn from_flat(control_dim: usize, data: Vec<f64>) -> Self {
        Self {
            control_dim,
            intervals: data.len() / control_dim.max(1),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn interval(&self, n: usize) -> &[f64] {
        &self.data[n * self.control_dim..(n + 1) * self.control_dim]
    }

    fn add(&mut self, n: usize, v: &Vector) {
        let m = self.control_dim;
        for (d, x) in self.data[n * m..(n + 1) * m].iter_mut().zip(v.iter()) {
            *d += x;
        }
    }

    pub fn as_vector(&self) -> Vector {
        Vector::from_column_slice(&self.data)
    }

    /// Rows of `m` entries, one per interval.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.control_dim).map(<[f64]>::to_vec).collect()
    }
}

fn check_mesh(traj: &Trajectory, adj: &AdjointTrajectory) -> Result<(), GradientError> {
    if adj.lambda.len() != traj.node_count() || adj.stage_lambda.len() != traj.steps.len() {
        return Err(GradientError::MeshMismatch {
            forward: traj.node_count(),
            adjoint: adj.lambda.len(),
        });
    }
    Ok(())
}

/// `h Σ_i b_i f_u(x_i)ᵀ λ_i` on ODE steps, `-F_uᵀ R` on sliding steps, plus the
/// control sensitivity of located sliding exits.
pub fn reduced_gradient(
    ocp: &HybridOcp,
    traj: &Trajectory,
    adj: &AdjointTrajectory,
) -> Result<GradientVector, GradientError> {
    check_mesh(traj, adj)?;
    let b = traj.tableau.b();
    let mut grad = GradientVector::zeros(ocp.control_dim(), ocp.intervals);
    for (k, st) in traj.steps.iter().enumerate() {
        let u = traj.controls.value(st.interval);
        let contribution = match st.mode {
            Mode::Sliding => {
                let r = adj.sliding_r[k].as_ref().ok_or(GradientError::MeshMismatch {
                    forward: traj.node_count(),
                    adjoint: adj.lambda.len(),
                })?;
                let fu = DiscreteStateMap::new(ocp, traj, k).f_u()?;
                -(fu.transpose() * r)
            }
            mode => {
                let field = if mode == Mode::Below { Field::F1 } else { Field::F2 };
                let mut acc = Vector::zeros(ocp.control_dim());
                for (i, xi) in st.stages.iter().enumerate() {
                    let fu = ocp
                        .eval_field_u(field, xi, u)
                        .map_err(|source| AdjointError::Model { k, source })?;
                    acc += fu.transpose() * &adj.stage_lambda[k][i] * (st.h * b[i]);
                }
                acc
            }
        };
        grad.add(st.interval, &contribution);
    }
    for jump in &adj.jumps {
        grad.add(jump.interval, &jump.gradient_term);
    }
    Ok(grad)
}

/// Same quantity assembled from `-F_uᵀ R(k+1)` on every step.
pub fn reduced_gradient_matrix_form(
    ocp: &HybridOcp,
    traj: &Trajectory,
    adj: &AdjointTrajectory,
) -> Result<GradientVector, GradientError> {
    check_mesh(traj, adj)?;
    let mut grad = GradientVector::zeros(ocp.control_dim(), ocp.intervals);
    for (k, st) in traj.steps.iter().enumerate() {
        let lambda_plus = adj
            .jumps
            .iter()
            .find(|j| j.k_t == k + 1)
            .map_or(&adj.lambda[k + 1], |j| &j.lambda_minus);
        let map = DiscreteStateMap::new(ocp, traj, k);
        let big = adjoint::lift_lambda(&map, lambda_plus);
        let out = adjoint::adjoint_step_matrix(&map, &big, 0)?;
        grad.add(st.interval, &(-(map.f_u()?.transpose() * out.r)));
    }
    for jump in &adj.jumps {
        grad.add(jump.interval, &jump.gradient_term);
    }
    Ok(grad)
}

/// `Σ_n d_nᵀ ∂w/∂u_n`.
pub fn directional_derivative(grad: &GradientVector, d: &[f64]) -> Result<f64, GradientError> {
    if d.len() != grad.len() {
        return Err(GradientError::DimensionMismatch {
            expected: grad.len(),
            got: d.len(),
        });
    }
    Ok(grad.data.iter().zip(d).map(|(g, x)| g * x).sum())
}

/// Adjoint sweep and gradient for one functional.
pub fn gradient_of(ocp: &HybridOcp, traj: &Trajectory, id: FunctionalId) -> Result<GradientVector, GradientError> {
    let adj = adjoint::run_adjoint(ocp, traj, id)?;
    reduced_gradient(ocp, traj, &adj)
}

/// Gradients of the cost and all constraints, in `functional_ids` order.
pub fn all_gradients(ocp: &HybridOcp, traj: &Trajectory) -> Result<Vec<GradientVector>, GradientError> {
    adjoint::run_all_adjoints(ocp, traj)?
        .iter()
        .map(|adj| reduced_gradient(ocp, traj, adj))
        .collect()
}
