//! Finite-difference gradient oracle and self-convergence order studies.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::adjoint::{self, AdjointError};
use crate::gradient::{self, GradientError, GradientVector};
use crate::integrator::{IntegrationError, Integrator, Trajectory};
use crate::model::{ControlGrid, FunctionalId, HybridOcp, TransitionKind, Vector};

#[derive(Debug, Clone, PartialEq, serde::Serialize, thiserror::Error)]
pub enum VerifyError {
    #[error("finite-difference step must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("step size {h} does not divide the control interval length {interval}")]
    InvalidStep { h: f64, interval: f64 },
    #[error("step sizes must be strictly decreasing and at least two")]
    InvalidStepList,
    #[error("order studies need a trajectory without transitions; found {0}")]
    NotSmooth(usize),
    #[error("references at h = {h_ref:e} and h/2 disagree by {discrepancy:e}")]
    ReferenceUnconverged { h_ref: f64, discrepancy: f64 },
    #[error("no reference node at t = {0}")]
    MissingReferenceNode(f64),
    #[error("error vanished at h = {0:e}; cannot fit an order")]
    ZeroError(f64),
    #[error("unknown functional {0}")]
    UnknownFunctional(FunctionalId),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
}

impl From<AdjointError> for VerifyError {
    fn from(e: AdjointError) -> Self {
        VerifyError::Gradient(GradientError::Adjoint(e))
    }
}

/// Central differences `(w(u + ε e_i) - w(u - ε e_i)) / 2ε` of a scalar function.
pub fn central_differences<E>(
    mut w: impl FnMut(&[f64]) -> Result<f64, E>,
    u: &[f64],
    eps: f64,
) -> Result<Vec<f64>, E> {
    let mut out = Vec::with_capacity(u.len());
    let mut probe = u.to_vec();
    for i in 0..u.len() {
        probe[i] = u[i] + eps;
        let plus = w(&probe)?;
        probe[i] = u[i] - eps;
        let minus = w(&probe)?;
        probe[i] = u[i];
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdGradient {
    pub gradient: GradientVector,
    /// True where a perturbation changed the sequence of transition kinds.
    pub structure_change: Vec<bool>,
}

/// Finite-difference oracle: every evaluation is a full re-integration.
pub fn fd_gradient(
    ocp: &HybridOcp,
    integrator: &Integrator,
    u: &ControlGrid,
    steps_per_interval: usize,
    id: FunctionalId,
    eps: f64,
) -> Result<FdGradient, VerifyError> {
    if !(eps > 0.0) {
        return Err(VerifyError::InvalidEpsilon(eps));
    }
    let w = ocp.functional(id).ok_or(VerifyError::UnknownFunctional(id))?;
    let m = ocp.control_dim();
    let base = integrator.integrate(ocp, u, steps_per_interval)?.transition_kinds();
    let flat = u.to_flat();
    let evaluate = |v: &[f64]| -> Result<(f64, Vec<TransitionKind>), VerifyError> {
        let traj = integrator.integrate(ocp, &ControlGrid::from_flat(v, m), steps_per_interval)?;
        Ok((w.value(traj.final_state()), traj.transition_kinds()))
    };
    let eval_all = |i: usize| -> Result<(f64, bool), VerifyError> {
        let mut probe = flat.as_slice().to_vec();
        probe[i] = flat[i] + eps;
        let (wp, kp) = evaluate(&probe)?;
        probe[i] = flat[i] - eps;
        let (wm, km) = evaluate(&probe)?;
        Ok(((wp - wm) / (2.0 * eps), kp != base || km != base))
    };
    #[cfg(feature = "parallel")]
    let results: Vec<(f64, bool)> = {
        use rayon::prelude::*;
        (0..flat.len()).into_par_iter().map(eval_all).collect::<Result<_, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(f64, bool)> = (0..flat.len()).map(eval_all).collect::<Result<_, _>>()?;
    Ok(FdGradient {
        gradient: GradientVector::from_flat(m, results.iter().map(|r| r.0).collect()),
        structure_change: results.iter().map(|r| r.1).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub functional: String,
    pub eps: f64,
    pub adjoint: GradientVector,
    pub fd: GradientVector,
    pub structure_change: Vec<bool>,
    /// `|g_i - fd_i| / ‖fd‖∞` per entry.
    pub relative_errors: Vec<f64>,
    /// Largest relative error over entries without a structure change.
    pub max_relative_error: f64,
}

/// Compares the adjoint gradient with the finite-difference oracle.
pub fn check_gradient(
    ocp: &HybridOcp,
    integrator: &Integrator,
    u: &ControlGrid,
    steps_per_interval: usize,
    id: FunctionalId,
    eps: f64,
) -> Result<GradientCheck, VerifyError> {
    let traj = integrator.integrate(ocp, u, steps_per_interval)?;
    let adj = gradient::gradient_of(ocp, &traj, id)?;
    let fd = fd_gradient(ocp, integrator, u, steps_per_interval, id, eps)?;
    let scale = fd
        .gradient
        .data
        .iter()
        .zip(&fd.structure_change)
        .filter(|(_, &s)| !s)
        .fold(0.0f64, |m, (v, _)| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let relative_errors: Vec<f64> = adj
        .data
        .iter()
        .zip(&fd.gradient.data)
        .map(|(a, f)| (a - f).abs() / scale)
        .collect();
    let max_relative_error = relative_errors
        .iter()
        .zip(&fd.structure_change)
        .filter(|(_, &s)| !s)
        .fold(0.0f64, |m, (e, _)| m.max(*e));
    Ok(GradientCheck {
        functional: id.to_string(),
        eps,
        adjoint: adj,
        fd: fd.gradient,
        structure_change: fd.structure_change,
        relative_errors,
        max_relative_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    StateEndpoint,
    StateStage,
    AdjointEndpoint,
    AdjointStage,
    Gradient,
}

impl Quantity {
    pub const ALL: [Quantity; 5] = [
        Quantity::StateEndpoint,
        Quantity::StateStage,
        Quantity::AdjointEndpoint,
        Quantity::AdjointStage,
        Quantity::Gradient,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::StateEndpoint => "state_endpoint",
            Quantity::StateStage => "state_stage",
            Quantity::AdjointEndpoint => "adjoint_endpoint",
            Quantity::AdjointStage => "adjoint_stage",
            Quantity::Gradient => "gradient",
        }
    }

    fn uses_stages(self) -> bool {
        matches!(self, Quantity::StateStage | Quantity::AdjointStage)
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quantity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Quantity::ALL
            .into_iter()
            .find(|q| q.as_str() == s)
            .ok_or_else(|| format!("unknown quantity {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderReport {
    pub quantity: Quantity,
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    /// `log(e_i / e_{i+1}) / log(h_i / h_{i+1})` for consecutive pairs.
    pub pairwise_orders: Vec<f64>,
    /// Least-squares slope of `log e` against `log h`.
    pub slope: f64,
    pub h_ref: f64,
    pub reference_discrepancy: f64,
}

/// Values of a quantity on one mesh, evaluated against a time lookup.
struct Sample {
    /// Endpoint quantities: one vector; stage quantities: one per (step, stage).
    values: Vec<Vector>,
    /// Times of stage values; empty for endpoint quantities.
    times: Vec<f64>,
}

fn stage_times(traj: &Trajectory) -> Vec<f64> {
    let c = traj.tableau.c();
    traj.steps
        .iter()
        .flat_map(|st| c.iter().map(move |ci| st.t + ci * st.h))
        .collect()
}

fn sample(ocp: &HybridOcp, traj: &Trajectory, quantity: Quantity) -> Result<Sample, VerifyError> {
    let endpoint = |v: Vector| Sample {
        values: vec![v],
        times: Vec::new(),
    };
    Ok(match quantity {
        Quantity::StateEndpoint => endpoint(traj.final_state().clone()),
        Quantity::StateStage => Sample {
            values: traj.steps.iter().flat_map(|st| st.stages.iter().cloned()).collect(),
            times: stage_times(traj),
        },
        Quantity::AdjointEndpoint => {
            let adj = adjoint::run_adjoint(ocp, traj, FunctionalId::Cost)?;
            endpoint(adj.lambda[0].clone())
        }
        Quantity::AdjointStage => {
            let adj = adjoint::run_adjoint(ocp, traj, FunctionalId::Cost)?;
            Sample {
                values: adj.stage_lambda.into_iter().flatten().collect(),
                times: stage_times(traj),
            }
        }
        Quantity::Gradient => {
            let g = gradient::gradient_of(ocp, traj, FunctionalId::Cost)?;
            endpoint(g.as_vector())
        }
    })
}

/// Node values of a quantity on a reference mesh, used as the exact solution.
fn reference_values(
    ocp: &HybridOcp,
    traj: &Trajectory,
    quantity: Quantity,
    times: &[f64],
) -> Result<Vec<Vector>, VerifyError> {
    if !quantity.uses_stages() {
        return Ok(sample(ocp, traj, quantity)?.values);
    }
    let nodes: Vec<Vector> = if quantity == Quantity::StateStage {
        traj.states.clone()
    } else {
        adjoint::run_adjoint(ocp, traj, FunctionalId::Cost)?.lambda
    };
    times
        .iter()
        .map(|&t| {
            let tol = 1e-12 * t.abs().max(1.0);
            let idx = traj.times.partition_point(|&x| x < t - tol);
            match traj.times.get(idx) {
                Some(&x) if (x - t).abs() <= tol => Ok(nodes[idx].clone()),
                _ => Err(VerifyError::MissingReferenceNode(t)),
            }
        })
        .collect()
}

fn max_difference(a: &[Vector], b: &[Vector]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).amax()))
}

fn steps_for(ocp: &HybridOcp, h: f64) -> Result<usize, VerifyError> {
    let interval = (ocp.tf - ocp.t0) / ocp.intervals as f64;
    let ratio = interval / h;
    let steps = ratio.round();
    if !(h > 0.0) || steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio {
        return Err(VerifyError::InvalidStep { h, interval });
    }
    Ok(steps as usize)
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Self-convergence study of one quantity over a list of step sizes.
pub fn order_study(
    ocp: &HybridOcp,
    integrator: &Integrator,
    u: &ControlGrid,
    quantity: Quantity,
    hs: &[f64],
) -> Result<OrderReport, VerifyError> {
    if hs.len() < 2 || hs.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(VerifyError::InvalidStepList);
    }
    let steps: Vec<usize> = hs.iter().map(|&h| steps_for(ocp, h)).collect::<Result<_, _>>()?;

    let mut samples = Vec::with_capacity(hs.len());
    let mut extra = Vec::new();
    for &spi in &steps {
        let traj = integrator.integrate(ocp, u, spi)?;
        if !traj.transitions.is_empty() {
            return Err(VerifyError::NotSmooth(traj.transitions.len()));
        }
        let s = sample(ocp, &traj, quantity)?;
        extra.extend_from_slice(&s.times);
        samples.push(s);
    }

    let spi_ref = steps.last().unwrap() * 8;
    let h_ref = hs.last().unwrap() / 8.0;
    let reference = |spi: usize| -> Result<Vec<Vec<Vector>>, VerifyError> {
        let traj = integrator.integrate_with_nodes(ocp, u, spi, &extra)?;
        if !traj.transitions.is_empty() {
            return Err(VerifyError::NotSmooth(traj.transitions.len()));
        }
        samples
            .iter()
            .map(|s| reference_values(ocp, &traj, quantity, &s.times))
            .collect()
    };
    let refs = reference(spi_ref)?;
    let check = reference(spi_ref * 2)?;
    let mut discrepancy = 0.0f64;
    let mut ref_scale = 0.0f64;
    for (a, b) in refs.iter().zip(&check) {
        discrepancy = discrepancy.max(max_difference(a, b));
        ref_scale = ref_scale.max(a.iter().fold(0.0f64, |m, v| m.max(v.amax())));
    }
    if discrepancy > 1e-12 * ref_scale.max(1.0) {
        return Err(VerifyError::ReferenceUnconverged { h_ref, discrepancy });
    }

    let errors: Vec<f64> = samples
        .iter()
        .zip(&refs)
        .map(|(s, r)| max_difference(&s.values, r))
        .collect();
    if let Some(i) = errors.iter().position(|&e| !(e > 0.0)) {
        return Err(VerifyError::ZeroError(hs[i]));
    }
    let pairwise_orders = (0..hs.len() - 1)
        .map(|i| (errors[i] / errors[i + 1]).ln() / (hs[i] / hs[i + 1]).ln())
        .collect();
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    Ok(OrderReport {
        quantity,
        h: hs.to_vec(),
        errors,
        pairwise_orders,
        slope: fit_slope(&lx, &ly),
        h_ref,
        reference_discrepancy: discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{P2Sliding, Problem, SmoothLinear};

    #[test]
    fn central_differences_of_square() {
        let d = central_differences(|u| Ok::<_, ()>(u[0] * u[0]), &[3.0], 1e-6).unwrap();
        assert!((d[0] - 6.0).abs() <= 1e-6);
    }

    #[test]
    fn quantity_names_round_trip() {
        for q in Quantity::ALL {
            assert_eq!(q.as_str().parse::<Quantity>().unwrap(), q);
        }
        assert!("state".parse::<Quantity>().is_err());
    }

    #[test]
    fn slope_of_exact_power_law() {
        let x: Vec<f64> = [0.1f64, 0.05, 0.025].iter().map(|h| h.ln()).collect();
        let y: Vec<f64> = [0.1f64, 0.05, 0.025].iter().map(|h| (3.0 * h.powi(4)).ln()).collect();
        assert!((fit_slope(&x, &y) - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn step_list_validation() {
        let p = SmoothLinear::default();
        let ocp = p.ocp();
        let u = p.default_control(10);
        let int = Integrator::default();
        assert_eq!(
            order_study(&ocp, &int, &u, Quantity::StateEndpoint, &[0.05, 0.1]),
            Err(VerifyError::InvalidStepList)
        );
        assert!(matches!(
            order_study(&ocp, &int, &u, Quantity::StateEndpoint, &[0.1, 0.03]),
            Err(VerifyError::InvalidStep { .. })
        ));
    }

    #[test]
    fn sliding_problem_is_rejected() {
        let p = P2Sliding::default();
        let ocp = p.ocp();
        let u = p.default_control(10);
        assert!(matches!(
            order_study(&ocp, &Integrator::default(), &u, Quantity::StateEndpoint, &[0.1, 0.05]),
            Err(VerifyError::NotSmooth(1))
        ));
    }

    #[test]
    fn fd_of_uncontrolled_direction_is_zero() {
        let p = P2Sliding::default();
        let ocp = p.ocp();
        let u = p.default_control(10);
        // x(tf) = (1, 0) for every admissible control when the tilt is zero.
        let fd = fd_gradient(&ocp, &Integrator::default(), &u, 4, FunctionalId::Cost, 1e-6).unwrap();
        assert!(fd.gradient.data.iter().all(|v| v.abs() <= 1e-8));
        assert!(fd.structure_change.iter().all(|s| !s));
    }

    #[test]
    fn bad_epsilon_rejected() {
        let p = SmoothLinear::default();
        let ocp = p.ocp();
        let u = p.default_control(10);
        assert_eq!(
            fd_gradient(&ocp, &Integrator::default(), &u, 1, FunctionalId::Cost, 0.0),
            Err(VerifyError::InvalidEpsilon(0.0))
        );
    }
}
