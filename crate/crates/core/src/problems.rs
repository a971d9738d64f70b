//! Built-in problem registry.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::model::{ControlGrid, Functional, HybridDynamics, HybridOcp, Matrix, ModelError, Region, Vector};

#[derive(Debug, Clone, PartialEq, serde::Serialize, thiserror::Error)]
pub enum ProblemError {
    #[error("unknown problem {0:?}; known problems: {known}", known = NAMES.join(", "))]
    UnknownProblem(String),
    #[error("problem {problem} has no parameter {param:?}")]
    UnknownParam { problem: &'static str, param: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub const NAMES: &[&str] = &[
    "smooth-linear",
    "p2-sliding",
    "constrained-toy",
    "sliding-exit",
    "circle-sliding",
];

/// A registered problem: builds the default instance and a default control.
pub trait Problem: Send + Sync {
    fn name(&self) -> &'static str;
    fn ocp(&self) -> HybridOcp;
    fn default_control(&self, intervals: usize) -> ControlGrid;
}

/// Looks up a problem by name and applies numeric parameters.
pub fn lookup(name: &str, params: &BTreeMap<String, f64>) -> Result<Box<dyn Problem>, ProblemError> {
    let reject = |problem: &'static str| -> Result<(), ProblemError> {
        match params.keys().next() {
            Some(k) => Err(ProblemError::UnknownParam {
                problem,
                param: k.clone(),
            }),
            None => Ok(()),
        }
    };
    let take = |problem: &'static str, key: &str, default: f64| -> Result<f64, ProblemError> {
        if let Some(k) = params.keys().find(|k| k.as_str() != key) {
            return Err(ProblemError::UnknownParam {
                problem,
                param: k.clone(),
            });
        }
        Ok(params.get(key).copied().unwrap_or(default))
    };
    Ok(match name {
        "smooth-linear" => Box::new(SmoothLinear {
            damping: take("smooth-linear", "damping", 0.3)?,
        }),
        "p2-sliding" => Box::new(P2Sliding {
            delta: take("p2-sliding", "delta", 0.0)?,
        }),
        "constrained-toy" => {
            reject("constrained-toy")?;
            Box::new(ConstrainedToy)
        }
        "sliding-exit" => {
            reject("sliding-exit")?;
            Box::new(SlidingExit)
        }
        "circle-sliding" => {
            reject("circle-sliding")?;
            Box::new(CircleSliding::default())
        }
        other => return Err(ProblemError::UnknownProblem(other.to_string())),
    })
}

fn v2(a: f64, b: f64) -> Vector {
    Vector::from_vec(vec![a, b])
}

fn m2(a: f64, b: f64, c: f64, d: f64) -> Matrix {
    Matrix::from_row_slice(2, 2, &[a, b, c, d])
}

fn box1(lo: f64, hi: f64) -> (Vector, Vector) {
    (Vector::from_element(1, lo), Vector::from_element(1, hi))
}

fn half_square_distance(name: &str, target: Vector) -> Functional {
    let t = target.clone();
    Functional::new(
        name,
        move |x| 0.5 * (x - &t).norm_squared(),
        move |x| x - &target,
    )
}

/// `x' = A x + B u` in both regions, with a switching surface `x_0 = 10`
/// that the built-in problems never reach.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: Matrix,
    pub b: Matrix,
}

impl HybridDynamics for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn field(&self, _: Region, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }
    fn field_x(&self, _: Region, _: &Vector, _: &Vector) -> Matrix {
        self.a.clone()
    }
    fn field_u(&self, _: Region, _: &Vector, _: &Vector) -> Matrix {
        self.b.clone()
    }
    fn surface(&self, x: &Vector) -> f64 {
        x[0] - 10.0
    }
    fn surface_grad(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(x.len());
        g[0] = 1.0;
        g
    }
    fn surface_hess(&self, x: &Vector) -> Matrix {
        Matrix::zeros(x.len(), x.len())
    }
}

impl LinearSystem {
    /// Problem on `[0, 1]` from `x0` with cost `½‖x(tf)‖²` and an unbounded-in-practice box.
    pub fn ocp(self, x0: Vector, intervals: usize) -> HybridOcp {
        let n = self.a.nrows();
        let m = self.b.ncols();
        HybridOcp::new(
            "linear",
            Arc::new(self),
            half_square_distance("phi", Vector::zeros(n)),
            0.0,
            1.0,
            x0,
            intervals,
            Vector::from_element(m, -1e3),
            Vector::from_element(m, 1e3),
        )
        .expect("valid linear problem")
    }
}

fn oscillator(damping: f64) -> LinearSystem {
    LinearSystem {
        a: m2(0.0, 1.0, -1.0, -damping),
        b: Matrix::from_column_slice(2, 1, &[0.0, 1.0]),
    }
}

/// Smooth sinusoidal control samples, one per interval.
fn wave_control(intervals: usize, scale: f64) -> ControlGrid {
    ControlGrid::new(
        (0..intervals)
            .map(|n| Vector::from_element(1, scale * ((n + 1) as f64).sin()))
            .collect(),
    )
}

/// Damped oscillator `x1' = x2`, `x2' = -x1 - d x2 + u`, no surface contact.
#[derive(Debug, Clone)]
pub struct SmoothLinear {
    pub damping: f64,
}

impl Default for SmoothLinear {
    fn default() -> Self {
        Self { damping: 0.3 }
    }
}

impl Problem for SmoothLinear {
    fn name(&self) -> &'static str {
        "smooth-linear"
    }

    fn ocp(&self) -> HybridOcp {
        let (lo, hi) = box1(-2.0, 2.0);
        HybridOcp::new(
            "smooth-linear",
            Arc::new(oscillator(self.damping)),
            half_square_distance("phi", Vector::zeros(2)),
            0.0,
            1.0,
            v2(1.0, 0.0),
            10,
            lo,
            hi,
        )
        .expect("valid built-in problem")
    }

    fn default_control(&self, intervals: usize) -> ControlGrid {
        wave_control(intervals, 1.0)
    }
}

/// Relay dynamics `f1 = (1+δ, 1+u)`, `f2 = (1-δ, -1+u)` on the surface `x2 = 0`.
#[derive(Debug, Clone)]
pub struct Relay {
    pub delta: f64,
}

impl HybridDynamics for Relay {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn field(&self, region: Region, _: &Vector, u: &Vector) -> Vector {
        match region {
            Region::F1 => v2(1.0 + self.delta, 1.0 + u[0]),
            Region::F2 => v2(1.0 - self.delta, -1.0 + u[0]),
        }
    }
    fn field_x(&self, _: Region, _: &Vector, _: &Vector) -> Matrix {
        Matrix::zeros(2, 2)
    }
    fn field_u(&self, _: Region, _: &Vector, _: &Vector) -> Matrix {
        Matrix::from_column_slice(2, 1, &[0.0, 1.0])
    }
    fn surface(&self, x: &Vector) -> f64 {
        x[1]
    }
    fn surface_grad(&self, _: &Vector) -> Vector {
        v2(0.0, 1.0)
    }
    fn surface_hess(&self, _: &Vector) -> Matrix {
        Matrix::zeros(2, 2)
    }
}

/// The relay problem: reaches `x2 = 0` and slides along it.
#[derive(Debug, Clone, Default)]
pub struct P2Sliding {
    /// Tilts the horizontal speeds so the sliding velocity depends on `u`.
    pub delta: f64,
}

impl Problem for P2Sliding {
    fn name(&self) -> &'static str {
        "p2-sliding"
    }

    fn ocp(&self) -> HybridOcp {
        let (lo, hi) = box1(-0.8, 0.8);
        HybridOcp::new(
            "p2-sliding",
            Arc::new(Relay { delta: self.delta }),
            half_square_distance("phi", v2(1.0, 0.0)),
            0.0,
            1.0,
            v2(0.0, -0.5),
            10,
            lo,
            hi,
        )
        .expect("valid built-in problem")
    }

    fn default_control(&self, intervals: usize) -> ControlGrid {
        ControlGrid::constant(&Vector::from_element(1, 0.2), intervals)
    }
}

/// Oscillator with `x1(tf) = 0.5` and `x2(tf) ≤ -0.6`.
#[derive(Debug, Clone, Default)]
pub struct ConstrainedToy;

impl Problem for ConstrainedToy {
    fn name(&self) -> &'static str {
        "constrained-toy"
    }

    fn ocp(&self) -> HybridOcp {
        let (lo, hi) = box1(-2.0, 2.0);
        HybridOcp::new(
            "constrained-toy",
            Arc::new(oscillator(0.3)),
            half_square_distance("phi", Vector::zeros(2)),
            0.0,
            1.0,
            v2(1.0, 0.0),
            10,
            lo,
            hi,
        )
        .expect("valid built-in problem")
        .with_equalities(vec![Functional::linear("g1:0", v2(1.0, 0.0), -0.5)])
        .with_inequalities(vec![Functional::linear("g2:0", v2(0.0, 1.0), 0.6)])
    }

    fn default_control(&self, intervals: usize) -> ControlGrid {
        ControlGrid::constant(&Vector::zeros(1), intervals)
    }
}

/// `f1 = (1, 1+u-x1)`, `f2 = (1, -1+u-x1)` on `x2 = 0`: sliding ends at `x1 = 1+u`.
#[derive(Debug, Clone)]
pub struct ExitDynamics;

impl HybridDynamics for ExitDynamics {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn field(&self, region: Region, x: &Vector, u: &Vector) -> Vector {
        let s = match region {
            Region::F1 => 1.0,
            Region::F2 => -1.0,
        };
        v2(1.0, s + u[0] - x[0])
    }
    fn field_x(&self, _: Region, _: &Vector, _: &Vector) -> Matrix {
        m2(0.0, 0.0, -1.0, 0.0)
    }
    fn field_u(&self, _: Region, _: &Vector, _: &Vector) -> Matrix {
        Matrix::from_column_slice(2, 1, &[0.0, 1.0])
    }
    fn surface(&self, x: &Vector) -> f64 {
        x[1]
    }
    fn surface_grad(&self, _: &Vector) -> Vector {
        v2(0.0, 1.0)
    }
    fn surface_hess(&self, _: &Vector) -> Matrix {
        Matrix::zeros(2, 2)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SlidingExit;

impl Problem for SlidingExit {
    fn name(&self) -> &'static str {
        "sliding-exit"
    }

    fn ocp(&self) -> HybridOcp {
        let (lo, hi) = box1(-0.5, 0.5);
        HybridOcp::new(
            "sliding-exit",
            Arc::new(ExitDynamics),
            half_square_distance("phi", v2(2.0, -0.3)),
            0.0,
            2.0,
            v2(0.0, -0.5),
            10,
            lo,
            hi,
        )
        .expect("valid built-in problem")
    }

    fn default_control(&self, intervals: usize) -> ControlGrid {
        ControlGrid::constant(&Vector::from_element(1, 0.25), intervals)
    }
}

/// Rotation plus a radial push toward the unit circle `x1² + x2² = 1`.
#[derive(Debug, Clone)]
pub struct CircleDynamics {
    pub spin: f64,
}

impl CircleDynamics {
    fn radial(region: Region, u: f64) -> f64 {
        match region {
            Region::F1 => 1.0 + u,
            Region::F2 => -1.0 + u,
        }
    }
}

impl HybridDynamics for CircleDynamics {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn field(&self, region: Region, x: &Vector, u: &Vector) -> Vector {
        let w = 1.0 + self.spin * u[0];
        let r = Self::radial(region, u[0]);
        v2(-w * x[1] + r * x[0], w * x[0] + r * x[1])
    }
    fn field_x(&self, region: Region, _: &Vector, u: &Vector) -> Matrix {
        let w = 1.0 + self.spin * u[0];
        let r = Self::radial(region, u[0]);
        m2(r, -w, w, r)
    }
    fn field_u(&self, _: Region, x: &Vector, _: &Vector) -> Matrix {
        Matrix::from_column_slice(
            2,
            1,
            &[-self.spin * x[1] + x[0], self.spin * x[0] + x[1]],
        )
    }
    fn surface(&self, x: &Vector) -> f64 {
        x.norm_squared() - 1.0
    }
    fn surface_grad(&self, x: &Vector) -> Vector {
        x * 2.0
    }
    fn surface_hess(&self, x: &Vector) -> Matrix {
        Matrix::identity(x.len(), x.len()) * 2.0
    }
}

/// Spirals out to the unit circle, then slides along it.
#[derive(Debug, Clone)]
pub struct CircleSliding {
    pub spin: f64,
}

impl Default for CircleSliding {
    fn default() -> Self {
        Self { spin: 0.5 }
    }
}

impl Problem for CircleSliding {
    fn name(&self) -> &'static str {
        "circle-sliding"
    }

    fn ocp(&self) -> HybridOcp {
        let (lo, hi) = box1(-0.8, 0.8);
        HybridOcp::new(
            "circle-sliding",
            Arc::new(CircleDynamics { spin: self.spin }),
            half_square_distance("phi", v2(-0.5, 0.0)),
            0.0,
            1.5,
            v2(0.5, 0.0),
            10,
            lo,
            hi,
        )
        .expect("valid built-in problem")
    }

    fn default_control(&self, intervals: usize) -> ControlGrid {
        wave_control(intervals, 0.3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_names_resolve() {
        for name in NAMES {
            let p = lookup(name, &BTreeMap::new()).unwrap();
            assert_eq!(p.name(), *name);
            let ocp = p.ocp();
            ocp.validate().unwrap();
            let u = p.default_control(ocp.intervals);
            assert_eq!(u.intervals(), ocp.intervals);
            assert_eq!(u.control_dim(), ocp.control_dim());
        }
    }

    #[test]
    fn unknown_names_and_params() {
        assert!(matches!(
            lookup("nope", &BTreeMap::new()),
            Err(ProblemError::UnknownProblem(_))
        ));
        let mut params = BTreeMap::new();
        params.insert("delta".to_string(), 0.5);
        assert!(lookup("p2-sliding", &params).is_ok());
        assert!(matches!(
            lookup("smooth-linear", &params),
            Err(ProblemError::UnknownParam { .. })
        ));
        assert!(lookup("constrained-toy", &params).is_err());
    }

    #[test]
    fn constrained_toy_has_one_of_each() {
        let ocp = ConstrainedToy.ocp();
        assert_eq!(ocp.equalities.len(), 1);
        assert_eq!(ocp.inequalities.len(), 1);
        let x = v2(0.5, -0.6);
        assert_eq!(ocp.equalities[0].value(&x), 0.0);
        assert!(ocp.inequalities[0].value(&x).abs() < 1e-16);
    }

    /// Oracle: central differences of the hand-coded Jacobians and surface derivatives.
    #[test]
    fn analytic_derivatives_match_differences() {
        let dyns: Vec<Box<dyn HybridDynamics>> = vec![
            Box::new(oscillator(0.3)),
            Box::new(Relay { delta: 0.5 }),
            Box::new(ExitDynamics),
            Box::new(CircleDynamics { spin: 0.5 }),
        ];
        let x = v2(0.7, -0.4);
        let u = Vector::from_element(1, 0.3);
        let eps = 1e-6;
        for dy in &dyns {
            for region in [Region::F1, Region::F2] {
                let fx = dy.field_x(region, &x, &u);
                let fu = dy.field_u(region, &x, &u);
                for i in 0..2 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += eps;
                    xm[i] -= eps;
                    let d = (dy.field(region, &xp, &u) - dy.field(region, &xm, &u)) / (2.0 * eps);
                    assert!((d - fx.column(i)).amax() < 1e-8);
                    let dg = (dy.surface(&xp) - dy.surface(&xm)) / (2.0 * eps);
                    assert!((dg - dy.surface_grad(&x)[i]).abs() < 1e-8);
                    let dgx = (dy.surface_grad(&xp) - dy.surface_grad(&xm)) / (2.0 * eps);
                    assert!((dgx - dy.surface_hess(&x).column(i)).amax() < 1e-8);
                }
                let up = &u + Vector::from_element(1, eps);
                let um = &u - Vector::from_element(1, eps);
                let d = (dy.field(region, &x, &up) - dy.field(region, &x, &um)) / (2.0 * eps);
                assert!((d - fu.column(0)).amax() < 1e-8);
            }
        }
    }
}
