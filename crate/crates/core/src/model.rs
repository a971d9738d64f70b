//! Problem definition and the pointwise sliding-mode algebra: region fields,
//! the switching surface, the Filippov coefficient and the transition tests.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq, serde::Serialize, thiserror::Error)]
pub enum ModelError {
    #[error("Filippov denominator g_x(f1 - f2) = {value:e} is degenerate (tangential fields)")]
    DegenerateDenominator { value: f64 },
    #[error("tangential configuration: g_x f1 = {rate_f1:e}, g_x f2 = {rate_f2:e}")]
    TangentialAmbiguity { rate_f1: f64, rate_f2: f64 },
    #[error("both fields point away from the surface: g_x f1 = {rate_f1:e}, g_x f2 = {rate_f2:e}")]
    RepellingSurface { rate_f1: f64, rate_f2: f64 },
    #[error("state is off the switching surface: |g(x)| = {value:e}")]
    OffSurface { value: f64 },
    #[error("surface gradient vanishes at a surface point")]
    DegenerateSurfaceGradient,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Which region field is meant: `f1` on `g < 0`, `f2` on `g > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    F1,
    F2,
}

/// Right-hand side used by an ODE step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    F1,
    F2,
    /// The convex combination `(1-α) f1 + α f2`, integrated as a plain ODE.
    Filippov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `g < 0`, field `f1`.
    Below,
    /// `g > 0`, field `f2`.
    Above,
    Sliding,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Below => "below",
            Mode::Above => "above",
            Mode::Sliding => "sliding",
        }
    }

    pub(crate) fn ode_field(self) -> Option<Field> {
        match self {
            Mode::Below => Some(Field::F1),
            Mode::Above => Some(Field::F2),
            Mode::Sliding => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Cross12,
    Cross21,
    EnterSliding,
    ExitToF1,
    ExitToF2,
}

impl TransitionKind {
    pub fn target_mode(self) -> Mode {
        match self {
            TransitionKind::Cross12 | TransitionKind::ExitToF2 => Mode::Above,
            TransitionKind::Cross21 | TransitionKind::ExitToF1 => Mode::Below,
            TransitionKind::EnterSliding => Mode::Sliding,
        }
    }
}

/// Outcome of [`HybridOcp::exit_test`] when the sliding motion ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    ExitToF1,
    ExitToF2,
}

impl From<ExitKind> for TransitionKind {
    fn from(kind: ExitKind) -> Self {
        match kind {
            ExitKind::ExitToF1 => TransitionKind::ExitToF1,
            ExitKind::ExitToF2 => TransitionKind::ExitToF2,
        }
    }
}

/// Region fields, their Jacobians, and the switching surface with its first
/// and second derivatives. Implementations must be reentrant.
pub trait HybridDynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn field(&self, region: Region, x: &Vector, u: &Vector) -> Vector;
    fn field_x(&self, region: Region, x: &Vector, u: &Vector) -> Matrix;
    fn field_u(&self, region: Region, x: &Vector, u: &Vector) -> Matrix;
    fn surface(&self, x: &Vector) -> f64;
    /// `g_x(x)` as a column vector.
    fn surface_grad(&self, x: &Vector) -> Vector;
    fn surface_hess(&self, x: &Vector) -> Matrix;
}

type ScalarFn = dyn Fn(&Vector) -> f64 + Send + Sync;
type GradFn = dyn Fn(&Vector) -> Vector + Send + Sync;

/// An endpoint functional `w(x(t_f))` with its gradient.
#[derive(Clone)]
pub struct Functional {
    name: String,
    value: Arc<ScalarFn>,
    grad: Arc<GradFn>,
}

impl Functional {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(&Vector) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            value: Arc::new(value),
            grad: Arc::new(grad),
        }
    }

    /// `w(x) = weights · x + offset`.
    pub fn linear(name: impl Into<String>, weights: Vector, offset: f64) -> Self {
        let w = weights.clone();
        Self::new(name, move |x| w.dot(x) + offset, move |_| weights.clone())
    }

    pub fn zero(name: impl Into<String>, n: usize) -> Self {
        Self::new(name, |_| 0.0, move |_| Vector::zeros(n))
    }

    /// Pointwise sum of two functionals.
    pub fn sum(&self, other: &Functional) -> Functional {
        let (va, vb) = (self.value.clone(), other.value.clone());
        let (ga, gb) = (self.grad.clone(), other.grad.clone());
        Functional {
            name: format!("{}+{}", self.name, other.name),
            value: Arc::new(move |x| va(x) + vb(x)),
            grad: Arc::new(move |x| ga(x) + gb(x)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, x: &Vector) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        (self.grad)(x)
    }
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Functional").field("name", &self.name).finish()
    }
}

/// Selects the cost, an equality constraint or an inequality constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FunctionalId {
    Cost,
    Equality(usize),
    Inequality(usize),
}

impl fmt::Display for FunctionalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalId::Cost => write!(f, "phi"),
            FunctionalId::Equality(i) => write!(f, "g1:{i}"),
            FunctionalId::Inequality(j) => write!(f, "g2:{j}"),
        }
    }
}

impl FromStr for FunctionalId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "phi" {
            return Ok(FunctionalId::Cost);
        }
        let parse = |idx: &str| {
            idx.parse::<usize>()
                .map_err(|_| format!("bad functional index in {s:?}"))
        };
        match s.split_once(':') {
            Some(("g1", i)) => Ok(FunctionalId::Equality(parse(i)?)),
            Some(("g2", j)) => Ok(FunctionalId::Inequality(parse(j)?)),
            _ => Err(format!("unknown functional {s:?}; expected phi, g1:<i> or g2:<j>")),
        }
    }
}

/// Thresholds for surface-related decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlidingTolerances {
    /// Relative floor on `|g_x (f1 - f2)|` for evaluating `α`.
    pub eps_den: f64,
    /// Directional derivatives `|g_x f|` at or below this are treated as tangential.
    pub eps_tan: f64,
    /// `|g(x)|` at or below this counts as on the surface.
    pub surface_tol: f64,
}

impl Default for SlidingTolerances {
    fn default() -> Self {
        Self {
            eps_den: 1e-12,
            eps_tan: 1e-10,
            surface_tol: 1e-10,
        }
    }
}

/// Control values `u_n`, one vector per interval `(t_{n-1}, t_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    values: Vec<Vector>,
}

impl ControlGrid {
    pub fn new(values: Vec<Vector>) -> Self {
        Self { values }
    }

    pub fn constant(u: &Vector, intervals: usize) -> Self {
        Self {
            values: vec![u.clone(); intervals],
        }
    }

    /// Rebuilds the grid from its interval-major flat layout.
    pub fn from_flat(flat: &[f64], m: usize) -> Self {
        Self {
            values: flat.chunks(m).map(Vector::from_column_slice).collect(),
        }
    }

    pub fn to_flat(&self) -> Vector {
        let data: Vec<f64> = self.values.iter().flat_map(|v| v.iter().copied()).collect();
        Vector::from_vec(data)
    }

    pub fn intervals(&self) -> usize {
        self.values.len()
    }

    pub fn control_dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn value(&self, n: usize) -> &Vector {
        &self.values[n]
    }

    pub fn value_mut(&mut self, n: usize) -> &mut Vector {
        &mut self.values[n]
    }

    /// Componentwise clamp into `[lo, hi]`.
    pub fn project(&mut self, lo: &Vector, hi: &Vector) {
        for v in &mut self.values {
            for ((x, l), h) in v.iter_mut().zip(lo.iter()).zip(hi.iter()) {
                *x = x.clamp(*l, *h);
            }
        }
    }
}

/// Control breakpoints `t_n = t0 + n (tf - t0) / N`, with the last one equal to `tf`.
pub fn control_breakpoints(t0: f64, tf: f64, intervals: usize) -> Vec<f64> {
    let span = tf - t0;
    let mut bp: Vec<f64> = (0..=intervals)
        .map(|n| t0 + n as f64 * span / intervals as f64)
        .collect();
    bp[intervals] = tf;
    bp
}

/// Derivatives of the Filippov coefficient and combined field.
#[derive(Debug, Clone)]
pub struct FilippovJacobians {
    pub alpha: f64,
    pub field: Vector,
    /// `∂α/∂x` as a column.
    pub alpha_x: Vector,
    /// `∂α/∂u` as a column.
    pub alpha_u: Vector,
    pub field_x: Matrix,
    pub field_u: Matrix,
}

/// A terminally constrained optimal control problem for a two-region hybrid system.
#[derive(Clone)]
pub struct HybridOcp {
    pub name: String,
    pub dynamics: Arc<dyn HybridDynamics>,
    pub cost: Functional,
    pub equalities: Vec<Functional>,
    pub inequalities: Vec<Functional>,
    pub t0: f64,
    pub tf: f64,
    pub x0: Vector,
    pub intervals: usize,
    pub u_lo: Vector,
    pub u_hi: Vector,
    pub tolerances: SlidingTolerances,
}

impl fmt::Debug for HybridOcp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridOcp")
            .field("name", &self.name)
            .field("t0", &self.t0)
            .field("tf", &self.tf)
            .field("x0", &self.x0.as_slice())
            .field("intervals", &self.intervals)
            .finish_non_exhaustive()
    }
}

impl HybridOcp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dynamics: Arc<dyn HybridDynamics>,
        cost: Functional,
        t0: f64,
        tf: f64,
        x0: Vector,
        intervals: usize,
        u_lo: Vector,
        u_hi: Vector,
    ) -> Result<Self, ModelError> {
        let ocp = Self {
            name: name.into(),
            dynamics,
            cost,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            t0,
            tf,
            x0,
            intervals,
            u_lo,
            u_hi,
            tolerances: SlidingTolerances::default(),
        };
        ocp.validate()?;
        Ok(ocp)
    }

    pub fn with_equalities(mut self, eq: Vec<Functional>) -> Self {
        self.equalities = eq;
        self
    }

    pub fn with_inequalities(mut self, ineq: Vec<Functional>) -> Self {
        self.inequalities = ineq;
        self
    }

    pub fn with_tolerances(mut self, tolerances: SlidingTolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.state_dim();
        let m = self.control_dim();
        if !(self.tf > self.t0) {
            return Err(ModelError::InvalidProblem(format!(
                "tf = {} must exceed t0 = {}",
                self.tf, self.t0
            )));
        }
        if self.intervals == 0 {
            return Err(ModelError::InvalidProblem("N must be at least 1".into()));
        }
        let check = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(ModelError::DimensionMismatch { what, expected, got })
            }
        };
        check("x0", n, self.x0.len())?;
        check("u_lo", m, self.u_lo.len())?;
        check("u_hi", m, self.u_hi.len())?;
        if let Some(i) = (0..m).find(|&i| self.u_lo[i] > self.u_hi[i]) {
            return Err(ModelError::InvalidProblem(format!(
                "u_lo[{i}] = {} exceeds u_hi[{i}] = {}",
                self.u_lo[i], self.u_hi[i]
            )));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        control_breakpoints(self.t0, self.tf, self.intervals)
    }

    pub fn functional(&self, id: FunctionalId) -> Option<&Functional> {
        match id {
            FunctionalId::Cost => Some(&self.cost),
            FunctionalId::Equality(i) => self.equalities.get(i),
            FunctionalId::Inequality(j) => self.inequalities.get(j),
        }
    }

    /// Cost first, then equalities, then inequalities.
    pub fn functional_ids(&self) -> Vec<FunctionalId> {
        std::iter::once(FunctionalId::Cost)
            .chain((0..self.equalities.len()).map(FunctionalId::Equality))
            .chain((0..self.inequalities.len()).map(FunctionalId::Inequality))
            .collect()
    }

    /// `(g_x f1, g_x f2)` at `(x, u)`.
    pub fn surface_rates(&self, x: &Vector, u: &Vector) -> (f64, f64) {
        let gx = self.dynamics.surface_grad(x);
        let f1 = self.dynamics.field(Region::F1, x, u);
        let f2 = self.dynamics.field(Region::F2, x, u);
        (gx.dot(&f1), gx.dot(&f2))
    }

    fn denominator_floor(&self, gx: &Vector, f1: &Vector, f2: &Vector) -> f64 {
        self.tolerances.eps_den * (gx.norm() * (f1.norm() + f2.norm())).max(1.0)
    }

    /// `α = g_x f1 / (g_x (f1 - f2))`, unclamped.
    pub fn alpha(&self, x: &Vector, u: &Vector) -> Result<f64, ModelError> {
        let gx = self.dynamics.surface_grad(x);
        let f1 = self.dynamics.field(Region::F1, x, u);
        let f2 = self.dynamics.field(Region::F2, x, u);
        let num = gx.dot(&f1);
        let den = num - gx.dot(&f2);
        if den.abs() <= self.denominator_floor(&gx, &f1, &f2) {
            return Err(ModelError::DegenerateDenominator { value: den });
        }
        Ok(num / den)
    }

    /// `f_F = (1-α) f1 + α f2` together with `α`.
    pub fn filippov_field(&self, x: &Vector, u: &Vector) -> Result<(Vector, f64), ModelError> {
        let alpha = self.alpha(x, u)?;
        let f1 = self.dynamics.field(Region::F1, x, u);
        let f2 = self.dynamics.field(Region::F2, x, u);
        Ok((&f1 * (1.0 - alpha) + &f2 * alpha, alpha))
    }

    /// Analytic derivatives of `α` and `f_F` by the quotient rule.
    pub fn filippov_jacobians(&self, x: &Vector, u: &Vector) -> Result<FilippovJacobians, ModelError> {
        let dy = &self.dynamics;
        let gx = dy.surface_grad(x);
        let gxx = dy.surface_hess(x);
        let f1 = dy.field(Region::F1, x, u);
        let f2 = dy.field(Region::F2, x, u);
        let f1x = dy.field_x(Region::F1, x, u);
        let f2x = dy.field_x(Region::F2, x, u);
        let f1u = dy.field_u(Region::F1, x, u);
        let f2u = dy.field_u(Region::F2, x, u);

        let num = gx.dot(&f1);
        let den = num - gx.dot(&f2);
        if den.abs() <= self.denominator_floor(&gx, &f1, &f2) {
            return Err(ModelError::DegenerateDenominator { value: den });
        }
        let alpha = num / den;

        // d(g_x f)/dx = g_xx f + f_x^T g_x (g_xx symmetric)
        let num_x = &gxx * &f1 + f1x.transpose() * &gx;
        let rate2_x = &gxx * &f2 + f2x.transpose() * &gx;
        let den_x = &num_x - &rate2_x;
        let num_u = f1u.transpose() * &gx;
        let den_u = &num_u - f2u.transpose() * &gx;

        let alpha_x = (&num_x * den - &den_x * num) / (den * den);
        let alpha_u = (&num_u * den - &den_u * num) / (den * den);

        let diff = &f2 - &f1;
        let field = &f1 + &diff * alpha;
        let field_x = &f1x * (1.0 - alpha) + &f2x * alpha + &diff * alpha_x.transpose();
        let field_u = &f1u * (1.0 - alpha) + &f2u * alpha + &diff * alpha_u.transpose();
        Ok(FilippovJacobians {
            alpha,
            field,
            alpha_x,
            alpha_u,
            field_x,
            field_u,
        })
    }

    pub fn eval_field(&self, field: Field, x: &Vector, u: &Vector) -> Result<Vector, ModelError> {
        match field {
            Field::F1 => Ok(self.dynamics.field(Region::F1, x, u)),
            Field::F2 => Ok(self.dynamics.field(Region::F2, x, u)),
            Field::Filippov => Ok(self.filippov_field(x, u)?.0),
        }
    }

    pub fn eval_field_x(&self, field: Field, x: &Vector, u: &Vector) -> Result<Matrix, ModelError> {
        match field {
            Field::F1 => Ok(self.dynamics.field_x(Region::F1, x, u)),
            Field::F2 => Ok(self.dynamics.field_x(Region::F2, x, u)),
            Field::Filippov => Ok(self.filippov_jacobians(x, u)?.field_x),
        }
    }

    pub fn eval_field_u(&self, field: Field, x: &Vector, u: &Vector) -> Result<Matrix, ModelError> {
        match field {
            Field::F1 => Ok(self.dynamics.field_u(Region::F1, x, u)),
            Field::F2 => Ok(self.dynamics.field_u(Region::F2, x, u)),
            Field::Filippov => Ok(self.filippov_jacobians(x, u)?.field_u),
        }
    }

    /// Classifies a surface arrival: crossing into the other region or the
    /// start of a sliding motion.
    pub fn entry_test(&self, x: &Vector, u: &Vector) -> Result<TransitionKind, ModelError> {
        let g = self.dynamics.surface(x);
        if g.abs() > self.tolerances.surface_tol {
            return Err(ModelError::OffSurface { value: g.abs() });
        }
        let (a, b) = self.surface_rates(x, u);
        let eps = self.tolerances.eps_tan;
        if a.abs() <= eps || b.abs() <= eps {
            return Err(ModelError::TangentialAmbiguity {
                rate_f1: a,
                rate_f2: b,
            });
        }
        match (a > 0.0, b > 0.0) {
            (true, true) => Ok(TransitionKind::Cross12),
            (false, false) => Ok(TransitionKind::Cross21),
            (true, false) => Ok(TransitionKind::EnterSliding),
            (false, true) => Err(ModelError::RepellingSurface {
                rate_f1: a,
                rate_f2: b,
            }),
        }
    }

    /// Decides whether a sliding motion continues (`None`) or leaves the surface.
    pub fn exit_test(&self, x: &Vector, u: &Vector) -> Result<Option<ExitKind>, ModelError> {
        let (a, b) = self.surface_rates(x, u);
        let eps = self.tolerances.eps_tan;
        if a.abs() <= eps && b.abs() <= eps {
            return Err(ModelError::TangentialAmbiguity {
                rate_f1: a,
                rate_f2: b,
            });
        }
        if a > 0.0 && b < 0.0 {
            Ok(None)
        } else if b < 0.0 {
            Ok(Some(ExitKind::ExitToF1))
        } else if a > 0.0 {
            Ok(Some(ExitKind::ExitToF2))
        } else {
            Err(ModelError::RepellingSurface {
                rate_f1: a,
                rate_f2: b,
            })
        }
    }

    /// Mode of a state at `t0` or after a control breakpoint.
    pub fn classify(&self, x: &Vector, u: &Vector) -> Result<Mode, ModelError> {
        let g = self.dynamics.surface(x);
        let tol = self.tolerances.surface_tol;
        if g < -tol {
            Ok(Mode::Below)
        } else if g > tol {
            Ok(Mode::Above)
        } else {
            Ok(self.entry_test(x, u)?.target_mode())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{P2Sliding, Problem, SmoothLinear};
    use proptest::prelude::*;

    /// Constant fields with prescribed `g_x f1`, `g_x f2` on the surface `x2 = 0`.
    struct Rates {
        a: f64,
        b: f64,
        scale: f64,
    }

    impl HybridDynamics for Rates {
        fn state_dim(&self) -> usize {
            2
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn field(&self, region: Region, _x: &Vector, _u: &Vector) -> Vector {
            match region {
                Region::F1 => Vector::from_vec(vec![1.0, self.a]),
                Region::F2 => Vector::from_vec(vec![1.0, self.b]),
            }
        }
        fn field_x(&self, _: Region, _: &Vector, _: &Vector) -> Matrix {
            Matrix::zeros(2, 2)
        }
        fn field_u(&self, _: Region, _: &Vector, _: &Vector) -> Matrix {
            Matrix::zeros(2, 1)
        }
        fn surface(&self, x: &Vector) -> f64 {
            self.scale * x[1]
        }
        fn surface_grad(&self, _: &Vector) -> Vector {
            Vector::from_vec(vec![0.0, self.scale])
        }
        fn surface_hess(&self, _: &Vector) -> Matrix {
            Matrix::zeros(2, 2)
        }
    }

    fn rates_ocp(a: f64, b: f64) -> HybridOcp {
        scaled_ocp(a, b, 1.0)
    }

    fn scaled_ocp(a: f64, b: f64, scale: f64) -> HybridOcp {
        HybridOcp::new(
            "rates",
            Arc::new(Rates { a, b, scale }),
            Functional::zero("phi", 2),
            0.0,
            1.0,
            Vector::zeros(2),
            1,
            Vector::from_element(1, -1.0),
            Vector::from_element(1, 1.0),
        )
        .unwrap()
    }

    fn v2(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    fn u1(u: f64) -> Vector {
        Vector::from_element(1, u)
    }

    #[test]
    fn alpha_examples() {
        let x = Vector::zeros(2);
        let u = u1(0.0);
        assert_eq!(rates_ocp(1.0, -1.0).alpha(&x, &u).unwrap(), 0.5);
        assert_eq!(rates_ocp(0.0, -1.0).alpha(&x, &u).unwrap(), 0.0);

        // P2 at u = 0.2: g_x f1 = 1.2, g_x f2 = -0.8, α = 1.2 / 2 = 0.6
        let p2 = P2Sliding::default().ocp();
        let alpha = p2.alpha(&v2(0.3, 0.0), &u1(0.2)).unwrap();
        assert!((alpha - 0.6).abs() <= 1e-15);
    }

    #[test]
    fn degenerate_denominator() {
        let ocp = rates_ocp(1.0, 1.0);
        let err = ocp.alpha(&Vector::zeros(2), &u1(0.0)).unwrap_err();
        assert!(matches!(err, ModelError::DegenerateDenominator { .. }));
    }

    #[test]
    fn filippov_examples() {
        let p2 = P2Sliding::default().ocp();
        let (f, alpha) = p2.filippov_field(&v2(0.3, 0.0), &u1(0.2)).unwrap();
        assert!((alpha - 0.6).abs() <= 1e-15);
        assert!((f[0] - 1.0).abs() <= 1e-15);
        assert!(f[1].abs() <= 1e-15);

        // Identical region fields: f_F = f1.
        let lin = SmoothLinear::default().ocp();
        let dy = &lin.dynamics;
        let x = v2(0.4, -0.2);
        let u = u1(0.7);
        let f1 = dy.field(Region::F1, &x, &u);
        assert_eq!(f1, dy.field(Region::F2, &x, &u));
    }

    #[test]
    fn entry_examples() {
        let x = Vector::zeros(2);
        let u = u1(0.0);
        assert_eq!(rates_ocp(1.0, 2.0).entry_test(&x, &u).unwrap(), TransitionKind::Cross12);
        assert_eq!(rates_ocp(-1.0, -2.0).entry_test(&x, &u).unwrap(), TransitionKind::Cross21);
        assert_eq!(
            rates_ocp(1.0, -1.0).entry_test(&x, &u).unwrap(),
            TransitionKind::EnterSliding
        );
        assert!(matches!(
            rates_ocp(1e-14, -1.0).entry_test(&x, &u),
            Err(ModelError::TangentialAmbiguity { .. })
        ));
        assert!(matches!(
            rates_ocp(-1.0, 1.0).entry_test(&x, &u),
            Err(ModelError::RepellingSurface { .. })
        ));
        assert!(matches!(
            rates_ocp(1.0, -1.0).entry_test(&v2(0.0, 1e-3), &u),
            Err(ModelError::OffSurface { .. })
        ));
    }

    #[test]
    fn exit_examples() {
        let x = Vector::zeros(2);
        let u = u1(0.0);
        assert_eq!(rates_ocp(1.0, -1.0).exit_test(&x, &u).unwrap(), None);
        assert_eq!(
            rates_ocp(-0.1, -1.0).exit_test(&x, &u).unwrap(),
            Some(ExitKind::ExitToF1)
        );
        assert_eq!(
            rates_ocp(1.0, 0.1).exit_test(&x, &u).unwrap(),
            Some(ExitKind::ExitToF2)
        );
        assert!(rates_ocp(-0.1, -1.0).alpha(&x, &u).unwrap() < 0.0);
        assert!(rates_ocp(1.0, 0.1).alpha(&x, &u).unwrap() > 1.0);
    }

    #[test]
    fn functional_ids_parse() {
        assert_eq!("phi".parse::<FunctionalId>().unwrap(), FunctionalId::Cost);
        assert_eq!("g1:0".parse::<FunctionalId>().unwrap(), FunctionalId::Equality(0));
        assert_eq!("g2:3".parse::<FunctionalId>().unwrap(), FunctionalId::Inequality(3));
        assert!("g3:0".parse::<FunctionalId>().is_err());
        assert!("g1:x".parse::<FunctionalId>().is_err());
        assert_eq!(FunctionalId::Inequality(2).to_string(), "g2:2");
    }

    #[test]
    fn breakpoints_end_exactly() {
        let bp = control_breakpoints(0.0, 0.7, 3);
        assert_eq!(bp.len(), 4);
        assert_eq!(bp[0], 0.0);
        assert_eq!(bp[3], 0.7);
    }

    #[test]
    fn invalid_problems_rejected() {
        let p2 = P2Sliding::default().ocp();
        let mut bad = p2.clone();
        bad.tf = bad.t0;
        assert!(bad.validate().is_err());
        let mut bad = p2.clone();
        bad.intervals = 0;
        assert!(bad.validate().is_err());
        let mut bad = p2.clone();
        bad.u_lo = u1(1.0);
        bad.u_hi = u1(0.0);
        assert!(bad.validate().is_err());
        let mut bad = p2;
        bad.x0 = Vector::zeros(3);
        assert!(matches!(bad.validate(), Err(ModelError::DimensionMismatch { .. })));
    }

    /// Oracle: central differences of `α` and `f_F`.
    fn fd_check(ocp: &HybridOcp, x: &Vector, u: &Vector) {
        let jac = ocp.filippov_jacobians(x, u).unwrap();
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let (fp, ap) = ocp.filippov_field(&xp, u).unwrap();
            let (fm, am) = ocp.filippov_field(&xm, u).unwrap();
            let da = (ap - am) / (2.0 * eps);
            assert!((da - jac.alpha_x[i]).abs() <= 1e-7 * (1.0 + da.abs()), "alpha_x[{i}]");
            let dcol = (fp - fm) / (2.0 * eps);
            let err = (dcol - jac.field_x.column(i)).amax();
            assert!(err <= 1e-7, "field_x column {i}: {err}");
        }
        for j in 0..u.len() {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += eps;
            um[j] -= eps;
            let (fp, ap) = ocp.filippov_field(x, &up).unwrap();
            let (fm, am) = ocp.filippov_field(x, &um).unwrap();
            let da = (ap - am) / (2.0 * eps);
            assert!((da - jac.alpha_u[j]).abs() <= 1e-7 * (1.0 + da.abs()));
            let dcol = (fp - fm) / (2.0 * eps);
            assert!((dcol - jac.field_u.column(j)).amax() <= 1e-7);
        }
    }

    #[test]
    fn filippov_jacobians_match_differences() {
        let circle = crate::problems::CircleSliding::default().ocp();
        fd_check(&circle, &v2(0.8, 0.55), &u1(0.3));
        let p2 = P2Sliding { delta: 0.5 }.ocp();
        fd_check(&p2, &v2(0.2, 0.01), &u1(-0.3));
    }

    proptest! {
        #[test]
        fn alpha_scale_invariant(
            a in 0.1f64..3.0, b in -3.0f64..-0.1, scale in 0.01f64..100.0,
        ) {
            let x = Vector::zeros(2);
            let u = u1(0.0);
            let base = rates_ocp(a, b).alpha(&x, &u).unwrap();
            let scaled = scaled_ocp(a, b, scale).alpha(&x, &u).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-13);
        }

        #[test]
        fn filippov_field_is_tangent(
            r in 0.5f64..1.5, theta in 0.0f64..std::f64::consts::TAU, u in -0.9f64..0.9,
        ) {
            let ocp = crate::problems::CircleSliding::default().ocp();
            let x = v2(r * theta.cos(), r * theta.sin());
            let uu = u1(u);
            let gx = ocp.dynamics.surface_grad(&x);
            if let Ok((f, _)) = ocp.filippov_field(&x, &uu) {
                let tangency = gx.dot(&f).abs();
                prop_assert!(tangency <= 1e-12 * (gx.norm() * f.norm()).max(1e-300) + 1e-15);
            }
        }

        #[test]
        fn no_verdict_when_both_rates_tiny(
            a in -1e-11f64..1e-11, b in -1e-11f64..1e-11,
        ) {
            let ocp = rates_ocp(a, b);
            let x = Vector::zeros(2);
            let u = u1(0.0);
            prop_assert!(ocp.entry_test(&x, &u).is_err());
            prop_assert!(ocp.exit_test(&x, &u).is_err());
        }
    }
}
