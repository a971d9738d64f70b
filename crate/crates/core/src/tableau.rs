//! Butcher tableaus, the adjoint (transposed) tableau and the simplifying
//! conditions `B(p)`, `C(q)`, `D(r)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Weights with magnitude at or below this value make the adjoint transform undefined.
pub const ZERO_WEIGHT_TOL: f64 = 1e-14;

/// Residual threshold under which a simplifying condition counts as satisfied.
pub const CONDITION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, serde::Serialize, thiserror::Error)]
pub enum TableauError {
    #[error("tableau shape mismatch: A is {rows}x{cols}, b has {b_len} entries, c has {c_len}")]
    Shape {
        rows: usize,
        cols: usize,
        b_len: usize,
        c_len: usize,
    },
    #[error("tableau has no stages")]
    Empty,
    #[error("weight b[{index}] = {value:e} is zero; the adjoint tableau is undefined")]
    ZeroWeight { index: usize, value: f64 },
    #[error("max_order must be at least 1")]
    InvalidOrder,
}

/// Coefficients `(A, b, c)` of an `s`-stage Runge-Kutta scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
}

/// Plain row-major form used for reading and writing tableaus as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableauSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ButcherTableau {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self, TableauError> {
        let s = b.len();
        if s == 0 {
            return Err(TableauError::Empty);
        }
        if a.nrows() != s || a.ncols() != s || c.len() != s {
            return Err(TableauError::Shape {
                rows: a.nrows(),
                cols: a.ncols(),
                b_len: s,
                c_len: c.len(),
            });
        }
        Ok(Self { a, b, c })
    }

    pub fn from_spec(spec: &TableauSpec) -> Result<Self, TableauError> {
        let s = spec.b.len();
        let cols = spec.a.first().map_or(0, Vec::len);
        if spec.a.len() != s || spec.a.iter().any(|row| row.len() != cols) {
            return Err(TableauError::Shape {
                rows: spec.a.len(),
                cols,
                b_len: s,
                c_len: spec.c.len(),
            });
        }
        let a = DMatrix::from_fn(s, cols, |i, j| spec.a[i][j]);
        Self::new(a, DVector::from_vec(spec.b.clone()), DVector::from_vec(spec.c.clone()))
    }

    pub fn to_spec(&self) -> TableauSpec {
        let s = self.stages();
        TableauSpec {
            a: (0..s).map(|i| (0..s).map(|j| self.a[(i, j)]).collect()).collect(),
            b: self.b.iter().copied().collect(),
            c: self.c.iter().copied().collect(),
        }
    }

    /// The 3-stage Radau IIA scheme (order 5, stiffly accurate).
    pub fn radau_iia_3() -> Self {
        let r6 = 6f64.sqrt();
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                11.0 / 45.0 - 7.0 * r6 / 360.0,
                37.0 / 225.0 - 169.0 * r6 / 1800.0,
                -2.0 / 225.0 + r6 / 75.0,
                37.0 / 225.0 + 169.0 * r6 / 1800.0,
                11.0 / 45.0 + 7.0 * r6 / 360.0,
                -2.0 / 225.0 - r6 / 75.0,
                4.0 / 9.0 - r6 / 36.0,
                4.0 / 9.0 + r6 / 36.0,
                1.0 / 9.0,
            ],
        );
        let b = DVector::from_vec(vec![4.0 / 9.0 - r6 / 36.0, 4.0 / 9.0 + r6 / 36.0, 1.0 / 9.0]);
        let c = DVector::from_vec(vec![2.0 / 5.0 - r6 / 10.0, 2.0 / 5.0 + r6 / 10.0, 1.0]);
        Self { a, b, c }
    }

    /// Closed-form Radau IA coefficients in the stage order produced by
    /// [`ButcherTableau::adjoint`] applied to [`ButcherTableau::radau_iia_3`]
    /// (abscissae `1 - c_i`, so the last stage sits at `0`).
    pub fn radau_ia_3_reversed() -> Self {
        let r6 = 6f64.sqrt();
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                11.0 / 45.0 - 7.0 * r6 / 360.0,
                11.0 / 45.0 + 43.0 * r6 / 360.0,
                1.0 / 9.0,
                11.0 / 45.0 - 43.0 * r6 / 360.0,
                11.0 / 45.0 + 7.0 * r6 / 360.0,
                1.0 / 9.0,
                -1.0 / 18.0 + r6 / 18.0,
                -1.0 / 18.0 - r6 / 18.0,
                1.0 / 9.0,
            ],
        );
        let b = DVector::from_vec(vec![4.0 / 9.0 - r6 / 36.0, 4.0 / 9.0 + r6 / 36.0, 1.0 / 9.0]);
        let c = DVector::from_vec(vec![3.0 / 5.0 + r6 / 10.0, 3.0 / 5.0 - r6 / 10.0, 0.0]);
        Self { a, b, c }
    }

    /// Backward Euler, `A = (1)`, `b = (1)`, `c = (1)`.
    pub fn backward_euler() -> Self {
        Self {
            a: DMatrix::from_element(1, 1, 1.0),
            b: DVector::from_element(1, 1.0),
            c: DVector::from_element(1, 1.0),
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    /// `c_s = 1` and the last row of `A` equals `b`.
    pub fn is_stiffly_accurate(&self) -> bool {
        let s = self.stages();
        (self.c[s - 1] - 1.0).abs() <= 1e-14
            && (0..s).all(|j| (self.a[(s - 1, j)] - self.b[j]).abs() <= 1e-14)
    }

    /// Largest `|sum_j a_ij - c_i|` over the rows.
    pub fn row_sum_defect(&self) -> f64 {
        let s = self.stages();
        (0..s)
            .map(|i| (self.a.row(i).sum() - self.c[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Tableau of the scheme that the discrete adjoint recursion reproduces:
    /// `ā_ij = a_ji b_j / b_i`, `b̄_i = b_i`, `c̄_i = 1 - c_i`.
    pub fn adjoint(&self) -> Result<Self, TableauError> {
        if let Some((index, &value)) = self
            .b
            .iter()
            .enumerate()
            .find(|(_, b)| b.abs() <= ZERO_WEIGHT_TOL)
        {
            return Err(TableauError::ZeroWeight { index, value });
        }
        let s = self.stages();
        let a = DMatrix::from_fn(s, s, |i, j| self.a[(j, i)] * self.b[j] / self.b[i]);
        let c = self.c.map(|ci| 1.0 - ci);
        Ok(Self {
            a,
            b: self.b.clone(),
            c,
        })
    }

    /// Evaluates `B(l)`, `C(l)`, `D(l)` for `l = 1..=max_order` and reports the
    /// largest orders whose residuals all stay within [`CONDITION_TOL`].
    pub fn check_conditions(&self, max_order: usize) -> Result<ConditionReport, TableauError> {
        if max_order == 0 {
            return Err(TableauError::InvalidOrder);
        }
        let s = self.stages();
        let (a, b, c) = (&self.a, &self.b, &self.c);
        let mut b_res = Vec::with_capacity(max_order);
        let mut c_res = Vec::with_capacity(max_order);
        let mut d_res = Vec::with_capacity(max_order);
        for l in 1..=max_order {
            let lf = l as f64;
            let pw = |x: f64, k: usize| x.powi(k as i32);

            let quad: f64 = (0..s).map(|i| b[i] * pw(c[i], l - 1)).sum();
            b_res.push((quad - 1.0 / lf).abs());

            let stage = (0..s)
                .map(|i| {
                    let lhs: f64 = (0..s).map(|j| a[(i, j)] * pw(c[j], l - 1)).sum();
                    (lhs - pw(c[i], l) / lf).abs()
                })
                .fold(0.0, f64::max);
            c_res.push(stage);

            let adj = (0..s)
                .map(|j| {
                    let lhs: f64 = (0..s).map(|i| b[i] * pw(c[i], l - 1) * a[(i, j)]).sum();
                    (lhs - b[j] / lf * (1.0 - pw(c[j], l))).abs()
                })
                .fold(0.0, f64::max);
            d_res.push(adj);
        }
        let order = |res: &[f64]| res.iter().take_while(|r| **r <= CONDITION_TOL).count();
        Ok(ConditionReport {
            p: order(&b_res),
            q: order(&c_res),
            r: order(&d_res),
            residuals: ConditionResiduals {
                b: b_res,
                c: c_res,
                d: d_res,
            },
        })
    }
}

impl Default for ButcherTableau {
    fn default() -> Self {
        Self::radau_iia_3()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionResiduals {
    /// `|Σ b_i c_i^{l-1} - 1/l|`, index `l - 1`.
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(rename = "D")]
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub residuals: ConditionResiduals,
}

/// Largest entrywise difference between two tableaus of equal size.
pub fn max_entry_difference(x: &ButcherTableau, y: &ButcherTableau) -> f64 {
    if x.stages() != y.stages() {
        return f64::INFINITY;
    }
    let da = (x.a() - y.a()).amax();
    let db = (x.b() - y.b()).amax();
    let dc = (x.c() - y.c()).amax();
    da.max(db).max(dc)
}
