//! Dense LU helpers with a numerical singularity check.

use nalgebra::{DMatrix, DVector, LU};

/// Pivot ratio below which a factorization is treated as singular.
const PIVOT_RATIO: f64 = 1e-14;

pub(crate) struct Factorized {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Factorized {
    /// Returns `None` when the smallest pivot is negligible relative to the largest.
    pub(crate) fn new(m: DMatrix<f64>) -> Option<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let lu = m.lu();
        let diag = lu.u().diagonal();
        let max = diag.amax();
        let min = diag.iter().fold(f64::INFINITY, |acc, d| acc.min(d.abs()));
        if max == 0.0 || min <= PIVOT_RATIO * max {
            return None;
        }
        Some(Self { lu })
    }

    pub(crate) fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        self.lu.solve(rhs)
    }
}

pub(crate) fn solve(m: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    Factorized::new(m)?.solve(rhs)
}

/// Copies `block` into `m` with its top-left corner at `(row, col)`.
pub(crate) fn set_block(m: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>) {
    m.view_mut((row, col), block.shape()).copy_from(block);
}

pub(crate) fn add_block(m: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>, scale: f64) {
    let mut view = m.view_mut((row, col), block.shape());
    view += block * scale;
}
