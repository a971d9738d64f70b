//! Direction-finding subproblem of the exact penalty method, solved by a
//! primal active-set method on `(d, β)`.

use crate::linalg;
use crate::model::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq, serde::Serialize, thiserror::Error)]
pub enum QpError {
    #[error("QP solver stalled (KKT residual {residual:e})")]
    Stalled { residual: f64 },
    #[error("QP start point is infeasible: {0}")]
    Infeasible(String),
}

/// Linearized data at the current control.
#[derive(Debug, Clone)]
pub struct QpData<'a> {
    pub cost_grad: &'a Vector,
    /// `(value, gradient)` of each equality constraint.
    pub eq: &'a [(f64, Vector)],
    pub ineq: &'a [(f64, Vector)],
    pub hessian: &'a Matrix,
    /// Box for `d`, i.e. `lo - u` and `hi - u`.
    pub d_lo: &'a Vector,
    pub d_hi: &'a Vector,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub d: Vector,
    pub beta: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

const KKT_TOL: f64 = 1e-8;
const BETA_CURVATURE: f64 = 1e-12;

/// Rows `aᵀ y ≤ b` over `y = (d, β)`.
struct Constraints {
    a: Vec<Vector>,
    b: Vec<f64>,
    /// Row involves `β`.
    has_beta: Vec<bool>,
}

fn build(data: &QpData<'_>) -> Constraints {
    let p = data.cost_grad.len();
    let mut c = Constraints {
        a: Vec::new(),
        b: Vec::new(),
        has_beta: Vec::new(),
    };
    let mut push = |grad: Option<(&Vector, f64)>, beta: bool, b: f64, unit: Option<(usize, f64)>| {
        let mut row = Vector::zeros(p + 1);
        if let Some((g, s)) = grad {
            row.rows_mut(0, p).copy_from(&(g * s));
        }
        if let Some((i, s)) = unit {
            row[i] = s;
        }
        if beta {
            row[p] = -1.0;
        }
        c.a.push(row);
        c.b.push(b);
        c.has_beta.push(beta);
    };
    // β ≥ 0
    push(None, true, 0.0, None);
    for (g, grad) in data.eq {
        push(Some((grad, 1.0)), true, -g, None);
        push(Some((grad, -1.0)), true, *g, None);
    }
    for (g, grad) in data.ineq {
        push(Some((grad, 1.0)), true, -g, None);
    }
    for i in 0..p {
        push(None, false, data.d_hi[i], Some((i, 1.0)));
        push(None, false, -data.d_lo[i], Some((i, -1.0)));
    }
    c
}

/// Minimizes `∇F₀·d + cβ + ½ dᵀHd` subject to `|g_i + ∇g_i·d| ≤ β`,
/// `h_j + ∇h_j·d ≤ β`, `β ≥ 0` and the box on `d`.
pub fn solve(data: &QpData<'_>) -> Result<QpSolution, QpError> {
    let p = data.cost_grad.len();
    let nv = p + 1;
    let cons = build(data);
    let nc = cons.a.len();

    let mut g_mat = Matrix::zeros(nv, nv);
    g_mat.view_mut((0, 0), (p, p)).copy_from(data.hessian);
    let mut q = Vector::zeros(nv);
    q.rows_mut(0, p).copy_from(data.cost_grad);
    q[p] = data.penalty;
    // β has no curvature of its own; a tiny one keeps the KKT matrix regular
    // when no β-row is in the working set.
    g_mat[(p, p)] = BETA_CURVATURE * q.amax().max(1.0);

    // Start at d = 0, β = max violation: feasible by construction.
    let violation = data
        .eq
        .iter()
        .map(|(g, _)| g.abs())
        .chain(data.ineq.iter().map(|(h, _)| *h))
        .fold(0.0f64, f64::max);
    let mut y = Vector::zeros(nv);
    y[p] = violation;
    for i in 0..p {
        if data.d_lo[i] > 0.0 || data.d_hi[i] < 0.0 {
            return Err(QpError::Infeasible(format!("d = 0 violates the box in entry {i}")));
        }
    }
    let slack = |y: &Vector, k: usize| cons.b[k] - cons.a[k].dot(y);
    let first = (0..nc)
        .filter(|&k| cons.has_beta[k])
        .min_by(|&i, &j| slack(&y, i).total_cmp(&slack(&y, j)))
        .expect("β ≥ 0 row exists");
    let mut working: Vec<usize> = vec![first];

    let scale = q.amax().max(1.0);
    let max_iter = 20 * (nc + nv) + 100;
    let mut mu = Vector::zeros(0);
    for iter in 0..max_iter {
        let w = working.len();
        let mut kkt = Matrix::zeros(nv + w, nv + w);
        kkt.view_mut((0, 0), (nv, nv)).copy_from(&g_mat);
        for (r, &k) in working.iter().enumerate() {
            for c in 0..nv {
                kkt[(nv + r, c)] = cons.a[k][c];
                kkt[(c, nv + r)] = cons.a[k][c];
            }
        }
        let grad = &g_mat * &y + &q;
        let mut rhs = Vector::zeros(nv + w);
        rhs.rows_mut(0, nv).copy_from(&(-&grad));
        let sol = linalg::solve(kkt, &rhs).ok_or(QpError::Stalled { residual: f64::NAN })?;
        let step = sol.rows(0, nv).into_owned();
        mu = sol.rows(nv, w).into_owned();

        // A full step lands on the minimizer over the working set, where the
        // multipliers from this solve are already the ones to inspect.
        let mut on_minimizer = step.amax() <= 1e-12 * y.amax().max(1.0);
        if !on_minimizer {
            let mut alpha = 1.0;
            let mut blocking = None;
            for k in 0..nc {
                if working.contains(&k) {
                    continue;
                }
                let ap = cons.a[k].dot(&step);
                if ap > 1e-13 * cons.a[k].amax() * step.amax() && !in_span(&cons, &working, k) {
                    let ratio = slack(&y, k).max(0.0) / ap;
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = Some(k);
                    }
                }
            }
            y += &step * alpha;
            match blocking {
                Some(k) => working.push(k),
                None => on_minimizer = true,
            }
        }
        if !on_minimizer {
            continue;
        }
        let (idx, min_mu) = mu
            .iter()
            .enumerate()
            .fold((usize::MAX, 0.0f64), |acc, (i, &m)| if m < acc.1 { (i, m) } else { acc });
        if min_mu >= -1e-12 * scale {
            let residual = kkt_residual(&g_mat, &q, &cons, &working, &mu, &y);
            if residual > KKT_TOL * scale {
                return Err(QpError::Stalled { residual });
            }
            return Ok(QpSolution {
                d: y.rows(0, p).into_owned(),
                beta: y[p].max(0.0),
                kkt_residual: residual,
                iterations: iter,
            });
        }
        working.remove(idx);
    }
    let residual = kkt_residual(&g_mat, &q, &cons, &working, &mu, &y);
    Err(QpError::Stalled { residual })
}

/// Whether row `k` is a combination of the working rows. Such a row is
/// stationary along every working-set step and must not enter.
fn in_span(cons: &Constraints, working: &[usize], k: usize) -> bool {
    if working.is_empty() {
        return false;
    }
    let a = &cons.a[k];
    let w = Matrix::from_columns(&working.iter().map(|&j| cons.a[j].clone()).collect::<Vec<_>>());
    let svd = w.clone().svd(true, true);
    match svd.solve(a, 1e-12) {
        Ok(coef) => (a - &w * coef).amax() <= 1e-10 * a.amax().max(f64::MIN_POSITIVE),
        Err(_) => false,
    }
}

fn kkt_residual(
    g_mat: &Matrix,
    q: &Vector,
    cons: &Constraints,
    working: &[usize],
    mu: &Vector,
    y: &Vector,
) -> f64 {
    let mut stat = g_mat * y + q;
    for (r, &k) in working.iter().enumerate() {
        stat += &cons.a[k] * mu[r];
    }
    let mut res = stat.amax();
    for k in 0..cons.a.len() {
        res = res.max(cons.a[k].dot(y) - cons.b[k]);
    }
    for (r, &k) in working.iter().enumerate() {
        res = res.max(-mu[r]);
        res = res.max((mu[r] * (cons.a[k].dot(y) - cons.b[k])).abs());
    }
    res
}
