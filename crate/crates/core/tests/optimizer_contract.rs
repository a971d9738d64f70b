//! Exact-penalty descent on the constrained oscillator.

use slidoc::integrator::Integrator;
use slidoc::optimizer::{direction_subproblem, optimize, ControlProblem, OcpObjective, PenaltyConfig, Termination};
use slidoc::problems::{ConstrainedToy, Problem};
use slidoc::Matrix;

#[test]
fn constrained_toy_contract() {
    let problem = ConstrainedToy;
    let ocp = problem.ocp();
    let integrator = Integrator::default();
    let obj = OcpObjective {
        ocp: &ocp,
        integrator: &integrator,
        steps_per_interval: 8,
    };
    let cfg = PenaltyConfig::default();
    let out = optimize(&obj, &problem.default_control(10).to_flat(), &cfg).unwrap();
    assert_eq!(out.termination, Termination::Converged);
    assert!(out.history.len() <= 200);
    for r in &out.history {
        assert!(r.sigma <= 1e-10, "{r:?}");
        assert!(r.t_c <= 1e-10, "{r:?}");
        if let (Some(alpha), Some(next)) = (r.alpha, r.penalty_next) {
            assert!(next - r.penalty <= cfg.gamma * alpha * r.sigma, "{r:?}");
        }
    }
    assert!(out.history.windows(2).all(|w| w[1].c >= w[0].c));
    let last = out.history.last().unwrap();
    assert!(last.violation <= 1e-6);
    assert!(last.sigma.abs() <= 1e-6);
    // Both endpoint constraints are active: x(tf) = (0.5, -0.6).
    assert!((last.cost - 0.5 * (0.25 + 0.36)).abs() <= 1e-6);
}

#[test]
fn direction_is_independent_of_constraint_order() {
    let problem = ConstrainedToy;
    let ocp = problem.ocp();
    let integrator = Integrator::default();
    let u = problem.default_control(10).to_flat();
    let obj = OcpObjective {
        ocp: &ocp,
        integrator: &integrator,
        steps_per_interval: 8,
    };
    let mut model = obj.linearize(&u).unwrap();
    // Extra rows built from the real ones give several constraints per kind.
    let (g, dg) = (model.values.equalities[0], model.eq_grads[0].clone());
    let (h, dh) = (model.values.inequalities[0], model.ineq_grads[0].clone());
    model.values.equalities.push(2.0 * g - 0.05);
    model.eq_grads.push(&dg * 2.0 + &dh * 0.5);
    model.values.inequalities.extend([h + 0.1, 0.5 * h - 0.2]);
    model.ineq_grads.extend([&dh * 1.5, &dg - &dh]);
    let mut reversed = model.clone();
    reversed.eq_grads.reverse();
    reversed.values.equalities.reverse();
    reversed.ineq_grads.reverse();
    reversed.values.inequalities.reverse();
    let h = Matrix::identity(10, 10);
    let (lo, hi) = (obj.lower(), obj.upper());
    for c in [0.5, 1.0, 8.0, 100.0] {
        let a = direction_subproblem(&model, &u, &lo, &hi, &h, c).unwrap();
        let b = direction_subproblem(&reversed, &u, &lo, &hi, &h, c).unwrap();
        assert!((a.d - b.d).amax() <= 1e-8, "c = {c}");
        assert!((a.beta - b.beta).abs() <= 1e-8, "c = {c}");
    }
}
