//! Structural properties of sliding segments on the relay problem, where the
//! exact solution is known in closed form.

use slidoc::adjoint::{run_adjoint, run_adjoint_from};
use slidoc::integrator::Integrator;
use slidoc::problems::{CircleSliding, P2Sliding, Problem};
use slidoc::{FunctionalId, Mode, TransitionKind, Vector};

#[test]
fn relay_forward_invariants() {
    let p = P2Sliding::default();
    let ocp = p.ocp();
    let traj = Integrator::default().integrate(&ocp, &p.default_control(10), 8).unwrap();
    // x2 = -0.5 + (1 + u) t reaches zero at t = 0.5 / 1.2.
    assert_eq!(traj.transition_kinds(), vec![TransitionKind::EnterSliding]);
    assert!((traj.transitions[0].t_t - 0.5 / 1.2).abs() <= 1e-8);
    for k in 0..traj.node_count() {
        if traj.node_mode(k) == Mode::Sliding {
            assert!(traj.states[k][1].abs() <= 1e-11);
        }
    }
    let max_z = traj.z.iter().flatten().fold(0.0f64, |m, z| m.max(z.abs()));
    assert!(max_z <= 1e-6);
    assert!((traj.final_state()[0] - 1.0).abs() <= 1e-12);
}

#[test]
fn relay_adjoint_invariants() {
    let p = P2Sliding { delta: 0.5 };
    let ocp = p.ocp();
    let traj = Integrator::default().integrate(&ocp, &p.default_control(10), 8).unwrap();
    for w_x in [Vector::from_vec(vec![1.0, 1.0]), Vector::from_vec(vec![-0.3, 2.0])] {
        let adj = run_adjoint_from(&ocp, &traj, FunctionalId::Cost, &w_x).unwrap();
        for k in 0..traj.node_count() {
            if traj.node_mode(k) == Mode::Sliding && k > traj.transitions[0].k_t {
                let lam = &adj.lambda[k];
                assert!(lam[1].abs() <= 1e-8 * lam.norm(), "node {k}: {lam:?}");
            }
        }
        assert_eq!(adj.jumps.len(), 1);
        assert!(adj.jumps[0].residual <= 1e-10);
    }
}

#[test]
fn circle_adjoint_is_tangent_on_sliding_nodes() {
    let p = CircleSliding::default();
    let ocp = p.ocp();
    let traj = Integrator::default().integrate(&ocp, &p.default_control(10), 8).unwrap();
    assert!(traj.transitions.iter().any(|t| t.kind == TransitionKind::EnterSliding));
    for k in 0..traj.node_count() {
        if traj.node_mode(k) == Mode::Sliding {
            let x = &traj.states[k];
            assert!((x.norm_squared() - 1.0).abs() <= 1e-10);
        }
    }
    let adj = run_adjoint(&ocp, &traj, FunctionalId::Cost).unwrap();
    for jump in &adj.jumps {
        assert!(jump.residual <= 1e-10);
    }
    let last = traj.node_count() - 1;
    let x = traj.final_state();
    let lam = &adj.lambda[last];
    assert!((2.0 * x).dot(lam).abs() <= 1e-8 * lam.norm());
}
