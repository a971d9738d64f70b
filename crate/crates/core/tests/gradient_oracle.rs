//! Adjoint gradients against central differences of the simulated functionals.

use slidoc::integrator::Integrator;
use slidoc::problems::{CircleSliding, ConstrainedToy, P2Sliding, Problem, SlidingExit, SmoothLinear};
use slidoc::verify::check_gradient;
use slidoc::{ControlGrid, FunctionalId, Vector};

fn wave(amplitude: f64, intervals: usize) -> ControlGrid {
    ControlGrid::new(
        (0..intervals)
            .map(|n| Vector::from_element(1, amplitude * ((n + 1) as f64).sin()))
            .collect(),
    )
}

#[test]
fn smooth_linear_cost() {
    let p = SmoothLinear::default();
    let ocp = p.ocp();
    let check = check_gradient(&ocp, &Integrator::default(), &p.default_control(10), 8, FunctionalId::Cost, 1e-6).unwrap();
    assert!(check.structure_change.iter().all(|&s| !s));
    assert!(check.max_relative_error <= 1e-5, "{}", check.max_relative_error);
}

#[test]
fn constrained_toy_every_functional() {
    let p = ConstrainedToy;
    let ocp = p.ocp();
    let u = wave(0.5, 10);
    for id in ocp.functional_ids() {
        let check = check_gradient(&ocp, &Integrator::default(), &u, 8, id, 1e-6).unwrap();
        assert!(check.max_relative_error <= 1e-5, "{id}: {}", check.max_relative_error);
    }
}

/// Crossing into sliding, with a control-dependent sliding velocity.
#[test]
fn p2_sliding_cost() {
    let ocp = P2Sliding { delta: 0.5 }.ocp();
    let integrator = Integrator::default();
    let u = wave(0.3, 10);
    let traj = integrator.integrate(&ocp, &u, 8).unwrap();
    assert_eq!(traj.transitions.len(), 1);
    let check = check_gradient(&ocp, &integrator, &u, 8, FunctionalId::Cost, 1e-6).unwrap();
    assert!(check.max_relative_error <= 1e-4, "{}", check.max_relative_error);
    assert!(check.adjoint.data.iter().any(|v| v.abs() > 1e-3));
}

/// Entry and a located exit, which adds the exit-time sensitivity term.
#[test]
fn sliding_exit_cost() {
    let p = SlidingExit;
    let ocp = p.ocp();
    let check = check_gradient(&ocp, &Integrator::default(), &p.default_control(10), 8, FunctionalId::Cost, 1e-6).unwrap();
    assert!(check.max_relative_error <= 1e-4, "{}", check.max_relative_error);
}

/// Curved surface: exercises the surface Hessian terms of the sliding adjoint.
#[test]
fn circle_sliding_cost() {
    let p = CircleSliding::default();
    let ocp = p.ocp();
    let check = check_gradient(&ocp, &Integrator::default(), &p.default_control(10), 8, FunctionalId::Cost, 1e-6).unwrap();
    assert!(check.max_relative_error <= 1e-4, "{}", check.max_relative_error);
}
