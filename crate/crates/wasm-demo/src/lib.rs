//! WebAssembly bindings behind `www/index.html`. Every export takes plain
//! numbers or strings and returns a JSON document, so the page needs no
//! generated TypeScript types.

use std::collections::BTreeMap;

use serde::Serialize;
use slidoc::integrator::Integrator;
use slidoc::problems::{self, P2Sliding, Problem};
use slidoc::verify::{self, Quantity};
use slidoc::{ControlGrid, FunctionalId, Mode, Vector};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct RelayRun {
    pub t: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub sliding: Vec<bool>,
    pub transitions: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Serialize)]
pub struct CheckSummary {
    pub problem: String,
    pub eps: f64,
    pub adjoint: Vec<f64>,
    pub fd: Vec<f64>,
    pub structure_change: Vec<bool>,
    pub max_relative_error: f64,
}

/// Relay problem under a constant control.
pub fn relay_run(u: f64, delta: f64, steps_per_interval: usize) -> Result<RelayRun, String> {
    let p = P2Sliding { delta };
    let ocp = p.ocp();
    let u = u.clamp(ocp.u_lo[0], ocp.u_hi[0]);
    let controls = ControlGrid::constant(&Vector::from_element(1, u), ocp.intervals);
    let traj = Integrator::default()
        .integrate(&ocp, &controls, steps_per_interval.max(1))
        .map_err(|e| e.to_string())?;
    let cost = ocp.cost.value(traj.final_state());
    Ok(RelayRun {
        t: traj.times.clone(),
        x1: traj.states.iter().map(|x| x[0]).collect(),
        x2: traj.states.iter().map(|x| x[1]).collect(),
        sliding: (0..traj.node_count()).map(|k| traj.node_mode(k) == Mode::Sliding).collect(),
        transitions: traj.transitions.iter().map(|t| t.t_t).collect(),
        cost,
    })
}

/// Self-convergence study on the smooth linear problem, halving `h0` `levels - 1` times.
pub fn convergence(quantity: &str, h0: f64, levels: usize) -> Result<verify::OrderReport, String> {
    let quantity: Quantity = quantity.parse()?;
    if !(h0 > 0.0) || levels < 2 {
        return Err("need h0 > 0 and at least two levels".into());
    }
    let p = problems::lookup("smooth-linear", &BTreeMap::new()).map_err(|e| e.to_string())?;
    let ocp = p.ocp();
    let hs: Vec<f64> = (0..levels).map(|k| h0 / f64::powi(2.0, k as i32)).collect();
    verify::order_study(&ocp, &Integrator::default(), &p.default_control(ocp.intervals), quantity, &hs)
        .map_err(|e| e.to_string())
}

pub fn gradient_check(problem: &str, eps: f64) -> Result<CheckSummary, String> {
    let params = match problem {
        "p2-sliding" => BTreeMap::from([("delta".to_string(), 0.5)]),
        _ => BTreeMap::new(),
    };
    let p = problems::lookup(problem, &params).map_err(|e| e.to_string())?;
    let ocp = p.ocp();
    let check = verify::check_gradient(
        &ocp,
        &Integrator::default(),
        &p.default_control(ocp.intervals),
        8,
        FunctionalId::Cost,
        eps,
    )
    .map_err(|e| e.to_string())?;
    Ok(CheckSummary {
        problem: problem.to_string(),
        eps,
        adjoint: check.adjoint.data.as_slice().to_vec(),
        fd: check.fd.data.as_slice().to_vec(),
        structure_change: check.structure_change,
        max_relative_error: check.max_relative_error,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = simulateRelay)]
pub fn simulate_relay(u: f64, delta: f64, steps_per_interval: usize) -> Result<String, JsError> {
    to_js(relay_run(u, delta, steps_per_interval))
}

#[wasm_bindgen(js_name = convergenceStudy)]
pub fn convergence_study(quantity: &str, h0: f64, levels: usize) -> Result<String, JsError> {
    to_js(convergence(quantity, h0, levels))
}

#[wasm_bindgen(js_name = checkGradient)]
pub fn check_gradient(problem: &str, eps: f64) -> Result<String, JsError> {
    to_js(gradient_check(problem, eps))
}

#[wasm_bindgen(js_name = problemNames)]
pub fn problem_names() -> String {
    serde_json::to_string(problems::NAMES).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relay_slides_after_crossing() {
        let run = relay_run(0.2, 0.0, 4).unwrap();
        assert_eq!(run.transitions.len(), 1);
        assert!((run.transitions[0] - 0.5 / 1.2).abs() < 1e-8);
        let last = run.t.len() - 1;
        assert!(run.sliding[last]);
        assert!(run.x2[last].abs() < 1e-11);
    }

    #[test]
    fn study_reports_fifth_order_state() {
        let r = convergence("state_endpoint", 0.1, 4).unwrap();
        assert!((r.slope - 5.0).abs() < 0.4, "{}", r.slope);
        assert!(convergence("nonsense", 0.1, 4).is_err());
        assert!(convergence("gradient", 0.1, 1).is_err());
    }

    #[test]
    fn gradient_check_is_tight() {
        let s = gradient_check("smooth-linear", 1e-6).unwrap();
        assert!(s.max_relative_error < 1e-5);
        assert_eq!(s.adjoint.len(), s.fd.len());
    }
}
