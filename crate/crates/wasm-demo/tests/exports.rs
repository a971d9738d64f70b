use serde_json::Value;
use slidoc_browser_demo::{check_gradient, convergence_study, problem_names, simulate_relay};

#[test]
fn exports_return_json_documents() {
    let run: Value = serde_json::from_str(&simulate_relay(0.2, 0.5, 4).unwrap()).unwrap();
    let n = run["t"].as_array().unwrap().len();
    assert_eq!(run["x2"].as_array().unwrap().len(), n);
    assert_eq!(run["transitions"].as_array().unwrap().len(), 1);

    let study: Value = serde_json::from_str(&convergence_study("gradient", 0.1, 3).unwrap()).unwrap();
    assert_eq!(study["quantity"], "gradient");
    assert_eq!(study["errors"].as_array().unwrap().len(), 3);

    let check: Value = serde_json::from_str(&check_gradient("p2-sliding", 1e-6).unwrap()).unwrap();
    assert!(check["max_relative_error"].as_f64().unwrap() < 1e-4);

    let names: Vec<String> = serde_json::from_str(&problem_names()).unwrap();
    assert!(names.iter().any(|n| n == "constrained-toy"));
}

#[test]
fn control_is_clamped_to_the_box() {
    let a: Value = serde_json::from_str(&simulate_relay(5.0, 0.0, 2).unwrap()).unwrap();
    let b: Value = serde_json::from_str(&simulate_relay(0.8, 0.0, 2).unwrap()).unwrap();
    assert_eq!(a, b);
}
