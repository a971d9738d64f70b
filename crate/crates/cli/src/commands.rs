use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use slidoc::adjoint::{self, AdjointError};
use slidoc::gradient::{self, GradientError};
use slidoc::integrator::{IntegrationError, Integrator, IntegratorOptions, Trajectory};
use slidoc::optimizer::{optimize, IterateRecord, OcpObjective, OptimizeError, PenaltyConfig, Termination};
use slidoc::problems::{self, ProblemError};
use slidoc::tableau::{self, TableauSpec, CONDITION_TOL};
use slidoc::verify::{self, OrderReport, Quantity, VerifyError};
use slidoc::{ButcherTableau, ControlGrid, FunctionalId, HybridOcp, Mode, ModelError, TableauError, Vector};

use crate::config::{self, ConfigError, RunConfig};
use crate::output::{csv_text, emit, fmt_f64, sha256_hex, to_json, to_json_line};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Adjoint(#[from] AdjointError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Tableau(#[from] TableauError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// One-line JSON for stderr: the error family, its structured payload
    /// and the human-readable message.
    pub fn report(&self) -> String {
        let (kind, detail) = match self {
            CliError::Usage(_) => ("usage", Value::Null),
            CliError::Config(e) => ("config", to_value(e)),
            CliError::Problem(e) => ("problem", to_value(e)),
            CliError::Model(e) => ("model", to_value(e)),
            CliError::Integration(e) => ("integration", to_value(e)),
            CliError::Adjoint(e) => ("adjoint", to_value(e)),
            CliError::Gradient(e) => ("gradient", to_value(e)),
            CliError::Verify(e) => ("verify", to_value(e)),
            CliError::Optimize(e) => ("optimize", to_value(e)),
            CliError::Tableau(e) => ("tableau", to_value(e)),
            CliError::Input(_) => ("input", Value::Null),
            CliError::Io { path, .. } => ("io", json!({ "path": path })),
        };
        to_json_line(&json!({ "error": kind, "detail": detail, "message": self.to_string() }))
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

/// Options shared by every problem-based subcommand.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub problem: Option<String>,
    pub config: Option<PathBuf>,
    pub steps_per_interval: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Tolerances {
    newton_tol: f64,
    event_tol: f64,
    surface_tol: f64,
    eps_den: f64,
    eps_tan: f64,
    condition_tol: f64,
}

#[derive(Serialize)]
pub struct Meta {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    problem: Option<String>,
    config_hash: String,
    tolerances: Tolerances,
}

fn meta(command: &'static str, cfg: &RunConfig, args: &Value) -> Meta {
    let mut hashed = cfg.clone();
    hashed.out = None;
    hashed.history_csv = None;
    let defaults = slidoc::SlidingTolerances::default();
    Meta {
        tool: "slidoc",
        version: env!("CARGO_PKG_VERSION"),
        command,
        problem: cfg.problem.clone(),
        config_hash: sha256_hex(to_json_line(&json!({ "config": hashed, "args": args })).as_bytes()),
        tolerances: Tolerances {
            newton_tol: cfg.newton_tol,
            event_tol: cfg.event_tol,
            surface_tol: cfg.surface_tol,
            eps_den: defaults.eps_den,
            eps_tan: defaults.eps_tan,
            condition_tol: CONDITION_TOL,
        },
    }
}

/// A problem instance ready to run.
struct Setup {
    cfg: RunConfig,
    ocp: HybridOcp,
    controls: ControlGrid,
    integrator: Integrator,
    out: Option<PathBuf>,
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => config::parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &common.problem {
        cfg.problem = Some(p.clone());
    }
    if let Some(k) = common.steps_per_interval {
        cfg.steps_per_interval = k;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn setup(common: &Common) -> Result<Setup, CliError> {
    let cfg = load_config(common)?;
    let name = cfg
        .problem
        .clone()
        .ok_or_else(|| CliError::Usage("no problem given; pass --problem or set \"problem\" in the config".into()))?;
    let problem = problems::lookup(&name, &cfg.params)?;
    let mut ocp = problem.ocp();
    if let Some(x0) = &cfg.x0 {
        ocp.x0 = Vector::from_column_slice(x0);
    }
    if let Some(t0) = cfg.t0 {
        ocp.t0 = t0;
    }
    if let Some(tf) = cfg.tf {
        ocp.tf = tf;
    }
    ocp.intervals = cfg.intervals;
    if let Some(lo) = &cfg.u_lo {
        ocp.u_lo = Vector::from_column_slice(lo);
    }
    if let Some(hi) = &cfg.u_hi {
        ocp.u_hi = Vector::from_column_slice(hi);
    }
    ocp.tolerances.surface_tol = cfg.surface_tol;
    ocp.validate()?;
    let controls = match &cfg.u {
        Some(rows) => {
            let m = ocp.control_dim();
            if let Some(bad) = rows.iter().position(|r| r.len() != m) {
                return Err(CliError::Input(format!("u[{bad}] must have {m} entries")));
            }
            ControlGrid::new(rows.iter().map(|r| Vector::from_column_slice(r)).collect())
        }
        None => problem.default_control(cfg.intervals),
    };
    let integrator = Integrator::new(
        ButcherTableau::radau_iia_3(),
        IntegratorOptions {
            newton_tol: cfg.newton_tol,
            event_tol: cfg.event_tol,
            ..IntegratorOptions::default()
        },
    );
    let out = cfg.out.clone();
    Ok(Setup {
        cfg,
        ocp,
        controls,
        integrator,
        out,
    })
}

fn write(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    emit(path, text).map_err(|e| CliError::Io {
        path: path.map_or("<stdout>".into(), |p| p.display().to_string()),
        message: e.to_string(),
    })
}

/// `traj.csv` → `traj.<suffix>.json`.
fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map_or("out".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.{suffix}.json"))
}

fn floats(v: &Vector) -> Vec<String> {
    v.iter().map(|x| fmt_f64(*x)).collect()
}

fn opt_float(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn node_control(traj: &Trajectory, k: usize) -> &Vector {
    traj.control_of_step(k.min(traj.steps.len().saturating_sub(1)))
}

fn rows_of(v: &[f64], m: usize) -> Vec<Vec<f64>> {
    v.chunks(m).map(<[f64]>::to_vec).collect()
}

pub fn simulate(common: &Common) -> Result<(), CliError> {
    let s = setup(common)?;
    let traj = s.integrator.integrate(&s.ocp, &s.controls, s.cfg.steps_per_interval)?;
    let n = s.ocp.state_dim();
    let mut header: Vec<String> = vec!["k".into(), "t".into(), "mode".into()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend(["z".into(), "g".into(), "alpha".into()]);
    let mut rows = Vec::with_capacity(traj.node_count());
    for k in 0..traj.node_count() {
        let x = &traj.states[k];
        let mode = traj.node_mode(k);
        let alpha = if mode == Mode::Sliding {
            Some(s.ocp.alpha(x, node_control(&traj, k))?)
        } else {
            None
        };
        let mut row = vec![k.to_string(), fmt_f64(traj.times[k]), mode.as_str().to_string()];
        row.extend(floats(x));
        row.push(opt_float(traj.z[k]));
        row.push(fmt_f64(s.ocp.dynamics.surface(x)));
        row.push(opt_float(alpha));
        rows.push(row);
    }
    write(s.out.as_deref(), &csv_text(&header, &rows))?;
    if let Some(out) = &s.out {
        let transitions: Vec<Value> = traj
            .transitions
            .iter()
            .map(|t| {
                json!({
                    "t_t": t.t_t,
                    "kind": t.kind,
                    "x_minus": t.x_minus.as_slice(),
                    "x_plus": t.x_plus.as_slice(),
                    "k": t.k_t,
                    "pinned": t.pinned,
                })
            })
            .collect();
        let doc = json!({
            "meta": meta("simulate", &s.cfg, &Value::Null),
            "final_state": traj.final_state().as_slice(),
            "final_mode": traj.final_mode(),
            "transitions": transitions,
        });
        write(Some(&sidecar(out, "transitions")), &to_json(&doc))?;
    }
    Ok(())
}

pub fn adjoint(common: &Common, functional: FunctionalId) -> Result<(), CliError> {
    let s = setup(common)?;
    let traj = s.integrator.integrate(&s.ocp, &s.controls, s.cfg.steps_per_interval)?;
    let adj = adjoint::run_adjoint(&s.ocp, &traj, functional)?;
    let n = s.ocp.state_dim();
    let mut header: Vec<String> = vec!["k".into(), "t".into()];
    header.extend((0..n).map(|i| format!("lambda{i}")));
    header.push("lambda_g".into());
    let rows: Vec<Vec<String>> = (0..traj.node_count())
        .map(|k| {
            let mut row = vec![k.to_string(), fmt_f64(traj.times[k])];
            row.extend(floats(&adj.lambda[k]));
            row.push(opt_float(adj.node_lambda_g(k)));
            row
        })
        .collect();
    write(s.out.as_deref(), &csv_text(&header, &rows))?;
    if let Some(out) = &s.out {
        let jumps: Vec<Value> = adj
            .jumps
            .iter()
            .map(|j| {
                json!({
                    "t_t": j.t_t,
                    "kind": j.kind,
                    "k": j.k_t,
                    "pi": j.pi,
                    "residual": j.residual,
                    "lambda_minus": j.lambda_minus.as_slice(),
                    "lambda_plus": j.lambda_plus.as_slice(),
                })
            })
            .collect();
        let doc = json!({
            "meta": meta("adjoint", &s.cfg, &json!({ "functional": functional.to_string() })),
            "functional": functional.to_string(),
            "nu1": adj.terminal.nu1,
            "lambda_g": adj.terminal.lambda_g,
            "terminal_residual": adj.terminal.residual,
            "jumps": jumps,
        });
        write(Some(&sidecar(out, "jumps")), &to_json(&doc))?;
    }
    Ok(())
}

pub fn gradient(common: &Common, functional: FunctionalId) -> Result<(), CliError> {
    let s = setup(common)?;
    let traj = s.integrator.integrate(&s.ocp, &s.controls, s.cfg.steps_per_interval)?;
    let grad = gradient::gradient_of(&s.ocp, &traj, functional)?;
    let doc = json!({
        "meta": meta("gradient", &s.cfg, &json!({ "functional": functional.to_string() })),
        "functional": functional.to_string(),
        "grad": grad.rows(),
    });
    write(s.out.as_deref(), &to_json(&doc))
}

pub fn check_gradient(common: &Common, functional: FunctionalId, eps: f64) -> Result<(), CliError> {
    let s = setup(common)?;
    let check = verify::check_gradient(&s.ocp, &s.integrator, &s.controls, s.cfg.steps_per_interval, functional, eps)?;
    let m = s.ocp.control_dim();
    let entries: Vec<Value> = (0..check.adjoint.len())
        .map(|i| {
            json!({
                "interval": i / m,
                "component": i % m,
                "adjoint": check.adjoint.data[i],
                "fd": check.fd.data[i],
                "relative_error": check.relative_errors[i],
                "structure_change": check.structure_change[i],
            })
        })
        .collect();
    let doc = json!({
        "meta": meta("check-gradient", &s.cfg, &json!({ "functional": functional.to_string(), "eps": eps })),
        "functional": check.functional,
        "eps": eps,
        "max_relative_error": check.max_relative_error,
        "structure_changes": check.structure_change.iter().filter(|&&c| c).count(),
        "entries": entries,
    });
    write(s.out.as_deref(), &to_json(&doc))
}

pub fn optimize_cmd(common: &Common, history_csv: Option<PathBuf>) -> Result<(), CliError> {
    let s = setup(common)?;
    let history_csv = history_csv.or_else(|| s.cfg.history_csv.clone());
    let objective = OcpObjective {
        ocp: &s.ocp,
        integrator: &s.integrator,
        steps_per_interval: s.cfg.steps_per_interval,
    };
    let config = PenaltyConfig {
        c0: s.cfg.c0,
        kappa: s.cfg.kappa,
        gamma: s.cfg.gamma,
        eta: s.cfg.eta,
        epsilon: s.cfg.epsilon,
        max_iters: s.cfg.max_iters,
        h_scale: s.cfg.h_scale,
        ..PenaltyConfig::default()
    };
    let outcome = optimize(&objective, &s.controls.to_flat(), &config)?;
    let last: &IterateRecord = outcome.history.last().expect("at least one iterate");
    let m = s.ocp.control_dim();
    let doc = json!({
        "meta": meta("optimize", &s.cfg, &Value::Null),
        "termination": outcome.termination,
        "converged": outcome.termination == Termination::Converged,
        "iterations": outcome.history.len(),
        "final": {
            "u": rows_of(outcome.u.as_slice(), m),
            "cost": last.cost,
            "violation": last.violation,
            "sigma": last.sigma,
            "c": last.c,
        },
        "history": outcome.history,
    });
    write(s.out.as_deref(), &to_json(&doc))?;
    if let Some(path) = history_csv {
        let header: Vec<String> = ["k", "F0", "M", "c", "sigma", "alpha"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<String>> = outcome
            .history
            .iter()
            .map(|r| {
                vec![
                    r.k.to_string(),
                    fmt_f64(r.cost),
                    fmt_f64(r.violation),
                    fmt_f64(r.c),
                    fmt_f64(r.sigma),
                    opt_float(r.alpha),
                ]
            })
            .collect();
        write(Some(&path), &csv_text(&header, &rows))?;
    }
    Ok(())
}

pub fn verify_orders(common: &Common, quantity: Quantity, hs: &[f64]) -> Result<(), CliError> {
    let s = setup(common)?;
    let report: OrderReport = verify::order_study(&s.ocp, &s.integrator, &s.controls, quantity, hs)?;
    #[derive(Serialize)]
    struct Doc<'a> {
        meta: Meta,
        #[serde(flatten)]
        report: &'a OrderReport,
    }
    let doc = Doc {
        meta: meta("verify-orders", &s.cfg, &json!({ "quantity": quantity, "h": hs })),
        report: &report,
    };
    write(s.out.as_deref(), &to_json(&doc))
}

fn tableau_entry(name: &str, t: &ButcherTableau) -> Result<Value, CliError> {
    let report = t.check_conditions(2 * t.stages())?;
    Ok(json!({
        "name": name,
        "stages": t.stages(),
        "stiffly_accurate": t.is_stiffly_accurate(),
        "row_sum_defect": t.row_sum_defect(),
        "p": report.p,
        "q": report.q,
        "r": report.r,
        "residuals": report.residuals,
        "tableau": t.to_spec(),
    }))
}

pub fn tableau_check(path: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let mut entries = Vec::new();
    let mut closed_form_difference = None;
    let base = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Config(ConfigError::Io {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })
            })?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            let spec: TableauSpec = serde_path_to_error::deserialize(de).map_err(|e| {
                let field = e.path().to_string();
                let inner = e.into_inner();
                CliError::Config(ConfigError::Parse {
                    path: field,
                    line: inner.line(),
                    column: inner.column(),
                    message: inner.to_string(),
                })
            })?;
            ButcherTableau::from_spec(&spec)?
        }
        None => ButcherTableau::radau_iia_3(),
    };
    entries.push(tableau_entry(if path.is_some() { "input" } else { "radau_iia_3" }, &base)?);
    match base.adjoint() {
        Ok(adj) => {
            entries.push(tableau_entry("adjoint", &adj)?);
            if path.is_none() {
                closed_form_difference = Some(tableau::max_entry_difference(&adj, &ButcherTableau::radau_ia_3_reversed()));
            }
        }
        Err(e) => entries.push(json!({ "name": "adjoint", "error": e.to_string() })),
    }
    let args = json!({ "tableau": path.map(|p| p.display().to_string()) });
    let doc = json!({
        "meta": meta("tableau-check", &RunConfig::default(), &args),
        "tableaus": entries,
        "adjoint_vs_radau_ia_closed_form": closed_form_difference,
    });
    write(out, &to_json(&doc))
}
