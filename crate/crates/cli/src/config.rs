use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{path} at line {line}, column {column}: {message}")]
    Parse {
        /// Dotted field path, `.` for the document root.
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {field} = {value}: {reason}")]
    Validation {
        field: &'static str,
        value: serde_json::Value,
        reason: &'static str,
    },
}

/// Everything a run depends on. Absent problem overrides keep the values of
/// the built-in problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<String>,
    pub params: BTreeMap<String, f64>,
    pub x0: Option<Vec<f64>>,
    pub t0: Option<f64>,
    pub tf: Option<f64>,
    #[serde(rename = "N")]
    pub intervals: usize,
    pub steps_per_interval: usize,
    pub u_lo: Option<Vec<f64>>,
    pub u_hi: Option<Vec<f64>>,
    /// Control values, one row per interval; the problem's default otherwise.
    pub u: Option<Vec<Vec<f64>>>,
    pub newton_tol: f64,
    pub event_tol: f64,
    pub surface_tol: f64,
    pub c0: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub h_scale: f64,
    pub out: Option<PathBuf>,
    pub history_csv: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: None,
            params: BTreeMap::new(),
            x0: None,
            t0: None,
            tf: None,
            intervals: 10,
            steps_per_interval: 8,
            u_lo: None,
            u_hi: None,
            u: None,
            newton_tol: 1e-12,
            event_tol: 1e-10,
            surface_tol: 1e-10,
            c0: 1.0,
            kappa: 2.0,
            gamma: 0.1,
            eta: 0.5,
            epsilon: 1e-8,
            max_iters: 200,
            h_scale: 1.0,
            out: None,
            history_csv: None,
        }
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Parse {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn invalid(field: &'static str, value: impl Serialize, reason: &'static str) -> ConfigError {
    ConfigError::Validation {
        field,
        value: serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
        reason,
    }
}

fn open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.intervals == 0 {
            return Err(invalid("N", self.intervals, "must be at least 1"));
        }
        if self.steps_per_interval == 0 {
            return Err(invalid("steps_per_interval", self.steps_per_interval, "must be at least 1"));
        }
        let positive = [
            ("newton_tol", self.newton_tol),
            ("event_tol", self.event_tol),
            ("surface_tol", self.surface_tol),
            ("c0", self.c0),
            ("epsilon", self.epsilon),
            ("h_scale", self.h_scale),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(field, v, "must be positive and finite"));
            }
        }
        if !(self.kappa > 1.0 && self.kappa.is_finite()) {
            return Err(invalid("kappa", self.kappa, "must exceed 1"));
        }
        if !open_unit(self.gamma) {
            return Err(invalid("gamma", self.gamma, "must lie in (0, 1)"));
        }
        if !open_unit(self.eta) {
            return Err(invalid("eta", self.eta, "must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", self.max_iters, "must be at least 1"));
        }
        if let (Some(t0), Some(tf)) = (self.t0, self.tf) {
            if !(tf > t0) {
                return Err(invalid("tf", tf, "must exceed t0"));
            }
        }
        if let (Some(lo), Some(hi)) = (&self.u_lo, &self.u_hi) {
            if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| l > h) {
                return Err(invalid("u_hi", hi, "must have the length of u_lo and dominate it"));
            }
        }
        if let Some(u) = &self.u {
            if u.len() != self.intervals {
                return Err(invalid("u", u.len(), "needs one row per interval (N rows)"));
            }
        }
        Ok(())
    }
}
