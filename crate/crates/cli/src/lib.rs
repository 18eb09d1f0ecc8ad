//! Batch runner for the `sqbsde` solvers: TOML experiment configs in,
//! deterministic JSON/CSV reports out.

pub mod config;
pub mod run;

use std::path::Path;

use serde_json::json;
use thiserror::Error;

pub use config::{load, parse, Config};
pub use run::{run, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("{key} (line {line}, column {column}): {message}")]
    Validation { key: String, line: usize, column: usize, message: String },
    /// Input rejected by a solver after the config was accepted.
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } | CliError::Invalid(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }

    /// Machine-readable form, printed next to the human message.
    pub fn to_json(&self) -> String {
        let v = match self {
            CliError::Validation { key, line, column, message } => json!({
                "error": { "kind": "validation", "key": key, "line": line, "column": column, "message": message }
            }),
            CliError::Invalid(m) => json!({ "error": { "kind": "invalid", "message": m } }),
            CliError::Numerical(m) => json!({ "error": { "kind": "numerical", "message": m } }),
            CliError::Io(m) => json!({ "error": { "kind": "io", "message": m } }),
        };
        v.to_string()
    }
}

/// Built-in terminals and generators with the oracles each one unlocks.
pub fn catalog_text() -> String {
    let mut s = String::from("terminals\n");
    for e in sqbsde::terminal::CATALOG {
        s.push_str(&format!("  {}: {}\n      {}\n", e.name, e.oracles, e.form));
    }
    s.push_str("generators\n");
    for (name, oracle) in [
        ("canonical delta|z|^2/y", "transform-exact oracle; Neumann series oracle on [0, 1]; dual bounds"),
        ("g-class with alpha = 0", "transform-exact oracle under the gamma-shifted measure"),
        ("g-class with alpha > 0", "sandwich bounds from the two linear equations"),
        ("custom H (expression in t, y, z)", "dominated by its g-class bound; least squares only"),
    ] {
        s.push_str(&format!("  {name}: {oracle}\n"));
    }
    s
}

/// Writes every report file into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    for (name, body) in &report.files {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
