#![allow(dead_code)]

use std::path::PathBuf;

use nanotrap::config::Scenario;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn defaults_path() -> PathBuf {
    repo_root().join("configs/paper-defaults.toml")
}

pub fn defaults() -> Scenario<f64> {
    Scenario::load(&defaults_path()).expect("paper-defaults.toml loads")
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
