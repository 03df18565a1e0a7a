#![allow(dead_code)]

use std::path::PathBuf;

use stefan_core::cli::RunConfig;
use stefan_core::{ContinuousControl, FunctionSpec, ProblemData, Signature};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn manufactured_config() -> RunConfig {
    RunConfig::load(&config_path("manufactured.toml")).expect("manufactured config loads")
}

pub fn manufactured() -> ProblemData {
    manufactured_config().problem_data().unwrap()
}

/// `s = 1 + t/4`, `g = 1` with exact derivatives.
pub fn manufactured_truth(pd: &ProblemData) -> ContinuousControl {
    let t = |s: &str| FunctionSpec::parse(s, Signature::T).unwrap();
    ContinuousControl::analytic_with_derivatives(t("1 + t/4"), t("1"), Some(t("1/4")), Some(t("0")), Some(t("0")), pd)
        .unwrap()
}

pub fn exact_u(x: f64, t: f64) -> f64 {
    x * x + x + 2.0 * t
}
