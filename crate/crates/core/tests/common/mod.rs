//! Shared helpers for the integration tests.
#![allow(dead_code)]

use nearfield_core::layer::Discretization;
use nearfield_core::scene::{RadialPotential, SceneConfig};
use nearfield_core::Complex64;
use serde_json::Value;
use std::path::PathBuf;

pub fn fixture(name: &str) -> Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).expect("fixture json")
}

pub fn f(v: &Value) -> f64 {
    v.as_f64().expect("number")
}

pub fn z(v: &Value) -> Complex64 {
    Complex64::new(f(&v["re"]), f(&v["im"]))
}

pub fn point(v: &Value) -> [f64; 3] {
    let a = v.as_array().expect("point");
    [f(&a[0]), f(&a[1]), f(&a[2])]
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub fn crel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn default_disc() -> Discretization {
    Discretization::new(&SceneConfig::default_scene()).expect("default scene")
}

pub fn small_scene() -> SceneConfig {
    SceneConfig {
        l_max: 12,
        n_quad_s: 150,
        ..SceneConfig::default_scene()
    }
}

pub fn two_shell() -> RadialPotential {
    RadialPotential::default_two_shell()
}

/// Weighted L₂(S) norm of a difference relative to the reference.
pub fn rel_l2(values: &[Complex64], reference: &[Complex64], weights: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((a, b), w) in values.iter().zip(reference).zip(weights) {
        num += w * (a - b).norm_sqr();
        den += w * b.norm_sqr();
    }
    (num / den).sqrt()
}
