#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn swei(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swei"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs the binary and panics with its stderr on failure.
pub fn swei_ok(args: &[&str]) -> Output {
    let out = swei(args);
    assert!(
        out.status.success(),
        "swei {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

/// Geometry with the default pixel pitch.
pub fn geom_json(depth: usize, lateral: usize) -> Value {
    json!({
        "depth_px": depth,
        "lateral_px": lateral,
        "depth_extent": 0.020 * depth as f64 / 250.0,
        "lateral_extent": 0.033 * lateral as f64 / 600.0,
    })
}

/// One homogeneous phantom and one with a central stiff inclusion.
pub fn phantom_config(depth: usize, lateral: usize, radius: f64) -> Value {
    let g = geom_json(depth, lateral);
    json!({ "phantoms": [
        { "id": "soft", "concentration": 0, "spec": { "geom": g, "background": { "young_modulus": 20000.0 } } },
        { "id": "incl", "concentration": 1, "spec": {
            "geom": g,
            "background": { "young_modulus": 20000.0 },
            "inclusions": [{
                "center": { "depth": depth / 2, "lateral": lateral / 2 },
                "radius": radius,
                "material": { "young_modulus": 50000.0 }
            }]
        }}
    ]})
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
