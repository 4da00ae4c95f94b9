//! WebAssembly entry points for the static demo page in `www/`. Every
//! export returns a JSON string; the plain-Rust `*_json` functions behind
//! them are what the native tests call.

use ohz_core::fscil::{run_protocol, Method, ProtocolData, SessionConfig};
use ohz_core::metrics::{evaluate_cell, ClosedSet};
use ohz_core::prep::{ledoit_wolf, DEFAULT_PRECISION_FLOOR};
use ohz_core::probe::{self, TrainConfig};
use ohz_core::scores::{OsrArtifacts, ScoreKind, ScoreMethod};
use ohz_core::synth::{cluster_split, OpenSetSpec};
use ohz_core::{seed, Matrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Known classes, unknown classes and dimension of the OSR playground.
const OSR_SHAPE: (usize, usize, usize) = (6, 4, 32);
const HISTOGRAM_BINS: usize = 30;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Keeps at most `max` evenly spaced points, always including both ends.
fn thin(points: Vec<(f64, f64)>, max: usize) -> Vec<[f64; 2]> {
    if points.len() <= max {
        return points.into_iter().map(|(x, y)| [x, y]).collect();
    }
    let last = points.len() - 1;
    (0..max)
        .map(|i| points[i * last / (max - 1)])
        .map(|(x, y)| [x, y])
        .collect()
}

fn histogram(id: &[f64], ood: &[f64]) -> Value {
    let lo = id.iter().chain(ood).copied().fold(f64::INFINITY, f64::min);
    let hi = id.iter().chain(ood).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / HISTOGRAM_BINS as f64 } else { 1.0 };
    let count = |v: &[f64]| {
        let mut bins = vec![0usize; HISTOGRAM_BINS];
        for &s in v {
            bins[(((s - lo) / width) as usize).min(HISTOGRAM_BINS - 1)] += 1;
        }
        bins
    };
    json!({ "lo": lo, "hi": hi, "id": count(id), "ood": count(ood) })
}

/// Fits every artifact on a fresh open-set fixture and evaluates one score.
pub fn osr_json(kind: &str, separation: f64, temperature: f64, seed_value: u64) -> Result<Value, String> {
    let kind: ScoreKind = kind.parse().map_err(err)?;
    let (known, unknown, dim) = OSR_SHAPE;
    let spec = OpenSetSpec {
        known,
        unknown,
        dim,
        separation,
        train_per_class: 150,
        test_per_class: 60,
        unknowns_from_known: false,
    };
    let fx = spec.generate(seed_value);
    let config = TrainConfig { epochs: 30, seed: seed_value, ..TrainConfig::default() };
    let (art, _) = OsrArtifacts::fit(&fx.train, &fx.train_labels, known, &config, DEFAULT_PRECISION_FLOOR)
        .map_err(err)?;
    let method = ScoreMethod::new(kind, temperature, ohz_core::scores::DEFAULT_K);
    let id = art.score(method, &fx.id_test).map_err(err)?.scores;
    let ood = art.score(method, &fx.ood_test).map_err(err)?.scores;
    let model = art.probe.as_ref().ok_or("probe missing")?;
    let predictions = probe::predict(model, &fx.id_test).map_err(err)?;
    let closed = ClosedSet { predictions: &predictions, labels: &fx.id_test_labels };
    let cell = evaluate_cell("demo", kind, &id, &ood, Some(closed), 0.95).map_err(err)?;
    let roc: Vec<(f64, f64)> = cell.roc.fpr.iter().copied().zip(cell.roc.tpr.iter().copied()).collect();
    let oscr = cell.oscr.as_ref().ok_or("closed-set data missing")?;
    let d = &cell.decision;
    Ok(json!({
        "kind": kind.as_str(),
        "auroc": cell.report.auroc,
        "aupr": cell.report.aupr,
        "fpr_at_95": cell.report.fpr_at_95,
        "oscr_area": oscr.area,
        "closed_set_accuracy": 100.0 * probe::accuracy(&predictions, &fx.id_test_labels),
        "decision": {
            "threshold": d.threshold,
            "id_kept": d.id_kept,
            "id_total": d.id_total,
            "retention_rate": d.retention_rate,
            "ood_rejection_rate": d.ood_rejection_rate,
        },
        "roc": thin(roc, 200),
        "oscr": thin(oscr.points().collect(), 200),
        "histogram": histogram(&id, &ood),
    }))
}

/// Mean shrinkage intensity over `draws` samples of `n` rows from a
/// Gaussian whose coordinate variances are `1, 2, …, dim`.
fn mean_lambda(dim: usize, n: usize, draws: usize, rng: &mut impl Rng) -> Result<f64, String> {
    let mut total = 0.0;
    for _ in 0..draws {
        let data = (0..n * dim)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                z * (1.0 + (i % dim) as f64).sqrt()
            })
            .collect();
        let x = Matrix::from_vec(n, dim, data).map_err(err)?;
        total += ledoit_wolf(&x).map_err(err)?.lambda;
    }
    Ok(total / draws as f64)
}

/// Shrinkage intensity against sample count, from `dim / 4` to `40·dim` rows.
pub fn shrinkage_json(dim: usize, seed_value: u64) -> Result<Value, String> {
    if !(2..=128).contains(&dim) {
        return Err("dimension must be between 2 and 128".into());
    }
    let mut rng = seed::rng(seed_value, "demo/shrinkage");
    let mut points = Vec::new();
    let mut n = (dim / 4).max(2) as f64;
    while n <= 40.0 * dim as f64 {
        let rows = n.round() as usize;
        points.push(json!({ "n": rows, "lambda": mean_lambda(dim, rows, 8, &mut rng)? }));
        n *= 1.35;
    }
    Ok(json!({ "dim": dim, "points": points }))
}

/// Runs all four incremental methods on a 10-class cluster benchmark.
pub fn fscil_json(separation: f64, shots: usize, seed_value: u64) -> Result<Value, String> {
    let data = cluster_split(10, 32, separation, 30, 60, seed_value);
    let mut runs = Vec::new();
    for method in Method::ALL {
        let config = SessionConfig {
            method,
            shots,
            seed: seed_value,
            test_sample_count: 500,
            ..SessionConfig::default()
        };
        let out = run_protocol(
            &config,
            ProtocolData {
                train: &data.train,
                train_labels: &data.train_labels,
                test: &data.test,
                test_labels: &data.test_labels,
            },
        )
        .map_err(err)?;
        let sessions: Vec<f64> = out.results.iter().map(|r| r.overall_accuracy).collect();
        runs.push(json!({ "method": method.to_string(), "sessions": sessions }));
    }
    Ok(json!({ "shots": shots, "runs": runs }))
}

fn export(result: Result<Value, String>) -> Result<String, JsError> {
    result.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn osr(kind: &str, separation: f64, temperature: f64, seed: u32) -> Result<String, JsError> {
    export(osr_json(kind, separation, temperature, u64::from(seed)))
}

#[wasm_bindgen]
pub fn shrinkage(dim: u32, seed: u32) -> Result<String, JsError> {
    export(shrinkage_json(dim as usize, u64::from(seed)))
}

#[wasm_bindgen]
pub fn fscil(separation: f64, shots: u32, seed: u32) -> Result<String, JsError> {
    export(fscil_json(separation, shots as usize, u64::from(seed)))
}
