//! Browser bindings for a few clustlm operations. Every export takes and
//! returns JSON strings so the page needs no generated glue beyond
//! wasm-bindgen's.

use clustlm::clustering::kmeans_1d_exact;
use clustlm::model::Dataset;
use clustlm::pgd::{pgd_fit, PGDConfig};
use clustlm::projections::project_sparse_clustered;
use clustlm::theory::random_clustered_vector;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Out = std::result::Result<String, String>;

fn parse_values(json: &str) -> std::result::Result<Vec<f64>, String> {
    let v: Vec<f64> = serde_json::from_str(json).map_err(|e| format!("expected a JSON array of numbers: {e}"))?;
    if v.is_empty() {
        return Err("need at least one value".into());
    }
    Ok(v)
}

fn to_json<T: Serialize>(v: &T) -> Out {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Projection onto vectors with at most `k` nonzeros taking at most `q`
/// distinct nonzero values. `k = 0` drops the sparsity constraint.
pub fn project_vector_json(values: &str, k: usize, q: usize) -> Out {
    let x = parse_values(values)?;
    if q == 0 {
        return Err("q must be at least 1".into());
    }
    let k = if k == 0 { x.len() } else { k.min(x.len()) };
    to_json(&project_sparse_clustered(&x, k, q))
}

#[derive(Serialize)]
struct KMeansOut {
    labels: Vec<usize>,
    centroids: Vec<f64>,
    cost: f64,
}

pub fn kmeans_1d_json(values: &str, q: usize) -> Out {
    let x = parse_values(values)?;
    let r = kmeans_1d_exact(&x, q).map_err(|e| e.to_string())?;
    to_json(&KMeansOut {
        labels: r.partition.labels(),
        centroids: r.centroids.iter().map(|c| c[0]).collect(),
        cost: r.cost,
    })
}

#[derive(Serialize)]
struct TraceOut {
    w_star: Vec<f64>,
    w_hat: Vec<f64>,
    /// `||w_t - w*||` for the start point and every iterate.
    errors: Vec<f64>,
}

/// Unit-step projected gradient from zero on a random Gaussian design.
pub fn pgd_recovery_trace_json(d: usize, q: usize, n: usize, sigma: f64, iterations: usize, seed: u64) -> Out {
    if d == 0 || n == 0 || q == 0 || q > d || iterations == 0 {
        return Err("need d >= q >= 1, n >= 1 and at least one iteration".into());
    }
    if d * n > 2_000_000 || iterations > 1000 {
        return Err("problem too large for the demo".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The loss averages over samples, so X^T X / n is close to the identity.
    let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w = random_clustered_vector(d, q, &mut rng);
    let noise = DVector::from_fn(n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    let data = Dataset::regression(x.clone(), &x * &w + noise).map_err(|e| e.to_string())?;
    let (_, report) = pgd_fit(&data, &PGDConfig::theory(q, iterations)).map_err(|e| e.to_string())?;
    let iterates = report.iterates.unwrap_or_default();
    let errors = iterates
        .iter()
        .map(|it| it.iter().zip(w.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .collect();
    to_json(&TraceOut {
        w_star: w.iter().copied().collect(),
        w_hat: iterates.last().cloned().unwrap_or_default(),
        errors,
    })
}

#[wasm_bindgen]
pub fn project_vector(values: &str, k: usize, q: usize) -> Result<String, JsValue> {
    project_vector_json(values, k, q).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn kmeans_1d(values: &str, q: usize) -> Result<String, JsValue> {
    kmeans_1d_json(values, q).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn pgd_recovery_trace(d: usize, q: usize, n: usize, sigma: f64, iterations: usize, seed: u32) -> Result<String, JsValue> {
    pgd_recovery_trace_json(d, q, n, sigma, iterations, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn projection_round_trip() {
        let out: Value = serde_json::from_str(&project_vector_json("[3, 2.9, -1, 0.1]", 2, 1).unwrap()).unwrap();
        let w: Vec<f64> = serde_json::from_value(out["w"].clone()).unwrap();
        let expect = [2.95, 2.95, 0.0, 0.0];
        assert!(w.iter().zip(expect).all(|(a, b)| (a - b).abs() < 1e-12), "{w:?}");
        assert!(project_vector_json("not json", 1, 1).is_err());
        assert!(project_vector_json("[1]", 1, 0).is_err());
    }

    #[test]
    fn kmeans_groups_nearby_values() {
        let out: Value = serde_json::from_str(&kmeans_1d_json("[0, 0.1, 5, 5.2]", 2).unwrap()).unwrap();
        let labels: Vec<usize> = serde_json::from_value(out["labels"].clone()).unwrap();
        assert_eq!(labels[0], labels[1]);
        assert_ne!(labels[1], labels[2]);
        assert!((out["cost"].as_f64().unwrap() - 0.025).abs() < 1e-12);
    }

    #[test]
    fn noiseless_trace_recovers() {
        let out: Value = serde_json::from_str(&pgd_recovery_trace_json(10, 2, 400, 0.0, 60, 1).unwrap()).unwrap();
        let errors: Vec<f64> = serde_json::from_value(out["errors"].clone()).unwrap();
        assert!(errors.len() > 1);
        assert!(errors.last().unwrap() < &1e-6, "{errors:?}");
        assert!(pgd_recovery_trace_json(2, 3, 10, 0.0, 5, 0).is_err());
    }
}
