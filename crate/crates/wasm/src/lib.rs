//! wasm-bindgen front end for the static page in `www/`. Each export takes
//! plain numbers and returns a JSON string; the pure functions underneath
//! are tested natively.

use mimlal::dataset::{generate_synthetic, synthetic_weights, Bag, SyntheticSpec};
use mimlal::experiment::{load_source, run_all, ExperimentConfig};
use mimlal::metrics::aggregate_runs;
use mimlal::model::{bag_probabilities, instance_posterior, ParamMatrix};
use mimlal::selection::{egl_pair_score, uncertainty_score, Criterion};
use mimlal::trainer::{compute_tau, full_gd, sgd_epochs, TrainConfig, UpdateMode};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Instances are 2-D points with a constant third feature acting as bias.
fn lift(points: &[f64]) -> Vec<Vec<f64>> {
    points
        .chunks_exact(2)
        .map(|p| vec![p[0], p[1], 1.0])
        .collect()
}

fn weights(flat: &[f64]) -> Result<ParamMatrix, String> {
    if flat.len() < 6 || !flat.len().is_multiple_of(3) {
        return Err("weights must hold 3 numbers per class and at least 2 classes".into());
    }
    ParamMatrix::from_flat(flat.len() / 3, 3, flat.to_vec()).map_err(|e| e.to_string())
}

/// Per-instance posteriors and per-class bag scores for one bag.
pub fn explore(flat_w: &[f64], points: &[f64], num_labeled: usize) -> Result<Value, String> {
    let w = weights(flat_w)?;
    if points.len() < 2 {
        return Ok(json!({ "posteriors": [], "classes": [] }));
    }
    let bag = Bag::new("bag", lift(points)).map_err(|e| e.to_string())?;
    let posteriors: Vec<Vec<f64>> = bag
        .instances()
        .map(|x| instance_posterior(&w, x).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let probs = bag_probabilities(&w, &bag);
    let classes: Vec<Value> = probs
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            json!({
                "p_positive": p,
                "uncertainty": uncertainty_score(p),
                "egl": egl_pair_score(&w, &bag, c, num_labeled),
            })
        })
        .collect();
    Ok(json!({ "posteriors": posteriors, "classes": classes }))
}

/// Most likely instance class and its probability on a `size × size` grid
/// over `[-extent, extent]²`, row-major from the top.
pub fn field(flat_w: &[f64], size: usize, extent: f64) -> Result<Vec<f64>, String> {
    let w = weights(flat_w)?;
    let mut out = Vec::with_capacity(size * size * 2);
    let step = 2.0 * extent / size.max(1) as f64;
    for r in 0..size {
        let y = extent - (r as f64 + 0.5) * step;
        for c in 0..size {
            let x = -extent + (c as f64 + 0.5) * step;
            let p = instance_posterior(&w, &[x, y, 1.0]).map_err(|e| e.to_string())?;
            let (best, pmax) =
                p.iter().enumerate().fold(
                    (0, f64::MIN),
                    |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc },
                );
            out.push(best as f64);
            out.push(pmax);
        }
    }
    Ok(out)
}

/// Mean bag-accuracy curves of egl-pair, unc-pair and rand-pair on a small
/// synthetic problem.
pub fn simulate(queries: usize, seeds: usize, separation: f64, seed: u64) -> Result<Value, String> {
    let mut curves = serde_json::Map::new();
    let mut costs = Vec::new();
    for criterion in [Criterion::EglPair, Criterion::UncPair, Criterion::RandPair] {
        let cfg = ExperimentConfig {
            bags: 80,
            test_bags: 60,
            classes: 4,
            dim: 4,
            bag_min: 2,
            bag_max: 6,
            separation,
            criterion,
            queries,
            seeds,
            seed,
            init_fraction: 0.05,
            ..ExperimentConfig::default()
        };
        cfg.validate().map_err(|e| e.to_string())?;
        let src = load_source(&cfg).map_err(|e| e.to_string())?;
        let runs = run_all(&cfg, &src).map_err(|e| e.to_string())?;
        let rows: Vec<_> = runs.into_iter().map(|r| r.output.curve).collect();
        let agg = aggregate_runs(&rows).map_err(|e| e.to_string())?;
        costs = agg.iter().map(|r| r.cost).collect();
        let acc: Vec<f64> = agg.iter().map(|r| r.mean[0]).collect();
        curves.insert(criterion.name().to_string(), json!(acc));
    }
    Ok(json!({ "cost": costs, "bag_accuracy": curves }))
}

/// Objective traces of full GD, bag-SGD and pair-SGD on one synthetic
/// dataset, plus the norm bound and the largest SGD norm seen.
pub fn convergence(lambda: f64, epochs: usize, seed: u64) -> Result<Value, String> {
    let spec = SyntheticSpec {
        bags: 60,
        classes: 4,
        dim: 5,
        bag_size: (2, 5),
    };
    let data = generate_synthetic(
        &spec,
        &synthetic_weights(4, 5, 2.0, seed),
        seed.wrapping_add(1),
    )
    .map_err(|e| e.to_string())?;
    let ds = &data.dataset;
    let base = TrainConfig {
        lambda,
        max_epochs: epochs,
        ..TrainConfig::default()
    };
    let w0 = ParamMatrix::zeros(4, 5);
    let gd = full_gd(
        ds,
        &TrainConfig {
            mode: UpdateMode::FullGd,
            ..base.clone()
        },
        &w0,
    )
    .map_err(|e| e.to_string())?;
    let mut out = json!({
        "tau": compute_tau(lambda, 4, ds.max_bag_size()).map_err(|e| e.to_string())?,
        "full_gd": gd.trace.iter().map(|t| t.objective).collect::<Vec<_>>(),
        "gd_norm": gd.w.norm(),
    });
    let mut max_norm = 0.0f64;
    for (key, mode) in [
        ("bag_sgd", UpdateMode::BagSgd),
        ("pair_sgd", UpdateMode::PairSgd),
    ] {
        let fit = sgd_epochs(
            ds,
            &TrainConfig {
                mode,
                ..base.clone()
            },
            &w0,
            epochs,
            seed.wrapping_add(2),
        )
        .map_err(|e| e.to_string())?;
        max_norm = max_norm.max(fit.max_norm);
        out[key] = json!(fit.trace.iter().map(|t| t.objective).collect::<Vec<_>>());
    }
    out["sgd_max_norm"] = json!(max_norm);
    Ok(out)
}

fn to_js(v: Result<Value, String>) -> Result<String, JsValue> {
    v.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = exploreBag)]
pub fn explore_bag(weights: &[f64], points: &[f64], num_labeled: usize) -> Result<String, JsValue> {
    to_js(explore(weights, points, num_labeled))
}

#[wasm_bindgen(js_name = posteriorField)]
pub fn posterior_field(weights: &[f64], size: usize, extent: f64) -> Result<Vec<f64>, JsValue> {
    field(weights, size, extent).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = simulateActive)]
pub fn simulate_active(
    queries: usize,
    seeds: usize,
    separation: f64,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(simulate(queries, seeds, separation, seed.into()))
}

#[wasm_bindgen(js_name = compareTraining)]
pub fn compare_training(lambda: f64, epochs: usize, seed: u32) -> Result<String, JsValue> {
    to_js(convergence(lambda, epochs, seed.into()))
}
