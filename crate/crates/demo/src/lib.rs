//! WebAssembly bindings for the browser demo. Every operation simulates a
//! paper-shape sample in memory and returns a JSON document; the plain Rust
//! functions carry the logic and the `#[wasm_bindgen]` wrappers only convert
//! errors.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use paygap::datamodel::{build_design, Dataset, Regime};
use paygap::dgp::{paper_shape_dgp, DgpConfig, Sector, Truth};
use paygap::estimators::{run_grid, EstimationConfig, Estimator, GridPlan};
use paygap::lasso::{fit_lasso_path, LassoConfig};
use paygap::linmod::Family;
use paygap::support::sequential_support_analysis;

/// Largest sample the page may request.
pub const MAX_ROWS: usize = 200_000;

fn simulate(sector: &str, n: usize, seed: u64) -> Result<(DgpConfig, Dataset, Truth), String> {
    let sector = Sector::parse(sector).ok_or_else(|| format!("unknown sector `{sector}`"))?;
    if !(200..=MAX_ROWS).contains(&n) {
        return Err(format!("sample size must lie in 200..={MAX_ROWS}"));
    }
    let mut cfg = paper_shape_dgp(sector);
    cfg.n = n;
    cfg.seed = seed;
    let (data, truth) = cfg.generate().map_err(|e| e.to_string())?;
    Ok((cfg, data, truth))
}

fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn truth_json(t: &Truth) -> Value {
    json!({
        "raw_gap": t.raw_gap,
        "unexplained": t.unexplained,
        "raw_gap_on_support": t.raw_gap_on_support,
    })
}

/// Nopo decomposition after enforcing support on 1..=5 blocks.
pub fn support_curve_json(sector: &str, n: usize, seed: u64) -> Result<String, String> {
    let (cfg, data, truth) = simulate(sector, n, seed)?;
    let report = sequential_support_analysis(&data, &cfg.variable_blocks()).map_err(|e| e.to_string())?;
    let steps: Vec<Value> = report
        .steps
        .iter()
        .map(|s| {
            let d = &s.decomposition;
            json!({
                "step": s.step,
                "block": s.block,
                "cells": s.n_cells,
                "share_focal": d.share_focal_on_support,
                "share_reference": d.share_reference_on_support,
                "raw_gap": d.raw_gap,
                "gap_on_support": d.gap_on_support.map(num),
                "unexplained": d.unexplained_on_support.map(num),
                "out_focal": d.out_of_support_focal,
                "out_reference": d.out_of_support_reference,
            })
        })
        .collect();
    Ok(json!({ "truth": truth_json(&truth), "steps": steps }).to_string())
}

/// All estimators under the parametric regimes on one support, numbered
/// from 1.
pub fn compare_estimators_json(sector: &str, n: usize, seed: u64, support: usize) -> Result<String, String> {
    let (cfg, data, truth) = simulate(sector, n, seed)?;
    let defs = cfg.support_definitions();
    let def = support
        .checked_sub(1)
        .and_then(|k| defs.get(k))
        .ok_or_else(|| format!("support must lie in 1..={}", defs.len()))?;
    let plan = GridPlan {
        supports: vec![def.clone()],
        estimators: Estimator::ALL.to_vec(),
        regimes: vec![Regime::Baseline, Regime::Full],
        psm_support: Some(defs[0].clone()),
    };
    let ec = EstimationConfig {
        seed,
        ..Default::default()
    };
    let cells = run_grid(&data, &cfg.variable_blocks(), &cfg.specs(), &plan, &ec).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = cells
        .iter()
        .map(|c| match &c.result {
            Ok(e) => json!({
                "estimator": c.estimator.label(),
                "regime": c.regime.label(),
                "delta": num(e.delta),
                "percent": num(e.percent()),
            }),
            Err(m) => json!({
                "estimator": c.estimator.label(),
                "regime": c.regime.label(),
                "error": m,
            }),
        })
        .collect();
    Ok(json!({ "support": def.id, "truth": truth_json(&truth), "rows": rows }).to_string())
}

/// Cross-validated LASSO path of the wage model (`wage`, reference group)
/// or the propensity model (`propensity`) on the full design.
pub fn lasso_path_json(sector: &str, n: usize, seed: u64, model: &str) -> Result<String, String> {
    let (cfg, data, _) = simulate(sector, n, seed)?;
    let x = build_design(&data, &cfg.specs().full).map_err(|e| e.to_string())?;
    let lc = LassoConfig {
        seed,
        ..Default::default()
    };
    let path = match model {
        "wage" => {
            let rows = data.rows_in_group(0);
            let xs = x.select_rows(&rows);
            let y: Vec<f64> = rows.iter().map(|&i| data.outcome()[i]).collect();
            let w: Vec<f64> = rows.iter().map(|&i| data.weight()[i]).collect();
            fit_lasso_path(&xs, &y, &w, Family::Gaussian, &lc)
        }
        "propensity" => fit_lasso_path(&x, &data.group_f64(), data.weight(), Family::Binomial, &lc),
        other => return Err(format!("unknown model `{other}`")),
    }
    .map_err(|e| e.to_string())?;
    let selected: Vec<usize> = (0..path.lambdas.len()).map(|k| path.support_at(k).len()).collect();
    Ok(json!({
        "model": model,
        "candidates": x.n_cols(),
        "lambda": path.lambdas,
        "cv_mean": path.cv_mean.iter().map(|v| num(*v)).collect::<Vec<_>>(),
        "cv_se": path.cv_se.iter().map(|v| num(*v)).collect::<Vec<_>>(),
        "selected": selected,
        "idx_min": path.idx_min,
        "idx_1se": path.idx_1se,
        "chosen": path.support_at(path.idx_1se),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn support_curve(sector: &str, n: usize, seed: u32) -> Result<String, JsError> {
    support_curve_json(sector, n, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compare_estimators(sector: &str, n: usize, seed: u32, support: usize) -> Result<String, JsError> {
    compare_estimators_json(sector, n, seed as u64, support).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn lasso_path(sector: &str, n: usize, seed: u32, model: &str) -> Result<String, JsError> {
    lasso_path_json(sector, n, seed as u64, model).map_err(|e| JsError::new(&e))
}
