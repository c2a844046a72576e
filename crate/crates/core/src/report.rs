//! CSV and text output for grid estimates and nuisance diagnostics.

use std::fmt::Write as _;

use crate::config::{Benchmark, RunConfig};
use crate::datamodel::{build_design, Dataset, Regime};
use crate::error::Result;
use crate::estimators::{GridCell, SampleContext};
use crate::linmod::{oos_prediction_power, Family};
use crate::stats::derive_seed;

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.10}")
    } else {
        "NA".into()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `100·(δ/δ_benchmark − 1)`: percent difference relative to the benchmark
/// cell, NaN when the benchmark is missing or zero.
pub fn pct_diff(delta: f64, benchmark: Option<f64>) -> f64 {
    match benchmark {
        Some(b) if b != 0.0 => 100.0 * (delta / b - 1.0),
        _ => f64::NAN,
    }
}

pub fn benchmark_delta(cells: &[GridCell], benchmark: Option<&Benchmark>) -> Option<f64> {
    let b = benchmark?;
    cells
        .iter()
        .find(|c| c.estimator == b.estimator && c.regime == b.regime && c.support_id == b.support_id)
        .and_then(|c| c.result.as_ref().ok())
        .map(|e| e.delta)
}

/// One row per grid cell; failed cells keep their row with `status=failed`
/// and the error message.
pub fn estimates_csv(cells: &[GridCell], benchmark: Option<&Benchmark>) -> String {
    let bench = benchmark_delta(cells, benchmark);
    let mut s = String::from(
        "support,estimator,regime,status,delta,se,percent,pct_diff_benchmark,\
         n_focal,n_reference,n_trimmed,n_unmatched,seed,diagnostics,error\n",
    );
    for c in cells {
        match &c.result {
            Ok(e) => {
                let diag: Vec<String> = e.diagnostics.iter().map(|(k, v)| format!("{k}={}", num(*v))).collect();
                let _ = writeln!(
                    s,
                    "{},{},{},ok,{},{},{},{},{},{},{},{},{},{},",
                    csv_field(&c.support_id),
                    c.estimator,
                    c.regime,
                    num(e.delta),
                    num(e.se),
                    num(e.percent()),
                    num(pct_diff(e.delta, bench)),
                    e.n_focal_used,
                    e.n_reference_used,
                    e.n_trimmed,
                    e.n_unmatched,
                    e.seed,
                    csv_field(&diag.join(";")),
                );
            }
            Err(m) => {
                let _ = writeln!(
                    s,
                    "{},{},{},failed,NA,NA,NA,NA,,,,,,,{}",
                    csv_field(&c.support_id),
                    c.estimator,
                    c.regime,
                    csv_field(m)
                );
            }
        }
    }
    s
}

/// Estimator × regime rows, one column per support: `δ̂ (se)` in log points.
pub fn estimates_table(cells: &[GridCell]) -> String {
    let mut supports: Vec<&str> = Vec::new();
    let mut rows: Vec<(String, String)> = Vec::new();
    for c in cells {
        if !supports.contains(&c.support_id.as_str()) {
            supports.push(&c.support_id);
        }
        let key = (c.estimator.to_string(), c.regime.to_string());
        if !rows.contains(&key) {
            rows.push(key);
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:<7}{:<10}", "est", "regime");
    for s in &supports {
        let _ = write!(out, "{s:>22}");
    }
    out.push('\n');
    for (e, r) in &rows {
        let _ = write!(out, "{e:<7}{r:<10}");
        for s in &supports {
            let cell = cells
                .iter()
                .find(|c| c.support_id == *s && c.estimator.to_string() == *e && c.regime.to_string() == *r);
            let text = match cell.map(|c| &c.result) {
                Some(Ok(g)) if g.se.is_finite() => format!("{:.4} ({:.4})", g.delta, g.se),
                Some(Ok(g)) => format!("{:.4}", g.delta),
                Some(Err(_)) => "failed".into(),
                None => String::new(),
            };
            let _ = write!(out, "{text:>22}");
        }
        out.push('\n');
    }
    out
}

/// Weighted histogram of `p` on `[0, 1]` for each group: rows
/// `(lo, hi, share_reference, share_focal)`; each share column sums to 1.
pub fn propensity_histogram(p: &[f64], group: &[u8], w: &[f64], bins: usize) -> Vec<(f64, f64, f64, f64)> {
    let bins = bins.max(1);
    let mut mass = vec![[0.0f64; 2]; bins];
    let mut tot = [0.0f64; 2];
    for i in 0..p.len() {
        let b = ((p[i] * bins as f64) as usize).min(bins - 1);
        let g = group[i] as usize;
        mass[b][g] += w[i];
        tot[g] += w[i];
    }
    (0..bins)
        .map(|b| {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            let share = |g: usize| if tot[g] > 0.0 { mass[b][g] / tot[g] } else { 0.0 };
            (lo, hi, share(0), share(1))
        })
        .collect()
}

/// Files produced by the diagnose command.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub propensity_csv: String,
    pub selection_csv: String,
    pub power_csv: String,
}

/// Propensity-score histograms per regime, selected-variable counts of the
/// ML fits and out-of-sample prediction power of the parametric fits, all
/// on the full sample.
pub fn diagnose(data: &Dataset, cfg: &RunConfig) -> Result<Diagnostics> {
    data.require_both_groups()?;
    let ctx = SampleContext::new(data, &cfg.specs, &cfg.estimation, cfg.seed);
    let regimes = [Regime::Baseline, Regime::Full, Regime::Ml];

    let mut propensity_csv = String::from("regime,bin_lo,bin_hi,share_reference,share_focal\n");
    let mut power_csv = String::from("regime,model,metric,value\n");
    let mut selection_csv = String::from("model,candidates,selected,lambda\n");
    for r in regimes {
        match ctx.propensity(r) {
            Ok(ps) => {
                for (lo, hi, s0, s1) in propensity_histogram(&ps.p, data.group(), data.weight(), cfg.histogram_bins) {
                    let _ = writeln!(propensity_csv, "{r},{},{},{},{}", num(lo), num(hi), num(s0), num(s1));
                }
            }
            Err(e) => log::warn!("propensity model for {r} failed: {e}"),
        }
    }
    for r in [Regime::Baseline, Regime::Full] {
        let spec = cfg.specs.for_regime(r);
        let folds = cfg.oos_folds;
        let seed = derive_seed(cfg.seed, &[7]);
        let r2 = oos_prediction_power(data, spec, Family::Gaussian, folds, seed).unwrap_or(f64::NAN);
        let ll = oos_prediction_power(data, spec, Family::Binomial, folds, seed).unwrap_or(f64::NAN);
        let _ = writeln!(power_csv, "{r},wage,oos_r2,{}", num(r2));
        let _ = writeln!(power_csv, "{r},propensity,oos_loglik,{}", num(ll));
    }

    let full = build_design(data, cfg.specs.for_regime(Regime::Full))?;
    let candidates = full.n_cols();
    if let Ok(m) = ctx.outcome_model(Regime::Ml) {
        let _ = writeln!(selection_csv, "wage,{candidates},{},{}", m.fit.coefficients.len(), num(m.lambda.unwrap_or(f64::NAN)));
    }
    if let Ok(ps) = ctx.propensity(Regime::Ml) {
        let sel = ps.fit.coefficients.iter().filter(|(_, b)| *b != 0.0).count();
        let _ = writeln!(selection_csv, "propensity,{candidates},{sel},{}", num(ps.lambda.unwrap_or(f64::NAN)));
    }
    if let Ok(p) = ctx.pds_selection() {
        let _ = writeln!(selection_csv, "pds.wage,{candidates},{},{}", p.outcome_columns.len(), num(p.lambda_outcome));
        let _ = writeln!(selection_csv, "pds.group,{candidates},{},{}", p.group_columns.len(), num(p.lambda_group));
        let _ = writeln!(selection_csv, "pds.union,{candidates},{},NA", p.columns.len());
    }
    // oos power of the ML wage model at the selected penalty
    if let Ok(m) = ctx.outcome_model(Regime::Ml) {
        let names: Vec<String> = m.fit.coefficients.iter().map(|(n, _)| n.clone()).collect();
        let rows = data.rows_in_group(0);
        if let Ok(x) = full.select_columns(&names) {
            let xs = x.select_rows(&rows);
            let y: Vec<f64> = rows.iter().map(|&i| data.outcome()[i]).collect();
            let w: Vec<f64> = rows.iter().map(|&i| data.weight()[i]).collect();
            let r2 = crate::linmod::cross_fit_power(&xs, &y, &w, Family::Gaussian, cfg.oos_folds, derive_seed(cfg.seed, &[7]))
                .unwrap_or(f64::NAN);
            let _ = writeln!(power_csv, "ML,wage,oos_r2,{}", num(r2));
        }
    }
    Ok(Diagnostics {
        propensity_csv,
        selection_csv,
        power_csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Regime;
    use crate::estimators::{Estimator, GapEstimate};

    fn cell(e: Estimator, s: &str, delta: f64) -> GridCell {
        let mut g = crate::estimators::estimate_lrm(
            &Dataset::new(vec![0, 1, 0, 1], vec![1.0, 0.0, 1.0, 0.0], None, vec![]).unwrap(),
            &crate::datamodel::ModelSpec::baseline(vec![]),
            &Default::default(),
        )
        .unwrap();
        g.delta = delta;
        g.estimator = e;
        g.support_id = s.into();
        let _: &GapEstimate = &g;
        GridCell {
            support_id: s.into(),
            estimator: e,
            regime: Regime::Baseline,
            result: Ok(g),
        }
    }

    #[test]
    fn benchmark_row_is_zero() {
        let cells = vec![cell(Estimator::Bo, "S1", -0.08), cell(Estimator::Ipw, "S1", -0.06)];
        let b = Benchmark {
            estimator: Estimator::Bo,
            regime: Regime::Baseline,
            support_id: "S1".into(),
        };
        let csv = estimates_csv(&cells, Some(&b));
        let rows: Vec<&str> = csv.lines().collect();
        let pct = |row: &str| row.split(',').nth(7).unwrap().to_string();
        assert_eq!(pct(rows[1]), "0.0000000000");
        assert_eq!(pct(rows[2]), num(100.0 * (0.06 / 0.08 - 1.0)));
        assert!(estimates_table(&cells).contains("-0.0800"));
    }

    #[test]
    fn failed_cells_are_kept() {
        let cells = vec![GridCell {
            support_id: "S1".into(),
            estimator: Estimator::Exm,
            regime: Regime::Full,
            result: Err("off support, rows".into()),
        }];
        let csv = estimates_csv(&cells, None);
        assert!(csv.lines().nth(1).unwrap().contains("failed"));
        assert!(csv.contains("\"off support, rows\""));
    }

    #[test]
    fn histogram_shares_sum_to_one() {
        let p = [0.05, 0.5, 0.55, 0.99, 1.0, 0.3];
        let g = [0, 1, 1, 0, 1, 0];
        let w = [1.0, 2.0, 1.0, 1.0, 1.0, 2.0];
        let h = propensity_histogram(&p, &g, &w, 10);
        let s0: f64 = h.iter().map(|r| r.2).sum();
        let s1: f64 = h.iter().map(|r| r.3).sum();
        assert!((s0 - 1.0).abs() < 1e-12 && (s1 - 1.0).abs() < 1e-12);
        assert_eq!(h[9].3, 0.25);
    }
}
