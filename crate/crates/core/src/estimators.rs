//! Unexplained-gap estimators and the estimation grid.
//!
//! Every estimator works on a sample that has already been restricted to
//! common support. Nuisance models are fitted once per sample and regime and
//! shared by the estimators of that cell through [`SampleContext`].

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::datamodel::{build_design, Dataset, DesignMatrix, ModelSpec, Regime, VariableBlock};
use crate::error::{Error, Result};
use crate::lasso::{fit_lasso_path, pds_select_design, LassoConfig, PdsSelection, Selection};
use crate::linmod::{fit_logit, fit_wls, predict, FitResult};
use crate::stats::{assign_folds, derive_seed, weighted_quantile};
use crate::support::{CellIndex, SupportDefinition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Lrm,
    Bo,
    Ipw,
    Aipw,
    Exm,
    Psm,
    Expsm,
    Pds,
}

impl Estimator {
    pub const ALL: [Estimator; 8] = [
        Estimator::Lrm,
        Estimator::Bo,
        Estimator::Ipw,
        Estimator::Aipw,
        Estimator::Exm,
        Estimator::Psm,
        Estimator::Expsm,
        Estimator::Pds,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Lrm => "LRM",
            Estimator::Bo => "BO",
            Estimator::Ipw => "IPW",
            Estimator::Aipw => "AIPW",
            Estimator::Exm => "EXM",
            Estimator::Psm => "PSM",
            Estimator::Expsm => "EXPSM",
            Estimator::Pds => "PDS",
        }
    }

    pub fn parse(s: &str) -> Option<Estimator> {
        Estimator::ALL.into_iter().find(|e| e.label().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Baseline and full specifications; the ML regime selects from the full
/// term list.
#[derive(Debug, Clone, PartialEq)]
pub struct Specs {
    pub baseline: ModelSpec,
    pub full: ModelSpec,
}

impl Specs {
    pub fn new(baseline: ModelSpec, full: ModelSpec) -> Specs {
        Specs { baseline, full }
    }

    pub fn for_regime(&self, r: Regime) -> &ModelSpec {
        match r {
            Regime::Baseline => &self.baseline,
            Regime::Full | Regime::Ml => &self.full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationConfig {
    pub seed: u64,
    /// Reference-group odds weights above this weighted quantile are trimmed.
    pub trim_quantile: f64,
    /// Quantile of the focal group's closest propensity distances used as
    /// matching radius.
    pub radius_quantile: f64,
    /// Cross-fitting folds for AIPW; 1 uses in-sample nuisances.
    pub aipw_folds: usize,
    pub lasso: LassoConfig,
    /// LRM and the PDS refit use the fully group-interacted regression.
    pub interacted_lrm: bool,
    /// Penalties keyed by nuisance role (`mu0`, `ps`, `pds.y`, ...), reused
    /// instead of cross-validating (bootstrap fast mode).
    pub frozen_lambdas: Option<BTreeMap<String, f64>>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            seed: 0,
            trim_quantile: 0.995,
            radius_quantile: 0.99,
            aipw_folds: 2,
            lasso: LassoConfig::default(),
            interacted_lrm: false,
            frozen_lambdas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapEstimate {
    pub estimator: Estimator,
    pub regime: Regime,
    pub support_id: String,
    /// Unexplained gap in log points, focal minus reference.
    pub delta: f64,
    /// Bootstrap standard error; NaN until computed.
    pub se: f64,
    pub n_focal_used: usize,
    pub n_reference_used: usize,
    pub n_trimmed: usize,
    pub n_unmatched: usize,
    pub seed: u64,
    pub diagnostics: Vec<(String, f64)>,
}

impl GapEstimate {
    fn new(estimator: Estimator, regime: Regime, delta: f64) -> GapEstimate {
        GapEstimate {
            estimator,
            regime,
            support_id: String::new(),
            delta,
            se: f64::NAN,
            n_focal_used: 0,
            n_reference_used: 0,
            n_trimmed: 0,
            n_unmatched: 0,
            seed: 0,
            diagnostics: Vec::new(),
        }
    }

    pub fn diagnostic(&self, key: &str) -> Option<f64> {
        self.diagnostics.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    fn push(&mut self, key: &str, v: f64) {
        self.diagnostics.push((key.to_string(), v));
    }

    /// `100·(exp(δ) − 1)`.
    pub fn percent(&self) -> f64 {
        100.0 * self.delta.exp_m1()
    }

    /// Penalties recorded under `lambda.<role>`.
    pub fn lambdas(&self) -> BTreeMap<String, f64> {
        self.diagnostics
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("lambda.").map(|r| (r.to_string(), *v)))
            .collect()
    }
}

/// Fitted propensity model and the trimming applied to the reference group.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub fit: FitResult,
    /// p̂ for every row of the sample, strictly inside (0, 1).
    pub p: Vec<f64>,
    pub lambda: Option<f64>,
    pub trim_threshold: f64,
    /// Trimmed reference-group rows.
    pub trimmed: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct OutcomeFit {
    pub fit: FitResult,
    /// μ̂₀ for every row of the sample.
    pub pred: Vec<f64>,
    pub lambda: Option<f64>,
}

// ---------------------------------------------------------------------------
// Shared computations
// ---------------------------------------------------------------------------

fn focal_rows(data: &Dataset, rows: &[usize]) -> (Vec<usize>, Vec<usize>) {
    rows.iter().partition(|&&i| data.group()[i] == 1)
}

fn wmean(values: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut s, mut sw) = (0.0, 0.0);
    for (v, w) in values {
        s += w * v;
        sw += w;
    }
    s / sw
}

/// Normalized, trimmed odds weights `p/(1−p)·w` over the reference rows.
pub struct IpwWeights {
    /// (row, normalized weight) for every retained reference row.
    pub weights: Vec<(usize, f64)>,
    pub threshold: f64,
    pub trimmed: Vec<usize>,
}

pub fn ipw_weights(p: &[f64], w: &[f64], reference: &[usize], trim_quantile: f64) -> Result<IpwWeights> {
    let odds: Vec<f64> = reference.iter().map(|&i| p[i] / (1.0 - p[i])).collect();
    let ws: Vec<f64> = reference.iter().map(|&i| w[i]).collect();
    let threshold = if trim_quantile >= 1.0 {
        f64::INFINITY
    } else {
        weighted_quantile(&odds, &ws, trim_quantile)
    };
    let mut weights = Vec::with_capacity(reference.len());
    let mut trimmed = Vec::new();
    let mut total = 0.0;
    for (k, &i) in reference.iter().enumerate() {
        if odds[k] > threshold {
            trimmed.push(i);
        } else {
            let v = odds[k] * ws[k];
            total += v;
            weights.push((i, v));
        }
    }
    if weights.is_empty() || !(total > 0.0) {
        return Err(Error::Degenerate("all reference rows trimmed".into()));
    }
    weights.iter_mut().for_each(|(_, v)| *v /= total);
    Ok(IpwWeights {
        weights,
        threshold,
        trimmed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExmResult {
    pub delta: f64,
    pub n_focal: usize,
    pub n_reference: usize,
    /// Supported cells with a single reference row.
    pub singleton_cells: usize,
}

/// Exact matching over the on-support rows of `cells`: weighted mean over
/// focal rows of `Y − (weighted reference mean of Y in the cell)`.
pub fn exact_match_on_support(data: &Dataset, cells: &CellIndex) -> Result<ExmResult> {
    let k = cells.n_cells();
    let mut sy = vec![0.0; k];
    let y = data.outcome();
    let w = data.weight();
    for i in 0..data.n_rows() {
        if data.group()[i] == 0 {
            sy[cells.cell[i] as usize] += w[i] * y[i];
        }
    }
    let (mut s, mut sw) = (0.0, 0.0);
    let (mut n1, mut n0) = (0, 0);
    for i in 0..data.n_rows() {
        let c = cells.cell[i] as usize;
        if !cells.cell_supported(c as u32) {
            continue;
        }
        if data.group()[i] == 1 {
            s += w[i] * (y[i] - sy[c] / cells.weights[c][0]);
            sw += w[i];
            n1 += 1;
        } else {
            n0 += 1;
        }
    }
    if n1 == 0 {
        return Err(Error::Degenerate("no focal rows on support".into()));
    }
    let singleton_cells = (0..k)
        .filter(|&c| cells.cell_supported(c as u32) && cells.counts[c][0] == 1)
        .count();
    Ok(ExmResult {
        delta: s / sw,
        n_focal: n1,
        n_reference: n0,
        singleton_cells,
    })
}

/// Exact matching on the cells of `cells`. Every focal row must be on
/// support; exact matching cannot extrapolate.
pub fn exact_match(data: &Dataset, cells: &CellIndex) -> Result<GapEstimate> {
    data.require_both_groups()?;
    let off = (0..data.n_rows())
        .filter(|&i| data.group()[i] == 1 && !cells.on_support(i))
        .count();
    if off > 0 {
        return Err(Error::OffSupport(off));
    }
    let r = exact_match_on_support(data, cells)?;
    let mut est = GapEstimate::new(Estimator::Exm, Regime::Baseline, r.delta);
    est.n_focal_used = r.n_focal;
    est.n_reference_used = r.n_reference;
    est.push("cells", cells.n_cells() as f64);
    est.push("singleton_cells", r.singleton_cells as f64);
    Ok(est)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub delta: f64,
    pub radius: f64,
    pub n_focal_used: usize,
    pub n_reference_used: usize,
    pub n_unmatched: usize,
    /// All propensity scores within a cell are equal (matching degenerates
    /// to exact matching on the cells).
    pub degenerate: bool,
}

/// Radius matching on `p` within the cells `cell` (use a single cell for
/// plain propensity matching). The radius is the `radius_quantile` of the
/// focal rows' closest within-cell distances, weighted by `w`; focal rows
/// without a reference row within the radius are dropped and counted.
pub fn radius_match(
    y: &[f64],
    w: &[f64],
    group: &[u8],
    p: &[f64],
    cell: &[u32],
    radius_quantile: f64,
    radius: Option<f64>,
) -> Result<MatchResult> {
    let n = y.len();
    let n_cells = cell.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    // reference rows per cell, sorted by p
    let mut refs: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
    for i in 0..n {
        if group[i] == 0 {
            refs[cell[i] as usize].push(i);
        }
    }
    for r in &mut refs {
        r.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    }
    let ps: Vec<Vec<f64>> = refs.iter().map(|r| r.iter().map(|&i| p[i]).collect()).collect();
    let prefix = |vals: &dyn Fn(usize) -> f64, r: &[usize]| -> Vec<f64> {
        let mut out = Vec::with_capacity(r.len() + 1);
        out.push(0.0);
        let mut s = 0.0;
        for &i in r {
            s += vals(i);
            out.push(s);
        }
        out
    };
    let cw: Vec<Vec<f64>> = refs.iter().map(|r| prefix(&|i| w[i], r)).collect();
    let cwy: Vec<Vec<f64>> = refs.iter().map(|r| prefix(&|i| w[i] * y[i], r)).collect();

    let focal: Vec<usize> = (0..n).filter(|&i| group[i] == 1).collect();
    let mut closest = Vec::with_capacity(focal.len());
    let mut closest_w = Vec::with_capacity(focal.len());
    let mut no_reference = 0;
    for &i in &focal {
        let v = &ps[cell[i] as usize];
        if v.is_empty() {
            no_reference += 1;
            continue;
        }
        let k = v.partition_point(|&x| x < p[i]);
        let mut d = f64::INFINITY;
        if k < v.len() {
            d = d.min((v[k] - p[i]).abs());
        }
        if k > 0 {
            d = d.min((p[i] - v[k - 1]).abs());
        }
        closest.push(d);
        closest_w.push(w[i]);
    }
    if closest.is_empty() {
        return Err(Error::Degenerate("no focal row has a reference row in its cell".into()));
    }
    let r = radius.unwrap_or_else(|| weighted_quantile(&closest, &closest_w, radius_quantile));

    let mut cover: Vec<Vec<i64>> = refs.iter().map(|x| vec![0; x.len() + 1]).collect();
    let (mut s, mut sw) = (0.0, 0.0);
    let mut used = 0;
    for &i in &focal {
        let c = cell[i] as usize;
        let v = &ps[c];
        if v.is_empty() {
            continue;
        }
        let pi = p[i];
        let lo = v.partition_point(|&x| x < pi && pi - x > r);
        let hi = v.partition_point(|&x| x <= pi || x - pi <= r);
        if hi <= lo {
            continue;
        }
        let m = (cwy[c][hi] - cwy[c][lo]) / (cw[c][hi] - cw[c][lo]);
        s += w[i] * (y[i] - m);
        sw += w[i];
        used += 1;
        cover[c][lo] += 1;
        cover[c][hi] -= 1;
    }
    if used == 0 {
        return Err(Error::Degenerate("no focal row matched within the radius".into()));
    }
    let mut n_ref_used = 0;
    for cv in &cover {
        let mut run = 0;
        for x in &cv[..cv.len() - 1] {
            run += x;
            if run > 0 {
                n_ref_used += 1;
            }
        }
    }
    let degenerate = ps.iter().all(|v| v.windows(2).all(|x| x[0] == x[1]))
        && focal.iter().all(|&i| ps[cell[i] as usize].first().is_none_or(|&x| x == p[i]));
    Ok(MatchResult {
        delta: s / sw,
        radius: r,
        n_focal_used: used,
        n_reference_used: n_ref_used,
        n_unmatched: focal.len() - used,
        degenerate: degenerate && no_reference == 0,
    })
}

fn lrm_delta(x: &DesignMatrix, data: &Dataset, interacted: bool) -> Result<(f64, bool)> {
    let g = data.group_f64();
    if interacted {
        return bo_interacted_design(x, data);
    }
    let xg = x.with_leading("__group__", g);
    let fit = fit_wls(&xg, data.outcome(), data.weight())?;
    Ok((fit.coefficient("__group__").expect("group column present"), fit.ridge))
}

/// Fully group-interacted regression: `δ = α_BO + X̄₁·β_BO`.
fn bo_interacted_design(x: &DesignMatrix, data: &Dataset) -> Result<(f64, bool)> {
    let g = data.group_f64();
    let w = data.weight();
    let mut names = Vec::with_capacity(x.n_cols());
    let mut cols = Vec::with_capacity(x.n_cols());
    for (name, c) in x.names().iter().zip(x.columns()) {
        names.push(format!("__group__:{name}"));
        cols.push(c.iter().zip(&g).map(|(a, b)| a * b).collect());
    }
    let full = x.with_leading("__group__", g.clone()).with_appended(names.clone(), cols);
    let fit = fit_wls(&full, data.outcome(), w)?;
    let mut delta = fit.coefficient("__group__").expect("group column present");
    let focal = data.rows_in_group(1);
    for (name, c) in names.iter().zip(x.columns()) {
        let m = wmean(focal.iter().map(|&i| (c[i], w[i])));
        delta += m * fit.coefficient(name).expect("interaction present");
    }
    Ok((delta, fit.ridge))
}

/// BO through the interacted one-step regression. Equal to the two-step
/// estimate up to rounding.
pub fn bo_interacted(data: &Dataset, spec: &ModelSpec) -> Result<f64> {
    data.require_both_groups()?;
    let x = build_design(data, spec)?;
    Ok(bo_interacted_design(&x, data)?.0)
}

// ---------------------------------------------------------------------------
// Sample context: designs and nuisances shared across estimators
// ---------------------------------------------------------------------------

type Cached<T> = OnceCell<std::result::Result<T, String>>;

fn cached<'c, T>(cell: &'c Cached<T>, f: impl FnOnce() -> Result<T>) -> Result<&'c T> {
    cell.get_or_init(|| f().map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|m| Error::Nuisance(m.clone()))
}

fn regime_index(r: Regime) -> usize {
    match r {
        Regime::Baseline => 0,
        Regime::Full => 1,
        Regime::Ml => 2,
    }
}

/// One on-support sample with lazily fitted, cached designs and nuisance
/// models for each regime.
pub struct SampleContext<'a> {
    pub data: &'a Dataset,
    specs: &'a Specs,
    cfg: &'a EstimationConfig,
    seed: u64,
    designs: [Cached<DesignMatrix>; 2],
    outcome: [Cached<OutcomeFit>; 3],
    propensity: [Cached<PropensityFit>; 3],
    pds: Cached<PdsSelection>,
}

impl<'a> SampleContext<'a> {
    pub fn new(data: &'a Dataset, specs: &'a Specs, cfg: &'a EstimationConfig, seed: u64) -> SampleContext<'a> {
        SampleContext {
            data,
            specs,
            cfg,
            seed,
            designs: Default::default(),
            outcome: Default::default(),
            propensity: Default::default(),
            pds: Default::default(),
        }
    }

    pub fn design(&self, r: Regime) -> Result<&DesignMatrix> {
        let k = if r == Regime::Baseline { 0 } else { 1 };
        cached(&self.designs[k], || build_design(self.data, self.specs.for_regime(r)))
    }

    fn lasso_cfg(&self, role: &str, role_id: u64) -> LassoConfig {
        LassoConfig {
            seed: derive_seed(self.seed, &[role_id]),
            frozen_lambda: self.cfg.frozen_lambdas.as_ref().and_then(|m| m.get(role).copied()),
            ..self.cfg.lasso.clone()
        }
    }

    fn fit_outcome(&self, r: Regime, x: &DesignMatrix, rows: &[usize], role: &str, role_id: u64) -> Result<(FitResult, Option<f64>)> {
        let x0 = x.select_rows(rows);
        let y0: Vec<f64> = rows.iter().map(|&i| self.data.outcome()[i]).collect();
        let w0: Vec<f64> = rows.iter().map(|&i| self.data.weight()[i]).collect();
        if r == Regime::Ml {
            let path = fit_lasso_path(&x0, &y0, &w0, crate::linmod::Family::Gaussian, &self.lasso_cfg(role, role_id))?;
            let cols = path.selected(Selection::Lambda1se);
            let fit = fit_wls(&x0.select_columns(&cols)?, &y0, &w0)?;
            Ok((fit, Some(path.lambda_1se)))
        } else {
            Ok((fit_wls(&x0, &y0, &w0)?, None))
        }
    }

    fn fit_propensity(&self, r: Regime, x: &DesignMatrix, rows: &[usize], role: &str, role_id: u64) -> Result<(FitResult, Option<f64>)> {
        let xs = x.select_rows(rows);
        let g: Vec<f64> = rows.iter().map(|&i| self.data.group()[i] as f64).collect();
        let w: Vec<f64> = rows.iter().map(|&i| self.data.weight()[i]).collect();
        if r == Regime::Ml {
            let path = fit_lasso_path(&xs, &g, &w, crate::linmod::Family::Binomial, &self.lasso_cfg(role, role_id))?;
            Ok((path.fit_at(Selection::Lambda1se), Some(path.lambda_1se)))
        } else {
            Ok((fit_logit(&xs, &g, &w)?, None))
        }
    }

    /// μ̂₀ fitted on the reference rows, predicted on every row.
    pub fn outcome_model(&self, r: Regime) -> Result<&OutcomeFit> {
        cached(&self.outcome[regime_index(r)], || {
            let x = self.design(r)?;
            let (fit, lambda) = self.fit_outcome(r, x, &self.data.rows_in_group(0), "mu0", 1)?;
            let pred = predict(&fit, x)?;
            Ok(OutcomeFit { fit, pred, lambda })
        })
    }

    /// p̂ fitted and predicted on every row, with IPW trimming applied.
    pub fn propensity(&self, r: Regime) -> Result<&PropensityFit> {
        cached(&self.propensity[regime_index(r)], || {
            let x = self.design(r)?;
            let all: Vec<usize> = (0..self.data.n_rows()).collect();
            let (fit, lambda) = self.fit_propensity(r, x, &all, "ps", 2)?;
            let p = predict(&fit, x)?;
            let iw = ipw_weights(&p, self.data.weight(), &self.data.rows_in_group(0), self.cfg.trim_quantile)?;
            Ok(PropensityFit {
                fit,
                p,
                lambda,
                trim_threshold: iw.threshold,
                trimmed: iw.trimmed,
            })
        })
    }

    pub fn pds_selection(&self) -> Result<&PdsSelection> {
        cached(&self.pds, || {
            let x = self.design(Regime::Full)?;
            let frozen = self.cfg.frozen_lambdas.as_ref().and_then(|m| Some((*m.get("pds.y")?, *m.get("pds.g")?)));
            let cfg = LassoConfig {
                seed: derive_seed(self.seed, &[3]),
                ..self.cfg.lasso.clone()
            };
            pds_select_design(x, self.data.outcome(), &self.data.group_f64(), self.data.weight(), &cfg, frozen)
        })
    }

    fn base(&self, e: Estimator, r: Regime, delta: f64) -> GapEstimate {
        let mut est = GapEstimate::new(e, r, delta);
        est.seed = self.seed;
        est
    }

    fn counts(&self) -> (usize, usize) {
        let n1 = self.data.group().iter().filter(|&&g| g == 1).count();
        (n1, self.data.n_rows() - n1)
    }

    pub fn lrm(&self, r: Regime) -> Result<GapEstimate> {
        if r == Regime::Ml {
            let mut est = self.pds()?;
            est.estimator = Estimator::Lrm;
            est.regime = Regime::Ml;
            return Ok(est);
        }
        let (delta, ridge) = lrm_delta(self.design(r)?, self.data, self.cfg.interacted_lrm)?;
        let mut est = self.base(Estimator::Lrm, r, delta);
        (est.n_focal_used, est.n_reference_used) = self.counts();
        est.push("columns", self.design(r)?.n_cols() as f64);
        est.push("ridge", ridge as u8 as f64);
        Ok(est)
    }

    pub fn pds(&self) -> Result<GapEstimate> {
        let sel = self.pds_selection()?;
        let x = self.design(Regime::Full)?.select_columns(&sel.columns)?;
        let (delta, ridge) = lrm_delta(&x, self.data, self.cfg.interacted_lrm)?;
        let mut est = self.base(Estimator::Pds, Regime::Ml, delta);
        (est.n_focal_used, est.n_reference_used) = self.counts();
        est.push("selected", sel.columns.len() as f64);
        est.push("selected.y", sel.outcome_columns.len() as f64);
        est.push("selected.g", sel.group_columns.len() as f64);
        est.push("candidates", self.design(Regime::Full)?.n_cols() as f64);
        est.push("ridge", ridge as u8 as f64);
        est.push("lambda.pds.y", sel.lambda_outcome);
        est.push("lambda.pds.g", sel.lambda_group);
        Ok(est)
    }

    pub fn bo(&self, r: Regime) -> Result<GapEstimate> {
        let m = self.outcome_model(r)?;
        let w = self.data.weight();
        let y = self.data.outcome();
        let focal = self.data.rows_in_group(1);
        let delta = wmean(focal.iter().map(|&i| (y[i] - m.pred[i], w[i])));
        let mut est = self.base(Estimator::Bo, r, delta);
        (est.n_focal_used, est.n_reference_used) = self.counts();
        est.push("columns", m.fit.coefficients.len() as f64);
        est.push("ridge", m.fit.ridge as u8 as f64);
        if let Some(l) = m.lambda {
            est.push("lambda.mu0", l);
        }
        Ok(est)
    }

    fn propensity_diagnostics(est: &mut GapEstimate, ps: &PropensityFit) {
        let (lo, hi) = ps.p.iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        est.push("ps.min", lo);
        est.push("ps.max", hi);
        est.push("ps.extreme", ps.p.iter().filter(|&&v| !(0.01..=0.99).contains(&v)).count() as f64);
        est.push("ps.separation", ps.fit.separation as u8 as f64);
        if let Some(l) = ps.lambda {
            est.push("lambda.ps", l);
        }
    }

    pub fn ipw(&self, r: Regime) -> Result<GapEstimate> {
        let ps = self.propensity(r)?;
        let w = self.data.weight();
        let y = self.data.outcome();
        let focal = self.data.rows_in_group(1);
        let iw = ipw_weights(&ps.p, w, &self.data.rows_in_group(0), self.cfg.trim_quantile)?;
        let delta = wmean(focal.iter().map(|&i| (y[i], w[i]))) - iw.weights.iter().map(|&(i, v)| v * y[i]).sum::<f64>();
        let mut est = self.base(Estimator::Ipw, r, delta);
        est.n_focal_used = focal.len();
        est.n_reference_used = iw.weights.len();
        est.n_trimmed = iw.trimmed.len();
        est.push("trim_quantile", self.cfg.trim_quantile);
        est.push("trim_threshold", iw.threshold);
        est.push("weight_sum", iw.weights.iter().map(|x| x.1).sum());
        Self::propensity_diagnostics(&mut est, ps);
        Ok(est)
    }

    fn aipw_on(&self, rows: &[usize], mu0: &[f64], p: &[f64]) -> Result<(f64, usize, usize)> {
        let w = self.data.weight();
        let y = self.data.outcome();
        let (focal, reference) = focal_rows(self.data, rows);
        if focal.is_empty() || reference.is_empty() {
            return Err(Error::Degenerate("AIPW evaluation part lacks a group".into()));
        }
        let iw = ipw_weights(p, w, &reference, self.cfg.trim_quantile)?;
        let first = wmean(focal.iter().map(|&i| (y[i] - mu0[i], w[i])));
        let second: f64 = iw.weights.iter().map(|&(i, v)| v * (y[i] - mu0[i])).sum();
        Ok((first - second, iw.trimmed.len(), iw.weights.len()))
    }

    pub fn aipw(&self, r: Regime) -> Result<GapEstimate> {
        let folds = self.cfg.aipw_folds.max(1);
        let n = self.data.n_rows();
        let mut est;
        if folds == 1 {
            let m = self.outcome_model(r)?;
            let ps = self.propensity(r)?;
            let all: Vec<usize> = (0..n).collect();
            let (delta, trimmed, used) = self.aipw_on(&all, &m.pred, &ps.p)?;
            est = self.base(Estimator::Aipw, r, delta);
            est.n_trimmed = trimmed;
            est.n_reference_used = used;
            if let Some(l) = m.lambda {
                est.push("lambda.mu0", l);
            }
            if let Some(l) = ps.lambda {
                est.push("lambda.ps", l);
            }
        } else {
            let fold = assign_folds(n, folds, Some(self.data.group()), derive_seed(self.seed, &[4]));
            let x = self.design(r)?;
            let mut total = 0.0;
            let (mut trimmed, mut used) = (0, 0);
            let mut lambdas = Vec::new();
            for k in 0..folds {
                let train: Vec<usize> = (0..n).filter(|&i| fold[i] != k).collect();
                let eval: Vec<usize> = (0..n).filter(|&i| fold[i] == k).collect();
                let train0: Vec<usize> = train.iter().copied().filter(|&i| self.data.group()[i] == 0).collect();
                let (mf, lm) = self.fit_outcome(r, x, &train0, &format!("aipw.mu0.{k}"), 10 + 2 * k as u64)?;
                let (pf, lp) = self.fit_propensity(r, x, &train, &format!("aipw.ps.{k}"), 11 + 2 * k as u64)?;
                let xe = x.select_rows(&eval);
                let mut mu0 = vec![0.0; n];
                let mut p = vec![0.5; n];
                for (j, v) in predict(&mf, &xe)?.into_iter().enumerate() {
                    mu0[eval[j]] = v;
                }
                for (j, v) in predict(&pf, &xe)?.into_iter().enumerate() {
                    p[eval[j]] = v;
                }
                let (d, t, u) = self.aipw_on(&eval, &mu0, &p)?;
                total += d;
                trimmed += t;
                used += u;
                if let Some(l) = lm {
                    lambdas.push((format!("lambda.aipw.mu0.{k}"), l));
                }
                if let Some(l) = lp {
                    lambdas.push((format!("lambda.aipw.ps.{k}"), l));
                }
            }
            est = self.base(Estimator::Aipw, r, total / folds as f64);
            est.n_trimmed = trimmed;
            est.n_reference_used = used;
            est.diagnostics.extend(lambdas);
        }
        est.n_focal_used = self.counts().0;
        est.push("folds", folds as f64);
        est.push("trim_quantile", self.cfg.trim_quantile);
        Ok(est)
    }

    pub fn exm(&self, cells: &CellIndex, r: Regime) -> Result<GapEstimate> {
        let mut est = exact_match(self.data, cells)?;
        est.regime = r;
        est.seed = self.seed;
        Ok(est)
    }

    fn matching(&self, e: Estimator, r: Regime, cells: &CellIndex) -> Result<GapEstimate> {
        let ps = self.propensity(r)?;
        let m = radius_match(
            self.data.outcome(),
            self.data.weight(),
            self.data.group(),
            &ps.p,
            &cells.cell,
            self.cfg.radius_quantile,
            None,
        )?;
        let mut est = self.base(e, r, m.delta);
        est.n_focal_used = m.n_focal_used;
        est.n_reference_used = m.n_reference_used;
        est.n_unmatched = m.n_unmatched;
        est.push("radius", m.radius);
        est.push("radius_quantile", self.cfg.radius_quantile);
        est.push("radius_scope_global", 1.0);
        est.push("exact_cells", cells.n_cells() as f64);
        est.push("ps.degenerate", m.degenerate as u8 as f64);
        Self::propensity_diagnostics(&mut est, ps);
        Ok(est)
    }

    /// Radius matching after exact matching on `exact_cells` (the cells of
    /// the least restrictive support definition).
    pub fn psm(&self, r: Regime, exact_cells: &CellIndex) -> Result<GapEstimate> {
        self.matching(Estimator::Psm, r, exact_cells)
    }

    /// Radius matching within the cells of the active support definition,
    /// with one global radius.
    pub fn expsm(&self, r: Regime, cells: &CellIndex) -> Result<GapEstimate> {
        self.matching(Estimator::Expsm, r, cells)
    }

    /// Dispatches one estimator. `support_cells` are the cells of the active
    /// support definition, `exact_cells` those used by PSM.
    pub fn estimate(&self, e: Estimator, r: Regime, support_cells: &CellIndex, exact_cells: &CellIndex) -> Result<GapEstimate> {
        self.data.require_both_groups()?;
        let mut est = match e {
            Estimator::Lrm => self.lrm(r),
            Estimator::Bo => self.bo(r),
            Estimator::Ipw => self.ipw(r),
            Estimator::Aipw => self.aipw(r),
            Estimator::Exm => self.exm(support_cells, r),
            Estimator::Psm => self.psm(r, exact_cells),
            Estimator::Expsm => self.expsm(r, support_cells),
            Estimator::Pds => self.pds(),
        }?;
        est.regime = r;
        Ok(est)
    }
}

// ---------------------------------------------------------------------------
// Stand-alone estimator entry points
// ---------------------------------------------------------------------------

fn single_spec(spec: &ModelSpec) -> Specs {
    Specs::new(spec.clone(), spec.clone())
}

/// Group-dummy coefficient of weighted OLS of Y on (G, X).
pub fn estimate_lrm(data: &Dataset, spec: &ModelSpec, cfg: &EstimationConfig) -> Result<GapEstimate> {
    data.require_both_groups()?;
    let specs = single_spec(spec);
    SampleContext::new(data, &specs, cfg, cfg.seed).lrm(Regime::Full).map(|mut e| {
        e.regime = spec.regime;
        e
    })
}

/// Two-step BO (T-learner under the ML regime).
pub fn estimate_bo(data: &Dataset, spec: &ModelSpec, cfg: &EstimationConfig) -> Result<GapEstimate> {
    data.require_both_groups()?;
    let specs = single_spec(spec);
    SampleContext::new(data, &specs, cfg, cfg.seed).bo(spec.regime)
}

pub fn estimate_ipw(data: &Dataset, spec: &ModelSpec, cfg: &EstimationConfig) -> Result<GapEstimate> {
    data.require_both_groups()?;
    let specs = single_spec(spec);
    SampleContext::new(data, &specs, cfg, cfg.seed).ipw(spec.regime)
}

pub fn estimate_aipw(data: &Dataset, spec: &ModelSpec, cfg: &EstimationConfig) -> Result<GapEstimate> {
    data.require_both_groups()?;
    let specs = single_spec(spec);
    SampleContext::new(data, &specs, cfg, cfg.seed).aipw(spec.regime)
}

pub fn estimate_psm(data: &Dataset, exact_cells: &CellIndex, spec: &ModelSpec, cfg: &EstimationConfig) -> Result<GapEstimate> {
    data.require_both_groups()?;
    let specs = single_spec(spec);
    SampleContext::new(data, &specs, cfg, cfg.seed).psm(spec.regime, exact_cells)
}

pub fn estimate_expsm(data: &Dataset, cells: &CellIndex, spec: &ModelSpec, cfg: &EstimationConfig) -> Result<GapEstimate> {
    data.require_both_groups()?;
    let specs = single_spec(spec);
    SampleContext::new(data, &specs, cfg, cfg.seed).expsm(spec.regime, cells)
}

/// Post-double selection over the full specification.
pub fn estimate_pds(data: &Dataset, spec_full: &ModelSpec, cfg: &EstimationConfig) -> Result<GapEstimate> {
    data.require_both_groups()?;
    let specs = single_spec(spec_full);
    SampleContext::new(data, &specs, cfg, cfg.seed).pds()
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GridPlan {
    pub supports: Vec<SupportDefinition>,
    pub estimators: Vec<Estimator>,
    pub regimes: Vec<Regime>,
    /// Exact-matching blocks for PSM; defaults to the first support.
    pub psm_support: Option<SupportDefinition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub support_id: String,
    pub estimator: Estimator,
    pub regime: Regime,
    pub result: std::result::Result<GapEstimate, String>,
}

/// The on-support sample of one support definition plus its cells.
pub struct SupportSample {
    pub data: Dataset,
    pub cells: CellIndex,
    pub exact_cells: CellIndex,
    /// Rows of the original dataset kept in `data`.
    pub rows: Vec<usize>,
}

/// Restricts `data` to the support of `def` and rebuilds the cells on the
/// restricted sample.
pub fn support_sample(
    data: &Dataset,
    blocks: &[VariableBlock],
    def: &SupportDefinition,
    psm_def: &SupportDefinition,
) -> Result<SupportSample> {
    let cells = CellIndex::for_definition(data, blocks, def)?;
    let rows = cells.on_support_rows();
    let sample = data.select_rows(&rows);
    sample.require_both_groups()?;
    let cells = CellIndex::for_definition(&sample, blocks, def)?;
    let exact_cells = CellIndex::for_definition(&sample, blocks, psm_def)?;
    Ok(SupportSample {
        data: sample,
        cells,
        exact_cells,
        rows,
    })
}

/// All requested estimator × regime cells on one support sample.
/// `hook` may inject a failure into a cell before it runs.
pub fn estimate_sample(
    sample: &SupportSample,
    support_id: &str,
    specs: &Specs,
    plan: &GridPlan,
    cfg: &EstimationConfig,
    seed: u64,
    hook: &(dyn Fn(&str, Estimator, Regime) -> Result<()> + Sync),
) -> Vec<GridCell> {
    let ctx = SampleContext::new(&sample.data, specs, cfg, seed);
    let mut out = Vec::with_capacity(plan.estimators.len() * plan.regimes.len());
    for &e in &plan.estimators {
        for &r in &plan.regimes {
            let res = hook(support_id, e, r)
                .and_then(|_| ctx.estimate(e, r, &sample.cells, &sample.exact_cells))
                .map(|mut est| {
                    est.support_id = support_id.to_string();
                    est
                })
                .map_err(|err| err.to_string());
            if let Err(m) = &res {
                log::warn!("grid cell {support_id}/{e}/{r} failed: {m}");
            }
            out.push(GridCell {
                support_id: support_id.to_string(),
                estimator: e,
                regime: r,
                result: res,
            });
        }
    }
    out
}

/// Runs the Cartesian product supports × estimators × regimes. Failures are
/// recorded per cell; the grid always completes.
pub fn run_grid(
    data: &Dataset,
    blocks: &[VariableBlock],
    specs: &Specs,
    plan: &GridPlan,
    cfg: &EstimationConfig,
) -> Result<Vec<GridCell>> {
    run_grid_with_hook(data, blocks, specs, plan, cfg, &|_, _, _| Ok(()))
}

pub fn run_grid_with_hook(
    data: &Dataset,
    blocks: &[VariableBlock],
    specs: &Specs,
    plan: &GridPlan,
    cfg: &EstimationConfig,
    hook: &(dyn Fn(&str, Estimator, Regime) -> Result<()> + Sync),
) -> Result<Vec<GridCell>> {
    data.require_both_groups()?;
    let psm_def = plan
        .psm_support
        .clone()
        .or_else(|| plan.supports.first().cloned())
        .ok_or_else(|| Error::InvalidArgument("grid needs at least one support".into()))?;
    let per_support: Vec<Vec<GridCell>> = plan
        .supports
        .par_iter()
        .enumerate()
        .map(|(s, def)| {
            let seed = derive_seed(cfg.seed, &[s as u64]);
            match support_sample(data, blocks, def, &psm_def) {
                Ok(sample) => estimate_sample(&sample, &def.id, specs, plan, cfg, seed, hook),
                Err(err) => {
                    let msg = err.to_string();
                    let mut out = Vec::new();
                    for &e in &plan.estimators {
                        for &r in &plan.regimes {
                            out.push(GridCell {
                                support_id: def.id.clone(),
                                estimator: e,
                                regime: r,
                                result: Err(msg.clone()),
                            });
                        }
                    }
                    out
                }
            }
        })
        .collect();
    let cells: Vec<GridCell> = per_support.into_iter().flatten().collect();
    Ok(cells)
}
