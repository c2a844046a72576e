//! Row bootstrap standard errors.
//!
//! Replicates resample rows with replacement (weights travel with their
//! rows) and re-run the whole estimation procedure, nuisance fits included.
//! Replicate `b` draws from `derive_seed(seed, [b])`, so results do not
//! depend on the thread schedule.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::datamodel::{Dataset, VariableBlock};
use crate::error::{Error, Result};
use crate::estimators::{estimate_sample, support_sample, EstimationConfig, GridCell, GridPlan, Specs};
use crate::stats::{derive_seed, rng};

/// Largest tolerated share of failed replicates (exclusive).
pub const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Re-run cross-validation inside each replicate. When false, penalties
    /// are frozen at their full-sample values (faster, slightly understates
    /// the variance from penalty selection).
    pub refit_lambda: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 200,
            seed: 0,
            refit_lambda: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub se: f64,
    pub ok: usize,
    pub failed: usize,
    /// Successful replicate estimates in replicate order.
    pub draws: Vec<f64>,
}

impl BootstrapResult {
    pub fn from_draws(values: &[Option<f64>]) -> BootstrapResult {
        let draws: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
        let failed = values.len() - draws.len();
        BootstrapResult {
            se: sample_sd(&draws),
            ok: draws.len(),
            failed,
            draws,
        }
    }

    pub fn total(&self) -> usize {
        self.ok + self.failed
    }

    pub fn acceptable(&self) -> bool {
        self.total() >= 2 && (self.failed as f64) < MAX_FAILURE_SHARE * self.total() as f64 && self.ok >= 2
    }
}

fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Rows of one bootstrap draw of size `n`.
pub fn resample_rows(n: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(0..n)).collect()
}

/// Runs `procedure` on `replicates` resampled copies of `data`. Each call
/// receives the replicate and a seed for its own randomness; failures are
/// reported as `None`.
pub fn bootstrap_replicates<T, F>(data: &Dataset, replicates: usize, seed: u64, procedure: F) -> Vec<Option<T>>
where
    T: Send,
    F: Fn(&Dataset, u64) -> Result<T> + Sync,
{
    (0..replicates)
        .into_par_iter()
        .map(|b| {
            let rows = resample_rows(data.n_rows(), derive_seed(seed, &[b as u64]));
            let rep = data.select_rows(&rows);
            match procedure(&rep, derive_seed(seed, &[b as u64, 1])) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::debug!("bootstrap replicate {b} failed: {e}");
                    None
                }
            }
        })
        .collect()
}

/// Bootstrap standard error of a scalar estimator.
pub fn bootstrap_se<F>(data: &Dataset, replicates: usize, seed: u64, procedure: F) -> Result<BootstrapResult>
where
    F: Fn(&Dataset, u64) -> Result<f64> + Sync,
{
    if replicates < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 replicates".into()));
    }
    let res = BootstrapResult::from_draws(&bootstrap_replicates(data, replicates, seed, procedure));
    if !res.acceptable() {
        return Err(Error::Bootstrap {
            failed: res.failed,
            total: res.total(),
        });
    }
    Ok(res)
}

/// Fills `se` for every successful grid cell. Replicates resample the
/// on-support sample of each support definition, re-impose support on the
/// draw, and estimate all estimator × regime cells of that support jointly.
/// Cells whose failure share reaches 5% keep `se = NaN` and carry a
/// `bootstrap.error` diagnostic.
pub fn bootstrap_grid(
    data: &Dataset,
    blocks: &[VariableBlock],
    specs: &Specs,
    plan: &GridPlan,
    cfg: &EstimationConfig,
    boot: &BootstrapConfig,
    cells: &mut [GridCell],
) -> Result<()> {
    if boot.replicates < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 replicates".into()));
    }
    let psm_def = plan
        .psm_support
        .clone()
        .or_else(|| plan.supports.first().cloned())
        .ok_or_else(|| Error::InvalidArgument("grid needs at least one support".into()))?;
    let no_hook = |_: &str, _, _| Ok(());
    for (s, def) in plan.supports.iter().enumerate() {
        let keys: Vec<usize> = cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.support_id == def.id && c.result.is_ok())
            .map(|(k, _)| k)
            .collect();
        if keys.is_empty() {
            continue;
        }
        let sample = support_sample(data, blocks, def, &psm_def)?;
        let mut rep_cfg = cfg.clone();
        if !boot.refit_lambda {
            let mut frozen = BTreeMap::new();
            for &k in &keys {
                if let Ok(est) = &cells[k].result {
                    frozen.extend(est.lambdas());
                }
            }
            rep_cfg.frozen_lambdas = Some(frozen);
        }
        let targets: Vec<(crate::estimators::Estimator, crate::datamodel::Regime)> =
            keys.iter().map(|&k| (cells[k].estimator, cells[k].regime)).collect();
        let rep_plan = GridPlan {
            supports: vec![def.clone()],
            ..plan.clone()
        };
        let draws = bootstrap_replicates(&sample.data, boot.replicates, derive_seed(boot.seed, &[s as u64]), |rep, seed| {
            let rs = support_sample(rep, blocks, def, &psm_def)?;
            let out = estimate_sample(&rs, &def.id, specs, &rep_plan, &rep_cfg, seed, &no_hook);
            Ok(targets
                .iter()
                .map(|&(e, r)| {
                    out.iter()
                        .find(|c| c.estimator == e && c.regime == r)
                        .and_then(|c| c.result.as_ref().ok())
                        .map(|g| g.delta)
                })
                .collect::<Vec<Option<f64>>>())
        });
        for (j, &k) in keys.iter().enumerate() {
            let col: Vec<Option<f64>> = draws.iter().map(|d| d.as_ref().and_then(|v| v[j])).collect();
            let res = BootstrapResult::from_draws(&col);
            if let Ok(est) = &mut cells[k].result {
                est.diagnostics.push(("bootstrap.replicates".into(), res.total() as f64));
                est.diagnostics.push(("bootstrap.failed".into(), res.failed as f64));
                if res.acceptable() {
                    est.se = res.se;
                } else {
                    log::warn!(
                        "bootstrap for {}/{}/{}: {} of {} replicates failed",
                        def.id,
                        cells[k].estimator,
                        cells[k].regime,
                        res.failed,
                        res.total()
                    );
                    est.se = f64::NAN;
                    est.diagnostics.push(("bootstrap.error".into(), 1.0));
                }
            }
        }
    }
    Ok(())
}
