//! Weighted linear and logistic regression.

use nalgebra::DVector;

use crate::datamodel::{build_design, Dataset, DesignMatrix, ModelSpec};
use crate::error::{Error, Result};
use crate::linalg::{dot, solve_wls, spd_solve, weighted_gram};
use crate::stats::{assign_folds, collapse_rows, logistic, softplus};

/// Predicted probabilities are kept inside `[P_EPS, 1 - P_EPS]`.
pub const P_EPS: f64 = 1e-12;

const LOGIT_TOL: f64 = 1e-9;
const LOGIT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Gaussian,
    Binomial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub intercept: f64,
    /// Coefficients keyed by design column name, in design order. Sparse fits
    /// list only the selected columns.
    pub coefficients: Vec<(String, f64)>,
    pub family: Family,
    pub n_obs: usize,
    /// Weighted in-sample R² (Gaussian) or weighted log-likelihood (Binomial).
    pub fit_stat: f64,
    pub converged: bool,
    /// Logit only: the iteration cap was hit or fitted probabilities reached
    /// the boundary, both symptoms of (quasi-)separation.
    pub separation: bool,
    /// The ridge-guarded fallback solver was used.
    pub ridge: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients.iter().find(|(n, _)| n == name).map(|(_, b)| *b)
    }

    pub fn n_params(&self) -> usize {
        self.coefficients.len() + 1
    }

    /// Adjusted R² with the row count as effective sample size. Gaussian only.
    pub fn adjusted_r2(&self) -> f64 {
        let n = self.n_obs as f64;
        let k = self.coefficients.len() as f64;
        if n - k - 1.0 <= 0.0 {
            return f64::NAN;
        }
        1.0 - (1.0 - self.fit_stat) * (n - 1.0) / (n - k - 1.0)
    }

    /// Linear index `a + Xb`.
    pub fn linear_index(&self, x: &DesignMatrix) -> Result<Vec<f64>> {
        let mut eta = vec![self.intercept; x.n_rows()];
        for (name, b) in &self.coefficients {
            if *b == 0.0 {
                continue;
            }
            let col = x.column(name).ok_or_else(|| Error::ColumnMismatch(name.clone()))?;
            for (e, v) in eta.iter_mut().zip(col) {
                *e += b * v;
            }
        }
        Ok(eta)
    }
}

/// Gaussian: `a + Xb`; Binomial: `logistic(a + Xb)` clamped strictly inside
/// (0, 1).
pub fn predict(fit: &FitResult, x: &DesignMatrix) -> Result<Vec<f64>> {
    let mut eta = fit.linear_index(x)?;
    if fit.family == Family::Binomial {
        eta.iter_mut().for_each(|e| *e = clamp_prob(logistic(*e)));
    }
    Ok(eta)
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(P_EPS, 1.0 - P_EPS)
}

fn check_lengths(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<()> {
    if x.n_rows() != y.len() || y.len() != w.len() {
        return Err(Error::InvalidArgument(format!(
            "row counts differ: design {}, response {}, weights {}",
            x.n_rows(),
            y.len(),
            w.len()
        )));
    }
    if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    Ok(())
}

/// Weighted R² of `y` against fitted values `yhat`.
pub(crate) fn weighted_r2(y: &[f64], yhat: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let my = dot(y, w) / sw;
    let (mut sse, mut sst) = (0.0, 0.0);
    for i in 0..y.len() {
        sse += w[i] * (y[i] - yhat[i]).powi(2);
        sst += w[i] * (y[i] - my).powi(2);
    }
    if sst > 0.0 {
        1.0 - sse / sst
    } else if sse <= 1e-24 * sw.max(1.0) {
        1.0
    } else {
        0.0
    }
}

/// Weighted least squares of `y` on the design plus an unpenalized
/// intercept.
pub fn fit_wls(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<FitResult> {
    check_lengths(x, y, w)?;
    if y.len() < 2 {
        return Err(Error::InvalidArgument("least squares needs at least 2 rows".into()));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Degenerate("zero total weight".into()));
    }
    let cols = x.column_refs();
    let sol = solve_wls(&cols, y, w);
    let mut yhat = vec![sol.intercept; y.len()];
    for (c, b) in cols.iter().zip(&sol.coef) {
        for (f, v) in yhat.iter_mut().zip(c.iter()) {
            *f += b * v;
        }
    }
    if sol.ridge {
        log::debug!("fit_wls: rank-deficient design, ridge fallback used");
    }
    Ok(FitResult {
        intercept: sol.intercept,
        coefficients: x.names().iter().cloned().zip(sol.coef).collect(),
        family: Family::Gaussian,
        n_obs: y.len(),
        fit_stat: weighted_r2(y, &yhat, w),
        converged: true,
        separation: false,
        ridge: sol.ridge,
        iterations: 1,
    })
}

/// Weighted Bernoulli log-likelihood of linear index `eta`.
pub(crate) fn logit_loglik(eta: &[f64], g: &[f64], w: &[f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..eta.len() {
        // g·eta − log(1 + e^eta)
        ll += w[i] * (g[i] * eta[i] - softplus(eta[i]));
    }
    ll
}

/// Weighted logistic regression by iteratively reweighted least squares
/// with step-halving. `g` must hold 0/1 values of both classes.
pub fn fit_logit(x: &DesignMatrix, g: &[f64], w: &[f64]) -> Result<FitResult> {
    check_lengths(x, g, w)?;
    let (mut w1, mut w0) = (0.0, 0.0);
    for (gi, wi) in g.iter().zip(w) {
        if *gi == 1.0 {
            w1 += wi;
        } else if *gi == 0.0 {
            w0 += wi;
        } else {
            return Err(Error::InvalidArgument("logit response must be 0/1".into()));
        }
    }
    if w1 <= 0.0 || w0 <= 0.0 {
        return Err(Error::Degenerate("logit response has a single class".into()));
    }
    let n_obs = g.len();
    // identical rows share a fitted probability, so merging them leaves the
    // likelihood unchanged
    let collapsed = collapse_rows(&x.column_refs(), w, g);
    let (design, w, g): (Vec<&[f64]>, &[f64], &[f64]) = match &collapsed {
        Some((c, cw, cg)) => (c.iter().map(|v| v.as_slice()).collect(), cw, cg),
        None => (x.column_refs(), w, g),
    };
    let n = g.len();
    let ones = vec![1.0; n];
    let mut cols: Vec<&[f64]> = vec![&ones];
    cols.extend(design);
    let p = cols.len();

    let mut beta = DVector::zeros(p);
    beta[0] = (w1 / w0).ln();
    let index = |b: &DVector<f64>| -> Vec<f64> {
        let mut eta = vec![0.0; n];
        for (j, c) in cols.iter().enumerate() {
            if b[j] != 0.0 {
                for (e, v) in eta.iter_mut().zip(c.iter()) {
                    *e += b[j] * v;
                }
            }
        }
        eta
    };
    let mut eta = index(&beta);
    let mut ll = logit_loglik(&eta, g, w);
    let mut converged = false;
    let mut ridge = false;
    let mut iterations = 0;
    let mut v = vec![0.0; n];
    let mut r = vec![0.0; n];
    while iterations < LOGIT_MAX_ITER {
        iterations += 1;
        for i in 0..n {
            let pi = logistic(eta[i]);
            v[i] = w[i] * pi * (1.0 - pi);
            r[i] = w[i] * (g[i] - pi);
        }
        let gram = weighted_gram(&cols, &v);
        let score = DVector::from_iterator(p, cols.iter().map(|c| dot(c, &r)));
        let Some((step, used_ridge)) = spd_solve(&gram, &score) else {
            return Err(Error::Numerical("logit Hessian could not be factorized".into()));
        };
        ridge |= used_ridge;
        let mut t = 1.0;
        let (mut new_beta, mut new_eta, mut new_ll);
        loop {
            new_beta = &beta + &step * t;
            new_eta = index(&new_beta);
            new_ll = logit_loglik(&new_eta, g, w);
            if new_ll >= ll - 1e-12 * ll.abs() || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        let change = (new_ll - ll).abs() / ll.abs().max(1e-300);
        beta = new_beta;
        eta = new_eta;
        ll = new_ll;
        if change < LOGIT_TOL {
            converged = true;
            break;
        }
    }
    // Fitted probabilities this close to 0 or 1 only arise from (quasi-)separation.
    let separation = !converged || eta.iter().any(|e| e.abs() > 30.0);
    if separation {
        log::warn!("fit_logit: separation suspected after {iterations} iterations");
    }
    Ok(FitResult {
        intercept: beta[0],
        coefficients: x.names().iter().cloned().zip(beta.iter().skip(1).copied()).collect(),
        family: Family::Binomial,
        n_obs,
        fit_stat: ll,
        converged: converged && !separation,
        separation,
        ridge,
        iterations,
    })
}

/// Two-or-more-fold cross-fit prediction power of an unpenalized fit:
/// average out-of-fold weighted R² (Gaussian) or average out-of-fold
/// weighted log-likelihood per unit weight (Binomial).
pub fn cross_fit_power(
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    family: Family,
    folds: usize,
    seed: u64,
) -> Result<f64> {
    check_lengths(x, y, w)?;
    if folds < 2 || folds > y.len() {
        return Err(Error::InvalidArgument(format!("invalid fold count {folds}")));
    }
    let strata: Option<Vec<u8>> = (family == Family::Binomial).then(|| y.iter().map(|v| (*v > 0.5) as u8).collect());
    let fold = assign_folds(y.len(), folds, strata.as_deref(), seed);
    let mut total = 0.0;
    for k in 0..folds {
        let train: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != k).collect();
        let test: Vec<usize> = (0..y.len()).filter(|&i| fold[i] == k).collect();
        let pick = |v: &[f64], rows: &[usize]| -> Vec<f64> { rows.iter().map(|&i| v[i]).collect() };
        let xt = x.select_rows(&train);
        let xe = x.select_rows(&test);
        let (ye, we) = (pick(y, &test), pick(w, &test));
        total += match family {
            Family::Gaussian => {
                let fit = fit_wls(&xt, &pick(y, &train), &pick(w, &train))?;
                weighted_r2(&ye, &predict(&fit, &xe)?, &we)
            }
            Family::Binomial => {
                let fit = fit_logit(&xt, &pick(y, &train), &pick(w, &train))?;
                let p = predict(&fit, &xe)?;
                let mut ll = 0.0;
                for i in 0..ye.len() {
                    ll += we[i] * (ye[i] * p[i].ln() + (1.0 - ye[i]) * (1.0 - p[i]).ln());
                }
                ll / we.iter().sum::<f64>()
            }
        };
    }
    Ok(total / folds as f64)
}

/// Out-of-sample prediction power of a nuisance model. The wage model
/// (Gaussian) is fitted on reference-group rows, the propensity model
/// (Binomial) on all rows.
pub fn oos_prediction_power(data: &Dataset, spec: &ModelSpec, family: Family, folds: usize, seed: u64) -> Result<f64> {
    let x = build_design(data, spec)?;
    match family {
        Family::Gaussian => {
            let rows = data.rows_in_group(0);
            let xs = x.select_rows(&rows);
            if rows.len() < 2 * (xs.n_cols() + 1) {
                return Err(Error::InvalidArgument("too few reference rows for the design".into()));
            }
            let y: Vec<f64> = rows.iter().map(|&i| data.outcome()[i]).collect();
            let w: Vec<f64> = rows.iter().map(|&i| data.weight()[i]).collect();
            cross_fit_power(&xs, &y, &w, family, folds, seed)
        }
        Family::Binomial => {
            if data.n_rows() < 2 * (x.n_cols() + 1) {
                return Err(Error::InvalidArgument("too few rows for the design".into()));
            }
            cross_fit_power(&x, &data.group_f64(), data.weight(), family, folds, seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn design(cols: Vec<(&str, Vec<f64>)>) -> DesignMatrix {
        let n = cols.first().map(|c| c.1.len()).unwrap_or(0);
        let names = cols.iter().map(|c| c.0.to_string()).collect();
        DesignMatrix::new(n, names, cols.into_iter().map(|c| c.1).collect()).unwrap()
    }

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let d = design(vec![("x", x)]);
        let fit = fit_wls(&d, &y, &[1.0; 6]).unwrap();
        assert!((fit.intercept - 2.0).abs() < 1e-10);
        assert!((fit.coefficient("x").unwrap() - 3.0).abs() < 1e-10);
        let at10 = predict(&fit, &design(vec![("x", vec![10.0])])).unwrap();
        assert!((at10[0] - 32.0).abs() < 1e-9);
        assert!(matches!(
            predict(&fit, &design(vec![("z", vec![1.0])])),
            Err(Error::ColumnMismatch(_))
        ));
    }

    #[test]
    fn constant_response() {
        let d = design(vec![("x", vec![1.0, 2.0, 5.0])]);
        let fit = fit_wls(&d, &[5.0; 3], &[1.0; 3]).unwrap();
        assert!((fit.intercept - 5.0).abs() < 1e-12);
        assert!(fit.coefficient("x").unwrap().abs() < 1e-12);
        let empty = DesignMatrix::empty(3);
        let fit = fit_wls(&empty, &[1.0, 2.0, 6.0], &[1.0; 3]).unwrap();
        assert_eq!(predict(&fit, &empty).unwrap(), vec![3.0; 3]);
    }

    #[test]
    fn weights_match_replication() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y = vec![1.0, 0.5, 2.5, 7.0];
        let fit = fit_wls(&design(vec![("x", x.clone())]), &y, &[1.0, 1.0, 1.0, 100.0]).unwrap();
        let mut xr = x[..3].to_vec();
        let mut yr = y[..3].to_vec();
        xr.extend(vec![3.0; 100]);
        yr.extend(vec![7.0; 100]);
        let rep = fit_wls(&design(vec![("x", xr)]), &yr, &vec![1.0; 103]).unwrap();
        assert!((fit.intercept - rep.intercept).abs() < 1e-8);
        assert!((fit.coefficients[0].1 - rep.coefficients[0].1).abs() < 1e-8);
    }

    #[test]
    fn matches_normal_equations() {
        let x1 = vec![0.3, 1.2, -0.7, 2.2, 0.1, -1.5, 0.9];
        let x2 = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let y = vec![1.1, 2.3, -0.2, 4.1, 0.7, -1.0, 2.2];
        let w = vec![1.0, 2.0, 0.5, 1.5, 3.0, 1.0, 0.7];
        let fit = fit_wls(&design(vec![("a", x1.clone()), ("b", x2.clone())]), &y, &w).unwrap();
        let n = y.len();
        let xm = DMatrix::from_fn(n, 3, |i, j| [1.0, x1[i], x2[i]][j]);
        let wm = DMatrix::from_diagonal(&DVector::from_vec(w.clone()));
        let xtwx = xm.transpose() * &wm * &xm;
        let b = xtwx.try_inverse().unwrap() * xm.transpose() * &wm * DVector::from_vec(y.clone());
        assert!((fit.intercept - b[0]).abs() < 1e-8 * b[0].abs().max(1.0));
        assert!((fit.coefficients[0].1 - b[1]).abs() < 1e-8 * b[1].abs().max(1.0));
        assert!((fit.coefficients[1].1 - b[2]).abs() < 1e-8 * b[2].abs().max(1.0));

        let scaled: Vec<f64> = w.iter().map(|v| v * 37.5).collect();
        let fit2 = fit_wls(&design(vec![("a", x1), ("b", x2)]), &y, &scaled).unwrap();
        assert!((fit.coefficients[0].1 - fit2.coefficients[0].1).abs() < 1e-10);
    }

    #[test]
    fn logit_null_model() {
        let x = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let g = vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let w = vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0];
        let fit = fit_logit(&design(vec![("x", x)]), &g, &w).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0].1.abs() < 1e-6);
        let share = 6.0f64 / 12.0;
        assert!((fit.intercept - (share / (1.0 - share)).ln()).abs() < 1e-6);
    }

    #[test]
    fn logit_two_by_two() {
        // p(g=1|x=0) = .25, p(g=1|x=1) = .75
        let x = vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let g = vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let fit = fit_logit(&design(vec![("x", x.clone())]), &g, &[1.0; 8]).unwrap();
        assert!((fit.coefficients[0].1 - 9f64.ln()).abs() < 1e-6);
        let p = predict(&fit, &design(vec![("x", x)])).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-8 && (p[7] - 0.75).abs() < 1e-8);
    }

    #[test]
    fn logit_score_vanishes() {
        let n = 400;
        let x: Vec<f64> = (0..n).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
        let z: Vec<f64> = (0..n).map(|i| ((i * 13) % 7) as f64).collect();
        let g: Vec<f64> = (0..n).map(|i| ((x[i] + 0.2 * z[i] + ((i * 7919) % 11) as f64 / 5.0) > 1.5) as u8 as f64).collect();
        let w: Vec<f64> = (0..n).map(|i| 1.0 + (i % 3) as f64).collect();
        let d = design(vec![("x", x), ("z", z)]);
        let fit = fit_logit(&d, &g, &w).unwrap();
        assert!(fit.converged);
        let p = predict(&fit, &d).unwrap();
        let mut score = [0.0; 3];
        for i in 0..n {
            let r = w[i] * (g[i] - p[i]);
            score[0] += r;
            score[1] += r * d.columns()[0][i];
            score[2] += r * d.columns()[1][i];
        }
        assert!(score.iter().all(|s| s.abs() < 1e-6 * n as f64), "{score:?}");
    }

    #[test]
    fn logit_separation_flagged() {
        let x = vec![-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let g = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let d = design(vec![("x", x)]);
        let fit = fit_logit(&d, &g, &[1.0; 6]).unwrap();
        assert!(fit.separation);
        let p = predict(&fit, &d).unwrap();
        assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(matches!(fit_logit(&d, &[1.0; 6], &[1.0; 6]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn binomial_midpoint() {
        let fit = FitResult {
            intercept: 0.0,
            coefficients: vec![],
            family: Family::Binomial,
            n_obs: 1,
            fit_stat: 0.0,
            converged: true,
            separation: false,
            ridge: false,
            iterations: 0,
        };
        assert_eq!(predict(&fit, &DesignMatrix::empty(2)).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn saturated_design_reproduces_cell_means() {
        let codes = [0usize, 0, 1, 1, 1, 2, 2, 0];
        let y = [1.0, 2.0, 3.0, 5.0, 4.0, 0.5, 1.5, 3.0];
        let w = [1.0, 2.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0];
        let d1: Vec<f64> = codes.iter().map(|&c| (c == 1) as u8 as f64).collect();
        let d2: Vec<f64> = codes.iter().map(|&c| (c == 2) as u8 as f64).collect();
        let d = design(vec![("c1", d1), ("c2", d2)]);
        let fit = fit_wls(&d, &y, &w).unwrap();
        let yhat = predict(&fit, &d).unwrap();
        for cell in 0..3 {
            let (mut s, mut sw) = (0.0, 0.0);
            for i in 0..8 {
                if codes[i] == cell {
                    s += w[i] * y[i];
                    sw += w[i];
                }
            }
            for i in 0..8 {
                if codes[i] == cell {
                    assert!((yhat[i] - s / sw).abs() < 1e-9);
                }
            }
        }
    }
}
