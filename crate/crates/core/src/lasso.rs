//! Cross-validated LASSO paths for Gaussian and logistic models.
//!
//! Objective on internally standardized columns (weighted mean 0, weighted
//! population sd 1) with normalized weights `v = w / Σw`:
//!
//! * Gaussian: `½ Σ vᵢ (yᵢ − a − zᵢb)² + λ‖b‖₁`
//! * Binomial: `−Σ vᵢ [gᵢηᵢ − log(1 + e^ηᵢ)] + λ‖b‖₁`, `η = a + zb`
//!
//! The intercept is never penalized. Coefficients are reported both on the
//! standardized scale (where λ and the KKT conditions live) and on the
//! original design scale.

use rayon::prelude::*;

use crate::datamodel::{build_design, Dataset, DesignMatrix, ModelSpec};
use crate::error::{Error, Result};
use crate::linmod::{clamp_prob, fit_wls, Family, FitResult};
use crate::stats::{assign_folds, collapse_rows, logistic, softplus};

const CD_TOL: f64 = 1e-11;
const CD_MAX_PASSES: usize = 100_000;
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 100;
/// Path length used in frozen-λ mode, from λ_max down to the frozen value.
const FROZEN_STEPS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoConfig {
    pub n_lambda: usize,
    pub folds: usize,
    /// Smallest grid value as a fraction of λ_max.
    pub min_ratio: f64,
    pub seed: u64,
    /// Skip cross-validation and solve only down to this (standardized
    /// scale) λ, which is then reported as both λ_min and λ_1se.
    pub frozen_lambda: Option<f64>,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            n_lambda: 100,
            folds: 5,
            min_ratio: 1e-4,
            seed: 0,
            frozen_lambda: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    LambdaMin,
    Lambda1se,
}

#[derive(Debug, Clone)]
pub struct LassoPath {
    pub family: Family,
    pub names: Vec<String>,
    /// Decreasing penalty grid (standardized scale).
    pub lambdas: Vec<f64>,
    /// Original-scale intercept per λ.
    pub intercepts: Vec<f64>,
    /// Original-scale coefficients per λ (dense, zeros for unselected).
    pub coefs: Vec<Vec<f64>>,
    /// Standardized-scale coefficients per λ.
    pub std_coefs: Vec<Vec<f64>>,
    /// Cross-validated error per λ (MSE or deviance); NaN without CV.
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub idx_min: usize,
    pub idx_1se: usize,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    /// Every solve met its tolerance before the pass cap.
    pub converged: bool,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl LassoPath {
    pub fn index(&self, at: Selection) -> usize {
        match at {
            Selection::LambdaMin => self.idx_min,
            Selection::Lambda1se => self.idx_1se,
        }
    }

    pub fn lambda(&self, at: Selection) -> f64 {
        self.lambdas[self.index(at)]
    }

    /// Names of nonzero coefficients at grid point `k`, in design order.
    pub fn support_at(&self, k: usize) -> Vec<String> {
        self.names
            .iter()
            .zip(&self.coefs[k])
            .filter(|(_, b)| **b != 0.0)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn selected(&self, at: Selection) -> Vec<String> {
        self.support_at(self.index(at))
    }

    /// The penalized fit at grid point `k` as a sparse [`FitResult`].
    pub fn fit_at_index(&self, k: usize) -> FitResult {
        FitResult {
            intercept: self.intercepts[k],
            coefficients: self
                .names
                .iter()
                .zip(&self.coefs[k])
                .filter(|(_, b)| **b != 0.0)
                .map(|(n, b)| (n.clone(), *b))
                .collect(),
            family: self.family,
            n_obs: 0,
            fit_stat: f64::NAN,
            converged: self.converged,
            separation: false,
            ridge: false,
            iterations: 0,
        }
    }

    pub fn fit_at(&self, at: Selection) -> FitResult {
        self.fit_at_index(self.index(at))
    }

    /// Largest KKT violation at grid point `k` on the given data, on the
    /// standardized scale. Zero coefficients contribute
    /// `max(0, |score| − λ(1 + 1e-6))`, nonzero ones `|score − λ·sign(b)|`.
    pub fn kkt_violation(&self, k: usize, x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<f64> {
        let fit = self.fit_at_index(k);
        let mut eta = fit.linear_index(x)?;
        if self.family == Family::Binomial {
            eta.iter_mut().for_each(|e| *e = logistic(*e));
        }
        let sw: f64 = w.iter().sum();
        let lam = self.lambdas[k];
        let mut worst: f64 = 0.0;
        for (j, col) in x.columns().iter().enumerate() {
            if self.sds[j] == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for i in 0..y.len() {
                s += w[i] * (col[i] - self.means[j]) * (y[i] - eta[i]);
            }
            let score = s / (sw * self.sds[j]);
            let b = self.std_coefs[k][j];
            let v = if b == 0.0 {
                (score.abs() - lam * (1.0 + 1e-6)).max(0.0)
            } else {
                (score - lam * b.signum()).abs()
            };
            worst = worst.max(v);
        }
        Ok(worst)
    }
}

fn soft(u: f64, lam: f64) -> f64 {
    if u > lam {
        u - lam
    } else if u < -lam {
        u + lam
    } else {
        0.0
    }
}

/// Standardized copy of (a row subset of) the design.
struct Standardized {
    z: Vec<Vec<f64>>,
    means: Vec<f64>,
    sds: Vec<f64>,
    /// Normalized weights.
    v: Vec<f64>,
    y: Vec<f64>,
}

impl Standardized {
    fn new(x: &DesignMatrix, y: &[f64], w: &[f64], rows: Option<&[usize]>) -> Standardized {
        let idx: Vec<usize> = match rows {
            Some(r) => r.to_vec(),
            None => (0..y.len()).collect(),
        };
        let sw: f64 = idx.iter().map(|&i| w[i]).sum();
        let v: Vec<f64> = idx.iter().map(|&i| w[i] / sw).collect();
        let yy: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let mut z = Vec::with_capacity(x.n_cols());
        let mut means = Vec::with_capacity(x.n_cols());
        let mut sds = Vec::with_capacity(x.n_cols());
        for col in x.columns() {
            let c: Vec<f64> = idx.iter().map(|&i| col[i]).collect();
            let m: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
            let var: f64 = c.iter().zip(&v).map(|(a, b)| b * (a - m) * (a - m)).sum();
            let sd = var.sqrt();
            // columns constant on these rows carry no information
            let sd = if sd > 1e-12 * m.abs().max(1.0) { sd } else { 0.0 };
            z.push(if sd > 0.0 {
                c.iter().map(|a| (a - m) / sd).collect()
            } else {
                Vec::new()
            });
            means.push(m);
            sds.push(sd);
        }
        Standardized {
            z,
            means,
            sds,
            v,
            y: yy,
        }
    }

    fn p(&self) -> usize {
        self.z.len()
    }

    fn usable(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.sds[j] > 0.0).collect()
    }

    fn ymean(&self) -> f64 {
        self.y.iter().zip(&self.v).map(|(a, b)| a * b).sum()
    }

    /// Null-model score maximum: the smallest λ at which every penalized
    /// coefficient is zero.
    fn lambda_max(&self) -> f64 {
        let m = self.ymean();
        self.usable()
            .iter()
            .map(|&j| {
                self.z[j]
                    .iter()
                    .zip(self.y.iter().zip(&self.v))
                    .map(|(zi, (yi, vi))| vi * zi * (yi - m))
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    fn to_original(&self, a_std: f64, b: &[f64]) -> (f64, Vec<f64>) {
        let mut coef = vec![0.0; b.len()];
        let mut a = a_std;
        for j in 0..b.len() {
            if b[j] != 0.0 {
                coef[j] = b[j] / self.sds[j];
                a -= coef[j] * self.means[j];
            }
        }
        (a, coef)
    }
}

struct PathSolution {
    /// (standardized intercept, standardized coefficients) per λ.
    points: Vec<(f64, Vec<f64>)>,
    converged: bool,
}

fn dotv(a: &[f64], b: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += v[i] * a[i] * b[i];
    }
    s
}

/// Covariance-update coordinate descent with warm starts along the grid.
fn gaussian_path(st: &Standardized, lambdas: &[f64], stop_early: bool) -> PathSolution {
    let p = st.p();
    let usable = st.usable();
    let ym = st.ymean();
    let yc: Vec<f64> = st.y.iter().map(|y| y - ym).collect();
    // grad_j = c_j − Σ_k G_jk b_k
    let mut grad = vec![0.0; p];
    for &j in &usable {
        grad[j] = dotv(&st.z[j], &yc, &st.v);
    }
    let mut gram: Vec<Option<Vec<f64>>> = vec![None; p];
    let mut diag = vec![1.0; p];
    for &j in &usable {
        diag[j] = dotv(&st.z[j], &st.z[j], &st.v);
    }
    let c = grad.clone();
    let yy = dotv(&yc, &yc, &st.v);
    let mut prev_ratio = 0.0;
    let mut b = vec![0.0; p];
    let mut points = Vec::with_capacity(lambdas.len());
    let mut converged = true;

    let update = |j: usize, lam: f64, b: &mut [f64], grad: &mut [f64], gram: &mut [Option<Vec<f64>>]| -> f64 {
        let u = grad[j] + diag[j] * b[j];
        let new = soft(u, lam) / diag[j];
        let delta = new - b[j];
        if delta == 0.0 {
            return 0.0;
        }
        let col = gram[j].get_or_insert_with(|| {
            let mut c = vec![0.0; p];
            for &k in &usable {
                c[k] = dotv(&st.z[k], &st.z[j], &st.v);
            }
            c
        });
        for &k in &usable {
            grad[k] -= col[k] * delta;
        }
        b[j] = new;
        delta.abs()
    };

    let lmax = st.lambda_max();
    for &lam in lambdas {
        if lam >= lmax {
            // KKT: the null model is the exact solution
            points.push((ym, b.clone()));
            continue;
        }
        let mut passes = 0;
        loop {
            let mut max_d: f64 = 0.0;
            for &j in &usable {
                max_d = max_d.max(update(j, lam, &mut b, &mut grad, &mut gram));
            }
            passes += 1;
            if max_d < CD_TOL || passes >= CD_MAX_PASSES {
                break;
            }
            loop {
                let active: Vec<usize> = usable.iter().copied().filter(|&j| b[j] != 0.0).collect();
                let mut max_a: f64 = 0.0;
                for &j in &active {
                    max_a = max_a.max(update(j, lam, &mut b, &mut grad, &mut gram));
                }
                passes += 1;
                if max_a < CD_TOL || passes >= CD_MAX_PASSES {
                    break;
                }
            }
        }
        if passes >= CD_MAX_PASSES {
            converged = false;
        }
        points.push((ym, b.clone()));
        if stop_early && yy > 0.0 {
            let rss = yy - usable.iter().map(|&j| b[j] * (c[j] + grad[j])).sum::<f64>();
            let ratio = 1.0 - rss / yy;
            if path_saturated(points.len(), ratio, prev_ratio) {
                break;
            }
            prev_ratio = ratio;
        }
    }
    PathSolution { points, converged }
}

/// Rows of `st` with identical standardized covariates merged: summed
/// weights and the weighted mean response. The logistic likelihood is
/// unchanged, so categorical designs shrink to their distinct cells.
fn collapse_standardized(st: &Standardized, usable: &[usize]) -> Option<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let cols: Vec<&[f64]> = usable.iter().map(|&j| st.z[j].as_slice()).collect();
    let (merged, v, y) = collapse_rows(&cols, &st.v, &st.y)?;
    let mut z = vec![Vec::new(); st.p()];
    for (&j, c) in usable.iter().zip(merged) {
        z[j] = c;
    }
    Some((z, v, y))
}

/// Early end of a path: the fraction of null deviance explained exceeds
/// 0.999 or grew by less than 1e-5 (relative) from the previous λ.
fn path_saturated(k: usize, ratio: f64, prev: f64) -> bool {
    k >= 5 && (ratio > 0.999 || ratio - prev < 1e-5 * ratio.abs())
}

/// Proximal Newton: a weighted quadratic approximation of the logistic loss
/// is solved by naive-update coordinate descent at every outer step.
fn binomial_path(st: &Standardized, lambdas: &[f64], stop_early: bool) -> PathSolution {
    let usable = st.usable();
    let collapsed = collapse_standardized(st, &usable);
    let (zs, vs, ys) = match &collapsed {
        Some((z, v, y)) => (z.as_slice(), v.as_slice(), y.as_slice()),
        None => (st.z.as_slice(), st.v.as_slice(), st.y.as_slice()),
    };
    let n = ys.len();
    let p = st.p();
    let gm = st.ymean();
    let mut a = (gm / (1.0 - gm)).ln();
    let mut b = vec![0.0; p];
    let mut eta = vec![a; n];
    let mut points = Vec::with_capacity(lambdas.len());
    let mut converged = true;
    let mut vv = vec![0.0; n];
    let mut res = vec![0.0; n];
    let mut xv = vec![0.0; p];
    let null_ll = gm * a - softplus(a);
    let sat_ll: f64 = (0..n)
        .map(|i| {
            let t = |q: f64| if q > 0.0 { q * q.ln() } else { 0.0 };
            vs[i] * (t(ys[i]) + t(1.0 - ys[i]))
        })
        .sum();
    let mut prev_ratio = 0.0;

    let objective = |eta: &[f64], b: &[f64], lam: f64| -> f64 {
        let mut ll = 0.0;
        for i in 0..n {
            ll += vs[i] * (ys[i] * eta[i] - softplus(eta[i]));
        }
        -ll + lam * b.iter().map(|x| x.abs()).sum::<f64>()
    };

    let lmax = st.lambda_max();
    for &lam in lambdas {
        if lam >= lmax && b.iter().all(|x| *x == 0.0) {
            points.push((a, b.clone()));
            continue;
        }
        let mut outer = 0;
        let mut obj = objective(&eta, &b, lam);
        // inexact Newton: the inner tolerance tracks the last outer step
        let mut last_change = f64::INFINITY;
        loop {
            outer += 1;
            for i in 0..n {
                let pi = logistic(eta[i]);
                let q = (pi * (1.0 - pi)).max(1e-10);
                vv[i] = vs[i] * q;
                res[i] = (ys[i] - pi) / q;
            }
            let svv: f64 = vv.iter().sum();
            let mut xv_ready = vec![false; p];
            let b_old = b.clone();
            let a_old = a;
            let mut passes = 0;
            let tol = (1e-3 * last_change).clamp(CD_TOL, 1e-4);
            let mut inner = |j: usize, b: &mut [f64], res: &mut [f64], xv: &mut [f64]| -> f64 {
                let zj = &zs[j];
                if !xv_ready[j] {
                    xv[j] = dotv(zj, zj, &vv);
                    xv_ready[j] = true;
                }
                let u = dotv(zj, res, &vv) + xv[j] * b[j];
                let new = soft(u, lam) / xv[j];
                let delta = new - b[j];
                if delta == 0.0 {
                    return 0.0;
                }
                for i in 0..n {
                    res[i] -= zj[i] * delta;
                }
                b[j] = new;
                delta.abs() * xv[j].sqrt()
            };
            let center = |a: &mut f64, res: &mut [f64]| -> f64 {
                let d = res.iter().zip(&vv).map(|(r, v)| r * v).sum::<f64>() / svv;
                *a += d;
                res.iter_mut().for_each(|r| *r -= d);
                d.abs() * svv.sqrt()
            };
            loop {
                let mut max_d = center(&mut a, &mut res);
                for &j in &usable {
                    max_d = max_d.max(inner(j, &mut b, &mut res, &mut xv));
                }
                passes += 1;
                if max_d < tol || passes >= CD_MAX_PASSES {
                    break;
                }
                loop {
                    let mut max_a = center(&mut a, &mut res);
                    for j in usable.iter().copied().filter(|&j| b[j] != 0.0).collect::<Vec<_>>() {
                        max_a = max_a.max(inner(j, &mut b, &mut res, &mut xv));
                    }
                    passes += 1;
                    if max_a < tol || passes >= CD_MAX_PASSES {
                        break;
                    }
                }
            }
            if passes >= CD_MAX_PASSES {
                converged = false;
            }
            // new linear index; halve the step if the objective went up
            let mut t = 1.0;
            let step_b: Vec<f64> = b.iter().zip(&b_old).map(|(x, y)| x - y).collect();
            let step_a = a - a_old;
            let new_eta = |t: f64| -> Vec<f64> {
                let mut e = vec![a_old + t * step_a; n];
                for &j in &usable {
                    let c = b_old[j] + t * step_b[j];
                    if c != 0.0 {
                        for i in 0..n {
                            e[i] += c * zs[j][i];
                        }
                    }
                }
                e
            };
            let mut cand = new_eta(t);
            let cand_b = |t: f64| -> Vec<f64> { b_old.iter().zip(&step_b).map(|(x, s)| x + t * s).collect() };
            let mut new_obj = objective(&cand, &b, lam);
            while new_obj > obj + 1e-14 * obj.abs() && t > 1e-6 {
                t *= 0.5;
                cand = new_eta(t);
                new_obj = objective(&cand, &cand_b(t), lam);
            }
            if t < 1.0 {
                b = cand_b(t);
                a = a_old + t * step_a;
            }
            eta = cand;
            let change = step_b.iter().map(|s| (t * s).abs()).fold((t * step_a).abs(), f64::max);
            obj = new_obj;
            let loose = tol > CD_TOL;
            last_change = change;
            if change < NEWTON_TOL && !loose {
                break;
            }
            if outer >= NEWTON_MAX_ITER {
                converged = false;
                break;
            }
        }
        points.push((a, b.clone()));
        if stop_early {
            let ll = -(obj - lam * b.iter().map(|x| x.abs()).sum::<f64>());
            let ratio = (ll - null_ll) / (sat_ll - null_ll);
            if path_saturated(points.len(), ratio, prev_ratio) {
                break;
            }
            prev_ratio = ratio;
        }
    }
    PathSolution { points, converged }
}

fn solve(st: &Standardized, family: Family, lambdas: &[f64], stop_early: bool) -> PathSolution {
    match family {
        Family::Gaussian => gaussian_path(st, lambdas, stop_early),
        Family::Binomial => binomial_path(st, lambdas, stop_early),
    }
}

fn check_inputs(x: &DesignMatrix, y: &[f64], w: &[f64], family: Family) -> Result<()> {
    if x.n_rows() != y.len() || y.len() != w.len() {
        return Err(Error::InvalidArgument("lasso: row counts differ".into()));
    }
    if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidArgument("lasso: weights must be non-negative with positive sum".into()));
    }
    if family == Family::Binomial {
        if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::InvalidArgument("lasso: binomial response must be 0/1".into()));
        }
        let w1: f64 = y.iter().zip(w).map(|(a, b)| a * b).sum();
        let sw: f64 = w.iter().sum();
        if w1 <= 0.0 || w1 >= sw {
            return Err(Error::Degenerate("lasso: binomial response has a single class".into()));
        }
    }
    Ok(())
}

fn log_grid(hi: f64, lo_ratio: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| hi * lo_ratio.powf(k as f64 / (n - 1) as f64))
        .collect()
}

fn assemble(
    x: &DesignMatrix,
    st: &Standardized,
    family: Family,
    lambdas: Vec<f64>,
    sol: PathSolution,
) -> LassoPath {
    let mut intercepts = Vec::with_capacity(lambdas.len());
    let mut coefs = Vec::with_capacity(lambdas.len());
    let mut std_coefs = Vec::with_capacity(lambdas.len());
    for (a, b) in sol.points {
        let (ai, ci) = st.to_original(a, &b);
        intercepts.push(ai);
        coefs.push(ci);
        std_coefs.push(b);
    }
    let last = lambdas.len() - 1;
    LassoPath {
        family,
        names: x.names().to_vec(),
        cv_mean: vec![f64::NAN; lambdas.len()],
        cv_se: vec![f64::NAN; lambdas.len()],
        idx_min: last,
        idx_1se: last,
        lambda_min: lambdas[last],
        lambda_1se: lambdas[last],
        lambdas,
        intercepts,
        coefs,
        std_coefs,
        converged: sol.converged,
        means: st.means.clone(),
        sds: st.sds.clone(),
    }
}

/// Solutions on a caller-supplied decreasing grid, without cross-validation.
/// The last grid point is reported as both λ_min and λ_1se.
pub fn lasso_solutions(x: &DesignMatrix, y: &[f64], w: &[f64], family: Family, lambdas: &[f64]) -> Result<LassoPath> {
    check_inputs(x, y, w, family)?;
    if lambdas.is_empty() || lambdas.windows(2).any(|p| p[1] > p[0]) || lambdas.iter().any(|l| *l < 0.0) {
        return Err(Error::InvalidArgument("lasso: grid must be non-empty, non-negative and decreasing".into()));
    }
    let st = Standardized::new(x, y, w, None);
    let sol = solve(&st, family, lambdas, false);
    Ok(assemble(x, &st, family, lambdas.to_vec(), sol))
}

/// Smallest λ that zeroes every penalized coefficient (standardized scale).
pub fn lambda_max(x: &DesignMatrix, y: &[f64], w: &[f64]) -> f64 {
    Standardized::new(x, y, w, None).lambda_max()
}

fn fold_error(family: Family, path: &LassoPath, x: &DesignMatrix, y: &[f64], w: &[f64], rows: &[usize]) -> Vec<f64> {
    let sw: f64 = rows.iter().map(|&i| w[i]).sum();
    (0..path.lambdas.len())
        .map(|k| {
            let coef = &path.coefs[k];
            let mut err = 0.0;
            for &i in rows {
                let mut eta = path.intercepts[k];
                for (j, col) in x.columns().iter().enumerate() {
                    if coef[j] != 0.0 {
                        eta += coef[j] * col[i];
                    }
                }
                err += w[i]
                    * match family {
                        Family::Gaussian => (y[i] - eta).powi(2),
                        Family::Binomial => {
                            let p = clamp_prob(logistic(eta));
                            -2.0 * (y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln())
                        }
                    };
            }
            err / sw
        })
        .collect()
}

/// Full LASSO path with K-fold cross-validation and the one-standard-error
/// rule. In frozen mode (`cfg.frozen_lambda`) the path runs from λ_max to
/// the frozen value and no cross-validation happens.
pub fn fit_lasso_path(x: &DesignMatrix, y: &[f64], w: &[f64], family: Family, cfg: &LassoConfig) -> Result<LassoPath> {
    check_inputs(x, y, w, family)?;
    let n = y.len();
    if cfg.n_lambda < 2 {
        return Err(Error::InvalidArgument("lasso: n_lambda must be at least 2".into()));
    }
    if cfg.folds < 2 || cfg.folds > n {
        return Err(Error::InvalidArgument(format!("lasso: invalid fold count {} for {n} rows", cfg.folds)));
    }
    if !(cfg.min_ratio > 0.0 && cfg.min_ratio < 1.0) {
        return Err(Error::InvalidArgument("lasso: min_ratio must lie in (0, 1)".into()));
    }
    let st = Standardized::new(x, y, w, None);
    let lmax = st.lambda_max().max(1e-12);

    if let Some(frozen) = cfg.frozen_lambda {
        if !(frozen >= 0.0) {
            return Err(Error::InvalidArgument("lasso: frozen λ must be non-negative".into()));
        }
        let lambdas = if frozen >= lmax {
            vec![frozen]
        } else if frozen == 0.0 {
            // unpenalized end point: walk down to a tiny λ first for warm starts
            let mut l = log_grid(lmax, 1e-6, FROZEN_STEPS);
            l.push(0.0);
            l
        } else {
            log_grid(lmax, frozen / lmax, FROZEN_STEPS)
        };
        let sol = solve(&st, family, &lambdas, false);
        return Ok(assemble(x, &st, family, lambdas, sol));
    }

    let mut lambdas = log_grid(lmax, cfg.min_ratio, cfg.n_lambda);
    let sol = solve(&st, family, &lambdas, true);
    lambdas.truncate(sol.points.len());
    let mut path = assemble(x, &st, family, lambdas.clone(), sol);

    let strata: Option<Vec<u8>> = (family == Family::Binomial).then(|| y.iter().map(|v| (*v > 0.5) as u8).collect());
    let fold = assign_folds(n, cfg.folds, strata.as_deref(), cfg.seed);
    let errors: Vec<Vec<f64>> = (0..cfg.folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold[i] == k).collect();
            let stk = Standardized::new(x, y, w, Some(&train));
            let sol = solve(&stk, family, &lambdas, false);
            let pk = assemble(x, &stk, family, lambdas.clone(), sol);
            fold_error(family, &pk, x, y, w, &test)
        })
        .collect();
    let kf = cfg.folds as f64;
    for l in 0..lambdas.len() {
        let m = errors.iter().map(|e| e[l]).sum::<f64>() / kf;
        let var = errors.iter().map(|e| (e[l] - m).powi(2)).sum::<f64>() / (kf - 1.0);
        path.cv_mean[l] = m;
        path.cv_se[l] = (var / kf).sqrt();
    }
    let mut idx_min = 0;
    for l in 1..lambdas.len() {
        if path.cv_mean[l] < path.cv_mean[idx_min] {
            idx_min = l;
        }
    }
    let bound = path.cv_mean[idx_min] + path.cv_se[idx_min];
    let idx_1se = (0..=idx_min).find(|&l| path.cv_mean[l] <= bound).unwrap_or(idx_min);
    path.idx_min = idx_min;
    path.idx_1se = idx_1se;
    path.lambda_min = lambdas[idx_min];
    path.lambda_1se = lambdas[idx_1se];
    Ok(path)
}

/// Unpenalized least squares on the columns selected at `at`.
pub fn post_lasso_refit(path: &LassoPath, at: Selection, x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<FitResult> {
    let cols = path.selected(at);
    fit_wls(&x.select_columns(&cols)?, y, w)
}

#[derive(Debug, Clone)]
pub struct PdsSelection {
    /// Union of both selections, in design order.
    pub columns: Vec<String>,
    pub outcome_columns: Vec<String>,
    pub group_columns: Vec<String>,
    pub lambda_outcome: f64,
    pub lambda_group: f64,
}

/// Double selection on a prebuilt design: Gaussian LASSO of the outcome and
/// Gaussian (linear probability) LASSO of the group indicator, both on all
/// rows, selected at λ_1se. `frozen` carries λ values for fast mode.
pub fn pds_select_design(
    x: &DesignMatrix,
    y: &[f64],
    g: &[f64],
    w: &[f64],
    cfg: &LassoConfig,
    frozen: Option<(f64, f64)>,
) -> Result<PdsSelection> {
    let mut cy = cfg.clone();
    let mut cg = LassoConfig {
        seed: cfg.seed ^ 0x5bd1_e995,
        ..cfg.clone()
    };
    if let Some((ly, lg)) = frozen {
        cy.frozen_lambda = Some(ly);
        cg.frozen_lambda = Some(lg);
    }
    let py = fit_lasso_path(x, y, w, Family::Gaussian, &cy)?;
    let pg = fit_lasso_path(x, g, w, Family::Gaussian, &cg)?;
    let sy = py.selected(Selection::Lambda1se);
    let sg = pg.selected(Selection::Lambda1se);
    let columns = x
        .names()
        .iter()
        .filter(|n| sy.contains(n) || sg.contains(n))
        .cloned()
        .collect();
    Ok(PdsSelection {
        columns,
        outcome_columns: sy,
        group_columns: sg,
        lambda_outcome: py.lambda_1se,
        lambda_group: pg.lambda_1se,
    })
}

/// Double selection over the full-specification design of `data`.
pub fn pds_select(data: &Dataset, spec_full: &ModelSpec, cfg: &LassoConfig) -> Result<PdsSelection> {
    data.require_both_groups()?;
    let x = build_design(data, spec_full)?;
    pds_select_design(&x, data.outcome(), &data.group_f64(), data.weight(), cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmod::predict;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn design(cols: Vec<Vec<f64>>) -> DesignMatrix {
        let n = cols[0].len();
        let names = (0..cols.len()).map(|j| format!("x{}", j + 1)).collect();
        DesignMatrix::new(n, names, cols).unwrap()
    }

    fn standardize(v: &mut [f64]) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        v.iter_mut().for_each(|x| *x = (*x - m) / sd);
    }

    #[test]
    fn soft_threshold_single_column() {
        let mut rng = crate::stats::rng(3);
        let n = 200;
        let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        standardize(&mut x);
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + 0.5 * rng.sample::<f64, _>(StandardNormal) + 1.0).collect();
        let w = vec![1.0; n];
        let ym = y.iter().sum::<f64>() / n as f64;
        let rho: f64 = x.iter().zip(&y).map(|(a, b)| a * (b - ym)).sum::<f64>() / n as f64;
        let mut lams: Vec<f64> = (0..20).map(|_| rng.random::<f64>() * 1.2 * rho.abs()).collect();
        lams.sort_by(|a, b| b.total_cmp(a));
        let path = lasso_solutions(&design(vec![x]), &y, &w, Family::Gaussian, &lams).unwrap();
        for (k, lam) in lams.iter().enumerate() {
            let expect = rho.signum() * (rho.abs() - lam).max(0.0);
            assert!((path.std_coefs[k][0] - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let mut rng = crate::stats::rng(5);
        let n = 300;
        let cols: Vec<Vec<f64>> = (0..4).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|i| cols[0][i] - 0.5 * cols[2][i] + rng.sample::<f64, _>(StandardNormal)).collect();
        let w: Vec<f64> = (0..n).map(|i| 1.0 + (i % 4) as f64).collect();
        let x = design(cols);
        let path = fit_lasso_path(&x, &y, &w, Family::Gaussian, &LassoConfig::default()).unwrap();
        assert!(path.std_coefs[0].iter().all(|b| *b == 0.0));
        let ym = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
        assert!((path.intercepts[0] - ym).abs() < 1e-12);
        assert!(path.std_coefs[1].iter().any(|b| *b != 0.0));
        assert!(path.lambda_1se >= path.lambda_min);
        for k in 0..path.lambdas.len() {
            assert!(path.kkt_violation(k, &x, &y, &w).unwrap() < 1e-6);
        }
    }

    #[test]
    fn small_lambda_matches_least_squares() {
        let mut rng = crate::stats::rng(8);
        let n = 500;
        let cols: Vec<Vec<f64>> = (0..5).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|i| 0.5 * cols[0][i] + 0.1 * cols[3][i] + rng.sample::<f64, _>(StandardNormal)).collect();
        let w = vec![1.0; n];
        let x = design(cols);
        let cfg = LassoConfig {
            frozen_lambda: Some(0.0),
            ..Default::default()
        };
        let path = fit_lasso_path(&x, &y, &w, Family::Gaussian, &cfg).unwrap();
        let ols = fit_wls(&x, &y, &w).unwrap();
        let last = path.lambdas.len() - 1;
        assert_eq!(path.lambdas[last], 0.0);
        assert_eq!(path.selected(Selection::Lambda1se).len(), 5);
        for j in 0..5 {
            assert!((path.coefs[last][j] - ols.coefficients[j].1).abs() < 1e-8);
        }
        // the cross-validated path stops once the fit saturates
        let cv = fit_lasso_path(&x, &y, &w, Family::Gaussian, &LassoConfig::default()).unwrap();
        assert!(cv.lambdas.len() <= 100 && cv.lambdas.len() >= 5);
    }

    #[test]
    fn binomial_kkt_and_null() {
        let mut rng = crate::stats::rng(11);
        let n = 600;
        let cols: Vec<Vec<f64>> = (0..6).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let g: Vec<f64> = (0..n)
            .map(|i| (rng.random::<f64>() < logistic(0.8 * cols[1][i] - 0.4 * cols[4][i] - 0.3)) as u8 as f64)
            .collect();
        let w: Vec<f64> = (0..n).map(|i| 0.5 + (i % 3) as f64).collect();
        let x = design(cols);
        let path = fit_lasso_path(&x, &g, &w, Family::Binomial, &LassoConfig { seed: 2, ..Default::default() }).unwrap();
        assert!(path.converged);
        assert!(path.std_coefs[0].iter().all(|b| *b == 0.0));
        let share = g.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
        assert!((logistic(path.intercepts[0]) - share).abs() < 1e-9);
        for k in 0..path.lambdas.len() {
            assert!(path.kkt_violation(k, &x, &g, &w).unwrap() < 1e-6, "k={k}");
        }
        let sel = path.selected(Selection::Lambda1se);
        assert!(sel.contains(&"x2".to_string()));
        let p = predict(&path.fit_at(Selection::Lambda1se), &x).unwrap();
        assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn post_lasso_edge_cases() {
        let mut rng = crate::stats::rng(13);
        let n = 200;
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let w = vec![1.0; n];
        let x = design(cols);
        let path = lasso_solutions(&x, &y, &w, Family::Gaussian, &[10.0, 0.0]).unwrap();
        // λ = 10 selects nothing: intercept-only refit
        let mut p0 = path.clone();
        p0.idx_1se = 0;
        let f0 = post_lasso_refit(&p0, Selection::Lambda1se, &x, &y, &w).unwrap();
        assert!(f0.coefficients.is_empty());
        assert!((f0.intercept - y.iter().sum::<f64>() / n as f64).abs() < 1e-12);
        let f1 = post_lasso_refit(&path, Selection::Lambda1se, &x, &y, &w).unwrap();
        let ols = fit_wls(&x, &y, &w).unwrap();
        for j in 0..3 {
            assert!((f1.coefficients[j].1 - ols.coefficients[j].1).abs() < 1e-10);
        }
    }

    #[test]
    fn frozen_mode_reaches_the_frozen_lambda() {
        let mut rng = crate::stats::rng(17);
        let n = 300;
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|i| cols[0][i] + rng.sample::<f64, _>(StandardNormal)).collect();
        let w = vec![1.0; n];
        let x = design(cols);
        let full = fit_lasso_path(&x, &y, &w, Family::Gaussian, &LassoConfig::default()).unwrap();
        let cfg = LassoConfig {
            frozen_lambda: Some(full.lambda_1se),
            ..Default::default()
        };
        let frozen = fit_lasso_path(&x, &y, &w, Family::Gaussian, &cfg).unwrap();
        assert_eq!(frozen.lambda_1se, full.lambda_1se);
        for j in 0..3 {
            assert!((frozen.coefs[frozen.idx_1se][j] - full.coefs[full.idx_1se][j]).abs() < 1e-8);
        }
    }

    #[test]
    fn argument_errors() {
        let x = design(vec![vec![1.0, 2.0, 3.0]]);
        let y = [1.0, 2.0, 2.5];
        let w = [1.0; 3];
        let bad = |cfg: LassoConfig| fit_lasso_path(&x, &y, &w, Family::Gaussian, &cfg).is_err();
        assert!(bad(LassoConfig { n_lambda: 1, ..Default::default() }));
        assert!(bad(LassoConfig { folds: 1, ..Default::default() }));
        assert!(bad(LassoConfig { folds: 4, ..Default::default() }));
    }
}
