//! Dense kernels on column-major data (`columns[j][i]` is row `i` of column `j`).

use nalgebra::{DMatrix, DVector};

/// Relative size of a Householder pivot, compared with the norm of the
/// original column, below which the column counts as linearly dependent.
const RANK_TOL: f64 = 1e-11;

/// Relative ridge added to the normal equations of rank-deficient problems.
const RIDGE_SCALE: f64 = 1e-10;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let n = a.len().min(b.len());
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for i in 4 * chunks..n {
        s0 += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3)
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Least squares `min ||b - A x||` by Householder QR. Returns `None` when a
/// pivot reveals (numerical) rank deficiency.
pub(crate) fn householder_lstsq(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let p = a.len();
    let n = b.len();
    if p > n {
        return None;
    }
    let norms: Vec<f64> = a.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut diag = vec![0.0; p];
    for k in 0..p {
        let (head, tail) = a.split_at_mut(k + 1);
        let col = &mut head[k];
        let norm = dot(&col[k..], &col[k..]).sqrt();
        if norms[k] == 0.0 || norm <= RANK_TOL * norms[k] {
            return None;
        }
        let alpha = if col[k] > 0.0 { -norm } else { norm };
        col[k] -= alpha;
        let vtv = dot(&col[k..], &col[k..]);
        let v = &col[k..];
        for other in tail.iter_mut() {
            let s = 2.0 * dot(v, &other[k..]) / vtv;
            axpy(-s, v, &mut other[k..]);
        }
        let s = 2.0 * dot(v, &b[k..]) / vtv;
        axpy(-s, v, &mut b[k..]);
        diag[k] = alpha;
    }
    // back substitution; R[k][j] for j > k lives in a[j][k]
    let mut x = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = b[k];
        for j in k + 1..p {
            s -= a[j][k] * x[j];
        }
        x[k] = s / diag[k];
    }
    Some(x)
}

/// Weighted Gram matrix `Xᵀ diag(v) X` of the given columns.
pub(crate) fn weighted_gram(columns: &[&[f64]], v: &[f64]) -> DMatrix<f64> {
    let p = columns.len();
    let mut g = DMatrix::zeros(p, p);
    let mut scratch = vec![0.0; v.len()];
    for j in 0..p {
        for (s, (x, vi)) in scratch.iter_mut().zip(columns[j].iter().zip(v)) {
            *s = x * vi;
        }
        for k in j..p {
            let val = dot(&scratch, columns[k]);
            g[(j, k)] = val;
            g[(k, j)] = val;
        }
    }
    g
}

/// Solves `(G + ridge I) x = rhs` by Cholesky. If the factorization fails,
/// retries with a trace-scaled ridge.
pub(crate) fn spd_solve(g: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<(DVector<f64>, bool)> {
    if let Some(ch) = g.clone().cholesky() {
        let x = ch.solve(rhs);
        if x.iter().all(|v| v.is_finite()) {
            return Some((x, false));
        }
    }
    ridge_solve(g, rhs).map(|x| (x, true))
}

pub(crate) fn ridge_solve(g: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let p = g.nrows();
    if p == 0 {
        return Some(DVector::zeros(0));
    }
    let trace: f64 = (0..p).map(|i| g[(i, i)]).sum();
    let lambda = if trace > 0.0 {
        RIDGE_SCALE * trace / p as f64
    } else {
        RIDGE_SCALE
    };
    let mut m = g.clone();
    for i in 0..p {
        m[(i, i)] += lambda;
    }
    m.cholesky().map(|ch| ch.solve(rhs))
}

/// Weighted least squares with an unpenalized intercept.
///
/// Columns and outcome are centered at their weighted means, scaled by
/// `sqrt(w)` and solved by Householder QR. A trace-scaled ridge on the
/// normal equations takes over when the QR detects rank deficiency.
pub(crate) struct WlsSolution {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub ridge: bool,
}

pub(crate) fn solve_wls(columns: &[&[f64]], y: &[f64], w: &[f64]) -> WlsSolution {
    let n = y.len();
    let sw: f64 = w.iter().sum();
    let my = dot(y, w) / sw;
    let means: Vec<f64> = columns.iter().map(|c| dot(c, w) / sw).collect();
    if columns.is_empty() {
        return WlsSolution {
            intercept: my,
            coef: Vec::new(),
            ridge: false,
        };
    }
    let sqw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let a: Vec<Vec<f64>> = columns
        .iter()
        .zip(&means)
        .map(|(c, m)| (0..n).map(|i| sqw[i] * (c[i] - m)).collect())
        .collect();
    let b: Vec<f64> = (0..n).map(|i| sqw[i] * (y[i] - my)).collect();

    let (coef, ridge) = match householder_lstsq(a.clone(), b.clone()) {
        Some(x) => (x, false),
        None => {
            let refs: Vec<&[f64]> = a.iter().map(|c| c.as_slice()).collect();
            let ones = vec![1.0; n];
            let g = weighted_gram(&refs, &ones);
            let rhs = DVector::from_iterator(refs.len(), refs.iter().map(|c| dot(c, &b)));
            let x = ridge_solve(&g, &rhs).unwrap_or_else(|| DVector::zeros(refs.len()));
            (x.iter().copied().collect(), true)
        }
    };
    let intercept = my - coef.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    WlsSolution {
        intercept,
        coef,
        ridge,
    }
}
