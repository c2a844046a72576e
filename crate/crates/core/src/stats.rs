//! Small weighted-statistics helpers shared across modules.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    let (mut s, mut sw) = (0.0, 0.0);
    for (xi, wi) in x.iter().zip(w) {
        s += wi * xi;
        sw += wi;
    }
    s / sw
}

/// Population (divide-by-weight-sum) weighted mean and variance.
pub(crate) fn weighted_moments(x: &[f64], w: &[f64]) -> (f64, f64) {
    let m = weighted_mean(x, w);
    let (mut s, mut sw) = (0.0, 0.0);
    for (xi, wi) in x.iter().zip(w) {
        s += wi * (xi - m) * (xi - m);
        sw += wi;
    }
    (m, s / sw)
}

/// Inverse-CDF weighted quantile: the smallest value whose cumulative weight
/// share reaches `q`. `values` and `weights` are aligned.
pub(crate) fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    if values.is_empty() {
        return f64::NAN;
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let target = q * total;
    let mut cum = 0.0;
    for &i in &idx {
        cum += weights[i];
        if cum >= target {
            return values[i];
        }
    }
    values[*idx.last().unwrap()]
}

pub(crate) fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)) without overflow.
pub(crate) fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// SplitMix64 finalizer; used to derive independent seeds from a base seed
/// and a path of indices.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeded assignment of `rows` to `k` folds of (near) equal size. When
/// `strata` is given, each stratum is spread evenly over the folds.
pub(crate) fn assign_folds(n: usize, k: usize, strata: Option<&[u8]>, seed: u64) -> Vec<usize> {
    let mut rng = rng(seed);
    let mut fold = vec![0usize; n];
    match strata {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            for (pos, &i) in idx.iter().enumerate() {
                fold[i] = pos % k;
            }
        }
        Some(s) => {
            let mut offset = 0;
            for level in [0u8, 1u8] {
                let mut idx: Vec<usize> = (0..n).filter(|&i| (s[i] != 0) as u8 == level).collect();
                idx.shuffle(&mut rng);
                for (pos, &i) in idx.iter().enumerate() {
                    fold[i] = (pos + offset) % k;
                }
                offset += idx.len();
            }
        }
    }
    fold
}


/// Rows with identical values in `cols` merged into one: summed weights and
/// the weighted mean of `y`. Returns `None` when more than half of the rows
/// are distinct. Row order of first appearance is kept.
pub(crate) fn collapse_rows(cols: &[&[f64]], w: &[f64], y: &[f64]) -> Option<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let n = y.len();
    let mut index: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
    let mut first: Vec<usize> = Vec::new();
    let mut cell = Vec::with_capacity(n);
    for i in 0..n {
        let key: Vec<u64> = cols.iter().map(|c| c[i].to_bits()).collect();
        let next = first.len();
        let c = *index.entry(key).or_insert(next);
        if c == next {
            first.push(i);
            if first.len() * 2 > n && first.len() > 64 {
                return None;
            }
        }
        cell.push(c);
    }
    let m = first.len();
    let mut cw = vec![0.0; m];
    let mut cy = vec![0.0; m];
    for i in 0..n {
        cw[cell[i]] += w[i];
        cy[cell[i]] += w[i] * y[i];
    }
    for c in 0..m {
        cy[c] = if cw[c] > 0.0 { cy[c] / cw[c] } else { 0.0 };
    }
    let out = cols.iter().map(|c| first.iter().map(|&i| c[i]).collect()).collect();
    Some((out, cw, cy))
}
