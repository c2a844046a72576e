//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --release --test acceptance -- 3 7`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use paygap::datamodel::{Covariate, CovariateColumn, Dataset, ModelSpec, Regime, Term, VariableBlock};
use paygap::dgp::{paper_shape_dgp, DgpConfig, GapSpec, Sector};
use paygap::estimators::{
    bo_interacted, estimate_aipw, estimate_bo, ipw_weights, run_grid, support_sample, EstimationConfig, Estimator,
    GridCell, GridPlan, SampleContext, Specs,
};
use paygap::inference::{bootstrap_grid, bootstrap_se, BootstrapConfig};
use paygap::lasso::{fit_lasso_path, lambda_max, lasso_solutions, LassoConfig};
use paygap::linmod::Family;
use paygap::report::estimates_csv;
use paygap::support::{nopo_decompose, CellIndex, SupportDefinition};

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn categorical(name: &str, codes: Vec<u32>, k: usize) -> CovariateColumn {
    CovariateColumn {
        name: name.into(),
        values: Covariate::Categorical {
            levels: (0..k).map(|l| format!("{name}{l}")).collect(),
            codes,
        },
    }
}

/// Random small dataset with two categorical covariates, one continuous
/// covariate and random weights; every cell of `a` holds both groups.
fn random_small(rng: &mut ChaCha8Rng) -> Dataset {
    let n = rng.random_range(60..=500);
    let ka = rng.random_range(2..=4);
    let kb = rng.random_range(2..=4);
    let mut g = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let ai = if i < 2 * ka { (i / 2) as u32 } else { rng.random_range(0..ka) as u32 };
        let gi = if i < 2 * ka { (i % 2) as u8 } else { rng.random_bool(0.3 + 0.1 * ai as f64) as u8 };
        let bi = rng.random_range(0..kb) as u32;
        let xi: f64 = rng.random_range(-2.0..2.0);
        g.push(gi);
        a.push(ai);
        b.push(bi);
        x.push(xi);
        y.push(3.0 + 0.1 * ai as f64 - 0.05 * bi as f64 + 0.2 * xi - 0.07 * gi as f64 + rng.random_range(-0.5..0.5));
        w.push(rng.random_range(0.5..2.0));
    }
    Dataset::new(
        g,
        y,
        Some(w),
        vec![
            categorical("a", a, ka),
            categorical("b", b, kb),
            CovariateColumn {
                name: "x".into(),
                values: Covariate::Continuous(x),
            },
        ],
    )
    .unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let spec = ModelSpec::baseline(vec![Term::dummies("a"), Term::dummies("b"), Term::main("x")]);
    let blocks = vec![VariableBlock::new("A", &["a"]), VariableBlock::new("B", &["b"])];
    let def = SupportDefinition::new("S", &["A", "B"]);
    let cfg = EstimationConfig::default();
    let (mut bo, mut nopo, mut ipw) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let d = random_small(&mut rng);
        let two_step = estimate_bo(&d, &spec, &cfg).unwrap().delta;
        bo = bo.max((two_step - bo_interacted(&d, &spec).unwrap()).abs());
        let cells = CellIndex::for_definition(&d, &blocks, &def).unwrap();
        nopo = nopo.max(nopo_decompose(&d, &cells).unwrap().identity_residual().abs());
        let specs = Specs::new(spec.clone(), spec.clone());
        let ctx = SampleContext::new(&d, &specs, &cfg, 1);
        let p = &ctx.propensity(Regime::Baseline).unwrap().p;
        for q in [1.0, 0.995, 0.9] {
            let iw = ipw_weights(p, d.weight(), &d.rows_in_group(0), q).unwrap();
            let s: f64 = iw.weights.iter().map(|(_, v)| v).sum();
            ipw = ipw.max((s - 1.0).abs());
        }
    }
    Outcome {
        pass: bo < 1e-9 && nopo < 1e-12 && ipw < 1e-12,
        detail: format!("max |BO two-step − interacted| {bo:.1e} (< 1e-9), Nopo residual {nopo:.1e} (< 1e-12), |Σw − 1| {ipw:.1e} (< 1e-12)"),
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let spec = ModelSpec::baseline(vec![Term::dummies("c")]);
    let specs = Specs::new(spec.clone(), spec);
    let blocks = vec![VariableBlock::new("C", &["c"])];
    let def = SupportDefinition::new("S", &["C"]);
    let cfg = EstimationConfig {
        trim_quantile: 1.0,
        aipw_folds: 1,
        interacted_lrm: true,
        frozen_lambdas: Some(BTreeMap::from([("pds.y".to_string(), 0.0), ("pds.g".to_string(), 0.0)])),
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let k = rng.random_range(2..=6);
        let n = rng.random_range(200..=2000);
        let mut g = Vec::new();
        let mut c = Vec::new();
        let mut y = Vec::new();
        let mut w = Vec::new();
        for i in 0..n {
            let ci = if i < 2 * k { (i / 2) as u32 } else { rng.random_range(0..k) as u32 };
            let gi = if i < 2 * k { (i % 2) as u8 } else { rng.random_bool(0.2 + 0.6 * ci as f64 / k as f64) as u8 };
            g.push(gi);
            c.push(ci);
            y.push(2.5 + 0.3 * ci as f64 - (0.02 + 0.03 * ci as f64) * gi as f64 + rng.random_range(-0.4..0.4));
            w.push(rng.random_range(0.2..3.0));
        }
        // weighted cell means
        let mut s = vec![[0.0f64; 2]; k];
        let mut sw = vec![[0.0f64; 2]; k];
        for i in 0..n {
            s[c[i] as usize][g[i] as usize] += w[i] * y[i];
            sw[c[i] as usize][g[i] as usize] += w[i];
        }
        let w1: f64 = sw.iter().map(|v| v[1]).sum();
        let oracle: f64 = (0..k).map(|j| sw[j][1] / w1 * (s[j][1] / sw[j][1] - s[j][0] / sw[j][0])).sum();
        let d = Dataset::new(g, y, Some(w), vec![categorical("c", c, k)]).unwrap();
        let cells = CellIndex::for_definition(&d, &blocks, &def).unwrap();
        let ctx = SampleContext::new(&d, &specs, &cfg, 3);
        for e in Estimator::ALL {
            let est = ctx.estimate(e, Regime::Baseline, &cells, &cells).unwrap();
            worst = worst.max((est.delta - oracle).abs());
        }
    }
    Outcome {
        pass: worst < 1e-6,
        detail: format!("max |estimate − cell-mean oracle| over 8 estimators × 20 instances {worst:.1e} (< 1e-6)"),
    }
}

/// Three categorical blocks; the propensity depends on the first block only
/// and its wage effects are small.
fn homogeneous_dgp(seed: u64) -> DgpConfig {
    let mut cfg = DgpConfig::new(50_000, seed, -0.05)
        .categorical("a", &[0.4, 0.35, 0.25], &[0.0, 0.5, 1.0], &[0.0, 0.01, 0.02])
        .categorical("b", &[0.3, 0.4, 0.3], &[0.0, 0.0, 0.0], &[0.0, 0.1, 0.2])
        .categorical("c", &[0.6, 0.4], &[0.0, 0.0], &[0.0, 0.15]);
    cfg.blocks = vec![
        ("A".into(), vec!["a".into()]),
        ("B".into(), vec!["b".into()]),
        ("C".into(), vec!["c".into()]),
    ];
    cfg.supports = vec![
        ("S1".into(), vec!["A".into()]),
        ("S2".into(), vec!["A".into(), "B".into()]),
        ("S3".into(), vec!["A".into(), "B".into(), "C".into()]),
    ];
    cfg.baseline_terms = vec![Term::dummies("a"), Term::dummies("b"), Term::dummies("c")];
    cfg.full_terms = vec![Term::interact(Term::dummies("a"), Term::dummies("b"))];
    cfg
}

fn cell_key(c: &GridCell) -> String {
    format!("{}/{}/{}", c.support_id, c.estimator, c.regime)
}

fn criterion_3() -> Outcome {
    let seeds = 20;
    let mut hits: BTreeMap<String, usize> = BTreeMap::new();
    for s in 0..seeds {
        let cfg = homogeneous_dgp(3000 + s);
        let (d, _) = cfg.generate().unwrap();
        let plan = GridPlan {
            supports: cfg.support_definitions(),
            estimators: Estimator::ALL.to_vec(),
            regimes: vec![Regime::Baseline, Regime::Full, Regime::Ml],
            psm_support: None,
        };
        let ec = EstimationConfig {
            seed: s,
            ..Default::default()
        };
        let blocks = cfg.variable_blocks();
        let specs = cfg.specs();
        let mut cells = run_grid(&d, &blocks, &specs, &plan, &ec).unwrap();
        let boot = BootstrapConfig {
            replicates: 20,
            seed: 77 + s,
            refit_lambda: false,
        };
        bootstrap_grid(&d, &blocks, &specs, &plan, &ec, &boot, &mut cells).unwrap();
        for c in &cells {
            let ok = matches!(&c.result, Ok(e) if e.se.is_finite() && (e.delta + 0.05).abs() <= 3.0 * e.se);
            *hits.entry(cell_key(c)).or_default() += ok as usize;
        }
    }
    let (worst_cell, worst) = hits.iter().min_by_key(|(_, h)| **h).map(|(k, h)| (k.clone(), *h)).unwrap();
    Outcome {
        pass: worst >= 18,
        detail: format!("{} cells; fewest hits {worst}/{seeds} at {worst_cell} (need ≥ 18)", hits.len()),
    }
}

fn criterion_4() -> Outcome {
    let seeds = 20u64;
    let b = 50;
    let spec = ModelSpec::baseline(vec![Term::main("x")]);
    let cfg = EstimationConfig::default();
    let mut aipw_ps = 0;
    let mut aipw_mu = 0;
    let mut bo_biased = 0;
    for s in 0..seeds {
        // propensity misspecified: quadratic log-odds, linear logit
        let dgp = DgpConfig::new(50_000, 4000 + s, -0.05).normal("x", 0.0, 1.0, 0.3, 0.15, 0.3, 0.0);
        let (d, t) = dgp.generate().unwrap();
        let est = estimate_aipw(&d, &spec, &cfg).unwrap();
        let se = bootstrap_se(&d, b, 40 + s, |x, seed| {
            estimate_aipw(x, &spec, &EstimationConfig { seed, ..cfg.clone() }).map(|e| e.delta)
        })
        .unwrap()
        .se;
        aipw_ps += ((est.delta - t.unexplained).abs() <= 3.0 * se) as usize;

        // wage model misspecified: quadratic in a three-valued covariate
        let dgp = DgpConfig::new(50_000, 4100 + s, -0.05).discrete("x", &[-1.0, 0.0, 1.0], &[0.3, 0.4, 0.3], 0.8, 0.0, 0.5);
        let (d, t) = dgp.generate().unwrap();
        let est = estimate_aipw(&d, &spec, &cfg).unwrap();
        let se = bootstrap_se(&d, b, 50 + s, |x, seed| {
            estimate_aipw(x, &spec, &EstimationConfig { seed, ..cfg.clone() }).map(|e| e.delta)
        })
        .unwrap()
        .se;
        aipw_mu += ((est.delta - t.unexplained).abs() <= 3.0 * se) as usize;
        let bo = estimate_bo(&d, &spec, &cfg).unwrap();
        let se = bootstrap_se(&d, b, 60 + s, |x, _| estimate_bo(x, &spec, &cfg).map(|e| e.delta)).unwrap().se;
        bo_biased += ((bo.delta - t.unexplained).abs() > 3.0 * se) as usize;
    }
    Outcome {
        pass: aipw_ps >= 18 && aipw_mu >= 18 && bo_biased >= 15,
        detail: format!(
            "AIPW within 3 SE: {aipw_ps}/20 (propensity misspecified), {aipw_mu}/20 (wage model misspecified), need ≥ 18; \
             BO beyond 3 SE under wage misspecification {bo_biased}/20 (need ≥ 15)"
        ),
    }
}

fn criterion_5() -> Outcome {
    let private = paper_shape_dgp(Sector::Private);
    let (d, t) = private.generate().unwrap();
    let blocks = private.variable_blocks();
    let defs = private.support_definitions();
    let specs = private.specs();
    let s1 = support_sample(&d, &blocks, &defs[0], &defs[0]).unwrap();
    let cfg = EstimationConfig::default();
    let bo = estimate_bo(&s1.data, &specs.baseline, &cfg).unwrap().delta;
    let se = bootstrap_se(&s1.data, 30, 5, |x, _| estimate_bo(x, &specs.baseline, &cfg).map(|e| e.delta)).unwrap().se;
    let recovered = (bo - t.unexplained).abs() <= 3.0 * se;
    let mut curve = Vec::new();
    for def in &defs {
        let cells = CellIndex::for_definition(&d, &blocks, def).unwrap();
        curve.push(nopo_decompose(&d, &cells).unwrap().unexplained_on_support.unwrap());
    }
    let declining = curve.windows(2).all(|w| w[1].abs() < w[0].abs());

    let public = paper_shape_dgp(Sector::Public);
    let (dp, tp) = public.generate().unwrap();
    let pdefs = public.support_definitions();
    let strictest = CellIndex::for_definition(&dp, &public.variable_blocks(), pdefs.last().unwrap()).unwrap();
    let nopo = nopo_decompose(&dp, &strictest).unwrap();
    let configured = tp.raw_gap - tp.raw_gap_on_support;
    let focal = nopo.out_of_support_focal;
    let off_support = focal.signum() == configured.signum() && focal.abs() >= 0.5 * configured.abs();
    let curve_text: Vec<String> = curve.iter().map(|v| format!("{v:.4}")).collect();
    Outcome {
        pass: recovered && declining && off_support,
        detail: format!(
            "private BO(baseline,S1) {bo:.4} vs δ* {:.4} (se {se:.4}); EXM curve [{}] declining={declining}; \
             public Δˢ(focal) {focal:.4} vs configured Δ−Δ_S=1 {configured:.4}",
            t.unexplained,
            curve_text.join(", ")
        ),
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    // one standardized column: b(λ) = S(z'vy, λ)
    let mut oracle = 0.0f64;
    for _ in 0..5 {
        let n = 300;
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let sw: f64 = w.iter().sum();
        let m: f64 = raw.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
        let sd = (raw.iter().zip(&w).map(|(a, b)| b * (a - m).powi(2)).sum::<f64>() / sw).sqrt();
        let z: Vec<f64> = raw.iter().map(|a| (a - m) / sd).collect();
        let y: Vec<f64> = z.iter().map(|zi| 0.7 * zi + rng.random_range(-1.0..1.0)).collect();
        let ym: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
        let c: f64 = (0..n).map(|i| w[i] / sw * z[i] * (y[i] - ym)).sum();
        let x = paygap::datamodel::DesignMatrix::new(n, vec!["z".into()], vec![z]).unwrap();
        let lams: Vec<f64> = (0..20).map(|k| 1.2 * c.abs() * (1.0 - k as f64 / 19.0)).collect();
        let path = lasso_solutions(&x, &y, &w, Family::Gaussian, &lams).unwrap();
        for (k, l) in lams.iter().enumerate() {
            let expect = c.signum() * (c.abs() - l).max(0.0);
            oracle = oracle.max((path.std_coefs[k][0] - expect).abs());
        }
    }
    // KKT at every returned solution, both families
    let mut kkt = 0.0f64;
    let mut zeroed = true;
    for rep in 0..4 {
        let n = 400;
        let p = 12;
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|j| (0..n).map(|i| if j % 3 == 0 { ((i * (j + 1)) % 4) as f64 } else { rng.random_range(-1.0..1.0) }).collect())
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|i| cols[1][i] - 0.5 * cols[3][i] + rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n).map(|i| (cols[1][i] + 0.5 * cols[2][i] + rng.random_range(-1.0..1.0) > 0.0) as u8 as f64).collect();
        let x = paygap::datamodel::DesignMatrix::new(n, (0..p).map(|j| format!("x{j}")).collect(), cols).unwrap();
        let lc = LassoConfig {
            seed: rep,
            ..Default::default()
        };
        for (fam, resp) in [(Family::Gaussian, &y), (Family::Binomial, &g)] {
            let path = fit_lasso_path(&x, resp, &w, fam, &lc).unwrap();
            for k in 0..path.lambdas.len() {
                kkt = kkt.max(path.kkt_violation(k, &x, resp, &w).unwrap());
            }
            let at_max = lasso_solutions(&x, resp, &w, fam, &[path.lambdas[0]]).unwrap();
            zeroed &= at_max.std_coefs[0].iter().all(|b| *b == 0.0);
        }
        let lm = lambda_max(&x, &y, &w);
        zeroed &= lasso_solutions(&x, &y, &w, Family::Gaussian, &[lm]).unwrap().std_coefs[0].iter().all(|b| *b == 0.0);
    }
    Outcome {
        pass: oracle < 1e-8 && kkt < 1e-6 && zeroed,
        detail: format!("soft-threshold error {oracle:.1e} (< 1e-8); max KKT violation {kkt:.1e} (< 1e-6); λ_max zeroes all: {zeroed}"),
    }
}

fn criterion_7() -> Outcome {
    let seeds = 20u64;
    let mut wins = 0;
    let mut errs = Vec::new();
    for s in 0..seeds {
        let mut dgp = DgpConfig::new(50_000, 7000 + s, -0.05)
            .categorical("c", &[0.4, 0.35, 0.25], &[0.0, 0.5, 1.0], &[0.0, 0.1, 0.2])
            .normal("x", 0.0, 1.0, 0.5, 0.0, 0.2, 0.15)
            .with_gap(GapSpec::ByLevel {
                covariate: "c".into(),
                gaps: vec![-0.02, -0.06, -0.12],
            });
        dgp.blocks = vec![("C".into(), vec!["c".into()])];
        dgp.supports = vec![("S1".into(), vec!["C".into()])];
        dgp.baseline_terms = vec![Term::dummies("c"), Term::main("x")];
        dgp.full_terms = vec![Term::interact(Term::dummies("c"), Term::main("x")), Term::poly("x", 2)];
        let (d, t) = dgp.generate().unwrap();
        let specs = dgp.specs();
        let cells = CellIndex::for_definition(&d, &dgp.variable_blocks(), &dgp.support_definitions()[0]).unwrap();
        let cfg = EstimationConfig {
            seed: s,
            ..Default::default()
        };
        let ctx = SampleContext::new(&d, &specs, &cfg, s);
        let expsm = ctx.estimate(Estimator::Expsm, Regime::Full, &cells, &cells).unwrap().delta;
        let bo = ctx.estimate(Estimator::Bo, Regime::Baseline, &cells, &cells).unwrap().delta;
        let (e1, e2) = ((expsm - t.unexplained).abs(), (bo - t.unexplained).abs());
        wins += (e1 < e2) as usize;
        errs.push((e1, e2));
    }
    let m1 = errs.iter().map(|e| e.0).sum::<f64>() / seeds as f64;
    let m2 = errs.iter().map(|e| e.1).sum::<f64>() / seeds as f64;
    Outcome {
        pass: wins >= 16,
        detail: format!("EXPSM(full) closer than BO(baseline) in {wins}/20 (need ≥ 16); mean abs error {m1:.4} vs {m2:.4}"),
    }
}

fn grid_csv(threads: usize) -> String {
    let mut cfg = homogeneous_dgp(8);
    cfg.n = 3000;
    let (d, _) = cfg.generate().unwrap();
    let plan = GridPlan {
        supports: cfg.support_definitions(),
        estimators: Estimator::ALL.to_vec(),
        regimes: vec![Regime::Baseline, Regime::Full, Regime::Ml],
        psm_support: None,
    };
    let ec = EstimationConfig {
        seed: 8,
        ..Default::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let blocks = cfg.variable_blocks();
        let specs = cfg.specs();
        let mut cells = run_grid(&d, &blocks, &specs, &plan, &ec).unwrap();
        let boot = BootstrapConfig {
            replicates: 10,
            seed: 9,
            refit_lambda: true,
        };
        bootstrap_grid(&d, &blocks, &specs, &plan, &ec, &boot, &mut cells).unwrap();
        estimates_csv(&cells, None)
    })
}

fn criterion_8() -> Outcome {
    let a = grid_csv(1);
    let b = grid_csv(1);
    let c = grid_csv(3);
    Outcome {
        pass: a == b && a == c,
        detail: format!(
            "{} bytes; identical across reruns: {}; identical with 3 threads: {}",
            a.len(),
            a == b,
            a == c
        ),
    }
}

fn main() {
    let criteria: [(u32, &str, f64, fn() -> Outcome); 8] = [
        (1, "algebraic identities", 30.0, criterion_1),
        (2, "saturated-design agreement", 10.0, criterion_2),
        (3, "oracle recovery", 600.0, criterion_3),
        (4, "double robustness", 600.0, criterion_4),
        (5, "paper-shape reproduction", 300.0, criterion_5),
        (6, "lasso correctness", 30.0, criterion_6),
        (7, "heterogeneity sensitivity", 600.0, criterion_7),
        (8, "determinism", f64::INFINITY, criterion_8),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let out = run();
        let el = t.elapsed();
        let pass = out.pass && within(el, limit);
        failed += !pass as usize;
        let limit_text = if limit.is_finite() { format!(" < {limit:.0} s") } else { String::new() };
        println!(
            "{} criterion {id} ({name}): {}; runtime {:.1} s{limit_text}",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            el.as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
