//! Run configuration.
//!
//! Flat `key = value` lines with sectioned keys, `#` comments and blank
//! lines. Example:
//!
//! ```text
//! seed = 7
//! block.human_capital = educ, age
//! coarsen.age = 20,30,40,50,60
//! spec.baseline = dummies(educ), poly(age,2)
//! spec.full = inter(dummies(educ),main(age))
//! support.S1 = human_capital
//! grid.estimators = BO, IPW, EXPSM
//! bootstrap.B = 200
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::datamodel::{parse_level_map, split_top_level, Coarsening, ModelSpec, Regime, Term, VariableBlock};
use crate::error::{Error, Result};
use crate::estimators::{EstimationConfig, Estimator, GridPlan, Specs};
use crate::inference::BootstrapConfig;
use crate::support::SupportDefinition;

/// Ordered key-value pairs with their 1-based source lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(usize, String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<KeyValues> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config {
                    line,
                    message: "empty key".into(),
                });
            }
            if entries.iter().any(|(_, k, _)| *k == key) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            entries.push((line, key, value.trim().to_string()));
        }
        Ok(KeyValues { entries })
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.push((0, key.into(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(_, k, _)| k == key).map(|(_, _, v)| v.as_str())
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.iter().find(|(_, k, _)| k == key).map(|e| e.0).unwrap_or(0)
    }

    /// `(suffix, value, line)` for every key starting with `prefix.`.
    pub fn section<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str, usize)> + 'a {
        self.entries.iter().filter_map(move |(line, k, v)| {
            k.strip_prefix(prefix)
                .and_then(|r| r.strip_prefix('.'))
                .map(|r| (r, v.as_str(), *line))
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(_, k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (_, k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| Error::Config {
                line: self.line_of(key),
                message: format!("invalid value `{v}` for `{key}`"),
            }),
        }
    }

    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        self.get(key).map(split_list)
    }
}

pub fn split_list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

pub fn parse_number_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    split_list(v)
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number")))
        .collect()
}

/// Order in which blocks are added for the sequential support analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportOrder {
    /// Decreasing importance for the reference-group wage (ΔR²).
    DeltaR2,
    /// Declaration order (or `support.sequence`).
    Given,
    /// Seeded random permutation.
    Random(u64),
    /// Increasing ΔR² importance.
    Increasing,
}

impl SupportOrder {
    pub fn parse(s: &str) -> Option<SupportOrder> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "deltar2" => Some(SupportOrder::DeltaR2),
            "given" => Some(SupportOrder::Given),
            "increasing" => Some(SupportOrder::Increasing),
            "random" => Some(SupportOrder::Random(0)),
            _ => {
                let inner = lower.strip_prefix("random(")?.strip_suffix(')')?;
                inner.trim().parse().ok().map(SupportOrder::Random)
            }
        }
    }
}

/// Cell of the grid whose estimate serves as reference for the
/// percent-difference column.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub estimator: Estimator,
    pub regime: Regime,
    pub support_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub blocks: Vec<VariableBlock>,
    pub specs: Specs,
    pub supports: Vec<SupportDefinition>,
    pub plan: GridPlan,
    pub estimation: EstimationConfig,
    pub bootstrap: BootstrapConfig,
    pub benchmark: Option<Benchmark>,
    pub support_order: SupportOrder,
    /// Block order for `SupportOrder::Given`.
    pub support_sequence: Vec<String>,
    pub oos_folds: usize,
    pub histogram_bins: usize,
}

const KNOWN: &[&str] = &[
    "seed",
    "spec.baseline",
    "spec.full",
    "grid.supports",
    "grid.estimators",
    "grid.regimes",
    "psm.support",
    "psm.radius_quantile",
    "ipw.trim_quantile",
    "aipw.folds",
    "lrm.interacted",
    "lasso.folds",
    "lasso.n_lambda",
    "lasso.min_ratio",
    "bootstrap.B",
    "bootstrap.refit_lambda",
    "benchmark",
    "support.order",
    "support.sequence",
    "diagnose.folds",
    "diagnose.bins",
];

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn parse_terms(kv: &KeyValues, key: &str) -> Result<Vec<Term>> {
    let Some(v) = kv.get(key) else {
        return Ok(Vec::new());
    };
    split_top_level(v, ',')
        .iter()
        .filter(|t| !t.trim().is_empty())
        .map(|t| Term::parse(t).map_err(|e| config_err(kv.line_of(key), e.to_string())))
        .collect()
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_kv(&KeyValues::parse(text)?)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<RunConfig> {
        for (k, _) in kv.entries() {
            let sectioned = ["block.", "coarsen.", "support."].iter().any(|p| k.starts_with(p));
            if !KNOWN.contains(&k) && !sectioned {
                return Err(config_err(kv.line_of(k), format!("unknown key `{k}`")));
            }
        }
        let seed = kv.parsed::<u64>("seed")?.unwrap_or(0);

        let mut coarsen: BTreeMap<String, Coarsening> = BTreeMap::new();
        for (col, v, line) in kv.section("coarsen") {
            let c = if v.contains('>') {
                parse_level_map(v).map_err(|e| config_err(line, e.to_string()))?
            } else {
                Coarsening::Cuts(parse_number_list(v).map_err(|m| config_err(line, m))?)
            };
            coarsen.insert(col.to_string(), c);
        }
        let mut blocks = Vec::new();
        for (name, v, line) in kv.section("block") {
            let cols = split_list(v);
            if cols.is_empty() {
                return Err(config_err(line, format!("block `{name}` has no columns")));
            }
            let refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
            let mut b = VariableBlock::new(name, &refs);
            for c in &cols {
                if let Some(co) = coarsen.get(c) {
                    b = b.coarsen(c, co.clone());
                }
            }
            blocks.push(b);
        }
        for col in coarsen.keys() {
            if !blocks.iter().any(|b| b.columns.contains(col)) {
                return Err(config_err(kv.line_of(&format!("coarsen.{col}")), format!("`{col}` is in no block")));
            }
        }

        let baseline = ModelSpec::baseline(parse_terms(kv, "spec.baseline")?);
        let full = ModelSpec::full(&baseline, parse_terms(kv, "spec.full")?);
        let specs = Specs::new(baseline, full);

        let mut supports = Vec::new();
        for (id, v, line) in kv.section("support") {
            if id == "order" || id == "sequence" {
                continue;
            }
            let names = split_list(v);
            for n in &names {
                if !blocks.iter().any(|b| b.name == *n) {
                    return Err(config_err(line, format!("support `{id}` uses unknown block `{n}`")));
                }
            }
            supports.push(SupportDefinition {
                id: id.to_string(),
                blocks: names,
            });
        }

        let pick_support = |key: &str, id: &str| -> Result<SupportDefinition> {
            supports
                .iter()
                .find(|s| s.id == id)
                .cloned()
                .ok_or_else(|| config_err(kv.line_of(key), format!("unknown support `{id}`")))
        };
        let grid_supports = match kv.list("grid.supports") {
            Some(ids) => ids.iter().map(|id| pick_support("grid.supports", id)).collect::<Result<Vec<_>>>()?,
            None => supports.clone(),
        };
        let estimators = match kv.list("grid.estimators") {
            Some(v) => v
                .iter()
                .map(|s| Estimator::parse(s).ok_or_else(|| config_err(kv.line_of("grid.estimators"), format!("unknown estimator `{s}`"))))
                .collect::<Result<Vec<_>>>()?,
            None => Estimator::ALL.to_vec(),
        };
        let regimes = match kv.list("grid.regimes") {
            Some(v) => v
                .iter()
                .map(|s| Regime::parse(s).ok_or_else(|| config_err(kv.line_of("grid.regimes"), format!("unknown regime `{s}`"))))
                .collect::<Result<Vec<_>>>()?,
            None => vec![Regime::Baseline, Regime::Full, Regime::Ml],
        };
        let psm_support = kv.get("psm.support").map(|id| pick_support("psm.support", id)).transpose()?;
        let plan = GridPlan {
            supports: grid_supports,
            estimators,
            regimes,
            psm_support,
        };

        let mut estimation = EstimationConfig {
            seed,
            ..EstimationConfig::default()
        };
        let unit = |key: &str, v: f64| -> Result<f64> {
            if v > 0.0 && v <= 1.0 {
                Ok(v)
            } else {
                Err(config_err(kv.line_of(key), format!("`{key}` must lie in (0, 1]")))
            }
        };
        if let Some(q) = kv.parsed::<f64>("ipw.trim_quantile")? {
            estimation.trim_quantile = unit("ipw.trim_quantile", q)?;
        }
        if let Some(q) = kv.parsed::<f64>("psm.radius_quantile")? {
            estimation.radius_quantile = unit("psm.radius_quantile", q)?;
        }
        if let Some(k) = kv.parsed::<usize>("aipw.folds")? {
            if k == 0 {
                return Err(config_err(kv.line_of("aipw.folds"), "`aipw.folds` must be at least 1"));
            }
            estimation.aipw_folds = k;
        }
        if let Some(b) = kv.parsed::<bool>("lrm.interacted")? {
            estimation.interacted_lrm = b;
        }
        if let Some(k) = kv.parsed::<usize>("lasso.folds")? {
            estimation.lasso.folds = k;
        }
        if let Some(k) = kv.parsed::<usize>("lasso.n_lambda")? {
            estimation.lasso.n_lambda = k;
        }
        if let Some(r) = kv.parsed::<f64>("lasso.min_ratio")? {
            estimation.lasso.min_ratio = r;
        }
        estimation.lasso.seed = seed;

        let mut bootstrap = BootstrapConfig {
            seed: crate::stats::derive_seed(seed, &[0xB007]),
            ..BootstrapConfig::default()
        };
        if let Some(b) = kv.parsed::<usize>("bootstrap.B")? {
            bootstrap.replicates = b;
        }
        if let Some(r) = kv.parsed::<bool>("bootstrap.refit_lambda")? {
            bootstrap.refit_lambda = r;
        }

        let benchmark = match kv.get("benchmark") {
            Some(v) => {
                let line = kv.line_of("benchmark");
                let parts: Vec<&str> = v.split('/').map(|s| s.trim()).collect();
                if parts.len() != 3 {
                    return Err(config_err(line, "benchmark must read `ESTIMATOR/REGIME/SUPPORT`"));
                }
                Some(Benchmark {
                    estimator: Estimator::parse(parts[0]).ok_or_else(|| config_err(line, format!("unknown estimator `{}`", parts[0])))?,
                    regime: Regime::parse(parts[1]).ok_or_else(|| config_err(line, format!("unknown regime `{}`", parts[1])))?,
                    support_id: pick_support("benchmark", parts[2])?.id,
                })
            }
            None => supports.first().map(|s| Benchmark {
                estimator: Estimator::Bo,
                regime: Regime::Baseline,
                support_id: s.id.clone(),
            }),
        };

        let support_order = match kv.get("support.order") {
            Some(v) => SupportOrder::parse(v)
                .ok_or_else(|| config_err(kv.line_of("support.order"), format!("unknown support order `{v}`")))?,
            None => SupportOrder::DeltaR2,
        };
        let support_sequence = match kv.list("support.sequence") {
            Some(v) => v,
            None => blocks.iter().map(|b| b.name.clone()).collect(),
        };

        Ok(RunConfig {
            seed,
            blocks,
            specs,
            supports,
            plan,
            estimation,
            bootstrap,
            benchmark,
            support_order,
            support_sequence,
            oos_folds: kv.parsed::<usize>("diagnose.folds")?.unwrap_or(5),
            histogram_bins: kv.parsed::<usize>("diagnose.bins")?.unwrap_or(20),
        })
    }

    /// Replaces the seed everywhere it feeds a random stream.
    pub fn with_seed(mut self, seed: u64) -> RunConfig {
        self.seed = seed;
        self.estimation.seed = seed;
        self.estimation.lasso.seed = seed;
        self.bootstrap.seed = crate::stats::derive_seed(seed, &[0xB007]);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# comment
seed = 7
block.hc = educ, age
block.job = occ
coarsen.age = 20,30,40
spec.baseline = dummies(educ), poly(age,2), dummies(occ)
spec.full = inter(dummies(educ),main(age))
support.S1 = hc
support.S2 = hc, job
grid.estimators = BO, IPW
ipw.trim_quantile = 0.99
bootstrap.B = 50
";

    #[test]
    fn parses_sample() {
        let c = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.blocks.len(), 2);
        assert_eq!(c.blocks[0].coarsening_for("age"), Some(&Coarsening::Cuts(vec![20.0, 30.0, 40.0])));
        assert_eq!(c.specs.baseline.terms.len(), 3);
        assert_eq!(c.specs.full.terms.len(), 4);
        assert_eq!(c.plan.supports.len(), 2);
        assert_eq!(c.plan.estimators, vec![Estimator::Bo, Estimator::Ipw]);
        assert_eq!(c.plan.regimes.len(), 3);
        assert_eq!(c.estimation.trim_quantile, 0.99);
        assert_eq!(c.estimation.radius_quantile, 0.99);
        assert_eq!(c.bootstrap.replicates, 50);
        let b = c.benchmark.unwrap();
        assert_eq!((b.estimator, b.regime, b.support_id.as_str()), (Estimator::Bo, Regime::Baseline, "S1"));
    }

    #[test]
    fn defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.estimation.trim_quantile, 0.995);
        assert_eq!(c.estimation.lasso.folds, 5);
        assert_eq!(c.bootstrap.replicates, 200);
        assert_eq!(c.plan.estimators.len(), 8);
    }

    #[test]
    fn errors_carry_lines() {
        match RunConfig::parse("seed = 1\nsupport.S1 = nope\n") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("nope"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::parse("foo = 1"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(RunConfig::parse("seed = 1\nseed = 2"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(RunConfig::parse("ipw.trim_quantile = 1.5"), Err(Error::Config { .. })));
    }

    #[test]
    fn support_orders() {
        assert_eq!(SupportOrder::parse("deltaR2"), Some(SupportOrder::DeltaR2));
        assert_eq!(SupportOrder::parse("random(42)"), Some(SupportOrder::Random(42)));
        assert_eq!(SupportOrder::parse("sideways"), None);
    }

    #[test]
    fn key_values_roundtrip() {
        let kv = KeyValues::parse("a = 1\nb.c = x, y # trailing\n").unwrap();
        assert_eq!(kv.get("b.c"), Some("x, y"));
        let again = KeyValues::parse(&kv.to_text()).unwrap();
        assert_eq!(again.entries().collect::<Vec<_>>(), kv.entries().collect::<Vec<_>>());
    }
}
