//! Tabular data, covariate schema and design-matrix construction.
//!
//! A [`Dataset`] holds one binary group indicator (1 = focal group, 0 =
//! reference group), a real outcome, positive sampling weights and a list of
//! typed covariates. A [`ModelSpec`] describes how covariates expand into
//! regressors; [`build_design`] turns the two into a [`DesignMatrix`].

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::Path;

use crate::error::{Error, Result, RowError};
use crate::stats::weighted_moments;

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Group,
    Outcome,
    Weight,
    Covariate,
    /// Parsed and validated as present, otherwise ignored.
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnType {
    Continuous,
    Categorical(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSchema {
    pub name: String,
    pub role: Role,
    pub kind: ColumnType,
}

/// Column roles and types, read from a flat `column = role[:type[:levels]]`
/// text file. Levels are `|`-separated; `#` starts a comment.
///
/// ```text
/// female = group
/// lwage  = outcome
/// w      = weight
/// edu    = covariate:categorical:primary|secondary|tertiary
/// age    = covariate:continuous
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schema {
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn parse(text: &str) -> Result<Schema> {
        let mut columns: Vec<ColumnSchema> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| Error::Schema(format!("line {}: {m}", lineno + 1));
            let (name, spec) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `column = role`, got `{line}`")))?;
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(err("empty column name".into()));
            }
            if columns.iter().any(|c| c.name == name) {
                return Err(err(format!("column `{name}` declared twice")));
            }
            let mut parts = spec.trim().splitn(3, ':');
            let role = match parts.next().unwrap_or("").trim() {
                "group" => Role::Group,
                "outcome" => Role::Outcome,
                "weight" => Role::Weight,
                "covariate" => Role::Covariate,
                "ignore" | "cluster" => Role::Ignore,
                other => return Err(err(format!("unknown role `{other}`"))),
            };
            let kind = match (role, parts.next().map(str::trim)) {
                (Role::Covariate, Some("continuous")) => ColumnType::Continuous,
                (Role::Covariate, Some("categorical")) => {
                    let levels: Vec<String> = parts
                        .next()
                        .unwrap_or("")
                        .split('|')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect();
                    if levels.is_empty() {
                        return Err(err(format!("categorical `{name}` declares no levels")));
                    }
                    let mut seen = levels.clone();
                    seen.sort();
                    seen.dedup();
                    if seen.len() != levels.len() {
                        return Err(err(format!("categorical `{name}` repeats a level")));
                    }
                    ColumnType::Categorical(levels)
                }
                (Role::Covariate, other) => {
                    return Err(err(format!(
                        "covariate `{name}` needs type continuous or categorical, got {other:?}"
                    )))
                }
                (_, _) => ColumnType::Continuous,
            };
            columns.push(ColumnSchema { name, role, kind });
        }
        let count = |r: Role| columns.iter().filter(|c| c.role == r).count();
        if count(Role::Group) != 1 {
            return Err(Error::Schema("exactly one group column required".into()));
        }
        if count(Role::Outcome) != 1 {
            return Err(Error::Schema("exactly one outcome column required".into()));
        }
        if count(Role::Weight) > 1 {
            return Err(Error::Schema("at most one weight column allowed".into()));
        }
        Ok(Schema { columns })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Schema> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schema::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.columns {
            let role = match c.role {
                Role::Group => "group",
                Role::Outcome => "outcome",
                Role::Weight => "weight",
                Role::Covariate => "covariate",
                Role::Ignore => "ignore",
            };
            out.push_str(&c.name);
            out.push_str(" = ");
            out.push_str(role);
            if c.role == Role::Covariate {
                match &c.kind {
                    ColumnType::Continuous => out.push_str(":continuous"),
                    ColumnType::Categorical(levels) => {
                        out.push_str(":categorical:");
                        out.push_str(&levels.join("|"));
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    fn with_role(&self, role: Role) -> Option<&ColumnSchema> {
        self.columns.iter().find(|c| c.role == role)
    }
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Covariate {
    Continuous(Vec<f64>),
    Categorical { levels: Vec<String>, codes: Vec<u32> },
}

impl Covariate {
    pub fn len(&self) -> usize {
        match self {
            Covariate::Continuous(v) => v.len(),
            Covariate::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Covariate {
        match self {
            Covariate::Continuous(v) => Covariate::Continuous(rows.iter().map(|&i| v[i]).collect()),
            Covariate::Categorical { levels, codes } => Covariate::Categorical {
                levels: levels.clone(),
                codes: rows.iter().map(|&i| codes[i]).collect(),
            },
        }
    }

    fn render(&self, i: usize) -> String {
        match self {
            Covariate::Continuous(v) => format!("{}", v[i]),
            Covariate::Categorical { levels, codes } => levels[codes[i] as usize].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateColumn {
    pub name: String,
    pub values: Covariate,
}

/// Immutable columnar table: group indicator, outcome, sampling weights and
/// named covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    group_name: String,
    outcome_name: String,
    weight_name: Option<String>,
    group: Vec<u8>,
    outcome: Vec<f64>,
    weight: Vec<f64>,
    covariates: Vec<CovariateColumn>,
}

impl Dataset {
    /// Builds a dataset and checks the row-level invariants: aligned lengths,
    /// binary group, finite outcome, strictly positive weights and
    /// categorical codes inside their level sets.
    pub fn new(
        group: Vec<u8>,
        outcome: Vec<f64>,
        weight: Option<Vec<f64>>,
        covariates: Vec<CovariateColumn>,
    ) -> Result<Dataset> {
        let n = group.len();
        let has_weight = weight.is_some();
        let weight = weight.unwrap_or_else(|| vec![1.0; n]);
        if outcome.len() != n || weight.len() != n {
            return Err(Error::InvalidData("group, outcome and weight lengths differ".into()));
        }
        for c in &covariates {
            if c.values.len() != n {
                return Err(Error::InvalidData(format!("covariate `{}` has wrong length", c.name)));
            }
            if let Covariate::Categorical { levels, codes } = &c.values {
                if let Some(bad) = codes.iter().find(|&&k| k as usize >= levels.len()) {
                    return Err(Error::InvalidData(format!(
                        "covariate `{}` has undeclared level code {bad}",
                        c.name
                    )));
                }
            }
        }
        let mut names: Vec<&str> = covariates.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidData("duplicate covariate names".into()));
        }
        if let Some(i) = group.iter().position(|&g| g > 1) {
            return Err(Error::InvalidData(format!("non-binary group value at row {}", i + 1)));
        }
        if let Some(i) = weight.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidData(format!("non-positive weight at row {}", i + 1)));
        }
        if let Some(i) = outcome.iter().position(|y| !y.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite outcome at row {}", i + 1)));
        }
        Ok(Dataset {
            group_name: "group".into(),
            outcome_name: "outcome".into(),
            weight_name: has_weight.then(|| "weight".into()),
            group,
            outcome,
            weight,
            covariates,
        })
    }

    /// Overrides the column names used when the dataset is written back out.
    pub fn with_names(mut self, group: &str, outcome: &str, weight: Option<&str>) -> Dataset {
        self.group_name = group.into();
        self.outcome_name = outcome.into();
        self.weight_name = weight.map(Into::into);
        self
    }

    pub fn n_rows(&self) -> usize {
        self.group.len()
    }

    pub fn group(&self) -> &[u8] {
        &self.group
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn covariates(&self) -> &[CovariateColumn] {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name).map(|c| &c.values)
    }

    pub fn group_f64(&self) -> Vec<f64> {
        self.group.iter().map(|&g| g as f64).collect()
    }

    pub fn rows_in_group(&self, g: u8) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.group[i] == g).collect()
    }

    /// Weight sums of the reference (index 0) and focal (index 1) group.
    pub fn group_weight_sums(&self) -> [f64; 2] {
        let mut s = [0.0; 2];
        for (g, w) in self.group.iter().zip(&self.weight) {
            s[*g as usize] += w;
        }
        s
    }

    /// Fails unless both groups carry positive weight.
    pub fn require_both_groups(&self) -> Result<()> {
        let s = self.group_weight_sums();
        if s[0] > 0.0 && s[1] > 0.0 {
            Ok(())
        } else {
            Err(Error::Degenerate("dataset must contain both groups".into()))
        }
    }

    /// Weighted group mean of the outcome.
    pub fn group_mean(&self, g: u8) -> f64 {
        let (mut s, mut sw) = (0.0, 0.0);
        for i in 0..self.n_rows() {
            if self.group[i] == g {
                s += self.weight[i] * self.outcome[i];
                sw += self.weight[i];
            }
        }
        s / sw
    }

    /// Raw gap: weighted mean outcome of the focal group minus that of the
    /// reference group.
    pub fn raw_gap(&self) -> f64 {
        self.group_mean(1) - self.group_mean(0)
    }

    /// Rows selected (and possibly repeated) by index.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            group_name: self.group_name.clone(),
            outcome_name: self.outcome_name.clone(),
            weight_name: self.weight_name.clone(),
            group: rows.iter().map(|&i| self.group[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            weight: rows.iter().map(|&i| self.weight[i]).collect(),
            covariates: self
                .covariates
                .iter()
                .map(|c| CovariateColumn {
                    name: c.name.clone(),
                    values: c.values.select(rows),
                })
                .collect(),
        }
    }

    /// Copy with every weight multiplied by `factor`.
    pub fn scale_weights(&self, factor: f64) -> Dataset {
        let mut d = self.clone();
        d.weight.iter_mut().for_each(|w| *w *= factor);
        d
    }

    pub fn schema(&self) -> Schema {
        let mut columns = vec![
            ColumnSchema {
                name: self.group_name.clone(),
                role: Role::Group,
                kind: ColumnType::Continuous,
            },
            ColumnSchema {
                name: self.outcome_name.clone(),
                role: Role::Outcome,
                kind: ColumnType::Continuous,
            },
        ];
        if let Some(w) = &self.weight_name {
            columns.push(ColumnSchema {
                name: w.clone(),
                role: Role::Weight,
                kind: ColumnType::Continuous,
            });
        }
        for c in &self.covariates {
            columns.push(ColumnSchema {
                name: c.name.clone(),
                role: Role::Covariate,
                kind: match &c.values {
                    Covariate::Continuous(_) => ColumnType::Continuous,
                    Covariate::Categorical { levels, .. } => ColumnType::Categorical(levels.clone()),
                },
            });
        }
        Schema { columns }
    }

    /// Writes the data as CSV with a header row, in schema column order.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut wr = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let mut header = vec![self.group_name.clone(), self.outcome_name.clone()];
        if let Some(w) = &self.weight_name {
            header.push(w.clone());
        }
        header.extend(self.covariates.iter().map(|c| c.name.clone()));
        wr.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            rec.clear();
            rec.push(self.group[i].to_string());
            rec.push(format!("{}", self.outcome[i]));
            if self.weight_name.is_some() {
                rec.push(format!("{}", self.weight[i]));
            }
            rec.extend(self.covariates.iter().map(|c| c.values.render(i)));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Reads a CSV file (UTF-8, header row mandatory) according to `schema`.
///
/// Every row is checked; all row-level violations are collected and returned
/// together as [`Error::InvalidRows`] with 1-based data-row numbers.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema)
}

pub fn read_dataset<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let position = |name: &str| header.iter().position(|h| h == name);

    let group_col = schema.with_role(Role::Group).expect("schema has a group column");
    let outcome_col = schema.with_role(Role::Outcome).expect("schema has an outcome column");
    let weight_col = schema.with_role(Role::Weight);

    let gi = position(&group_col.name).ok_or_else(|| Error::MissingColumn(group_col.name.clone()))?;
    let yi = position(&outcome_col.name).ok_or_else(|| Error::MissingColumn(outcome_col.name.clone()))?;
    let wi = match weight_col {
        Some(c) => Some(position(&c.name).ok_or_else(|| Error::MissingColumn(c.name.clone()))?),
        None => None,
    };
    let cov_schema: Vec<&ColumnSchema> =
        schema.columns.iter().filter(|c| c.role == Role::Covariate).collect();
    let mut cov_pos = Vec::with_capacity(cov_schema.len());
    for c in &cov_schema {
        cov_pos.push(position(&c.name).ok_or_else(|| Error::MissingColumn(c.name.clone()))?);
    }
    for c in schema.columns.iter().filter(|c| c.role == Role::Ignore) {
        position(&c.name).ok_or_else(|| Error::MissingColumn(c.name.clone()))?;
    }
    let level_maps: Vec<Option<HashMap<&str, u32>>> = cov_schema
        .iter()
        .map(|c| match &c.kind {
            ColumnType::Categorical(levels) => {
                Some(levels.iter().enumerate().map(|(k, l)| (l.as_str(), k as u32)).collect())
            }
            ColumnType::Continuous => None,
        })
        .collect();

    let mut group = Vec::new();
    let mut outcome = Vec::new();
    let mut weight = Vec::new();
    let mut cont: Vec<Vec<f64>> = vec![Vec::new(); cov_schema.len()];
    let mut codes: Vec<Vec<u32>> = vec![Vec::new(); cov_schema.len()];
    let mut errors: Vec<RowError> = Vec::new();

    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        let mut bad = |message: String| errors.push(RowError { row, message });
        let field = |i: usize| rec.get(i).unwrap_or("");
        let number = |i: usize, what: &str| -> std::result::Result<f64, String> {
            let s = field(i);
            if s.is_empty() {
                return Err(format!("missing value in `{what}`"));
            }
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{what}` value `{s}` is not a finite number"))
        };

        match field(gi) {
            "0" | "0.0" => group.push(0),
            "1" | "1.0" => group.push(1),
            other => {
                bad(format!("non-binary group value `{other}` in `{}`", group_col.name));
                group.push(0);
            }
        }
        match number(yi, &outcome_col.name) {
            Ok(v) => outcome.push(v),
            Err(m) => {
                bad(m);
                outcome.push(0.0);
            }
        }
        if let Some(wi) = wi {
            let name = &weight_col.unwrap().name;
            match number(wi, name) {
                Ok(v) if v > 0.0 => weight.push(v),
                Ok(v) => {
                    bad(format!("non-positive weight {v} in `{name}`"));
                    weight.push(1.0);
                }
                Err(m) => {
                    bad(m);
                    weight.push(1.0);
                }
            }
        }
        for (k, c) in cov_schema.iter().enumerate() {
            match &level_maps[k] {
                None => match number(cov_pos[k], &c.name) {
                    Ok(v) => cont[k].push(v),
                    Err(m) => {
                        bad(m);
                        cont[k].push(0.0);
                    }
                },
                Some(map) => {
                    let s = field(cov_pos[k]);
                    match map.get(s) {
                        Some(&code) => codes[k].push(code),
                        None => {
                            if s.is_empty() {
                                bad(format!("missing value in `{}`", c.name));
                            } else {
                                bad(format!("undeclared level `{s}` in column `{}`", c.name));
                            }
                            codes[k].push(0);
                        }
                    }
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(Error::InvalidRows(errors));
    }
    let covariates = cov_schema
        .iter()
        .enumerate()
        .map(|(k, c)| CovariateColumn {
            name: c.name.clone(),
            values: match &c.kind {
                ColumnType::Continuous => Covariate::Continuous(std::mem::take(&mut cont[k])),
                ColumnType::Categorical(levels) => Covariate::Categorical {
                    levels: levels.clone(),
                    codes: std::mem::take(&mut codes[k]),
                },
            },
        })
        .collect();
    let data = Dataset::new(group, outcome, wi.map(|_| weight), covariates)?;
    Ok(data.with_names(
        &group_col.name,
        &outcome_col.name,
        weight_col.map(|c| c.name.as_str()),
    ))
}

// ---------------------------------------------------------------------------
// Coarsening and variable blocks
// ---------------------------------------------------------------------------

/// Maps a covariate onto a small set of coarse levels, used for cells and
/// for interaction terms.
#[derive(Debug, Clone, PartialEq)]
pub enum Coarsening {
    /// Continuous cut-points; bin `k` holds `cuts[k-1] <= x < cuts[k]`.
    Cuts(Vec<f64>),
    /// Fine level -> coarse label. Unmapped levels keep their own label.
    Levels(Vec<(String, String)>),
}

impl Coarsening {
    /// Decades: `<20, 20-29, ..., 50-59, 60+`.
    pub fn age_decades() -> Coarsening {
        Coarsening::Cuts(vec![20.0, 30.0, 40.0, 50.0, 60.0])
    }

    /// Tenure bands `<2, 2-4, 5-7, 8-15, 16+` (years).
    pub fn tenure_bands() -> Coarsening {
        Coarsening::Cuts(vec![2.0, 5.0, 8.0, 16.0])
    }
}

/// Coarse level codes and labels of one covariate.
pub fn coarse_codes(
    name: &str,
    column: &Covariate,
    coarsening: Option<&Coarsening>,
) -> Result<(Vec<u32>, Vec<String>)> {
    match (column, coarsening) {
        (Covariate::Categorical { levels, codes }, None) => Ok((codes.clone(), levels.clone())),
        (Covariate::Categorical { levels, codes }, Some(Coarsening::Levels(map))) => {
            let mut labels: Vec<String> = Vec::new();
            let mut remap = Vec::with_capacity(levels.len());
            for l in levels {
                let target = map
                    .iter()
                    .find(|(fine, _)| fine == l)
                    .map(|(_, c)| c.clone())
                    .unwrap_or_else(|| l.clone());
                let k = match labels.iter().position(|x| *x == target) {
                    Some(k) => k,
                    None => {
                        labels.push(target);
                        labels.len() - 1
                    }
                };
                remap.push(k as u32);
            }
            Ok((codes.iter().map(|&c| remap[c as usize]).collect(), labels))
        }
        (Covariate::Continuous(v), Some(Coarsening::Cuts(cuts))) => {
            let mut sorted = cuts.clone();
            sorted.sort_by(f64::total_cmp);
            let mut labels = Vec::with_capacity(sorted.len() + 1);
            for k in 0..=sorted.len() {
                let lo = if k == 0 { "-inf".to_string() } else { format!("{}", sorted[k - 1]) };
                let hi = if k == sorted.len() { "inf".to_string() } else { format!("{}", sorted[k]) };
                labels.push(format!("[{lo},{hi})"));
            }
            let codes = v.iter().map(|x| sorted.partition_point(|c| *c <= *x) as u32).collect();
            Ok((codes, labels))
        }
        (Covariate::Categorical { .. }, Some(Coarsening::Cuts(_))) => Err(Error::InvalidArgument(
            format!("cut-points given for categorical column `{name}`"),
        )),
        (Covariate::Continuous(_), Some(Coarsening::Levels(_))) => Err(Error::InvalidArgument(
            format!("level map given for continuous column `{name}`"),
        )),
        (Covariate::Continuous(_), None) => Err(Error::InvalidArgument(format!(
            "continuous column `{name}` needs cut-points to form cells"
        ))),
    }
}

/// Named group of covariates (e.g. all occupation information) with
/// optional per-column coarsening.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableBlock {
    pub name: String,
    pub columns: Vec<String>,
    pub coarsening: Vec<(String, Coarsening)>,
}

impl VariableBlock {
    pub fn new(name: &str, columns: &[&str]) -> VariableBlock {
        VariableBlock {
            name: name.into(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            coarsening: Vec::new(),
        }
    }

    pub fn coarsen(mut self, column: &str, c: Coarsening) -> VariableBlock {
        self.coarsening.retain(|(n, _)| n != column);
        self.coarsening.push((column.into(), c));
        self
    }

    pub fn coarsening_for(&self, column: &str) -> Option<&Coarsening> {
        self.coarsening.iter().find(|(n, _)| n == column).map(|(_, c)| c)
    }
}

/// Checks that no column appears in two blocks and that every column exists.
pub fn validate_blocks(data: &Dataset, blocks: &[VariableBlock]) -> Result<()> {
    let mut seen: Vec<&str> = Vec::new();
    for b in blocks {
        if b.columns.is_empty() {
            return Err(Error::InvalidArgument(format!("block `{}` has no columns", b.name)));
        }
        for c in &b.columns {
            if data.covariate(c).is_none() {
                return Err(Error::UnknownColumn(c.clone()));
            }
            if seen.contains(&c.as_str()) {
                return Err(Error::InvalidArgument(format!("column `{c}` appears in two blocks")));
            }
            seen.push(c);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Model specifications
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    Baseline,
    Full,
    Ml,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::Full => "full",
            Regime::Ml => "ml",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Some(Regime::Baseline),
            "full" => Some(Regime::Full),
            "ml" => Some(Regime::Ml),
            _ => None,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// Raw continuous column, or dummies for a categorical one.
    Main(String),
    /// K-1 dummies; the first declared level is the reference.
    Dummies(String),
    /// K-1 dummies of a coarsened covariate.
    Coarsened(String, Coarsening),
    /// Weighted-standardized powers 1..=degree.
    Polynomial(String, u32),
    /// Bin dummies of a continuous column (first bin is the reference).
    Binning(String, Vec<f64>),
    /// All pairwise products of the two expansions.
    Interaction(Box<Term>, Box<Term>),
}

impl Term {
    pub fn main(c: &str) -> Term {
        Term::Main(c.into())
    }

    pub fn dummies(c: &str) -> Term {
        Term::Dummies(c.into())
    }

    pub fn poly(c: &str, degree: u32) -> Term {
        Term::Polynomial(c.into(), degree)
    }

    pub fn bins(c: &str, cuts: &[f64]) -> Term {
        Term::Binning(c.into(), cuts.to_vec())
    }

    pub fn interact(a: Term, b: Term) -> Term {
        Term::Interaction(Box::new(a), Box::new(b))
    }

    /// Covariates the term reads.
    pub fn columns(&self) -> Vec<&str> {
        match self {
            Term::Main(c) | Term::Dummies(c) | Term::Coarsened(c, _) => vec![c],
            Term::Polynomial(c, _) | Term::Binning(c, _) => vec![c],
            Term::Interaction(a, b) => {
                let mut v = a.columns();
                for c in b.columns() {
                    if !v.contains(&c) {
                        v.push(c);
                    }
                }
                v
            }
        }
    }

    /// Parses the term syntax used in run configurations:
    /// `main(c)`, `dummies(c)`, `poly(c,d)`, `bins(c,cut1,cut2,...)`,
    /// `coarse(c,A>X|B>X)`, `coarse(c,cut1,cut2)` and `inter(t1,t2)`.
    pub fn parse(s: &str) -> Result<Term> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("cannot parse term `{s}`"));
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let head = s[..open].trim();
        let args = split_top_level(&s[open + 1..s.len() - 1], ',');
        let arg = |k: usize| args.get(k).map(|a| a.trim()).filter(|a| !a.is_empty()).ok_or_else(bad);
        let numbers = |from: usize| -> Result<Vec<f64>> {
            args[from..].iter().map(|a| a.trim().parse::<f64>().map_err(|_| bad())).collect()
        };
        match head {
            "main" if args.len() == 1 => Ok(Term::Main(arg(0)?.into())),
            "dummies" if args.len() == 1 => Ok(Term::Dummies(arg(0)?.into())),
            "poly" if args.len() == 2 => {
                let d = arg(1)?.parse::<u32>().map_err(|_| bad())?;
                Ok(Term::Polynomial(arg(0)?.into(), d))
            }
            "bins" if args.len() >= 2 => Ok(Term::Binning(arg(0)?.into(), numbers(1)?)),
            "coarse" if args.len() >= 2 => {
                let col = arg(0)?.to_string();
                if args.len() == 2 && arg(1)?.contains('>') {
                    Ok(Term::Coarsened(col, parse_level_map(arg(1)?)?))
                } else {
                    Ok(Term::Coarsened(col, Coarsening::Cuts(numbers(1)?)))
                }
            }
            "inter" if args.len() == 2 => Ok(Term::interact(Term::parse(arg(0)?)?, Term::parse(arg(1)?)?)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        match self {
            Term::Main(c) => write!(f, "main({c})"),
            Term::Dummies(c) => write!(f, "dummies({c})"),
            Term::Polynomial(c, d) => write!(f, "poly({c},{d})"),
            Term::Binning(c, cuts) => write!(f, "bins({c},{})", join(cuts)),
            Term::Coarsened(c, Coarsening::Cuts(cuts)) => write!(f, "coarse({c},{})", join(cuts)),
            Term::Coarsened(c, Coarsening::Levels(map)) => {
                let m: Vec<String> = map.iter().map(|(a, b)| format!("{a}>{b}")).collect();
                write!(f, "coarse({c},{})", m.join("|"))
            }
            Term::Interaction(a, b) => write!(f, "inter({a},{b})"),
        }
    }
}

/// `A>X|B>X|C>Y`
pub fn parse_level_map(s: &str) -> Result<Coarsening> {
    let mut map = Vec::new();
    for pair in s.split('|') {
        let (a, b) = pair
            .split_once('>')
            .ok_or_else(|| Error::InvalidArgument(format!("bad level map entry `{pair}`")))?;
        map.push((a.trim().to_string(), b.trim().to_string()));
    }
    Ok(Coarsening::Levels(map))
}

/// Splits on `sep` outside parentheses.
pub fn split_top_level(s: &str, sep: char) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if ch == sep && depth == 0 {
            out.push(std::mem::take(&mut cur));
        } else {
            cur.push(ch);
        }
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push(cur);
    }
    out
}

/// Declarative regressor list for one flexibility regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub regime: Regime,
    pub terms: Vec<Term>,
}

impl ModelSpec {
    pub fn baseline(terms: Vec<Term>) -> ModelSpec {
        ModelSpec {
            regime: Regime::Baseline,
            terms,
        }
    }

    /// Full specification: every baseline term followed by the extra terms
    /// not already present.
    pub fn full(baseline: &ModelSpec, extra: Vec<Term>) -> ModelSpec {
        let mut terms = baseline.terms.clone();
        for t in extra {
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
        ModelSpec {
            regime: Regime::Full,
            terms,
        }
    }

    /// The ML regime uses the full term list as its candidate set.
    pub fn ml(full: &ModelSpec) -> ModelSpec {
        ModelSpec {
            regime: Regime::Ml,
            terms: full.terms.clone(),
        }
    }

    pub fn without_columns(&self, columns: &[String]) -> ModelSpec {
        ModelSpec {
            regime: self.regime,
            terms: self
                .terms
                .iter()
                .filter(|t| !t.columns().iter().any(|c| columns.iter().any(|x| x == c)))
                .cloned()
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Design matrices
// ---------------------------------------------------------------------------

/// Column-major real matrix with named columns (no intercept column).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
    dropped: Vec<String>,
}

impl DesignMatrix {
    pub fn new(n_rows: usize, names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<DesignMatrix> {
        if names.len() != columns.len() || columns.iter().any(|c| c.len() != n_rows) {
            return Err(Error::InvalidArgument("design column shapes disagree".into()));
        }
        Ok(DesignMatrix {
            names,
            columns,
            n_rows,
            dropped: Vec::new(),
        })
    }

    pub fn empty(n_rows: usize) -> DesignMatrix {
        DesignMatrix {
            names: Vec::new(),
            columns: Vec::new(),
            n_rows,
            dropped: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Columns removed as constant or duplicate during construction.
    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|j| self.columns[j].as_slice())
    }

    pub fn column_refs(&self) -> Vec<&[f64]> {
        self.columns.iter().map(|c| c.as_slice()).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
            n_rows: rows.len(),
            dropped: self.dropped.clone(),
        }
    }

    pub fn select_columns(&self, names: &[String]) -> Result<DesignMatrix> {
        let mut cols = Vec::with_capacity(names.len());
        for n in names {
            cols.push(self.column(n).ok_or_else(|| Error::UnknownColumn(n.clone()))?.to_vec());
        }
        DesignMatrix::new(self.n_rows, names.to_vec(), cols)
    }

    /// Copy with `column` inserted in front.
    pub fn with_leading(&self, name: &str, column: Vec<f64>) -> DesignMatrix {
        let mut d = self.clone();
        d.names.insert(0, name.into());
        d.columns.insert(0, column);
        d
    }

    /// Copy with extra columns appended at the end.
    pub fn with_appended(&self, names: Vec<String>, columns: Vec<Vec<f64>>) -> DesignMatrix {
        let mut d = self.clone();
        d.names.extend(names);
        d.columns.extend(columns);
        d
    }
}

type Expansion = Vec<(String, Vec<f64>)>;

fn dummy_columns(name: &str, codes: &[u32], labels: &[String], sep: &str) -> Expansion {
    (1..labels.len())
        .map(|k| {
            let col = codes.iter().map(|&c| if c as usize == k { 1.0 } else { 0.0 }).collect();
            (format!("{name}{sep}{}", labels[k]), col)
        })
        .collect()
}

fn expand(term: &Term, data: &Dataset) -> Result<Expansion> {
    let get = |c: &str| data.covariate(c).ok_or_else(|| Error::UnknownColumn(c.to_string()));
    match term {
        Term::Main(c) => match get(c)? {
            Covariate::Continuous(v) => Ok(vec![(c.clone(), v.clone())]),
            Covariate::Categorical { levels, codes } => Ok(dummy_columns(c, codes, levels, "=")),
        },
        Term::Dummies(c) => match get(c)? {
            Covariate::Categorical { levels, codes } => Ok(dummy_columns(c, codes, levels, "=")),
            Covariate::Continuous(_) => Err(Error::InvalidArgument(format!(
                "dummy expansion of continuous column `{c}`; use a binning term"
            ))),
        },
        Term::Coarsened(c, coarsening) => {
            let (codes, labels) = coarse_codes(c, get(c)?, Some(coarsening))?;
            Ok(dummy_columns(c, &codes, &labels, "~"))
        }
        Term::Binning(c, cuts) => {
            let (codes, labels) = coarse_codes(c, get(c)?, Some(&Coarsening::Cuts(cuts.clone())))?;
            Ok(dummy_columns(c, &codes, &labels, ""))
        }
        Term::Polynomial(c, degree) => {
            if *degree < 1 {
                return Err(Error::InvalidArgument(format!("polynomial degree of `{c}` must be >= 1")));
            }
            let v = match get(c)? {
                Covariate::Continuous(v) => v,
                Covariate::Categorical { .. } => {
                    return Err(Error::InvalidArgument(format!("polynomial of categorical column `{c}`")))
                }
            };
            let (m, var) = weighted_moments(v, data.weight());
            let sd = var.sqrt();
            let z: Vec<f64> = if sd > 0.0 {
                v.iter().map(|x| (x - m) / sd).collect()
            } else {
                vec![0.0; v.len()]
            };
            Ok((1..=*degree)
                .map(|d| (format!("{c}^{d}"), z.iter().map(|x| x.powi(d as i32)).collect()))
                .collect())
        }
        Term::Interaction(a, b) => {
            let ea = expand(a, data)?;
            let eb = expand(b, data)?;
            let mut out = Vec::with_capacity(ea.len() * eb.len());
            for (na, ca) in &ea {
                for (nb, cb) in &eb {
                    let col = ca.iter().zip(cb).map(|(x, y)| x * y).collect();
                    out.push((format!("{na}:{nb}"), col));
                }
            }
            Ok(out)
        }
    }
}

fn column_hash(c: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    for v in c {
        // +0.0 and -0.0 compare equal
        (if *v == 0.0 { 0u64 } else { v.to_bits() }).hash(&mut h);
    }
    h.finish()
}

/// Expands `spec` over `data`.
///
/// Categoricals become K-1 dummies (reference = first declared level),
/// polynomials are powers of the weighted-standardized column, interactions
/// are elementwise products of the expanded factors. Constant columns and
/// exact duplicates of an earlier column are dropped (logged, and listed in
/// [`DesignMatrix::dropped`]). A spec without terms gives an empty design;
/// a non-empty spec whose columns are all dropped is an error.
pub fn build_design(data: &Dataset, spec: &ModelSpec) -> Result<DesignMatrix> {
    let n = data.n_rows();
    let mut names: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut dropped: Vec<String> = Vec::new();
    let mut by_hash: HashMap<u64, Vec<usize>> = HashMap::new();
    for term in &spec.terms {
        for (name, col) in expand(term, data)? {
            let first = col.first().copied().unwrap_or(0.0);
            if col.iter().all(|v| *v == first) {
                log::info!("design: dropping constant column `{name}`");
                dropped.push(name);
                continue;
            }
            let h = column_hash(&col);
            let bucket = by_hash.entry(h).or_default();
            if let Some(&j) = bucket.iter().find(|&&j| columns[j] == col) {
                log::info!("design: dropping `{name}` (duplicate of `{}`)", names[j]);
                dropped.push(name);
                continue;
            }
            if names.contains(&name) {
                return Err(Error::InvalidArgument(format!("design column `{name}` generated twice")));
            }
            bucket.push(columns.len());
            names.push(name);
            columns.push(col);
        }
    }
    if columns.is_empty() && !spec.terms.is_empty() {
        return Err(Error::EmptyDesign);
    }
    Ok(DesignMatrix {
        names,
        columns,
        n_rows: n,
        dropped,
    })
}

// ---------------------------------------------------------------------------
// Balance
// ---------------------------------------------------------------------------

/// Standardized difference `100·|m1 − m0| / sqrt((s1² + s0²)/2)` with
/// weighted within-group means and variances. Categorical columns report one
/// value per level indicator (`column=level`).
pub fn standardized_difference(data: &Dataset, column: &str) -> Result<Vec<(String, f64)>> {
    let cov = data.covariate(column).ok_or_else(|| Error::UnknownColumn(column.into()))?;
    let indicators: Vec<(String, Vec<f64>)> = match cov {
        Covariate::Continuous(v) => vec![(column.to_string(), v.clone())],
        Covariate::Categorical { levels, codes } => levels
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let col = codes.iter().map(|&c| if c as usize == k { 1.0 } else { 0.0 }).collect();
                (format!("{column}={l}"), col)
            })
            .collect(),
    };
    let rows1 = data.rows_in_group(1);
    let rows0 = data.rows_in_group(0);
    let w = data.weight();
    let moments = |x: &[f64], rows: &[usize]| {
        let xs: Vec<f64> = rows.iter().map(|&i| x[i]).collect();
        let ws: Vec<f64> = rows.iter().map(|&i| w[i]).collect();
        weighted_moments(&xs, &ws)
    };
    let mut out = Vec::with_capacity(indicators.len());
    for (name, x) in indicators {
        let (m1, v1) = moments(&x, &rows1);
        let (m0, v0) = moments(&x, &rows0);
        let scale = ((v1 + v0) / 2.0).sqrt();
        let d = if scale > 0.0 {
            100.0 * (m1 - m0).abs() / scale
        } else if m1 == m0 {
            0.0
        } else {
            return Err(Error::Degenerate(format!("degenerate scale for `{name}`")));
        };
        out.push((name, d));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(name: &str, levels: &[&str], codes: &[u32]) -> CovariateColumn {
        CovariateColumn {
            name: name.into(),
            values: Covariate::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
                codes: codes.to_vec(),
            },
        }
    }

    fn cont(name: &str, v: &[f64]) -> CovariateColumn {
        CovariateColumn {
            name: name.into(),
            values: Covariate::Continuous(v.to_vec()),
        }
    }

    const SCHEMA: &str = "g = group\ny = outcome\nw = weight\nedu = covariate:categorical:A|B\n";

    #[test]
    fn loads_three_rows() {
        let csv = "g,y,w,edu\n1,2.5,1.0,A\n0,3.0,2.0,B\n1,2.0,1.5,B\n";
        let d = read_dataset(csv.as_bytes(), &Schema::parse(SCHEMA).unwrap()).unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.group(), &[1, 0, 1]);
        assert_eq!(d.weight(), &[1.0, 2.0, 1.5]);
    }

    #[test]
    fn zero_weight_names_row() {
        let csv = "g,y,w,edu\n1,2.5,1.0,A\n0,3.0,0,B\n";
        let err = read_dataset(csv.as_bytes(), &Schema::parse(SCHEMA).unwrap()).unwrap_err();
        match err {
            Error::InvalidRows(rows) => {
                assert_eq!(rows.len(), 1);
                assert_eq!(rows[0].row, 2);
                assert!(rows[0].message.contains("weight"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn undeclared_level_names_column_and_level() {
        let csv = "g,y,w,edu\n1,2.5,1.0,Z\n";
        let err = read_dataset(csv.as_bytes(), &Schema::parse(SCHEMA).unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("edu") && msg.contains("`Z`"), "{msg}");
    }

    #[test]
    fn missing_column_and_bad_group() {
        let schema = Schema::parse(SCHEMA).unwrap();
        let err = read_dataset("g,y,w\n1,2,1\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "edu"));
        let err = read_dataset("g,y,w,edu\n2,2,1,A\n".as_bytes(), &schema).unwrap_err();
        assert!(err.to_string().contains("non-binary"));
    }

    #[test]
    fn weight_column_is_optional() {
        let schema = Schema::parse("g = group\ny = outcome\n").unwrap();
        let d = read_dataset("g,y\n1,1\n0,2\n".as_bytes(), &schema).unwrap();
        assert_eq!(d.weight(), &[1.0, 1.0]);
        assert_eq!(d.raw_gap(), -1.0);
    }

    #[test]
    fn schema_round_trips() {
        let s = Schema::parse(SCHEMA).unwrap();
        assert_eq!(Schema::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn dummy_expansion_drops_reference() {
        let d = Dataset::new(vec![0, 1, 0], vec![1.0; 3], None, vec![cat("e", &["a", "b", "c"], &[0, 1, 2])]).unwrap();
        let x = build_design(&d, &ModelSpec::baseline(vec![Term::dummies("e")])).unwrap();
        assert_eq!(x.names(), &["e=b".to_string(), "e=c".to_string()]);
    }

    #[test]
    fn polynomial_has_full_rank() {
        let d = Dataset::new(vec![0, 1, 0], vec![1.0; 3], None, vec![cont("age", &[20.0, 30.0, 40.0])]).unwrap();
        let x = build_design(&d, &ModelSpec::baseline(vec![Term::poly("age", 2)])).unwrap();
        assert_eq!(x.n_cols(), 2);
        // standardized: z = (-sqrt(1.5), 0, sqrt(1.5)); z^2 = (1.5, 0, 1.5)
        let z = x.columns()[0].clone();
        let z2 = x.columns()[1].clone();
        assert!((z[2] - 1.5f64.sqrt()).abs() < 1e-12);
        assert!((z2[0] - 1.5).abs() < 1e-12);
        // [1, z, z^2] has rank 3, so (z, z^2) are independent of each other and of 1
        let det = 1.0 * (z[1] * z2[2] - z2[1] * z[2]) - z[0] * (z2[2] - z2[1]) + z2[0] * (z[2] - z[1]);
        assert!(det.abs() > 1e-6);
    }

    #[test]
    fn interaction_products_enumerated_by_hand() {
        // 6 rows; edu has 3 levels, occ 4 levels.
        let edu = [0, 1, 2, 1, 2, 0];
        let occ = [0, 1, 1, 3, 2, 3];
        let d = Dataset::new(
            vec![0, 1, 0, 1, 0, 1],
            vec![1.0; 6],
            None,
            vec![cat("edu", &["e0", "e1", "e2"], &edu), cat("occ", &["o0", "o1", "o2", "o3"], &occ)],
        )
        .unwrap();
        let spec = ModelSpec::baseline(vec![Term::interact(Term::dummies("edu"), Term::dummies("occ"))]);
        let x = build_design(&d, &spec).unwrap();
        // products e{1,2} x o{1,2,3}: nonzero only where (edu,occ) co-occur:
        // (1,1) row1, (2,1) row2, (1,3) row3, (2,2) row4. (1,2) and (2,3) are all-zero.
        let expected = ["edu=e1:occ=o1", "edu=e1:occ=o3", "edu=e2:occ=o1", "edu=e2:occ=o2"];
        assert_eq!(x.names(), &expected.map(String::from));
        assert_eq!(x.dropped().len(), 2);
        assert_eq!(x.column("edu=e2:occ=o2").unwrap(), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn duplicate_columns_dropped() {
        let d = Dataset::new(vec![0, 1, 0], vec![1.0; 3], None, vec![cont("a", &[1.0, 2.0, 4.0])]).unwrap();
        let spec = ModelSpec::baseline(vec![Term::main("a"), Term::interact(Term::main("a"), Term::main("a"))]);
        let x = build_design(&d, &spec).unwrap();
        assert_eq!(x.n_cols(), 2);
        let spec = ModelSpec::baseline(vec![Term::main("a"), Term::main("a")]);
        assert!(build_design(&d, &spec).is_ok());
    }

    #[test]
    fn empty_after_dropping_is_error() {
        let d = Dataset::new(vec![0, 1], vec![1.0; 2], None, vec![cont("a", &[3.0, 3.0])]).unwrap();
        let spec = ModelSpec::baseline(vec![Term::main("a")]);
        assert!(matches!(build_design(&d, &spec), Err(Error::EmptyDesign)));
        assert!(matches!(
            build_design(&d, &ModelSpec::baseline(vec![Term::main("zz")])),
            Err(Error::UnknownColumn(_))
        ));
        assert_eq!(build_design(&d, &ModelSpec::baseline(vec![])).unwrap().n_cols(), 0);
    }

    #[test]
    fn term_syntax_round_trips() {
        for s in [
            "main(age)",
            "poly(age,7)",
            "bins(age,30,40,50)",
            "coarse(occ,a>x|b>x)",
            "inter(dummies(edu),inter(coarse(occ,a>x),bins(tenure,2,5)))",
        ] {
            let t = Term::parse(s).unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert!(Term::parse("poly(age)").is_err());
    }

    #[test]
    fn std_diff_bernoulli_table_value() {
        // full-time share .406 (focal) vs .850 (reference), Bernoulli variances
        let n1 = 1000;
        let n0 = 1000;
        let mut g = vec![1u8; n1];
        g.extend(vec![0u8; n0]);
        let mut codes: Vec<u32> = (0..n1).map(|i| (i < 406) as u32).collect();
        codes.extend((0..n0).map(|i| (i < 850) as u32));
        let d = Dataset::new(g, vec![0.0; n1 + n0], None, vec![cat("ft", &["no", "yes"], &codes)]).unwrap();
        let sd = standardized_difference(&d, "ft").unwrap();
        assert_eq!(sd[1].0, "ft=yes");
        assert!((sd[1].1 - 103.4).abs() < 0.05, "{}", sd[1].1);
    }

    #[test]
    fn std_diff_hand_and_degenerate() {
        // means 1 and 2, both variances 0.5
        let d = Dataset::new(
            vec![1, 1, 0, 0],
            vec![0.0; 4],
            None,
            vec![cont("x", &[1.0 - 0.5f64.sqrt(), 1.0 + 0.5f64.sqrt(), 2.0 - 0.5f64.sqrt(), 2.0 + 0.5f64.sqrt()])],
        )
        .unwrap();
        let v = standardized_difference(&d, "x").unwrap()[0].1;
        assert!((v - 100.0 / 0.5f64.sqrt()).abs() < 1e-9);

        let same = Dataset::new(vec![1, 0], vec![0.0; 2], None, vec![cont("x", &[1.0, 1.0])]).unwrap();
        assert_eq!(standardized_difference(&same, "x").unwrap()[0].1, 0.0);
        let apart = Dataset::new(vec![1, 0], vec![0.0; 2], None, vec![cont("x", &[1.0, 2.0])]).unwrap();
        assert!(matches!(standardized_difference(&apart, "x"), Err(Error::Degenerate(_))));
    }

    #[test]
    fn coarsening_levels_and_cuts() {
        let c = Covariate::Categorical {
            levels: vec!["a".into(), "b".into(), "c".into()],
            codes: vec![0, 1, 2, 1],
        };
        let (codes, labels) =
            coarse_codes("x", &c, Some(&parse_level_map("a>low|b>low").unwrap())).unwrap();
        assert_eq!(codes, vec![0, 0, 1, 0]);
        assert_eq!(labels, vec!["low".to_string(), "c".to_string()]);
        let t = Covariate::Continuous(vec![0.0, 2.0, 4.9, 5.0, 15.9, 16.0]);
        let (codes, _) = coarse_codes("t", &t, Some(&Coarsening::tenure_bands())).unwrap();
        assert_eq!(codes, vec![0, 1, 1, 2, 3, 4]);
        assert!(coarse_codes("t", &t, None).is_err());
    }
}
