//! Exact-cell common support, the out-of-support decomposition of the raw
//! gap, and the sequential support analysis.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::datamodel::{coarse_codes, Dataset, ModelSpec, VariableBlock, build_design};
use crate::error::{Error, Result};
use crate::estimators::exact_match_on_support;
use crate::linmod::fit_wls;

/// Ordered list of variable blocks on which exact-cell support is enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportDefinition {
    pub id: String,
    pub blocks: Vec<String>,
}

impl SupportDefinition {
    pub fn new(id: &str, blocks: &[&str]) -> SupportDefinition {
        SupportDefinition {
            id: id.into(),
            blocks: blocks.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The blocks of this definition, resolved against `available`.
    pub fn resolve<'a>(&self, available: &'a [VariableBlock]) -> Result<Vec<&'a VariableBlock>> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidArgument(format!("support `{}` lists no blocks", self.id)));
        }
        self.blocks
            .iter()
            .map(|b| {
                available
                    .iter()
                    .find(|x| &x.name == b)
                    .ok_or_else(|| Error::UnknownBlock(b.clone()))
            })
            .collect()
    }
}

/// Per-row cell ids over the coarsened columns of a set of blocks, with
/// per-cell counts and weight sums by group.
#[derive(Debug, Clone, PartialEq)]
pub struct CellIndex {
    /// Cell id of every row; ids are assigned in order of first appearance.
    pub cell: Vec<u32>,
    /// Coarse level codes of each cell, one entry per enforced column.
    pub keys: Vec<Vec<u32>>,
    pub columns: Vec<String>,
    /// `[reference, focal]` row counts per cell.
    pub counts: Vec<[usize; 2]>,
    /// `[reference, focal]` weight sums per cell.
    pub weights: Vec<[f64; 2]>,
}

impl CellIndex {
    pub fn build(data: &Dataset, blocks: &[&VariableBlock]) -> Result<CellIndex> {
        let mut columns = Vec::new();
        let mut codes: Vec<Vec<u32>> = Vec::new();
        for b in blocks {
            for c in &b.columns {
                let cov = data.covariate(c).ok_or_else(|| Error::UnknownColumn(c.clone()))?;
                let (cc, _) = coarse_codes(c, cov, b.coarsening_for(c))?;
                columns.push(c.clone());
                codes.push(cc);
            }
        }
        let n = data.n_rows();
        let mut map: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut keys: Vec<Vec<u32>> = Vec::new();
        let mut cell = Vec::with_capacity(n);
        let mut counts: Vec<[usize; 2]> = Vec::new();
        let mut weights: Vec<[f64; 2]> = Vec::new();
        let mut key = Vec::with_capacity(codes.len());
        for i in 0..n {
            key.clear();
            key.extend(codes.iter().map(|c| c[i]));
            let id = match map.get(&key) {
                Some(&id) => id,
                None => {
                    let id = keys.len() as u32;
                    map.insert(key.clone(), id);
                    keys.push(key.clone());
                    counts.push([0, 0]);
                    weights.push([0.0, 0.0]);
                    id
                }
            };
            let g = data.group()[i] as usize;
            counts[id as usize][g] += 1;
            weights[id as usize][g] += data.weight()[i];
            cell.push(id);
        }
        Ok(CellIndex {
            cell,
            keys,
            columns,
            counts,
            weights,
        })
    }

    /// Builds the cells of a support definition.
    pub fn for_definition(data: &Dataset, blocks: &[VariableBlock], def: &SupportDefinition) -> Result<CellIndex> {
        CellIndex::build(data, &def.resolve(blocks)?)
    }

    /// A single cell holding every row.
    pub fn trivial(data: &Dataset) -> CellIndex {
        CellIndex::build(data, &[]).expect("no columns to resolve")
    }

    pub fn n_cells(&self) -> usize {
        self.keys.len()
    }

    /// The cell carries positive weight of both groups.
    pub fn cell_supported(&self, c: u32) -> bool {
        let w = self.weights[c as usize];
        w[0] > 0.0 && w[1] > 0.0
    }

    pub fn on_support(&self, row: usize) -> bool {
        self.cell_supported(self.cell[row])
    }

    pub fn support_flags(&self) -> Vec<bool> {
        self.cell.iter().map(|&c| self.cell_supported(c)).collect()
    }

    pub fn on_support_rows(&self) -> Vec<usize> {
        (0..self.cell.len()).filter(|&i| self.on_support(i)).collect()
    }

    /// Weighted share of group `g` on support.
    pub fn share_on_support(&self, g: usize) -> f64 {
        let (mut on, mut all) = (0.0, 0.0);
        for (c, w) in self.weights.iter().enumerate() {
            all += w[g];
            if self.cell_supported(c as u32) {
                on += w[g];
            }
        }
        if all > 0.0 {
            on / all
        } else {
            0.0
        }
    }
}

/// The six quantities of the out-of-support decomposition
/// `Δ = Δ_{S=1} + Δˢ_{G=1} − Δˢ_{G=0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NopoDecomposition {
    pub raw_gap: f64,
    /// `None` when either group has no on-support weight.
    pub gap_on_support: Option<f64>,
    pub unexplained_on_support: Option<f64>,
    pub explained_on_support: Option<f64>,
    /// `P(S=0|G=1)·(E[Y|G=1,S=0] − E[Y|G=1,S=1])`
    pub out_of_support_focal: f64,
    /// `P(S=0|G=0)·(E[Y|G=0,S=0] − E[Y|G=0,S=1])`
    pub out_of_support_reference: f64,
    pub share_focal_on_support: f64,
    pub share_reference_on_support: f64,
}

impl NopoDecomposition {
    /// `Δ − (Δ_{S=1} + Δˢ_{G=1} − Δˢ_{G=0})`; NaN when `Δ_{S=1}` is undefined.
    pub fn identity_residual(&self) -> f64 {
        match self.gap_on_support {
            Some(d) => self.raw_gap - (d + self.out_of_support_focal - self.out_of_support_reference),
            None => f64::NAN,
        }
    }
}

pub fn nopo_decompose(data: &Dataset, cells: &CellIndex) -> Result<NopoDecomposition> {
    data.require_both_groups()?;
    let y = data.outcome();
    let w = data.weight();
    // [group][on support] weighted sums
    let mut sy = [[0.0f64; 2]; 2];
    let mut sw = [[0.0f64; 2]; 2];
    for i in 0..data.n_rows() {
        let g = data.group()[i] as usize;
        let s = cells.on_support(i) as usize;
        sy[g][s] += w[i] * y[i];
        sw[g][s] += w[i];
    }
    let mean = |g: usize, s: usize| sy[g][s] / sw[g][s];
    let raw_gap = data.raw_gap();
    let share = |g: usize| sw[g][1] / (sw[g][0] + sw[g][1]);
    let defined = sw[0][1] > 0.0 && sw[1][1] > 0.0;
    let out = |g: usize| {
        if sw[g][0] > 0.0 && sw[g][1] > 0.0 {
            (1.0 - share(g)) * (mean(g, 0) - mean(g, 1))
        } else {
            0.0
        }
    };
    let (gap_on_support, unexplained, explained) = if defined {
        let d = mean(1, 1) - mean(0, 1);
        let u = exact_match_on_support(data, cells)?.delta;
        (Some(d), Some(u), Some(d - u))
    } else {
        (None, None, None)
    };
    Ok(NopoDecomposition {
        raw_gap,
        gap_on_support,
        unexplained_on_support: unexplained,
        explained_on_support: explained,
        out_of_support_focal: out(1),
        out_of_support_reference: out(0),
        share_focal_on_support: share(1),
        share_reference_on_support: share(0),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportStep {
    pub step: usize,
    /// Block added at this step.
    pub block: String,
    /// All covariates enforced so far.
    pub variables: Vec<String>,
    pub n_cells: usize,
    pub n_focal_on_support: usize,
    pub n_reference_on_support: usize,
    pub decomposition: NopoDecomposition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportReport {
    pub steps: Vec<SupportStep>,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.10}"),
        None => "NA".into(),
    }
}

impl SupportReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "step,block,variables,n_cells,share_focal_on_support,share_reference_on_support,\
             n_focal_on_support,n_reference_on_support,raw_gap,gap_on_support,\
             unexplained_on_support,explained_on_support,out_of_support_focal,out_of_support_reference\n",
        );
        for st in &self.steps {
            let d = &st.decomposition;
            let _ = writeln!(
                s,
                "{},{},{},{},{:.10},{:.10},{},{},{:.10},{},{},{},{:.10},{:.10}",
                st.step,
                st.block,
                st.variables.join("|"),
                st.n_cells,
                d.share_focal_on_support,
                d.share_reference_on_support,
                st.n_focal_on_support,
                st.n_reference_on_support,
                d.raw_gap,
                fmt_opt(d.gap_on_support),
                fmt_opt(d.unexplained_on_support),
                fmt_opt(d.explained_on_support),
                d.out_of_support_focal,
                d.out_of_support_reference,
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| match v {
            Some(x) => format!("{:>8.2}", 100.0 * x),
            None => format!("{:>8}", "NA"),
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<4} {:<18} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "k", "block", "cells", "share", "raw", "raw|S", "unexpl", "outG1", "outG0"
        );
        for st in &self.steps {
            let d = &st.decomposition;
            let _ = writeln!(
                s,
                "{:<4} {:<18} {:>7} {:>8.3} {} {} {} {} {}",
                st.step,
                st.block,
                st.n_cells,
                d.share_focal_on_support,
                pct(Some(d.raw_gap)),
                pct(d.gap_on_support),
                pct(d.unexplained_on_support),
                pct(Some(d.out_of_support_focal)),
                pct(Some(d.out_of_support_reference)),
            );
        }
        s.push_str("gaps in log points x 100; share = weighted focal-group share on support\n");
        s
    }
}

/// Enforces support on the first `k` blocks for `k = 1..=K` and records the
/// decomposition at every step.
pub fn sequential_support_analysis(data: &Dataset, ordered: &[VariableBlock]) -> Result<SupportReport> {
    data.require_both_groups()?;
    let mut steps = Vec::with_capacity(ordered.len());
    for k in 1..=ordered.len() {
        let blocks: Vec<&VariableBlock> = ordered[..k].iter().collect();
        let cells = CellIndex::build(data, &blocks)?;
        let decomposition = nopo_decompose(data, &cells)?;
        let (mut n1, mut n0) = (0, 0);
        for (c, cnt) in cells.counts.iter().enumerate() {
            if cells.cell_supported(c as u32) {
                n0 += cnt[0];
                n1 += cnt[1];
            }
        }
        if decomposition.gap_on_support.is_none() {
            log::warn!("support step {k}: no common support, gaps undefined");
        }
        steps.push(SupportStep {
            step: k,
            block: ordered[k - 1].name.clone(),
            variables: cells.columns.clone(),
            n_cells: cells.n_cells(),
            n_focal_on_support: n1,
            n_reference_on_support: n0,
            decomposition,
        });
    }
    Ok(SupportReport { steps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockImportance {
    pub block: String,
    /// Average over datasets of adjusted R²(all blocks) − adjusted R²(without block).
    pub delta_r2: f64,
    pub per_dataset: Vec<f64>,
}

/// Orders blocks by the loss in adjusted R² of the reference-group wage
/// model when the block is left out (largest first, ties alphabetical).
/// With several datasets the per-dataset changes are averaged.
pub fn rank_variable_blocks(datasets: &[&Dataset], blocks: &[VariableBlock], spec: &ModelSpec) -> Result<Vec<BlockImportance>> {
    if datasets.is_empty() {
        return Err(Error::InvalidArgument("no dataset to rank blocks on".into()));
    }
    let mut out: Vec<BlockImportance> = blocks
        .iter()
        .map(|b| BlockImportance {
            block: b.name.clone(),
            delta_r2: 0.0,
            per_dataset: Vec::new(),
        })
        .collect();
    for data in datasets {
        let rows = data.rows_in_group(0);
        let sub = data.select_rows(&rows);
        let adj = |s: &ModelSpec| -> Result<f64> {
            let x = build_design(&sub, s)?;
            Ok(fit_wls(&x, sub.outcome(), sub.weight())?.adjusted_r2())
        };
        let full = adj(spec)?;
        for (b, imp) in blocks.iter().zip(out.iter_mut()) {
            let reduced = spec.without_columns(&b.columns);
            imp.per_dataset.push(full - adj(&reduced)?);
        }
    }
    for imp in &mut out {
        imp.delta_r2 = imp.per_dataset.iter().sum::<f64>() / imp.per_dataset.len() as f64;
    }
    // differences below ~1e-10 are treated as ties
    let key = |v: f64| (v * 1e10).round() as i64;
    out.sort_by(|a, b| key(b.delta_r2).cmp(&key(a.delta_r2)).then_with(|| a.block.cmp(&b.block)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Covariate, CovariateColumn, Term};

    fn cat(name: &str, levels: &[&str], codes: Vec<u32>) -> CovariateColumn {
        CovariateColumn {
            name: name.into(),
            values: Covariate::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
                codes,
            },
        }
    }

    /// Cell A mixed (2 women, 2 men), cell B women only.
    fn hand() -> Dataset {
        Dataset::new(
            vec![1, 1, 0, 0, 1, 1],
            vec![2.0, 2.4, 3.0, 2.6, 1.0, 1.0],
            None,
            vec![cat("c", &["A", "B"], vec![0, 0, 0, 0, 1, 1])],
        )
        .unwrap()
    }

    #[test]
    fn hand_decomposition() {
        let d = hand();
        let block = VariableBlock::new("b", &["c"]);
        let cells = CellIndex::build(&d, &[&block]).unwrap();
        let r = nopo_decompose(&d, &cells).unwrap();
        let women_on = 2.2;
        assert!((r.raw_gap - ((2.0 + 2.4 + 1.0 + 1.0) / 4.0 - 2.8)).abs() < 1e-12);
        assert!((r.out_of_support_focal - 0.5 * (1.0 - women_on)).abs() < 1e-12);
        assert_eq!(r.out_of_support_reference, 0.0);
        assert!((r.gap_on_support.unwrap() - (women_on - 2.8)).abs() < 1e-12);
        assert!((r.unexplained_on_support.unwrap() - (women_on - 2.8)).abs() < 1e-12);
        assert!(r.identity_residual().abs() < 1e-12);
        assert_eq!(r.share_focal_on_support, 0.5);
    }

    #[test]
    fn full_support_has_no_out_of_support_terms() {
        let d = Dataset::new(
            vec![1, 0, 1, 0],
            vec![1.0, 2.0, 3.0, 5.0],
            Some(vec![1.0, 2.0, 1.0, 1.0]),
            vec![cat("c", &["A", "B"], vec![0, 0, 1, 1])],
        )
        .unwrap();
        let cells = CellIndex::build(&d, &[&VariableBlock::new("b", &["c"])]).unwrap();
        let r = nopo_decompose(&d, &cells).unwrap();
        assert_eq!(r.out_of_support_focal, 0.0);
        assert_eq!(r.out_of_support_reference, 0.0);
        assert!((r.gap_on_support.unwrap() - r.raw_gap).abs() < 1e-12);
        let trivial = nopo_decompose(&d, &CellIndex::trivial(&d)).unwrap();
        assert!((trivial.unexplained_on_support.unwrap() - d.raw_gap()).abs() < 1e-12);
    }

    #[test]
    fn no_support_is_flagged() {
        let d = Dataset::new(vec![1, 0], vec![1.0, 2.0], None, vec![cat("c", &["A", "B"], vec![0, 1])]).unwrap();
        let cells = CellIndex::build(&d, &[&VariableBlock::new("b", &["c"])]).unwrap();
        let r = nopo_decompose(&d, &cells).unwrap();
        assert!(r.gap_on_support.is_none());
        assert_eq!(r.share_focal_on_support, 0.0);
        let rep = sequential_support_analysis(&d, &[VariableBlock::new("b", &["c"])]).unwrap();
        assert!(rep.to_csv().contains(",NA,"));
    }

    #[test]
    fn unknown_block_is_named() {
        let d = hand();
        let def = SupportDefinition::new("S1", &["nope"]);
        let err = CellIndex::for_definition(&d, &[VariableBlock::new("b", &["c"])], &def).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn ranking_prefers_the_predictive_block() {
        let n = 400;
        let a: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
        let b: Vec<u32> = (0..n).map(|i| ((i / 3) % 2) as u32).collect();
        let y: Vec<f64> = (0..n).map(|i| a[i] as f64 + 0.01 * ((i * 7919 % 13) as f64 - 6.0)).collect();
        let g: Vec<u8> = (0..n).map(|i| (i % 5 == 0) as u8).collect();
        let d = Dataset::new(g, y, None, vec![cat("a", &["0", "1", "2"], a), cat("b", &["0", "1"], b)]).unwrap();
        let blocks = vec![VariableBlock::new("zz_a", &["a"]), VariableBlock::new("b", &["b"])];
        let spec = ModelSpec::baseline(vec![Term::dummies("a"), Term::dummies("b")]);
        let r = rank_variable_blocks(&[&d], &blocks, &spec).unwrap();
        assert_eq!(r[0].block, "zz_a");
        assert!(r[0].delta_r2 > 0.5);
        assert!(r[1].delta_r2.abs() < 0.01);
    }
}
