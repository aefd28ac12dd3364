//! Published table values shipped as data files, for checking the statistics
//! code against reported numbers without retraining.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweeps::{offset_label, RowKind, SweepRow};
use crate::error::{Error, Result};
use crate::metrics::PrPoint;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn read_csv<T: for<'de> Deserialize<'de>>(name: &str) -> Result<Vec<T>> {
    let path = fixture_dir().join(name);
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(name: &str) -> Result<T> {
    let path = fixture_dir().join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Model against permutation baseline at τ = 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub metric: String,
    pub baseline: f64,
    pub model: f64,
    pub se: f64,
    pub pct_improvement: Option<f64>,
    pub p_value: Option<f64>,
}

pub fn table1() -> Result<Vec<Table1Row>> {
    read_csv("table1.csv")
}

/// Scaling over training fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub fraction: f64,
    pub auprc: f64,
    pub auprc_se: f64,
    pub auroc: f64,
    pub auroc_se: f64,
    pub p_value: f64,
    pub ratio: f64,
}

pub fn table2() -> Result<Vec<Table2Row>> {
    read_csv("table2.csv")
}

/// Operating-point snapshot. `curves` are per-seed PR curves whose selector
/// outputs average to the published seed means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table4 {
    pub lambda_per_hour: f64,
    pub target_recall: f64,
    pub fa_at_target: f64,
    pub fa_at_target_se: f64,
    pub budgets: Vec<f64>,
    pub recall_at_budget: Vec<f64>,
    pub recall_at_budget_se: Vec<f64>,
    pub fp_per_hour: f64,
    pub fp_per_hour_se: f64,
    pub n_windows: usize,
    pub n_positive: usize,
    pub window_s: f64,
    pub false_positives_per_seed: Vec<usize>,
    #[serde(skip)]
    pub curves: Vec<Vec<PrPoint>>,
}

#[derive(Deserialize)]
struct CurveRow {
    seed: u64,
    threshold: f64,
    precision: f64,
    recall: f64,
}

pub fn table4() -> Result<Table4> {
    let mut t: Table4 = read_json("table4.json")?;
    let mut by_seed: BTreeMap<u64, Vec<PrPoint>> = BTreeMap::new();
    for r in read_csv::<CurveRow>("table4_curves.csv")? {
        by_seed.entry(r.seed).or_default().push(PrPoint { threshold: r.threshold, precision: r.precision, recall: r.recall });
    }
    t.curves = by_seed.into_values().collect();
    Ok(t)
}

/// One temporal-offset cell (seed mean ± SE).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table6Cell {
    pub beta_neg_s: f64,
    pub beta_pos_s: f64,
    pub auprc: f64,
    pub auprc_se: f64,
    pub auroc: f64,
    pub auroc_se: f64,
    pub seeds: usize,
}

pub fn table6() -> Result<Vec<Table6Cell>> {
    read_csv("table6.csv")
}

/// The cells as aggregate sweep rows.
pub fn table6_rows(cells: &[Table6Cell]) -> Vec<SweepRow> {
    cells
        .iter()
        .map(|c| SweepRow {
            sweep: "offsets".into(),
            cell: offset_label(c.beta_neg_s, c.beta_pos_s),
            kind: RowKind::Mean,
            seed: None,
            n_seeds: c.seeds,
            fraction: None,
            beta_neg_s: Some(c.beta_neg_s),
            beta_pos_s: Some(c.beta_pos_s),
            keyword: None,
            keyword_length: None,
            feasible: true,
            base_rate: f64::NAN,
            auprc: c.auprc,
            auprc_se: c.auprc_se,
            auroc: c.auroc,
            auroc_se: c.auroc_se,
            accuracy: f64::NAN,
            accuracy_se: f64::NAN,
            best_f1: f64::NAN,
            best_f1_se: f64::NAN,
            ratio: f64::NAN,
            pct_delta: f64::NAN,
            pct_delta_se: f64::NAN,
            cell_p_value: f64::NAN,
            unique_hours: f64::NAN,
            n_train_windows: 0,
            n_train_positive: 0,
            note: String::new(),
        })
        .collect()
}

/// Reported summary of the offset comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetsSummary {
    pub table_mean_improvement: f64,
    pub table_relative_improvement_pct: f64,
    pub paired_mean: f64,
    pub paired_se: f64,
    pub paired_ci: (f64, f64),
    pub paired_p_upper: f64,
}

pub fn offsets_summary() -> Result<OffsetsSummary> {
    read_json("offsets_summary.json")
}
