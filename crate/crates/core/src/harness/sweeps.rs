use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::commands::{train_seed, write_csv, write_json};
use super::config::{KeywordSelection, RunConfig};
use super::data::{auto_keywords, configured_task, prepare_task, word_frequencies, LoadedCorpus, Provenance};
use crate::corpus::{KeywordTaskSpec, SplitAssignment};
use crate::error::{Error, Result};
use crate::metrics::{
    auprc, auroc, best_f1, linear_fit, pct_delta_over_base, permutation_pvalue_mean, scored_set, seed_summary,
    spearman_rank_corr, t_test_greater, thresholded_metrics, Correlation, LinearFit, Metric, ScoredSet,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Seed,
    Mean,
}

/// One CSV row of a sweep: a (cell, seed) result or a cell's seed aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep: String,
    pub cell: String,
    pub kind: RowKind,
    pub seed: Option<u64>,
    pub n_seeds: usize,
    pub fraction: Option<f64>,
    pub beta_neg_s: Option<f64>,
    pub beta_pos_s: Option<f64>,
    pub keyword: Option<String>,
    pub keyword_length: Option<usize>,
    pub feasible: bool,
    pub base_rate: f64,
    pub auprc: f64,
    pub auprc_se: f64,
    pub auroc: f64,
    pub auroc_se: f64,
    pub accuracy: f64,
    pub accuracy_se: f64,
    pub best_f1: f64,
    pub best_f1_se: f64,
    pub ratio: f64,
    pub pct_delta: f64,
    pub pct_delta_se: f64,
    /// Permutation p of the cell's seed-mean AUPRC; repeated on each row.
    pub cell_p_value: f64,
    pub unique_hours: f64,
    pub n_train_windows: usize,
    pub n_train_positive: usize,
    pub note: String,
}

/// Axis values identifying a cell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellAxes {
    pub label: String,
    pub fraction: Option<f64>,
    pub beta_neg_s: Option<f64>,
    pub beta_pos_s: Option<f64>,
    pub keyword: Option<String>,
}

impl SweepRow {
    fn blank(sweep: &str, axes: &CellAxes, kind: RowKind, seed: Option<u64>) -> Self {
        SweepRow {
            sweep: sweep.into(),
            cell: axes.label.clone(),
            kind,
            seed,
            n_seeds: 0,
            fraction: axes.fraction,
            beta_neg_s: axes.beta_neg_s,
            beta_pos_s: axes.beta_pos_s,
            keyword: axes.keyword.clone(),
            keyword_length: axes.keyword.as_ref().map(|k| k.chars().count()),
            feasible: false,
            base_rate: f64::NAN,
            auprc: f64::NAN,
            auprc_se: f64::NAN,
            auroc: f64::NAN,
            auroc_se: f64::NAN,
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
        }
    }
}

/// Aggregate rows from seed rows, one per cell in first-appearance order.
/// Depends only on the seed rows' fields, so it can be re-run on a parsed CSV.
pub fn aggregate(seed_rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut cells: Vec<&str> = Vec::new();
    for r in seed_rows.iter().filter(|r| r.kind == RowKind::Seed) {
        if !cells.contains(&r.cell.as_str()) {
            cells.push(&r.cell);
        }
    }
    cells
        .into_iter()
        .map(|cell| {
            let rows: Vec<&SweepRow> =
                seed_rows.iter().filter(|r| r.kind == RowKind::Seed && r.cell == cell).collect();
            let first = rows[0];
            let ok: Vec<&SweepRow> = rows.iter().copied().filter(|r| r.feasible).collect();
            let mut out = SweepRow { seed: None, kind: RowKind::Mean, ..first.clone() };
            out.n_seeds = ok.len();
            out.feasible = !ok.is_empty();
            out.note = if ok.is_empty() { first.note.clone() } else { String::new() };
            let stat = |f: fn(&SweepRow) -> f64| -> (f64, f64) {
                let v: Vec<f64> = ok.iter().map(|r| f(r)).collect();
                seed_summary(&v).map_or((f64::NAN, f64::NAN), |s| (s.mean, s.se))
            };
            (out.base_rate, _) = stat(|r| r.base_rate);
            (out.auprc, out.auprc_se) = stat(|r| r.auprc);
            (out.auroc, out.auroc_se) = stat(|r| r.auroc);
            (out.accuracy, out.accuracy_se) = stat(|r| r.accuracy);
            (out.best_f1, out.best_f1_se) = stat(|r| r.best_f1);
            (out.ratio, _) = stat(|r| r.ratio);
            (out.pct_delta, out.pct_delta_se) = stat(|r| r.pct_delta);
            out
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Seed rows followed by aggregate rows.
fn with_aggregates(seed_rows: Vec<SweepRow>) -> Vec<SweepRow> {
    let agg = aggregate(&seed_rows);
    seed_rows.into_iter().chain(agg).collect()
}

fn is_infeasible(e: &Error) -> bool {
    matches!(e, Error::InfeasibleSampler(_) | Error::InfeasibleTask(_) | Error::MissingKeyword(_))
}

/// Train and test every seed of one cell.
fn run_cell(
    cfg: &RunConfig,
    corpus: &LoadedCorpus,
    task: &KeywordTaskSpec,
    split: &SplitAssignment,
    sweep: &str,
    axes: &CellAxes,
    dir: &Path,
) -> Result<Vec<SweepRow>> {
    let eval = &cfg.evaluation;
    let mut rows = Vec::new();
    let mut sets: Vec<ScoredSet> = Vec::new();
    let unique_hours = corpus.hours(&split.train);
    for &seed in &cfg.seeds {
        let mut row = SweepRow::blank(sweep, axes, RowKind::Seed, Some(seed));
        row.unique_hours = unique_hours;
        row.n_seeds = 1;
        match train_seed(cfg, corpus, task, split, seed, &dir.join(format!("seed-{seed}"))) {
            Ok((outcome, test)) => {
                let set = scored_set(&test)?;
                row.feasible = true;
                row.n_train_windows = outcome.report.n_train;
                row.n_train_positive = outcome.report.n_train_positive;
                row.base_rate = set.base_rate();
                row.auprc = auprc(&set)?;
                row.auroc = auroc(&set).unwrap_or(f64::NAN);
                row.accuracy = thresholded_metrics(&set, eval.threshold).accuracy;
                row.best_f1 = best_f1(&set)?.0;
                row.ratio = row.auprc / row.base_rate;
                row.pct_delta = pct_delta_over_base(row.auprc, row.base_rate)?;
                sets.push(set);
            }
            Err(e) if is_infeasible(&e) => {
                warn!("{sweep} cell {}: seed {seed} infeasible: {e}", axes.label);
                row.note = e.to_string();
            }
            Err(e) => return Err(e),
        }
        rows.push(row);
    }
    if !sets.is_empty() {
        let p = permutation_pvalue_mean(&sets, Metric::Auprc, eval.n_permutations, eval.seed)?.p_value;
        rows.iter_mut().for_each(|r| r.cell_p_value = p);
    }
    Ok(rows)
}

fn infeasible_cell(cfg: &RunConfig, sweep: &str, axes: &CellAxes, note: String) -> Vec<SweepRow> {
    cfg.seeds
        .iter()
        .map(|&seed| SweepRow { n_seeds: 1, note: note.clone(), ..SweepRow::blank(sweep, axes, RowKind::Seed, Some(seed)) })
        .collect()
}

fn sweep_dir(cfg: &RunConfig, sweep: &str) -> PathBuf {
    cfg.output_dir.join("sweeps").join(sweep)
}

fn means(rows: &[SweepRow]) -> impl Iterator<Item = &SweepRow> {
    rows.iter().filter(|r| r.kind == RowKind::Mean && r.feasible)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    /// Seed-mean AUPRC against ln(requested fraction).
    pub fit: Option<LinearFit>,
    pub spearman: Option<Correlation>,
    pub infeasible_cells: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult<S> {
    pub provenance: Provenance,
    pub rows: Vec<SweepRow>,
    pub summary: S,
}

/// Smallest prefix of `train` whose duration reaches `fraction` of the total.
pub fn subsample_sessions(corpus: &LoadedCorpus, train: &[String], fraction: f64) -> Vec<String> {
    let total = corpus.hours(train);
    let mut acc = 0.0;
    let mut out = Vec::new();
    for id in train {
        out.push(id.clone());
        acc += corpus.hours(std::slice::from_ref(id));
        if acc >= fraction * total * (1.0 - 1e-9) {
            break;
        }
    }
    out
}

/// Train on nested prefixes of the training sessions (validation and test
/// fixed) and fit seed-mean AUPRC against log fraction.
pub fn cmd_sweep_scaling(cfg: &RunConfig, fractions: &[f64]) -> Result<SweepResult<ScalingSummary>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::Config { path: "sweeps.fractions".into(), message: "fractions must lie in (0, 1]".into() });
    }
    let corpus = LoadedCorpus::load(&cfg.data_root)?;
    let (_, task, split) = configured_task(cfg, &corpus)?;
    let total = corpus.hours(&split.train);
    let mut seed_rows = Vec::new();
    for &f in fractions {
        let train = subsample_sessions(&corpus, &split.train, f);
        let achieved = corpus.hours(&train) / total;
        let axes = CellAxes { label: format!("fraction={f}"), fraction: Some(f), ..Default::default() };
        info!("scaling: fraction {f} -> {} sessions ({:.3} of training hours)", train.len(), achieved);
        let sub = SplitAssignment { train, ..split.clone() };
        let mut rows = run_cell(cfg, &corpus, &task, &sub, "scaling", &axes, &sweep_dir(cfg, "scaling").join(&axes.label))?;
        for r in &mut rows {
            r.note = if r.note.is_empty() { format!("achieved_fraction={achieved}") } else { r.note.clone() };
        }
        seed_rows.extend(rows);
    }
    let rows = with_aggregates(seed_rows);
    let pts: Vec<(f64, f64)> = means(&rows).map(|r| (r.fraction.unwrap().ln(), r.auprc)).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let summary = ScalingSummary {
        fit: linear_fit(&x, &y).ok(),
        spearman: spearman_rank_corr(&x, &y).ok(),
        infeasible_cells: rows.iter().filter(|r| r.kind == RowKind::Mean && !r.feasible).map(|r| r.cell.clone()).collect(),
    };
    finish(cfg, "scaling", &corpus, rows, summary)
}

fn finish<S: Serialize>(cfg: &RunConfig, sweep: &str, corpus: &LoadedCorpus, rows: Vec<SweepRow>, summary: S) -> Result<SweepResult<S>> {
    let result = SweepResult { provenance: Provenance::new(cfg, corpus), rows, summary };
    let dir = cfg.output_dir.join("sweeps");
    write_sweep_csv(&dir.join(format!("{sweep}.csv")), &result.rows)?;
    write_json(
        &dir.join(format!("{sweep}_summary.json")),
        &serde_json::json!({ "provenance": result.provenance, "summary": result.summary }),
    )?;
    Ok(result)
}

/// Paired per-seed improvement of the non-zero offset cells over (0, 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedImprovement {
    /// Per seed: mean over non-zero cells of `AUPRC(cell) − AUPRC(0,0)`.
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    pub se: f64,
    /// `mean ± 1.96·se`.
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// One-sided t-test of mean > 0; absent with a single seed.
    pub p_value: Option<f64>,
    /// Every seed improved.
    pub sign_consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetSummary {
    pub argmax_cell: Option<String>,
    pub argmax_auprc: Option<f64>,
    pub baseline_auprc: Option<f64>,
    /// Mean over non-zero cells of the seed-mean AUPRC minus the baseline's.
    pub table_mean_improvement: Option<f64>,
    pub table_relative_improvement_pct: Option<f64>,
    pub paired: Option<PairedImprovement>,
    /// Why `paired` is absent.
    pub note: String,
}

pub fn offset_label(neg: f64, pos: f64) -> String {
    format!("neg={neg:.2},pos={pos:.2}")
}

/// Offset statistics from sweep rows (seed and mean rows of one sweep).
pub fn summarize_offsets(rows: &[SweepRow]) -> OffsetSummary {
    let mean_rows: Vec<&SweepRow> = means(rows).collect();
    let is_base = |r: &SweepRow| r.beta_neg_s == Some(0.0) && r.beta_pos_s == Some(0.0);
    let argmax = mean_rows.iter().copied().max_by(|a, b| a.auprc.total_cmp(&b.auprc));
    let base = mean_rows.iter().copied().find(|r| is_base(r));
    let others: Vec<&SweepRow> = mean_rows.iter().copied().filter(|r| !is_base(r)).collect();
    let mut summary = OffsetSummary {
        argmax_cell: argmax.map(|r| r.cell.clone()),
        argmax_auprc: argmax.map(|r| r.auprc),
        baseline_auprc: base.map(|r| r.auprc),
        table_mean_improvement: None,
        table_relative_improvement_pct: None,
        paired: None,
        note: String::new(),
    };
    let Some(base) = base else {
        summary.note = "no feasible (0, 0) baseline cell; improvement undefined".into();
        return summary;
    };
    if others.is_empty() {
        summary.note = "only the (0, 0) baseline cell; improvement undefined".into();
        return summary;
    }
    let d = others.iter().map(|r| r.auprc - base.auprc).sum::<f64>() / others.len() as f64;
    summary.table_mean_improvement = Some(d);
    summary.table_relative_improvement_pct = Some(100.0 * d / base.auprc);

    let seed_auprc = |cell: &str, seed: u64| {
        rows.iter()
            .find(|r| r.kind == RowKind::Seed && r.feasible && r.cell == cell && r.seed == Some(seed))
            .map(|r| r.auprc)
    };
    let mut seeds: Vec<u64> = rows.iter().filter(|r| r.kind == RowKind::Seed).filter_map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut per_seed = Vec::new();
    for seed in seeds {
        let Some(b) = seed_auprc(&base.cell, seed) else { continue };
        let diffs: Vec<f64> = others.iter().filter_map(|r| seed_auprc(&r.cell, seed)).map(|a| a - b).collect();
        if !diffs.is_empty() {
            per_seed.push((seed, diffs.iter().sum::<f64>() / diffs.len() as f64));
        }
    }
    let values: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
    let Ok(s) = seed_summary(&values) else {
        summary.note = "no seed has both a baseline and a non-zero cell".into();
        return summary;
    };
    summary.paired = Some(PairedImprovement {
        mean: s.mean,
        se: s.se,
        ci_lo: s.mean - 1.96 * s.se,
        ci_hi: s.mean + 1.96 * s.se,
        p_value: t_test_greater(&values).ok(),
        sign_consistent: values.iter().all(|&v| v > 0.0),
        per_seed,
    });
    summary
}

/// Train every (β−, β+) cell and compare against the (0, 0) baseline.
pub fn cmd_sweep_offsets(cfg: &RunConfig, neg_grid: &[f64], pos_grid: &[f64]) -> Result<SweepResult<OffsetSummary>> {
    if neg_grid.iter().chain(pos_grid).any(|b| !(*b >= 0.0)) {
        return Err(Error::Config { path: "sweeps".into(), message: "offset grids must be nonnegative".into() });
    }
    let corpus = LoadedCorpus::load(&cfg.data_root)?;
    let (keywords, _, _) = configured_task(cfg, &corpus)?;
    let mut seed_rows = Vec::new();
    for &neg in neg_grid {
        for &pos in pos_grid {
            let axes = CellAxes {
                label: offset_label(neg, pos),
                beta_neg_s: Some(neg),
                beta_pos_s: Some(pos),
                ..Default::default()
            };
            let (task, split) = prepare_task(&corpus, &keywords, neg, pos)?;
            info!("offsets: cell {} (window {:.3} s)", axes.label, task.window_s);
            seed_rows.extend(run_cell(cfg, &corpus, &task, &split, "offsets", &axes, &sweep_dir(cfg, "offsets").join(&axes.label))?);
        }
    }
    let rows = with_aggregates(seed_rows);
    let summary = summarize_offsets(&rows);
    finish(cfg, "offsets", &corpus, rows, summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordSummary {
    /// Lexicon-level Spearman correlation of word length against log frequency.
    pub length_log_frequency: Option<Correlation>,
    pub keywords: Vec<String>,
    pub skipped: Vec<String>,
}

/// Per-keyword detection metrics under the configured buffers.
pub fn cmd_sweep_keywords(cfg: &RunConfig, selection: &KeywordSelection) -> Result<SweepResult<KeywordSummary>> {
    let corpus = LoadedCorpus::load(&cfg.data_root)?;
    let freqs = word_frequencies(&corpus.sessions);
    let keywords = match selection {
        KeywordSelection::Auto(_) => auto_keywords(&freqs, cfg.sweeps.max_keywords),
        KeywordSelection::List(list) => list.clone(),
    };
    let mut seed_rows = Vec::new();
    let mut used = Vec::new();
    let mut skipped = Vec::new();
    for kw in &keywords {
        let axes = CellAxes { label: format!("keyword={kw}"), keyword: Some(kw.clone()), ..Default::default() };
        match prepare_task(&corpus, &[kw], cfg.task.beta_neg_s, cfg.task.beta_pos_s) {
            Ok((task, split)) => {
                info!("keywords: {kw} (window {:.3} s)", task.window_s);
                seed_rows.extend(run_cell(cfg, &corpus, &task, &split, "keywords", &axes, &sweep_dir(cfg, "keywords").join(kw))?);
                used.push(kw.clone());
            }
            Err(Error::MissingKeyword(_)) => {
                warn!("keyword `{kw}` does not occur in the corpus; skipped");
                skipped.push(kw.clone());
            }
            Err(e) if is_infeasible(&e) => {
                warn!("keyword `{kw}`: {e}");
                seed_rows.extend(infeasible_cell(cfg, "keywords", &axes, e.to_string()));
                used.push(kw.clone());
            }
            Err(e) => return Err(e),
        }
    }
    let len: Vec<f64> = freqs.iter().map(|(w, _)| w.chars().count() as f64).collect();
    let logf: Vec<f64> = freqs.iter().map(|(_, c)| (*c as f64).ln()).collect();
    let summary = KeywordSummary { length_log_frequency: spearman_rank_corr(&len, &logf).ok(), keywords: used, skipped };
    finish(cfg, "keywords", &corpus, with_aggregates(seed_rows), summary)
}
