use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{CurvePartition, EvaluationConfig, RunConfig};
use super::data::{configured_task, LoadedCorpus, Provenance};
use crate::corpus::{CorpusManifest, KeywordTaskSpec, Partition, SplitAssignment};
use crate::error::{Error, Result};
use crate::metrics::{
    metric_roster, pct_delta_over_base, permutation_pvalue_mean, pr_curve, read_scores, scored_set, seed_summary,
    write_scores, Confusion, MetricsReport, PrPoint, ScoreRow, ScoredSet, SeedSummary,
};
use crate::model::ModelConfig;
use crate::operate::{
    empirical_fp_per_hour, mean_recall_curve, recall_vs_fa_curve, select_threshold_max_recall,
    select_threshold_min_fa, translate, RecallAtFa, Scenario,
};
use crate::synthgen::generate_corpus;
use crate::training::{
    load_checkpoint, train, LoadedCheckpoint, TrainConfig, TrainOutcome, TrainReport, TrainingData, CHECKPOINT_STEM,
    REPORT_FILE,
};

pub const SCORES_VAL: &str = "scores_val.csv";
pub const SCORES_TEST: &str = "scores_test.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub partition: Partition,
    pub duration_s: f64,
    pub n_words: usize,
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub data_root: PathBuf,
    pub n_channels: usize,
    pub sample_rate_hz: f64,
    pub total_hours: f64,
    pub sessions: Vec<SessionSummary>,
}

/// Generate the synthetic corpus into `data_root`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthSummary> {
    let corpus = generate_corpus(&cfg.synth)?;
    let manifest = CorpusManifest::write_corpus(
        &cfg.data_root,
        &corpus.sessions,
        &corpus.default_split,
        serde_json::json!({ "synth": cfg.synth }),
    )?;
    let sessions = manifest
        .sessions
        .iter()
        .zip(&corpus.sessions)
        .map(|(e, s)| SessionSummary {
            session_id: e.session_id.clone(),
            partition: e.partition,
            duration_s: s.duration_s(),
            n_words: s.word_tokens().count(),
            checksum: s.checksum(),
        })
        .collect::<Vec<_>>();
    Ok(SynthSummary {
        data_root: cfg.data_root.clone(),
        n_channels: cfg.synth.n_channels,
        sample_rate_hz: cfg.synth.sample_rate_hz,
        total_hours: sessions.iter().map(|s| s.duration_s).sum::<f64>() / 3600.0,
        sessions,
    })
}

/// The configured model with `in_channels` taken from the corpus.
pub fn model_config_for(cfg: &RunConfig, corpus: &LoadedCorpus) -> ModelConfig {
    let channels = corpus.sessions.first().map_or(cfg.model.in_channels, |s| s.signal().nrows());
    ModelConfig { in_channels: channels, ..cfg.model.clone() }
}

pub fn train_config_for(cfg: &RunConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.train.clone() }
}

/// Train one seed into `dir` and write its validation and test scores.
pub fn train_seed(
    cfg: &RunConfig,
    corpus: &LoadedCorpus,
    task: &KeywordTaskSpec,
    split: &SplitAssignment,
    seed: u64,
    dir: &Path,
) -> Result<(TrainOutcome, Vec<ScoreRow>)> {
    let outcome = train(
        &model_config_for(cfg, corpus),
        &cfg.loss,
        &cfg.sampler,
        &train_config_for(cfg, seed),
        TrainingData { sessions: &corpus.sessions, splits: split, task },
        dir,
    )?;
    let ckpt = LoadedCheckpoint { model: outcome.model.clone(), meta: outcome.meta.clone() };
    let batch = cfg.train.eval_batch_size;
    let val = ckpt.evaluate_ids(&corpus.sessions, std::slice::from_ref(&split.validation), batch)?;
    let test = ckpt.evaluate_ids(&corpus.sessions, std::slice::from_ref(&split.test), batch)?;
    write_scores(&dir.join(SCORES_VAL), &val)?;
    write_scores(&dir.join(SCORES_TEST), &test)?;
    Ok((outcome, test))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRunSummary {
    pub seed: u64,
    pub dir: PathBuf,
    pub best_epoch: usize,
    pub best_val_auprc: f64,
    pub epochs_run: usize,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub provenance: Provenance,
    pub keywords: Vec<String>,
    pub task: KeywordTaskSpec,
    pub split: SplitAssignment,
    pub n_parameters: usize,
    pub runs: Vec<SeedRunSummary>,
}

/// Train every configured seed into `output_dir/train/seed-<s>`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let corpus = LoadedCorpus::load(&cfg.data_root)?;
    let (keywords, task, split) = configured_task(cfg, &corpus)?;
    info!("keywords {keywords:?}, window {:.3} s, test session {}", task.window_s, split.test);
    let mut runs = Vec::new();
    let mut n_parameters = 0;
    for &seed in &cfg.seeds {
        let dir = cfg.train_dir(seed);
        let (outcome, _) = train_seed(cfg, &corpus, &task, &split, seed, &dir)?;
        n_parameters = outcome.report.n_parameters;
        runs.push(SeedRunSummary {
            seed,
            dir,
            best_epoch: outcome.report.best_epoch,
            best_val_auprc: outcome.report.best_val_auprc,
            epochs_run: outcome.report.epochs.len(),
            wall_clock_s: outcome.wall_clock_s,
        });
    }
    let summary = TrainSummary { provenance: Provenance::new(cfg, &corpus), keywords, task, split, n_parameters, runs };
    write_json(&cfg.output_dir.join("train").join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn load_train_report(cfg: &RunConfig, seed: u64) -> Result<TrainReport> {
    TrainReport::load(&cfg.train_dir(seed).join(REPORT_FILE))
}

fn checkpoint_for(cfg: &RunConfig, seed: u64) -> Result<LoadedCheckpoint> {
    let stem = cfg.train_dir(seed).join(CHECKPOINT_STEM);
    if !stem.with_extension("json").is_file() || !stem.with_extension("bin").is_file() {
        return Err(Error::Checkpoint(format!(
            "missing checkpoint {}.{{bin,json}} for seed {seed}; run `train` first",
            stem.display()
        )));
    }
    load_checkpoint(&stem, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub metrics: MetricsReport,
}

/// One line of the model-versus-permutation-baseline table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub metric: String,
    /// Mean of the seed-averaged permutation null.
    pub baseline: f64,
    /// Seed mean.
    pub model: f64,
    /// Across-seed SE with several seeds, else the bootstrap SE.
    pub se: f64,
    /// Mean over seeds of the bootstrap SE `(hi − lo)/3.92`.
    pub bootstrap_se: f64,
    /// Undefined when the baseline is not positive.
    pub pct_improvement: Option<f64>,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub provenance: Provenance,
    pub keywords: Vec<String>,
    pub test_session: String,
    pub threshold: f64,
    pub per_seed: Vec<SeedMetrics>,
    pub seed_mean: BTreeMap<String, SeedSummary>,
    pub table: Vec<Table1Row>,
    /// Seed-mean AUPRC over the permutation-null mean.
    pub auprc_over_null: f64,
    /// Mean over seeds of AUPRC over the empirical base rate.
    pub auprc_over_base_rate: f64,
}

/// Scores for every configured seed on its checkpoint's test session.
fn test_sets(cfg: &RunConfig, corpus: &LoadedCorpus) -> Result<(Vec<(u64, ScoredSet)>, LoadedCheckpoint)> {
    let mut sets = Vec::new();
    let mut first = None;
    for &seed in &cfg.seeds {
        let ckpt = checkpoint_for(cfg, seed)?;
        let rows = ckpt.evaluate_ids(&corpus.sessions, std::slice::from_ref(&ckpt.meta.splits.test), cfg.train.eval_batch_size)?;
        if rows.is_empty() {
            return Err(Error::validation(format!("test session {} has no windows", ckpt.meta.splits.test)));
        }
        sets.push((seed, scored_set(&rows)?));
        first.get_or_insert(ckpt);
    }
    Ok((sets, first.expect("at least one seed")))
}

/// Evaluate every seed's checkpoint on the test session.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluationReport> {
    let corpus = LoadedCorpus::load(&cfg.data_root)?;
    let (sets, first) = test_sets(cfg, &corpus)?;
    let eval = &cfg.evaluation;
    let opts = eval.report_options();
    let mut per_seed = Vec::new();
    for (seed, set) in &sets {
        per_seed.push(SeedMetrics { seed: *seed, metrics: MetricsReport::compute(set, &opts)? });
    }
    let only_sets: Vec<ScoredSet> = sets.iter().map(|(_, s)| s.clone()).collect();
    let mut seed_mean = BTreeMap::new();
    let mut table = Vec::new();
    for metric in metric_roster(eval.threshold) {
        let name = metric.name().to_string();
        let values: Vec<f64> = only_sets.iter().map(|s| metric.evaluate(s)).collect::<Result<_>>()?;
        let summary = seed_summary(&values)?;
        let perm = permutation_pvalue_mean(&only_sets, metric, eval.n_permutations, eval.seed)?;
        let bootstrap_se = {
            let ses: Vec<f64> = per_seed.iter().filter_map(|m| m.metrics.ci.get(&name).map(|c| c.se)).collect();
            if ses.is_empty() { f64::NAN } else { ses.iter().sum::<f64>() / ses.len() as f64 }
        };
        table.push(Table1Row {
            metric: name.clone(),
            baseline: perm.null_mean,
            model: summary.mean,
            se: if summary.n > 1 { summary.se } else { bootstrap_se },
            bootstrap_se,
            pct_improvement: pct_delta_over_base(summary.mean, perm.null_mean).ok(),
            p_value: perm.p_value,
        });
        seed_mean.insert(name, summary);
    }
    let auprc_row = table.iter().find(|r| r.metric == "auprc").expect("auprc in roster");
    let report = EvaluationReport {
        provenance: Provenance::new(cfg, &corpus),
        keywords: first.meta.task.keywords.iter().cloned().collect(),
        test_session: first.meta.splits.test.clone(),
        threshold: eval.threshold,
        auprc_over_null: auprc_row.model / auprc_row.baseline,
        auprc_over_base_rate: per_seed.iter().map(|m| m.metrics.auprc / m.metrics.base_rate).sum::<f64>()
            / per_seed.len() as f64,
        per_seed,
        seed_mean,
        table,
    };
    let dir = cfg.output_dir.join("evaluate");
    write_json(&dir.join("report.json"), &report)?;
    write_csv(&dir.join("table1.csv"), &report.table)?;
    write_per_seed_csv(&dir.join("per_seed.csv"), &report)?;
    Ok(report)
}

fn write_per_seed_csv(path: &Path, report: &EvaluationReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let flats: Vec<Vec<(String, f64)>> = report.per_seed.iter().map(|m| m.metrics.flat()).collect();
    let Some(first) = flats.first() else { return Ok(()) };
    let mut header = vec!["seed".to_string()];
    header.extend(first.iter().map(|(k, _)| k.clone()));
    w.write_record(&header)?;
    for (m, flat) in report.per_seed.iter().zip(&flats) {
        let mut rec = vec![m.seed.to_string()];
        rec.extend(flat.iter().map(|(_, v)| v.to_string()));
        w.write_record(&rec)?;
    }
    let mut mean = vec!["mean".to_string()];
    for i in 0..first.len() {
        mean.push((flats.iter().map(|f| f[i].1).sum::<f64>() / flats.len() as f64).to_string());
    }
    w.write_record(&mean)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Scores for one seed: `selection` picks thresholds, `report` is where the
/// rates are measured. In presentation mode both are the test scores.
#[derive(Clone, Debug)]
pub struct SeedScores {
    pub seed: u64,
    pub selection: Vec<ScoreRow>,
    pub report: Vec<ScoreRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingRow {
    pub scenario: String,
    pub lambda_per_hour: f64,
    /// `fa_per_hour_at_recall`, `recall_at_fa_budget` or `fp_per_hour`.
    pub quantity: String,
    pub target: f64,
    pub value: f64,
    pub se: f64,
    pub per_seed: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Every seed met the constraint on its selection curve.
    pub feasible: bool,
}

/// A selector output evaluated on the reporting side.
#[derive(Clone, Copy, Debug)]
struct Picked {
    threshold: f64,
    recall: f64,
    fa_per_hour: f64,
    feasible: bool,
}

fn summarize_rows(
    scenario: &Scenario,
    quantity: &str,
    target: f64,
    picks: &[Picked],
    value: impl Fn(&Picked) -> f64,
) -> Result<OperatingRow> {
    let per_seed: Vec<f64> = picks.iter().map(&value).collect();
    let s = seed_summary(&per_seed)?;
    Ok(OperatingRow {
        scenario: scenario.name.clone(),
        lambda_per_hour: scenario.lambda_per_hour,
        quantity: quantity.into(),
        target,
        value: s.mean,
        se: s.se,
        per_seed,
        thresholds: picks.iter().map(|p| p.threshold).collect(),
        feasible: picks.iter().all(|p| p.feasible),
    })
}

/// The operating-point roster on literal PR curves (one per seed): FA/h at
/// the target recall and recall at each FA/h budget, seed-averaged.
pub fn roster_from_curves(
    curves: &[Vec<PrPoint>],
    scenario: &Scenario,
    target_recall: f64,
    fa_budgets: &[f64],
) -> Result<Vec<OperatingRow>> {
    let pick = |p: crate::operate::OperatingPoint| Picked {
        threshold: p.threshold,
        recall: p.recall,
        fa_per_hour: p.fa_per_hour,
        feasible: p.feasible,
    };
    let at_target: Vec<Picked> = curves
        .iter()
        .map(|c| select_threshold_min_fa(c, scenario, target_recall).map(pick))
        .collect::<Result<_>>()?;
    let mut rows = vec![summarize_rows(scenario, "fa_per_hour_at_recall", target_recall, &at_target, |p| p.fa_per_hour)?];
    for &b in fa_budgets {
        let picks: Vec<Picked> =
            curves.iter().map(|c| select_threshold_max_recall(c, scenario, b).map(pick)).collect::<Result<_>>()?;
        rows.push(summarize_rows(scenario, "recall_at_fa_budget", b, &picks, |p| p.recall)?);
    }
    Ok(rows)
}

/// Rates at a frozen threshold on the reporting set. With no true positives
/// the FA/h uses its equivalent form `λ·FP/positives`.
fn rates_at(set: &ScoredSet, threshold: f64, scenario: &Scenario) -> (f64, f64) {
    let c = Confusion::at_threshold(set, threshold);
    let positives = c.tp + c.fn_;
    let recall = if positives > 0.0 { c.tp / positives } else { 0.0 };
    let fa = if c.tp > 0.0 {
        translate(c.tp / (c.tp + c.fp), recall, scenario).expect("precision > 0").fa_per_hour
    } else {
        scenario.lambda_per_hour * c.fp / positives.max(1.0)
    };
    (recall, fa)
}

fn roster_frozen(
    seeds: &[(ScoredSet, ScoredSet)],
    scenario: &Scenario,
    target_recall: f64,
    fa_budgets: &[f64],
) -> Result<Vec<OperatingRow>> {
    let freeze = |sel: &ScoredSet, rep: &ScoredSet, op: crate::operate::OperatingPoint| {
        let (recall, fa_per_hour) = rates_at(rep, op.threshold, scenario);
        Picked { threshold: op.threshold, recall, fa_per_hour, feasible: op.feasible && sel.n_positive() > 0 }
    };
    let mut at_target = Vec::new();
    for (sel, rep) in seeds {
        at_target.push(freeze(sel, rep, select_threshold_min_fa(&pr_curve(sel)?, scenario, target_recall)?));
    }
    let mut rows = vec![summarize_rows(scenario, "fa_per_hour_at_recall", target_recall, &at_target, |p| p.fa_per_hour)?];
    for &b in fa_budgets {
        let mut picks = Vec::new();
        for (sel, rep) in seeds {
            picks.push(freeze(sel, rep, select_threshold_max_recall(&pr_curve(sel)?, scenario, b)?));
        }
        rows.push(summarize_rows(scenario, "recall_at_fa_budget", b, &picks, |p| p.recall)?);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingReport {
    pub mode: CurvePartition,
    pub window_s: f64,
    pub rows: Vec<OperatingRow>,
    /// Seed-mean recall on a shared FA/h grid, per scenario.
    pub curves: BTreeMap<String, Vec<RecallAtFa>>,
}

pub const FA_GRID: [f64; 14] = [0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0];

/// The operating-point roster for every configured scenario plus empirical
/// FP/h at the evaluation threshold.
pub fn operating_points(inputs: &[SeedScores], eval: &EvaluationConfig, mode: CurvePartition, window_s: f64) -> Result<OperatingReport> {
    if inputs.is_empty() {
        return Err(Error::validation("operating points need at least one scores file"));
    }
    let mut pairs = Vec::new();
    for s in inputs {
        if s.report.is_empty() || s.selection.is_empty() {
            return Err(Error::validation(format!("scores for seed {} are empty", s.seed)));
        }
        pairs.push((scored_set(&s.selection)?, scored_set(&s.report)?));
    }
    let report_curves: Vec<Vec<PrPoint>> = pairs.iter().map(|(_, r)| pr_curve(r)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut curves = BTreeMap::new();
    for scenario in &eval.scenarios {
        rows.extend(match mode {
            CurvePartition::Test => roster_from_curves(&report_curves, scenario, eval.target_recall, &eval.fa_budgets)?,
            CurvePartition::Validation => roster_frozen(&pairs, scenario, eval.target_recall, &eval.fa_budgets)?,
        });
        let envelopes: Vec<Vec<RecallAtFa>> =
            report_curves.iter().map(|c| recall_vs_fa_curve(c, scenario)).collect::<Result<_>>()?;
        curves.insert(scenario.name.clone(), mean_recall_curve(&envelopes, &FA_GRID));
    }
    let fp: Vec<f64> = pairs
        .iter()
        .map(|(_, r)| empirical_fp_per_hour(r.scores(), r.labels(), eval.threshold, window_s))
        .collect::<Result<_>>()?;
    let s = seed_summary(&fp)?;
    rows.push(OperatingRow {
        scenario: "labelled_coverage".into(),
        lambda_per_hour: f64::NAN,
        quantity: "fp_per_hour".into(),
        target: eval.threshold,
        value: s.mean,
        se: s.se,
        per_seed: fp,
        thresholds: vec![eval.threshold; pairs.len()],
        feasible: true,
    });
    Ok(OperatingReport { mode, window_s, rows, curves })
}

/// Operating points from explicit score files (presentation mode, one file
/// per seed), or from the trained seeds' validation/test scores.
pub fn cmd_operating_points(cfg: &RunConfig, score_files: &[PathBuf], window_s: Option<f64>) -> Result<OperatingReport> {
    let eval = &cfg.evaluation;
    let (inputs, mode, window_s) = if score_files.is_empty() {
        let summary: TrainSummary = read_json(&cfg.output_dir.join("train").join(SUMMARY_FILE)).map_err(|e| {
            Error::validation(format!("no training summary under {} ({e}); run `train` first", cfg.output_dir.display()))
        })?;
        let mut inputs = Vec::new();
        for &seed in &cfg.seeds {
            let dir = cfg.train_dir(seed);
            let report = read_scores(&dir.join(SCORES_TEST))?;
            let selection = match eval.curve_partition {
                CurvePartition::Validation => read_scores(&dir.join(SCORES_VAL))?,
                CurvePartition::Test => report.clone(),
            };
            inputs.push(SeedScores { seed, selection, report });
        }
        (inputs, eval.curve_partition, window_s.unwrap_or(summary.task.window_s))
    } else {
        let window_s = window_s.ok_or_else(|| Error::validation("--window-s is required with explicit score files"))?;
        let mut inputs = Vec::new();
        for (i, path) in score_files.iter().enumerate() {
            let rows = read_scores(path)?;
            if rows.is_empty() {
                return Err(Error::validation(format!("scores file {} is empty", path.display())));
            }
            inputs.push(SeedScores { seed: i as u64, selection: rows.clone(), report: rows });
        }
        (inputs, CurvePartition::Test, window_s)
    };
    let report = operating_points(&inputs, eval, mode, window_s)?;
    let dir = cfg.output_dir.join("operating_points");
    write_json(&dir.join("report.json"), &report)?;
    write_csv(&dir.join("roster.csv"), &report.rows.iter().map(RosterCsv::from).collect::<Vec<_>>())?;
    for (name, curve) in &report.curves {
        crate::operate::write_recall_fa_csv(&dir.join(format!("recall_fa_{name}.csv")), curve)?;
    }
    Ok(report)
}

#[derive(Serialize)]
struct RosterCsv<'a> {
    scenario: &'a str,
    lambda_per_hour: f64,
    quantity: &'a str,
    target: f64,
    value: f64,
    se: f64,
    feasible: bool,
}

impl<'a> From<&'a OperatingRow> for RosterCsv<'a> {
    fn from(r: &'a OperatingRow) -> Self {
        RosterCsv {
            scenario: &r.scenario,
            lambda_per_hour: r.lambda_per_hour,
            quantity: &r.quantity,
            target: r.target,
            value: r.value,
            se: r.se,
            feasible: r.feasible,
        }
    }
}
