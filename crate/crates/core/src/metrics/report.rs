use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::curve::{auprc, auroc, thresholded_metrics, ScoredSet, Thresholded};
use super::resample::{bootstrap_ci, permutation_pvalue, BootstrapCi, Metric, PermutationTest};
use crate::error::{Error, Result};

/// One row of a scores file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub session_id: String,
    pub token_index: usize,
    pub label: u8,
    pub score: f64,
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Csv(e)
    }
}

pub fn scored_set(rows: &[ScoreRow]) -> Result<ScoredSet> {
    ScoredSet::new(rows.iter().map(|r| r.score).collect(), rows.iter().map(|r| r.label).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    pub threshold: f64,
    pub n_resamples: usize,
    pub n_permutations: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { threshold: 0.5, n_resamples: 4000, n_permutations: 10_000, level: 0.95, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub n_positive: usize,
    pub base_rate: f64,
    pub auprc: f64,
    pub auroc: f64,
    pub f1: f64,
    pub f1_macro: f64,
    pub accuracy: f64,
    pub mcc: f64,
    pub threshold: f64,
    pub ci: BTreeMap<String, BootstrapCi>,
    pub permutation: BTreeMap<String, PermutationTest>,
}

pub fn metric_roster(threshold: f64) -> [Metric; 6] {
    [
        Metric::Auprc,
        Metric::Auroc,
        Metric::F1 { threshold },
        Metric::F1Macro { threshold },
        Metric::Accuracy { threshold },
        Metric::Mcc { threshold },
    ]
}

impl MetricsReport {
    /// Point metrics with bootstrap intervals and permutation tests for every
    /// metric. Zero resamples or draws skip that part.
    pub fn compute(set: &ScoredSet, opts: &ReportOptions) -> Result<Self> {
        let Thresholded { f1, f1_macro, accuracy, mcc, .. } = thresholded_metrics(set, opts.threshold);
        let mut report = MetricsReport {
            n: set.len(),
            n_positive: set.n_positive(),
            base_rate: set.base_rate(),
            auprc: auprc(set)?,
            auroc: auroc(set)?,
            f1,
            f1_macro,
            accuracy,
            mcc,
            threshold: opts.threshold,
            ci: BTreeMap::new(),
            permutation: BTreeMap::new(),
        };
        for m in metric_roster(opts.threshold) {
            if opts.n_resamples > 0 {
                report.ci.insert(m.name().into(), bootstrap_ci(set, m, opts.n_resamples, opts.level, opts.seed)?);
            }
            if opts.n_permutations > 0 {
                report.permutation.insert(m.name().into(), permutation_pvalue(set, m, opts.n_permutations, opts.seed)?);
            }
        }
        Ok(report)
    }

    /// Flat name/value pairs for a CSV row.
    pub fn flat(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("n".to_string(), self.n as f64),
            ("n_positive".into(), self.n_positive as f64),
            ("base_rate".into(), self.base_rate),
            ("auprc".into(), self.auprc),
            ("auroc".into(), self.auroc),
            ("f1".into(), self.f1),
            ("f1_macro".into(), self.f1_macro),
            ("accuracy".into(), self.accuracy),
            ("mcc".into(), self.mcc),
            ("threshold".into(), self.threshold),
        ];
        for (name, ci) in &self.ci {
            out.push((format!("{name}_ci_lo"), ci.lo));
            out.push((format!("{name}_ci_hi"), ci.hi));
            out.push((format!("{name}_se"), ci.se));
        }
        for (name, t) in &self.permutation {
            out.push((format!("{name}_p"), t.p_value));
            out.push((format!("{name}_null_mean"), t.null_mean));
            out.push((format!("{name}_null_median"), t.null_median));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let rows = vec![
            ScoreRow { session_id: "a".into(), token_index: 3, label: 1, score: 0.123456789012345 },
            ScoreRow { session_id: "b".into(), token_index: 0, label: 0, score: 1e-9 },
        ];
        write_scores(&path, &rows).unwrap();
        assert_eq!(read_scores(&path).unwrap(), rows);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("session_id,token_index,label,score"));
        assert!(matches!(read_scores(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn report_is_consistent() {
        let set = ScoredSet::new(vec![0.9, 0.2, 0.7, 0.4, 0.6, 0.1], vec![1, 0, 1, 0, 0, 0]).unwrap();
        let opts = ReportOptions { n_resamples: 200, n_permutations: 200, ..Default::default() };
        let r = MetricsReport::compute(&set, &opts).unwrap();
        assert_eq!(r.auprc, 1.0);
        assert_eq!(r.ci.len(), 6);
        assert_eq!(r.permutation.len(), 6);
        assert!((r.base_rate - 1.0 / 3.0).abs() < 1e-15);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), r);
        assert_eq!(r.flat().len(), 10 + 18 + 18);
    }
}
