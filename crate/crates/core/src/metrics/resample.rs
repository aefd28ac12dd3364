use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curve::{ap_from_groups, auroc_from_groups, Confusion, Ranking, ScoredSet};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auprc,
    Auroc,
    F1 { threshold: f64 },
    F1Macro { threshold: f64 },
    Accuracy { threshold: f64 },
    Mcc { threshold: f64 },
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Auprc => "auprc",
            Metric::Auroc => "auroc",
            Metric::F1 { .. } => "f1",
            Metric::F1Macro { .. } => "f1_macro",
            Metric::Accuracy { .. } => "accuracy",
            Metric::Mcc { .. } => "mcc",
        }
    }

    fn needs_positive(&self) -> bool {
        matches!(self, Metric::Auprc | Metric::Auroc)
    }

    fn needs_negative(&self) -> bool {
        matches!(self, Metric::Auroc)
    }

    /// Evaluate with labels and weights addressed in ranked order.
    fn eval_ranked(&self, ranking: &Ranking, label_at: impl Fn(usize) -> u8, weight_at: impl Fn(usize) -> f64) -> Option<f64> {
        match *self {
            Metric::Auprc => ap_from_groups(&ranking.group_counts(label_at, weight_at)),
            Metric::Auroc => auroc_from_groups(&ranking.group_counts(label_at, weight_at)),
            Metric::F1 { threshold }
            | Metric::F1Macro { threshold }
            | Metric::Accuracy { threshold }
            | Metric::Mcc { threshold } => {
                let mut c = Confusion::default();
                let counts = ranking.group_counts(&label_at, &weight_at);
                for (&(p, n), &score) in counts.iter().zip(ranking.group_scores()) {
                    c.add(score >= threshold, true, p);
                    c.add(score >= threshold, false, n);
                }
                let t = c.summarize(threshold);
                Some(match self {
                    Metric::F1 { .. } => t.f1,
                    Metric::F1Macro { .. } => t.f1_macro,
                    Metric::Accuracy { .. } => t.accuracy,
                    _ => t.mcc,
                })
            }
        }
    }

    pub fn evaluate(&self, set: &ScoredSet) -> Result<f64> {
        let ranking = Ranking::new(set.scores());
        let labels = set.labels();
        let order = ranking.order();
        self.eval_ranked(&ranking, |k| labels[order[k]], |_| 1.0)
            .ok_or_else(|| Error::Undefined(format!("{} is undefined on this set", self.name())))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub se: f64,
    /// Resamples discarded and redrawn for lacking a required class.
    pub redrawn: usize,
    /// Point estimate outside `[lo, hi]`.
    pub flagged: bool,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

const MAX_REDRAWS: usize = 10_000;

/// Percentile bootstrap interval; `se = (hi − lo) / 3.92`.
pub fn bootstrap_ci(set: &ScoredSet, metric: Metric, n_resamples: usize, level: f64, seed: u64) -> Result<BootstrapCi> {
    let point = metric.evaluate(set)?;
    let ranking = Ranking::new(set.scores());
    let n = set.len();
    let labels: Vec<u8> = ranking.order().iter().map(|&i| set.labels()[i]).collect();
    let draws: Vec<Result<(f64, usize)>> = (0..n_resamples)
        .into_par_iter()
        .map(|draw| {
            let mut rng = stream(seed, &[tag::BOOTSTRAP, draw as u64]);
            let mut weights = vec![0u32; n];
            for attempt in 0..MAX_REDRAWS {
                weights.iter_mut().for_each(|w| *w = 0);
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1;
                }
                let has = |class: u8| labels.iter().zip(&weights).any(|(&l, &w)| l == class && w > 0);
                if (metric.needs_positive() && !has(1)) || (metric.needs_negative() && !has(0)) {
                    continue;
                }
                let v = metric
                    .eval_ranked(&ranking, |k| labels[k], |k| weights[k] as f64)
                    .expect("required classes present");
                return Ok((v, attempt));
            }
            Err(Error::Undefined(format!("bootstrap could not draw a resample with the classes {} needs", metric.name())))
        })
        .collect();
    let mut values = Vec::with_capacity(n_resamples);
    let mut redrawn = 0;
    for d in draws {
        let (v, r) = d?;
        values.push(v);
        redrawn += r;
    }
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let lo = quantile_sorted(&values, alpha);
    let hi = quantile_sorted(&values, 1.0 - alpha);
    Ok(BootstrapCi { lo, hi, se: (hi - lo) / 3.92, redrawn, flagged: point < lo || point > hi })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub observed: f64,
    pub p_value: f64,
    pub null_mean: f64,
    pub null_median: f64,
    pub null_lo: f64,
    pub null_hi: f64,
    pub n_draws: usize,
}

/// One-sided (greater) label-permutation test with add-one smoothing.
pub fn permutation_pvalue(set: &ScoredSet, metric: Metric, n_draws: usize, seed: u64) -> Result<PermutationTest> {
    permutation_pvalue_mean(std::slice::from_ref(set), metric, n_draws, seed)
}

/// Permutation test of a seed-averaged metric. Draw `i` shuffles every set's
/// labels with the same keyed stream, so sets sharing one label vector (one
/// test partition scored by several seeds) receive the same permutation.
pub fn permutation_pvalue_mean(sets: &[ScoredSet], metric: Metric, n_draws: usize, seed: u64) -> Result<PermutationTest> {
    if sets.is_empty() {
        return Err(Error::validation("permutation test needs at least one scored set"));
    }
    let k = sets.len() as f64;
    let mut observed = 0.0;
    let mut prepared = Vec::with_capacity(sets.len());
    for set in sets {
        observed += metric.evaluate(set)? / k;
        prepared.push((Ranking::new(set.scores()), set.labels().to_vec()));
    }
    let mut null: Vec<f64> = (0..n_draws)
        .into_par_iter()
        .map(|draw| {
            prepared
                .iter()
                .map(|(ranking, base)| {
                    let mut labels = base.clone();
                    labels.shuffle(&mut stream(seed, &[tag::PERMUTATION, draw as u64]));
                    let order = ranking.order();
                    metric.eval_ranked(ranking, |k| labels[order[k]], |_| 1.0).expect("class counts unchanged by permutation")
                })
                .sum::<f64>()
                / k
        })
        .collect();
    let exceed = null.iter().filter(|&&v| v >= observed).count();
    null.sort_by(f64::total_cmp);
    let q = |p: f64| if null.is_empty() { f64::NAN } else { quantile_sorted(&null, p) };
    Ok(PermutationTest {
        observed,
        p_value: (1 + exceed) as f64 / (n_draws + 1) as f64,
        null_mean: null.iter().sum::<f64>() / n_draws.max(1) as f64,
        null_median: q(0.5),
        null_lo: q(0.025),
        null_hi: q(0.975),
        n_draws,
    })
}
