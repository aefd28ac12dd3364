use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores with binary labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::validation(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::validation("scored set is empty"));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::validation(format!("label {l} is not binary")));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::validation("scores contain NaN"));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn base_rate(&self) -> f64 {
        self.n_positive() as f64 / self.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Examples sorted by descending score with tie-group boundaries.
///
/// Metrics are computed from per-group (positive, negative) weight sums so
/// that permuted labels or bootstrap multiplicities can be evaluated in O(n)
/// without re-sorting.
#[derive(Clone, Debug)]
pub struct Ranking {
    order: Vec<usize>,
    group_ends: Vec<usize>,
    group_scores: Vec<f64>,
}

impl Ranking {
    pub fn new(scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut group_ends = Vec::new();
        let mut group_scores = Vec::new();
        for (k, &i) in order.iter().enumerate() {
            if k > 0 && scores[i] != scores[order[k - 1]] {
                group_ends.push(k);
            }
            if k == 0 || scores[i] != scores[order[k - 1]] {
                group_scores.push(scores[i]);
            }
        }
        if !order.is_empty() {
            group_ends.push(order.len());
        }
        Ranking { order, group_ends, group_scores }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn n_groups(&self) -> usize {
        self.group_ends.len()
    }

    pub fn group_scores(&self) -> &[f64] {
        &self.group_scores
    }

    /// Per-group (positive weight, negative weight). `label_at(k)` and
    /// `weight_at(k)` address the k-th example in ranked order.
    pub fn group_counts(&self, label_at: impl Fn(usize) -> u8, weight_at: impl Fn(usize) -> f64) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.group_ends.len());
        let mut start = 0;
        for &end in &self.group_ends {
            let (mut tp, mut fp) = (0.0, 0.0);
            for k in start..end {
                let w = weight_at(k);
                if label_at(k) == 1 {
                    tp += w;
                } else {
                    fp += w;
                }
            }
            out.push((tp, fp));
            start = end;
        }
        out
    }

    pub fn counts_for(&self, set: &ScoredSet) -> Vec<(f64, f64)> {
        self.group_counts(|k| set.labels[self.order[k]], |_| 1.0)
    }
}

/// Step-wise average precision from descending group counts; `None` without positives.
pub fn ap_from_groups(groups: &[(f64, f64)]) -> Option<f64> {
    let total_pos: f64 = groups.iter().map(|g| g.0).sum();
    if total_pos <= 0.0 {
        return None;
    }
    let (mut tp, mut fp, mut ap) = (0.0, 0.0, 0.0);
    for &(gp, gn) in groups {
        tp += gp;
        fp += gn;
        if gp > 0.0 {
            ap += (gp / total_pos) * (tp / (tp + fp));
        }
    }
    Some(ap)
}

/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)` from descending group counts; `None` for a single class.
pub fn auroc_from_groups(groups: &[(f64, f64)]) -> Option<f64> {
    let total_pos: f64 = groups.iter().map(|g| g.0).sum();
    let total_neg: f64 = groups.iter().map(|g| g.1).sum();
    if total_pos <= 0.0 || total_neg <= 0.0 {
        return None;
    }
    let mut neg_below = total_neg;
    let mut wins = 0.0;
    for &(gp, gn) in groups {
        neg_below -= gn;
        wins += gp * (neg_below + 0.5 * gn);
    }
    Some(wins / (total_pos * total_neg))
}

fn require_positive(set: &ScoredSet) -> Result<()> {
    if set.n_positive() == 0 {
        return Err(Error::Undefined("precision-recall curve needs at least one positive".into()));
    }
    Ok(())
}

/// One point per distinct score, in descending score order.
pub fn pr_curve(set: &ScoredSet) -> Result<Vec<PrPoint>> {
    require_positive(set)?;
    let ranking = Ranking::new(&set.scores);
    let groups = ranking.counts_for(set);
    let total_pos = set.n_positive() as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    Ok(groups
        .iter()
        .zip(ranking.group_scores())
        .map(|(&(gp, gn), &threshold)| {
            tp += gp;
            fp += gn;
            PrPoint { threshold, precision: tp / (tp + fp), recall: tp / total_pos }
        })
        .collect())
}

pub fn auprc(set: &ScoredSet) -> Result<f64> {
    require_positive(set)?;
    let ranking = Ranking::new(&set.scores);
    Ok(ap_from_groups(&ranking.counts_for(set)).expect("positives present"))
}

pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let ranking = Ranking::new(&set.scores);
    auroc_from_groups(&ranking.counts_for(set))
        .ok_or_else(|| Error::Undefined("AUROC needs both positive and negative examples".into()))
}

/// Largest F1 over all curve thresholds, with the threshold attaining it.
pub fn best_f1(set: &ScoredSet) -> Result<(f64, f64)> {
    let curve = pr_curve(set)?;
    let mut best = (0.0, curve[0].threshold);
    for p in &curve {
        let f1 = if p.precision + p.recall > 0.0 { 2.0 * p.precision * p.recall / (p.precision + p.recall) } else { 0.0 };
        if f1 > best.0 {
            best = (f1, p.threshold);
        }
    }
    Ok(best)
}

/// Weighted confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Confusion {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    pub fn_: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholded {
    pub threshold: f64,
    pub f1: f64,
    pub f1_macro: f64,
    pub accuracy: f64,
    pub mcc: f64,
}

fn f1_score(tp: f64, fp: f64, fn_: f64) -> f64 {
    let denom = 2.0 * tp + fp + fn_;
    if denom == 0.0 { 0.0 } else { 2.0 * tp / denom }
}

impl Confusion {
    pub fn at_threshold(set: &ScoredSet, threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in set.scores.iter().zip(&set.labels) {
            c.add(s >= threshold, y == 1, 1.0);
        }
        c
    }

    pub fn add(&mut self, predicted: bool, actual: bool, weight: f64) {
        match (predicted, actual) {
            (true, true) => self.tp += weight,
            (true, false) => self.fp += weight,
            (false, false) => self.tn += weight,
            (false, true) => self.fn_ += weight,
        }
    }

    pub fn summarize(&self, threshold: f64) -> Thresholded {
        let Confusion { tp, fp, tn, fn_ } = *self;
        let n = tp + fp + tn + fn_;
        let f1 = f1_score(tp, fp, fn_);
        let f1_neg = f1_score(tn, fn_, fp);
        let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        let mcc = if denom == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / denom.sqrt() };
        Thresholded {
            threshold,
            f1,
            f1_macro: 0.5 * (f1 + f1_neg),
            accuracy: if n == 0.0 { 0.0 } else { (tp + tn) / n },
            mcc,
        }
    }
}

/// Predictions are `score ≥ threshold`.
pub fn thresholded_metrics(set: &ScoredSet, threshold: f64) -> Thresholded {
    Confusion::at_threshold(set, threshold).summarize(threshold)
}

#[cfg(test)]
mod tests {
    #[test]
    fn best_f1_matches_threshold_sweep() {
        let set = ScoredSet::new(vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4], vec![1, 0, 1, 1, 0, 0]).unwrap();
        let (f1, tau) = best_f1(&set).unwrap();
        assert!((f1 - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(tau, 0.6);
        assert!((thresholded_metrics(&set, tau).f1 - f1).abs() < 1e-12);
    }

    use super::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn pr_curve_hand_example() {
        let s = set(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]);
        let pts = pr_curve(&s).unwrap();
        let p: Vec<f64> = pts.iter().map(|p| p.precision).collect();
        let r: Vec<f64> = pts.iter().map(|p| p.recall).collect();
        assert_eq!(p, vec![1.0, 0.5, 2.0 / 3.0, 0.5]);
        assert_eq!(r, vec![0.5, 0.5, 1.0, 1.0]);
        assert!((auprc(&s).unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn curve_edge_cases() {
        let tied = set(&[0.3; 5], &[1, 0, 0, 1, 0]);
        let pts = pr_curve(&tied).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].precision, pts[0].recall), (0.4, 1.0));
        assert_eq!(auroc(&tied).unwrap(), 0.5);

        let perfect = set(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
        assert!(pr_curve(&perfect).unwrap()[..2].iter().all(|p| p.precision == 1.0));
        assert_eq!(auprc(&perfect).unwrap(), 1.0);
        assert_eq!(auroc(&perfect).unwrap(), 1.0);

        assert!(matches!(pr_curve(&set(&[0.1, 0.2], &[0, 0])), Err(Error::Undefined(_))));
        assert!(matches!(auroc(&set(&[0.1, 0.2], &[1, 1])), Err(Error::Undefined(_))));
        assert!(ScoredSet::new(vec![0.1], vec![2]).is_err());
        assert!(ScoredSet::new(vec![0.1, 0.2], vec![1]).is_err());
    }

    #[test]
    fn auroc_pair_example() {
        assert_eq!(auroc(&set(&[3.0, 2.0, 1.0], &[1, 0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn thresholded_examples() {
        let t = thresholded_metrics(&set(&[0.9, 0.7], &[1, 0]), 0.5);
        assert!((t.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.accuracy, 0.5);

        let perfect = thresholded_metrics(&set(&[0.9, 0.1, 0.8], &[1, 0, 1]), 0.5);
        assert_eq!((perfect.f1, perfect.f1_macro, perfect.accuracy, perfect.mcc), (1.0, 1.0, 1.0, 1.0));

        // all-negative predictions at the held-out prevalence
        let n = 4660;
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i < 24)).collect();
        let t = thresholded_metrics(&set(&vec![0.1; n], &labels), 0.5);
        let base = 24.0 / n as f64;
        assert_eq!(t.mcc, 0.0);
        assert!((t.accuracy - (1.0 - base)).abs() < 1e-15);
        assert!((t.accuracy - 0.995).abs() < 5e-4);
        let f1_neg = 2.0 * 4636.0 / (2.0 * 4636.0 + 24.0);
        assert!((t.f1_macro - f1_neg / 2.0).abs() < 1e-15);
        assert_eq!(t.f1, 0.0);
    }
}
