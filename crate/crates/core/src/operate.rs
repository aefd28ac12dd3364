//! Threshold selection and translation of (precision, recall) into hourly
//! false-alarm, miss and detection rates for a deployment scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::PrPoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Keyword events per hour (λ).
    pub lambda_per_hour: f64,
}

impl Scenario {
    pub fn new(name: impl Into<String>, lambda_per_hour: f64) -> Result<Self> {
        if !(lambda_per_hour > 0.0 && lambda_per_hour.is_finite()) {
            return Err(Error::validation(format!("scenario rate must be positive, got {lambda_per_hour}")));
        }
        Ok(Scenario { name: name.into(), lambda_per_hour })
    }

    pub fn assistive() -> Self {
        Scenario { name: "assistive".into(), lambda_per_hour: 2.0 }
    }

    pub fn hands_free() -> Self {
        Scenario { name: "hands_free".into(), lambda_per_hour: 10.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourlyRates {
    pub fa_per_hour: f64,
    pub misses_per_hour: f64,
    pub detections_per_hour: f64,
}

/// `FA/h = R·λ·(1/P − 1)`, `misses/h = λ·(1 − R)`, `detections/h = λ·R`.
pub fn translate(precision: f64, recall: f64, scenario: &Scenario) -> Result<HourlyRates> {
    if !(precision > 0.0) {
        return Err(Error::Undefined(format!("false-alarm rate needs precision > 0, got {precision}")));
    }
    let lambda = scenario.lambda_per_hour;
    Ok(HourlyRates {
        fa_per_hour: recall * lambda * (1.0 / precision - 1.0),
        misses_per_hour: lambda * (1.0 - recall),
        detections_per_hour: lambda * recall,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub scenario: Scenario,
    pub fa_per_hour: f64,
    pub misses_per_hour: f64,
    pub detections_per_hour: f64,
    /// False when no curve point met the constraint and a fallback was returned.
    pub feasible: bool,
}

/// Points with zero precision have no defined false-alarm rate and are
/// treated as infinitely costly.
fn operating_point(p: &PrPoint, scenario: &Scenario, feasible: bool) -> OperatingPoint {
    let rates = translate(p.precision, p.recall, scenario).unwrap_or(HourlyRates {
        fa_per_hour: f64::INFINITY,
        misses_per_hour: scenario.lambda_per_hour * (1.0 - p.recall),
        detections_per_hour: scenario.lambda_per_hour * p.recall,
    });
    OperatingPoint {
        threshold: p.threshold,
        precision: p.precision,
        recall: p.recall,
        scenario: scenario.clone(),
        fa_per_hour: rates.fa_per_hour,
        misses_per_hour: rates.misses_per_hour,
        detections_per_hour: rates.detections_per_hour,
        feasible,
    }
}

fn best_by<'a>(
    points: impl Iterator<Item = &'a OperatingPoint>,
    better: impl Fn(&OperatingPoint, &OperatingPoint) -> bool,
) -> Option<OperatingPoint> {
    let mut best: Option<&OperatingPoint> = None;
    for p in points {
        if best.is_none_or(|b| better(p, b)) {
            best = Some(p);
        }
    }
    best.cloned()
}

fn more_recall(a: &OperatingPoint, b: &OperatingPoint) -> bool {
    (a.recall, a.precision, a.threshold) > (b.recall, b.precision, b.threshold)
}

fn less_fa(a: &OperatingPoint, b: &OperatingPoint) -> bool {
    a.fa_per_hour < b.fa_per_hour || (a.fa_per_hour == b.fa_per_hour && a.threshold > b.threshold)
}

fn check_curve(curve: &[PrPoint]) -> Result<()> {
    if curve.is_empty() {
        return Err(Error::validation("operating-point selection needs a non-empty curve"));
    }
    Ok(())
}

/// Highest recall whose FA/h is within `fa_budget` (ties: higher precision,
/// then higher threshold). Falls back to the minimum-FA/h point, flagged.
pub fn select_threshold_max_recall(curve: &[PrPoint], scenario: &Scenario, fa_budget: f64) -> Result<OperatingPoint> {
    check_curve(curve)?;
    let pts: Vec<OperatingPoint> = curve.iter().map(|p| operating_point(p, scenario, true)).collect();
    if let Some(p) = best_by(pts.iter().filter(|p| p.fa_per_hour <= fa_budget), more_recall) {
        return Ok(p);
    }
    let mut p = best_by(pts.iter(), |a, b| less_fa(a, b) || (a.fa_per_hour == b.fa_per_hour && more_recall(a, b)))
        .expect("non-empty");
    p.feasible = false;
    Ok(p)
}

/// Lowest FA/h among points with recall ≥ `target_recall` (ties: higher
/// threshold). Falls back to the maximum-recall point, flagged.
pub fn select_threshold_min_fa(curve: &[PrPoint], scenario: &Scenario, target_recall: f64) -> Result<OperatingPoint> {
    check_curve(curve)?;
    let pts: Vec<OperatingPoint> = curve.iter().map(|p| operating_point(p, scenario, true)).collect();
    if let Some(p) = best_by(pts.iter().filter(|p| p.recall >= target_recall), less_fa) {
        return Ok(p);
    }
    let mut p = best_by(pts.iter(), more_recall).expect("non-empty");
    p.feasible = false;
    Ok(p)
}

/// False positives at `score ≥ threshold` per hour of labelled window time
/// (`n · window_s / 3600` hours).
pub fn empirical_fp_per_hour(scores: &[f64], labels: &[u8], threshold: f64, window_s: f64) -> Result<f64> {
    if !(window_s > 0.0) {
        return Err(Error::validation(format!("window_s must be positive, got {window_s}")));
    }
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::validation("scores and labels must be non-empty and of equal length"));
    }
    let fp = scores.iter().zip(labels).filter(|(&s, &y)| y == 0 && s >= threshold).count();
    Ok(fp as f64 / coverage_hours(scores.len(), window_s))
}

pub fn coverage_hours(n_windows: usize, window_s: f64) -> f64 {
    n_windows as f64 * window_s / 3600.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallAtFa {
    pub fa_per_hour: f64,
    pub recall: f64,
}

/// Curve points translated to (FA/h, recall), sorted by FA/h and reduced to
/// the upper envelope: each kept point has strictly more recall than every
/// point at lower or equal FA/h.
pub fn recall_vs_fa_curve(curve: &[PrPoint], scenario: &Scenario) -> Result<Vec<RecallAtFa>> {
    check_curve(curve)?;
    let mut pts: Vec<RecallAtFa> = curve
        .iter()
        .filter_map(|p| translate(p.precision, p.recall, scenario).ok().map(|r| (r.fa_per_hour, p.recall)))
        .map(|(fa_per_hour, recall)| RecallAtFa { fa_per_hour, recall })
        .collect();
    pts.sort_by(|a, b| a.fa_per_hour.total_cmp(&b.fa_per_hour).then(b.recall.total_cmp(&a.recall)));
    let mut out: Vec<RecallAtFa> = Vec::new();
    for p in pts {
        if out.last().is_none_or(|last| p.recall > last.recall) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Recall of an envelope at `fa` (step function; 0 below its first point).
pub fn recall_at(envelope: &[RecallAtFa], fa: f64) -> f64 {
    envelope.iter().take_while(|p| p.fa_per_hour <= fa).map(|p| p.recall).fold(0.0, f64::max)
}

/// Mean over envelopes of their step-function recall on a shared FA/h grid.
pub fn mean_recall_curve(envelopes: &[Vec<RecallAtFa>], grid: &[f64]) -> Vec<RecallAtFa> {
    grid.iter()
        .map(|&fa| RecallAtFa {
            fa_per_hour: fa,
            recall: envelopes.iter().map(|e| recall_at(e, fa)).sum::<f64>() / envelopes.len().max(1) as f64,
        })
        .collect()
}

pub fn write_recall_fa_csv(path: &Path, curve: &[RecallAtFa]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(threshold: f64, precision: f64, recall: f64) -> PrPoint {
        PrPoint { threshold, precision, recall }
    }

    fn three_point() -> Vec<PrPoint> {
        vec![pt(0.9, 1.0, 0.2), pt(0.5, 0.5, 0.5), pt(0.1, 0.1, 0.9)]
    }

    #[test]
    fn translate_examples() {
        let a = Scenario::assistive();
        assert_eq!(
            translate(1.0, 1.0, &a).unwrap(),
            HourlyRates { fa_per_hour: 0.0, misses_per_hour: 0.0, detections_per_hour: 2.0 }
        );
        assert_eq!(translate(0.5, 1.0, &a).unwrap().fa_per_hour, 2.0);
        assert!((translate(0.0836, 0.10, &a).unwrap().fa_per_hour - 2.194).abs() < 2e-3);
        assert!(matches!(translate(0.0, 0.5, &a), Err(Error::Undefined(_))));
        assert!(Scenario::new("x", 0.0).is_err());
    }

    #[test]
    fn min_fa_three_point() {
        let p = select_threshold_min_fa(&three_point(), &Scenario::assistive(), 0.5).unwrap();
        assert_eq!((p.precision, p.recall, p.fa_per_hour, p.feasible), (0.5, 0.5, 1.0, true));
        let p = select_threshold_min_fa(&three_point(), &Scenario::assistive(), 0.0).unwrap();
        assert_eq!(p.fa_per_hour, 0.0);
        let p = select_threshold_min_fa(&three_point(), &Scenario::assistive(), 1.0).unwrap();
        assert!(!p.feasible);
        assert_eq!(p.recall, 0.9);
    }

    #[test]
    fn max_recall_boundaries() {
        let s = Scenario::assistive();
        let all = select_threshold_max_recall(&three_point(), &s, f64::INFINITY).unwrap();
        assert_eq!(all.recall, 0.9);
        let zero = select_threshold_max_recall(&three_point(), &s, 0.0).unwrap();
        assert!(zero.feasible && zero.precision == 1.0);
        let no_perfect = [pt(0.5, 0.5, 0.5), pt(0.1, 0.1, 0.9)];
        let p = select_threshold_max_recall(&no_perfect, &s, 0.0).unwrap();
        assert!(!p.feasible);
        assert_eq!(p.fa_per_hour, 1.0);
    }

    #[test]
    fn envelope_examples() {
        let c = recall_vs_fa_curve(&three_point(), &Scenario::assistive()).unwrap();
        let got: Vec<(f64, f64)> = c.iter().map(|p| (p.fa_per_hour, p.recall)).collect();
        assert_eq!(got[..2], [(0.0, 0.2), (1.0, 0.5)]);
        // 2 · 0.9 · (1/0.1 − 1)
        assert!((got[2].0 - 16.2).abs() < 1e-12 && got[2].1 == 0.9);
        let perfect = [pt(0.9, 1.0, 0.5), pt(0.8, 1.0, 1.0), pt(0.2, 2.0 / 3.0, 1.0), pt(0.1, 0.5, 1.0)];
        let c = recall_vs_fa_curve(&perfect, &Scenario::assistive()).unwrap();
        assert_eq!(c, vec![RecallAtFa { fa_per_hour: 0.0, recall: 1.0 }]);
    }

    #[test]
    fn empirical_fp_examples() {
        let n = 4660;
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i < 24)).collect();
        let mut scores = vec![0.0; n];
        assert_eq!(empirical_fp_per_hour(&scores, &labels, 0.5, 1.05).unwrap(), 0.0);
        scores[100..122].iter_mut().for_each(|s| *s = 0.9);
        let fph = empirical_fp_per_hour(&scores, &labels, 0.5, 1.05).unwrap();
        assert!((coverage_hours(n, 1.05) - 1.359).abs() < 1e-3);
        assert!((fph - 16.2).abs() < 0.05, "{fph}");
        let all = empirical_fp_per_hour(&vec![1.0; n], &labels, 0.5, 1.05).unwrap();
        assert!((all - 4636.0 * 3600.0 / (n as f64 * 1.05)).abs() < 1e-9);
        assert!(empirical_fp_per_hour(&scores, &labels, 0.5, 0.0).is_err());
    }

    #[test]
    fn mean_curve_averages_steps() {
        let a = vec![RecallAtFa { fa_per_hour: 0.0, recall: 0.2 }, RecallAtFa { fa_per_hour: 1.0, recall: 0.6 }];
        let b = vec![RecallAtFa { fa_per_hour: 0.5, recall: 0.4 }];
        let m = mean_recall_curve(&[a, b], &[0.0, 0.5, 1.0]);
        let r: Vec<f64> = m.iter().map(|p| p.recall).collect();
        assert_eq!(r, vec![0.1, 0.30000000000000004, 0.5]);
    }

    fn arb_curve() -> impl Strategy<Value = Vec<PrPoint>> {
        prop::collection::vec((0.0f64..1.0, 0.01f64..=1.0, 0.0f64..=1.0), 1..12)
            .prop_map(|v| v.into_iter().map(|(t, p, r)| pt(t, p, r)).collect())
    }

    proptest! {
        #[test]
        fn translate_identities(p in 0.01f64..=1.0, r in 0.0f64..=1.0, lambda in 0.1f64..50.0) {
            let s = Scenario::new("s", lambda).unwrap();
            let d = Scenario::new("d", 2.0 * lambda).unwrap();
            let a = translate(p, r, &s).unwrap();
            let b = translate(p, r, &d).unwrap();
            prop_assert!((a.detections_per_hour + a.misses_per_hour - lambda).abs() <= 1e-12 * lambda.max(1.0));
            prop_assert!((b.fa_per_hour - 2.0 * a.fa_per_hour).abs() <= 1e-9 * (1.0 + a.fa_per_hour));
            prop_assert!((b.misses_per_hour - 2.0 * a.misses_per_hour).abs() <= 1e-9);
            prop_assert!((b.detections_per_hour - 2.0 * a.detections_per_hour).abs() <= 1e-9);
        }

        #[test]
        fn selectors_stay_on_curve_and_budget_is_monotone(curve in arb_curve(), b1 in 0.0f64..20.0, b2 in 0.0f64..20.0, target in 0.0f64..=1.0) {
            let s = Scenario::assistive();
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let p_lo = select_threshold_max_recall(&curve, &s, lo).unwrap();
            let p_hi = select_threshold_max_recall(&curve, &s, hi).unwrap();
            if p_lo.feasible {
                prop_assert!(p_hi.recall >= p_lo.recall);
            }
            let q = select_threshold_min_fa(&curve, &s, target).unwrap();
            for p in [&p_lo, &p_hi, &q] {
                prop_assert!(curve.iter().any(|c| c.threshold == p.threshold && c.precision == p.precision && c.recall == p.recall));
            }
            let env = recall_vs_fa_curve(&curve, &s).unwrap();
            prop_assert!(env.windows(2).all(|w| w[0].fa_per_hour <= w[1].fa_per_hour && w[0].recall < w[1].recall));
        }
    }
}
