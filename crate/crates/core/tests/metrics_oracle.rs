//! Ranking metrics against exhaustive brute-force definitions.

use megkws::metrics::{
    auprc, auroc, bootstrap_ci, permutation_pvalue, pr_curve, Metric, ScoredSet,
};
use megkws::rng::stream;
use proptest::prelude::*;
use rand::Rng;

/// Step-interpolated AP: for every distinct threshold t (descending), add
/// `(R(t) − R(prev)) · P(t)` where predictions are `score ≥ t`.
fn brute_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev_r) = (0.0, 0.0);
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &y)| s >= t && y == 1).count() as f64;
        let predicted = scores.iter().filter(|&&s| s >= t).count() as f64;
        let r = tp / pos;
        ap += (r - prev_r) * (tp / predicted);
        prev_r = r;
    }
    ap
}

/// Mann-Whitney over every (positive, negative) pair, ties counted half.
fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn random_set(rng: &mut impl Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=12);
    // coarse grid so ties are common
    let levels = rng.random_range(2..=8);
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
    labels[0] = 1;
    labels[1] = 0;
    (scores, labels)
}

#[test]
fn exhaustive_oracles_on_small_sets() {
    let mut rng = stream(11, &[]);
    for _ in 0..500 {
        let (scores, labels) = random_set(&mut rng);
        let set = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
        let ap = auprc(&set).unwrap();
        let roc = auroc(&set).unwrap();
        assert!((ap - brute_ap(&scores, &labels)).abs() <= 1e-12, "{scores:?} {labels:?}");
        assert!((roc - brute_auroc(&scores, &labels)).abs() <= 1e-12, "{scores:?} {labels:?}");
    }
}

#[test]
fn curve_points_match_direct_counts() {
    let mut rng = stream(12, &[]);
    for _ in 0..100 {
        let (scores, labels) = random_set(&mut rng);
        let set = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
        let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
        for p in pr_curve(&set).unwrap() {
            let tp = scores.iter().zip(&labels).filter(|(&s, &y)| s >= p.threshold && y == 1).count() as f64;
            let n = scores.iter().filter(|&&s| s >= p.threshold).count() as f64;
            assert_eq!(p.recall, tp / pos);
            assert_eq!(p.precision, tp / n);
        }
    }
}

#[test]
fn permutation_and_bootstrap_are_reproducible() {
    let mut rng = stream(13, &[]);
    let labels: Vec<u8> = (0..300).map(|i| u8::from(i % 10 == 0)).collect();
    let scores: Vec<f64> = labels.iter().map(|&y| rng.random::<f64>() + 0.5 * y as f64).collect();
    let set = ScoredSet::new(scores, labels).unwrap();
    let a = permutation_pvalue(&set, Metric::Auprc, 500, 3).unwrap();
    assert_eq!(a, permutation_pvalue(&set, Metric::Auprc, 500, 3).unwrap());
    assert!(a.p_value >= 1.0 / 501.0 && a.p_value < 0.01);
    let b = bootstrap_ci(&set, Metric::Auroc, 300, 0.95, 3).unwrap();
    assert_eq!(b, bootstrap_ci(&set, Metric::Auroc, 300, 0.95, 3).unwrap());
    assert!(b.lo <= b.hi);
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..40).prop_flat_map(|n| {
        (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(0u8..2, n)).prop_map(|(s, mut y)| {
            y[0] = 1;
            y[1] = 0;
            (s, y)
        })
    })
}

proptest! {
    #[test]
    fn metrics_are_invariant_to_monotone_rescoring((scores, labels) in scored()) {
        let set = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
        let mapped = ScoredSet::new(scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect(), labels).unwrap();
        prop_assert!((auprc(&set).unwrap() - auprc(&mapped).unwrap()).abs() < 1e-12);
        prop_assert!((auroc(&set).unwrap() - auroc(&mapped).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_interval((scores, labels) in scored()) {
        let set = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
        let ap = auprc(&set).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0);
        let roc = auroc(&set).unwrap();
        prop_assert!((0.0..=1.0).contains(&roc));
        let flipped = ScoredSet::new(scores.iter().map(|s| -s).collect(), labels).unwrap();
        prop_assert!((roc + auroc(&flipped).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranking_scores_one(labels in prop::collection::vec(0u8..2, 2..40)) {
        let mut labels = labels;
        labels[0] = 1;
        labels[1] = 0;
        let scores = labels.iter().map(|&y| y as f64).collect();
        let set = ScoredSet::new(scores, labels).unwrap();
        prop_assert_eq!(auprc(&set).unwrap(), 1.0);
        prop_assert_eq!(auroc(&set).unwrap(), 1.0);
    }
}
