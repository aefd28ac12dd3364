use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// `100 · (auprc − base_rate) / base_rate`.
pub fn pct_delta_over_base(auprc: f64, base_rate: f64) -> Result<f64> {
    if !(base_rate > 0.0) {
        return Err(Error::Undefined(format!("base rate {base_rate} must be positive")));
    }
    Ok(100.0 * (auprc - base_rate) / base_rate)
}

/// Mean over seeds of the per-seed `%Δ` over each seed's base rate.
pub fn mean_pct_delta(per_seed: &[(f64, f64)]) -> Result<f64> {
    mean_of(per_seed, |&(a, b)| pct_delta_over_base(a, b))
}

/// Mean over seeds of the per-seed `auprc / base_rate`.
pub fn mean_ratio(per_seed: &[(f64, f64)]) -> Result<f64> {
    mean_of(per_seed, |&(a, b)| {
        if b > 0.0 { Ok(a / b) } else { Err(Error::Undefined(format!("base rate {b} must be positive"))) }
    })
}

fn mean_of(xs: &[(f64, f64)], f: impl Fn(&(f64, f64)) -> Result<f64>) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Undefined("no seeds to average".into()));
    }
    let mut total = 0.0;
    for x in xs {
        total += f(x)?;
    }
    Ok(total / xs.len() as f64)
}

/// Expected average precision of a uniformly random ranking of `n` examples
/// with `n_positive` positives (untied scores).
pub fn expected_null_ap(n: usize, n_positive: usize) -> Result<f64> {
    if n_positive == 0 || n_positive > n {
        return Err(Error::Undefined(format!("{n_positive} positives among {n} examples")));
    }
    if n == 1 {
        return Ok(1.0);
    }
    let (nf, pf) = (n as f64, n_positive as f64);
    let sum: f64 = (1..=n).map(|k| (1.0 + (pf - 1.0) * (k as f64 - 1.0) / (nf - 1.0)) / k as f64).sum();
    Ok(sum / nf)
}

/// Fractional (average) ranks, 1-based.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| ranks[k] = r);
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided, t-approximation with n − 2 degrees of freedom.
    pub p: f64,
    pub n: usize,
}

pub fn spearman_rank_corr(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::validation(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::validation("Spearman correlation needs at least 3 points"));
    }
    let r = pearson(&fractional_ranks(x), &fractional_ranks(y))
        .ok_or_else(|| Error::Undefined("Spearman correlation of a constant vector".into()))?;
    let df = (x.len() - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0)
    };
    Ok(Correlation { r, p, n: x.len() })
}

/// Normal-approximation SE from a two-sided CI: `(hi − lo) / (2·z)`.
/// At the 95% level the divisor is 3.92.
pub fn se_from_ci(lo: f64, hi: f64, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) || !(hi >= lo) {
        return Err(Error::validation(format!("bad interval [{lo}, {hi}] at level {level}")));
    }
    let z = if (level - 0.95).abs() < 1e-12 {
        1.96
    } else {
        statrs::distribution::Normal::standard().inverse_cdf(0.5 + level / 2.0)
    };
    Ok((hi - lo) / (2.0 * z))
}

/// Mean and standard error (sample SD / √n) across seeds.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeedSummary {
    pub mean: f64,
    /// NaN with a single value.
    pub se: f64,
    pub n: usize,
}

pub fn seed_summary(values: &[f64]) -> Result<SeedSummary> {
    if values.is_empty() {
        return Err(Error::Undefined("no values to summarize".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let se = if n < 2 {
        f64::NAN
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    Ok(SeedSummary { mean, se, n })
}

/// One-sided (greater) one-sample t-test p-value for `mean > 0`.
pub fn t_test_greater(values: &[f64]) -> Result<f64> {
    let s = seed_summary(values)?;
    if s.n < 2 {
        return Err(Error::Undefined("t-test needs at least two values".into()));
    }
    if s.se == 0.0 {
        return Ok(if s.mean > 0.0 { 0.0 } else { 1.0 });
    }
    let dist = StudentsT::new(0.0, 1.0, (s.n - 1) as f64).expect("df > 0");
    Ok(1.0 - dist.cdf(s.mean / s.se))
}

/// Least-squares fit `y = intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::validation("linear fit needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Undefined("linear fit over a constant x".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok(LinearFit { slope, intercept: my - slope * mx })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_statistics() {
        assert!((se_from_ci(0.0045, 0.0154, 0.95).unwrap() - 0.0109 / 3.92).abs() < 1e-15);
        assert!((se_from_ci(-1.0, 1.0, 0.9).unwrap() - 1.0 / 1.6448536269514722).abs() < 1e-9);
        let s = seed_summary(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.n), (2.0, 3));
        assert!((s.se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(seed_summary(&[4.0]).unwrap().se.is_nan());
        // scipy.stats.ttest_1samp([1, 2, 3], 0, alternative="greater").pvalue
        assert!((t_test_greater(&[1.0, 2.0, 3.0]).unwrap() - 0.03708995011372426).abs() < 1e-9);
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert_eq!((f.slope, f.intercept), (2.0, 1.0));
    }

    #[test]
    fn null_ap_matches_enumeration() {
        use crate::metrics::{auprc, ScoredSet};
        let n = 7;
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        for p in 1..=3 {
            let mut total = 0.0;
            let mut count = 0;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != p {
                    continue;
                }
                let labels = (0..n).map(|i| ((mask >> i) & 1) as u8).collect();
                total += auprc(&ScoredSet::new(scores.clone(), labels).unwrap()).unwrap();
                count += 1;
            }
            assert!((expected_null_ap(n, p).unwrap() - total / count as f64).abs() < 1e-12);
        }
        assert!((expected_null_ap(4660, 24).unwrap() - 0.006864).abs() < 5e-7);
        assert!(expected_null_ap(10, 0).is_err());
    }

    #[test]
    fn delta_examples() {
        assert_eq!(pct_delta_over_base(0.02, 0.02).unwrap(), 0.0);
        assert!((pct_delta_over_base(0.05, 0.01).unwrap() - 400.0).abs() < 1e-9);
        assert!(pct_delta_over_base(0.05, 0.0).is_err());
        assert!((0.094f64 / 0.007 - 13.4).abs() < 0.05);
        // per-seed ratios average differently from the ratio of means
        let seeds = [(0.04, 0.005), (0.05, 0.006)];
        let per_seed = mean_ratio(&seeds).unwrap();
        assert!((per_seed - (8.0 + 0.05 / 0.006) / 2.0).abs() < 1e-12);
        assert!((per_seed - 0.045 / 0.0055).abs() > 1e-3);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman_rank_corr(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().r, -1.0);
        let inc = spearman_rank_corr(&[1.0, 5.0, 2.0, 9.0], &[1.0, 125.0, 8.0, 729.0]).unwrap();
        assert_eq!((inc.r, inc.p), (1.0, 0.0));
        let c = spearman_rank_corr(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((c.r - 0.8).abs() < 1e-12);
        // t = 0.8·sqrt(2/0.36) = 1.8856 on 2 df → two-sided p = 0.2
        assert!((c.p - 0.2).abs() < 1e-9, "{}", c.p);
        assert!(matches!(spearman_rank_corr(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Undefined(_))));
        assert!(spearman_rank_corr(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(fractional_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }
}
