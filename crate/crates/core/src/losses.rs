//! Focal loss with a pairwise logistic ranking term.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{kernels::sigmoid, Graph, Real, Var};
use crate::rng::{stream, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub rank_weight: f64,
    pub rank_pairs_per_batch: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { focal_alpha: 0.25, focal_gamma: 2.0, rank_weight: 0.1, rank_pairs_per_batch: 64 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| {
            Err(Error::Config { path: format!("loss.{path}"), message: message.into() })
        };
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return bad("focal_alpha", "must lie in (0, 1)");
        }
        if !(self.focal_gamma >= 0.0) {
            return bad("focal_gamma", "must be nonnegative");
        }
        if !(self.rank_weight >= 0.0) {
            return bad("rank_weight", "must be nonnegative");
        }
        Ok(())
    }
}

pub const PROB_CLAMP: f64 = 1e-7;

/// Mean focal loss and its gradient w.r.t. each probability.
///
/// Per example, with `p_t = p` for positives and `1 − p` for negatives and
/// `α_t = α` / `1 − α` likewise: `−α_t·(1 − p_t)^γ·ln p_t`. Probabilities are
/// clamped to `[1e-7, 1 − 1e-7]`; clamped entries get zero gradient.
pub fn focal_loss_with_grad<T: Real>(prob: &[T], labels: &[u8], alpha: f64, gamma: f64) -> (T, Vec<T>) {
    assert_eq!(prob.len(), labels.len(), "focal_loss: prob/label length mismatch");
    let n = prob.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(prob.len());
    for (&p, &y) in prob.iter().zip(labels) {
        let raw = p.as_f64();
        let pc = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let (q, a, sign) = if y == 1 { (pc, alpha, 1.0) } else { (1.0 - pc, 1.0 - alpha, -1.0) };
        let one_minus = 1.0 - q;
        let ln_q = q.ln();
        total += -a * one_minus.powf(gamma) * ln_q;
        let d_dq = if gamma == 0.0 {
            -a / q
        } else {
            -a * (one_minus.powf(gamma) / q - gamma * one_minus.powf(gamma - 1.0) * ln_q)
        };
        let clamped = raw != pc;
        grad.push(T::lit(if clamped { 0.0 } else { sign * d_dq / n }));
    }
    (T::lit(total / n), grad)
}

pub fn focal_loss(prob: &[f64], labels: &[u8], alpha: f64, gamma: f64) -> f64 {
    focal_loss_with_grad(prob, labels, alpha, gamma).0
}

/// Draw `n_pairs` (positive, negative) index pairs uniformly with replacement.
/// Returns no pairs when either class is absent.
pub fn sample_rank_pairs(labels: &[u8], n_pairs: usize, seed: u64, step: u64) -> Vec<(usize, usize)> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    if pos.is_empty() || neg.is_empty() {
        return Vec::new();
    }
    let mut rng = stream(seed, &[tag::RANK_PAIRS, step]);
    (0..n_pairs)
        .map(|_| (pos[rng.random_range(0..pos.len())], neg[rng.random_range(0..neg.len())]))
        .collect()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean of `ln(1 + exp(−(l_i − l_j)))` over the given pairs, with its
/// gradient w.r.t. every logit. Zero when there are no pairs.
pub fn pairwise_rank_loss_with_grad<T: Real>(logits: &[T], pairs: &[(usize, usize)]) -> (T, Vec<T>) {
    let mut grad = vec![T::zero(); logits.len()];
    if pairs.is_empty() {
        return (T::zero(), grad);
    }
    let n = pairs.len() as f64;
    let mut total = 0.0;
    for &(i, j) in pairs {
        let diff = logits[i].as_f64() - logits[j].as_f64();
        total += softplus(-diff);
        let s = sigmoid(-diff) / n;
        grad[i] -= T::lit(s);
        grad[j] += T::lit(s);
    }
    (T::lit(total / n), grad)
}

pub fn pairwise_rank_loss(logits: &[f64], labels: &[u8], n_pairs: usize, seed: u64) -> f64 {
    let pairs = sample_rank_pairs(labels, n_pairs, seed, 0);
    pairwise_rank_loss_with_grad(logits, &pairs).0
}

/// `focal(prob) + rank_weight · rank(logit)` recorded into the graph.
pub fn combined_loss<T: Real>(
    g: &mut Graph<T>,
    prob: Var,
    logit: Var,
    labels: &[u8],
    config: &LossConfig,
    pairs: &[(usize, usize)],
) -> Result<Var> {
    let (fv, fg) = focal_loss_with_grad(g.value(prob).data(), labels, config.focal_alpha, config.focal_gamma);
    let focal = g.custom_scalar(prob, fv, fg)?;
    if config.rank_weight == 0.0 {
        return Ok(focal);
    }
    let (rv, rg) = pairwise_rank_loss_with_grad(g.value(logit).data(), pairs);
    let rank = g.custom_scalar(logit, rv, rg)?;
    let rank = g.scale(rank, T::lit(config.rank_weight));
    g.add(focal, rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bce(p: f64, y: u8) -> f64 {
        if y == 1 { -p.ln() } else { -(1.0 - p).ln() }
    }

    #[test]
    fn focal_reference_values() {
        let want = -0.25 * 0.1f64.powi(2) * 0.9f64.ln();
        let got = focal_loss(&[0.9], &[1], 0.25, 2.0);
        assert!((got - want).abs() < 1e-15);
        assert!((got - 2.634e-4).abs() < 1e-7);
        // p = 1 for a positive contributes nothing beyond the clamp floor
        assert!(focal_loss(&[1.0], &[1], 0.25, 2.0) < 1e-20);
    }

    #[test]
    fn rank_reference_values() {
        let equal = pairwise_rank_loss(&[0.3, 0.3], &[1, 0], 5, 1);
        assert!((equal - 2f64.ln()).abs() < 1e-15);
        let two = pairwise_rank_loss(&[2.0, 0.0], &[1, 0], 3, 1);
        assert!((two - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-15);
        assert!((two - 0.1269).abs() < 1e-4);
        assert!(pairwise_rank_loss(&[1e6, 0.0], &[1, 0], 3, 1) < 1e-300);
        assert_eq!(pairwise_rank_loss(&[1.0, 0.0], &[0, 0], 3, 1), 0.0);
    }

    #[test]
    fn pairs_are_deterministic_and_well_formed() {
        let labels = [1, 0, 0, 1, 0];
        let a = sample_rank_pairs(&labels, 20, 9, 4);
        assert_eq!(a, sample_rank_pairs(&labels, 20, 9, 4));
        assert_ne!(a, sample_rank_pairs(&labels, 20, 9, 5));
        assert!(a.iter().all(|&(i, j)| labels[i] == 1 && labels[j] == 0));
    }

    #[test]
    fn focal_gradient_matches_finite_difference() {
        let probs = [0.2, 0.7, 0.45, 0.9];
        let labels = [1, 0, 1, 0];
        let (_, grad) = focal_loss_with_grad(&probs, &labels, 0.3, 1.5);
        for i in 0..4 {
            let h = 1e-6;
            let (mut up, mut dn) = (probs, probs);
            up[i] += h;
            dn[i] -= h;
            let fd = (focal_loss(&up, &labels, 0.3, 1.5) - focal_loss(&dn, &labels, 0.3, 1.5)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "{i}: {fd} vs {}", grad[i]);
        }
    }

    proptest! {
        #[test]
        fn focal_with_zero_gamma_is_half_bce(
            rows in prop::collection::vec((1e-6f64..1.0 - 1e-6, 0u8..2), 1..40)
        ) {
            let (p, y): (Vec<f64>, Vec<u8>) = rows.into_iter().unzip();
            let want = 0.5 * p.iter().zip(&y).map(|(&p, &y)| bce(p, y)).sum::<f64>() / p.len() as f64;
            prop_assert!((focal_loss(&p, &y, 0.5, 0.0) - want).abs() <= 1e-10);
        }

        #[test]
        fn focal_is_nonnegative_and_decreasing_in_pt(
            a in 0.01f64..0.99, gamma in 0.0f64..5.0, q1 in 1e-6f64..1.0, q2 in 1e-6f64..1.0, y in 0u8..2
        ) {
            let (lo, hi) = if q1 < q2 { (q1, q2) } else { (q2, q1) };
            // p_t = p for y = 1 and 1 − p for y = 0
            let as_p = |q: f64| if y == 1 { q } else { 1.0 - q };
            let l_lo = focal_loss(&[as_p(lo)], &[y], a, gamma);
            let l_hi = focal_loss(&[as_p(hi)], &[y], a, gamma);
            prop_assert!(l_lo >= 0.0 && l_hi >= 0.0);
            prop_assert!(l_hi <= l_lo + 1e-12);
        }
    }
}
