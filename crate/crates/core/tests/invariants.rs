//! Pooling, loss and sampler invariants.

use megkws::losses::{focal_loss, focal_loss_with_grad};
use megkws::model::{pool, topk_weights};
use megkws::sampling::{make_balanced_batches, SamplerConfig};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn permute<T: Copy>(x: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&i| x[i]).collect()
}

fn row_and_perm() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<usize>)> {
    (1usize..24).prop_flat_map(|n| {
        (
            prop::collection::vec(-4.0f64..4.0, n),
            prop::collection::vec(-4.0f64..4.0, n),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
        )
    })
}

proptest! {
    #[test]
    fn attention_pool_ignores_time_order((z, a, perm) in row_and_perm()) {
        let n = z.len();
        let w = softmax(&a);
        let y = pool(&z, &w, n).unwrap()[0];
        let yp = pool(&permute(&z, &perm), &permute(&w, &perm), n).unwrap()[0];
        prop_assert!((y - yp).abs() < 1e-12);
    }

    #[test]
    fn topk_pool_ignores_time_order((z, _a, perm) in row_and_perm(), fraction in 0.05f64..1.0) {
        let n = z.len();
        let y = pool(&z, &topk_weights(&z, n, fraction), n).unwrap()[0];
        let zp = permute(&z, &perm);
        let yp = pool(&zp, &topk_weights(&zp, n, fraction), n).unwrap()[0];
        prop_assert!((y - yp).abs() < 1e-12);
    }

    #[test]
    fn focal_without_focusing_is_weighted_cross_entropy(
        data in prop::collection::vec((0.001f64..0.999, 0u8..2), 1..50),
        alpha in 0.05f64..0.95,
    ) {
        let (p, y): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
        let ce: f64 = p.iter().zip(&y).map(|(&p, &y)| {
            if y == 1 { -alpha * p.ln() } else { -(1.0 - alpha) * (1.0 - p).ln() }
        }).sum::<f64>() / p.len() as f64;
        prop_assert!((focal_loss(&p, &y, alpha, 0.0) - ce).abs() <= 1e-10);
        let (_, grad) = focal_loss_with_grad(&p, &y, alpha, 0.0);
        let n = p.len() as f64;
        for ((&g, &q), &y) in grad.iter().zip(&p).zip(&y) {
            let expect = if y == 1 { -alpha / q } else { (1.0 - alpha) / (1.0 - q) } / n;
            prop_assert!((g - expect).abs() <= 1e-10 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn balanced_batches_have_exact_composition(
        labels in prop::collection::vec(prop::bool::weighted(0.1), 20..400),
        batch_size in 4usize..64,
        fraction in 0.1f64..0.9,
        seed in 0u64..1000,
    ) {
        let labels: Vec<u8> = labels.into_iter().map(u8::from).collect();
        let cfg = SamplerConfig { positive_fraction: fraction, batch_size, ..Default::default() };
        prop_assume!(cfg.validate().is_ok());
        let n_pos = labels.iter().filter(|&&y| y == 1).count();
        let n_neg = labels.len() - n_pos;
        let sampler = match make_balanced_batches(&labels, &cfg, seed) {
            Ok(s) => s,
            Err(_) => {
                prop_assert!(n_pos == 0 || n_neg == 0);
                return Ok(());
            }
        };
        let want_pos = (fraction * batch_size as f64).round() as usize;
        for epoch in 0..2 {
            let mut seen = BTreeSet::new();
            for b in sampler.epoch(epoch) {
                prop_assert_eq!(b.positives.len(), want_pos);
                prop_assert_eq!(b.negatives.len(), (batch_size - want_pos).min(n_neg));
                prop_assert!(b.positives.iter().all(|&i| labels[i] == 1));
                prop_assert!(b.negatives.iter().all(|&i| labels[i] == 0));
                for &i in &b.negatives {
                    prop_assert!(seen.insert(i), "negative {} repeated within an epoch", i);
                }
            }
        }
        let a: Vec<_> = sampler.epoch(1).collect();
        let again = make_balanced_batches(&labels, &cfg, seed).unwrap();
        prop_assert_eq!(a, again.epoch(1).collect::<Vec<_>>());
    }
}
