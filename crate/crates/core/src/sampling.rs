//! Class-balanced batch construction and training-time augmentation.

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Session;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub positive_fraction: f64,
    pub jitter_samples: usize,
    pub noise_std_fraction: f64,
    pub batch_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { positive_fraction: 0.5, jitter_samples: 10, noise_std_fraction: 0.1, batch_size: 32 }
    }
}

impl SamplerConfig {
    pub fn positives_per_batch(&self) -> usize {
        (self.positive_fraction * self.batch_size as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| {
            Err(Error::Config { path: format!("sampler.{path}"), message: message.into() })
        };
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return bad("positive_fraction", "must lie in (0, 1)");
        }
        if (self.batch_size as f64) * self.positive_fraction < 1.0 {
            return bad("batch_size", "positive_fraction · batch_size must be at least 1");
        }
        if self.positives_per_batch() >= self.batch_size {
            return bad("batch_size", "no room left for negatives");
        }
        if !(self.noise_std_fraction >= 0.0) {
            return bad("noise_std_fraction", "must be nonnegative");
        }
        Ok(())
    }
}

/// Indices into the example list for one training batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Positives first, then negatives.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.positives.iter().chain(&self.negatives).copied()
    }
}

/// Balanced batches over a labelled pool.
///
/// An epoch is one pass over the negatives in a fresh random order. Each
/// batch takes the next `batch_size − round(positive_fraction·batch_size)`
/// negatives and draws the positives with replacement. Negatives left over
/// at the end of an epoch (fewer than one batch's worth) are skipped, so no
/// negative repeats within an epoch.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    positives: Vec<usize>,
    negatives: Vec<usize>,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
}

pub fn make_balanced_batches(labels: &[u8], config: &SamplerConfig, seed: u64) -> Result<BalancedSampler> {
    config.validate()?;
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InfeasibleSampler(format!(
            "{} positives and {} negatives; both classes are required",
            positives.len(),
            negatives.len()
        )));
    }
    let n_pos = config.positives_per_batch();
    Ok(BalancedSampler { positives, negatives, n_pos, n_neg: config.batch_size - n_pos, seed })
}

impl BalancedSampler {
    pub fn batches_per_epoch(&self) -> usize {
        (self.negatives.len() / self.n_neg).max(1)
    }

    pub fn epoch(&self, epoch: usize) -> impl Iterator<Item = Batch> + '_ {
        let mut order = self.negatives.clone();
        order.shuffle(&mut stream(self.seed, &[tag::SAMPLER, epoch as u64, 0]));
        let mut pos_rng = stream(self.seed, &[tag::SAMPLER, epoch as u64, 1]);
        let n_neg = self.n_neg.min(order.len());
        (0..self.batches_per_epoch()).map(move |b| Batch {
            positives: (0..self.n_pos).map(|_| self.positives[pos_rng.random_range(0..self.positives.len())]).collect(),
            negatives: order[b * n_neg..(b + 1) * n_neg].to_vec(),
        })
    }
}

/// Where a window came from, for jitter by re-slicing.
#[derive(Clone, Copy, Debug)]
pub struct WindowSource<'a> {
    pub session: &'a Session,
    pub start: usize,
}

#[derive(Clone, Debug)]
pub struct Augmented {
    pub signal: Array2<f32>,
    /// Realized shift in samples (0 when the shifted window would leave the session).
    pub shift: isize,
}

/// Shift the window start by a uniform integer offset in
/// `[−jitter, +jitter]`, re-slicing from the source session, then add
/// Gaussian noise with per-channel std `noise_std_fraction · channel_std[c]`.
pub fn augment(
    window: ArrayView2<'_, f32>,
    jitter_samples: usize,
    noise_std_fraction: f64,
    source: Option<WindowSource<'_>>,
    channel_std: &[f64],
    rng: &mut impl Rng,
) -> Augmented {
    let (c, n) = window.dim();
    let j = jitter_samples as i64;
    let drawn = if j > 0 { rng.random_range(-j..=j) as isize } else { 0 };
    let mut shift = 0;
    let mut signal = match source {
        Some(src) if drawn != 0 => {
            let start = src.start as isize + drawn;
            if start >= 0 && start as usize + n <= src.session.n_samples() {
                shift = drawn;
                let s0 = start as usize;
                src.session.signal().slice(s![.., s0..s0 + n]).to_owned()
            } else {
                window.to_owned()
            }
        }
        _ => window.to_owned(),
    };
    if noise_std_fraction > 0.0 {
        for ch in 0..c {
            let sd = noise_std_fraction * channel_std.get(ch).copied().unwrap_or(1.0);
            let normal = Normal::new(0.0, sd).expect("finite std");
            signal.row_mut(ch).iter_mut().for_each(|v| *v += normal.sample(rng) as f32);
        }
    }
    Augmented { signal, shift }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ChannelConfig;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn batch_composition_and_epoch_coverage() {
        // the held-out test partition's shape: 24 positives among 4660
        let labels: Vec<u8> = (0..4660).map(|i| u8::from(i % 194 == 0 && i / 194 < 24)).collect();
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 24);
        let cfg = SamplerConfig { batch_size: 32, ..Default::default() };
        let sampler = make_balanced_batches(&labels, &cfg, 5).unwrap();
        let batches: Vec<Batch> = sampler.epoch(0).collect();
        assert_eq!(batches.len(), 4636 / 16);
        let mut negs = HashSet::new();
        let mut pos_draws = 0;
        for b in &batches {
            assert_eq!((b.positives.len(), b.negatives.len()), (16, 16));
            assert!(b.positives.iter().all(|&i| labels[i] == 1));
            assert!(b.negatives.iter().all(|&i| labels[i] == 0 && negs.insert(i)));
            pos_draws += b.positives.len();
        }
        // 4,624 positive draws from a pool of 24 must repeat
        assert!(pos_draws > 24);
        let again: Vec<Batch> = make_balanced_batches(&labels, &cfg, 5).unwrap().epoch(0).collect();
        assert_eq!(again, batches);
        let next: Vec<Batch> = sampler.epoch(1).collect();
        assert_ne!(next, batches);
    }

    #[test]
    fn single_class_pools_are_infeasible() {
        let cfg = SamplerConfig::default();
        assert!(matches!(make_balanced_batches(&[0, 0, 0], &cfg, 0), Err(Error::InfeasibleSampler(_))));
        assert!(matches!(make_balanced_batches(&[1, 1], &cfg, 0), Err(Error::InfeasibleSampler(_))));
    }

    proptest! {
        #[test]
        fn composition_matches_config(
            n_pos in 1usize..30, n_neg in 1usize..300, bs in 2usize..64, frac in 0.05f64..0.95, seed in 0u64..1000
        ) {
            let cfg = SamplerConfig { batch_size: bs, positive_fraction: frac, ..Default::default() };
            prop_assume!(cfg.validate().is_ok());
            let labels: Vec<u8> = (0..n_pos + n_neg).map(|i| u8::from(i < n_pos)).collect();
            let sampler = make_balanced_batches(&labels, &cfg, seed).unwrap();
            let want_pos = (frac * bs as f64).round() as usize;
            for b in sampler.epoch(0) {
                prop_assert_eq!(b.positives.len(), want_pos);
                prop_assert_eq!(b.negatives.len(), (bs - want_pos).min(n_neg));
                prop_assert!(b.positives.iter().all(|&i| labels[i] == 1));
                prop_assert!(b.negatives.iter().all(|&i| labels[i] == 0));
            }
        }
    }

    fn session(len: usize) -> Session {
        let signal = Array2::from_shape_fn((2, len), |(c, t)| (c * 10_000 + t) as f32);
        Session::new("s", signal, vec![], ChannelConfig::new(2, 250.0)).unwrap()
    }

    #[test]
    fn no_jitter_no_noise_is_identity() {
        let s = session(100);
        let w = s.signal().slice(s![.., 20..50]);
        let mut rng = stream(1, &[]);
        let out = augment(w, 0, 0.0, Some(WindowSource { session: &s, start: 20 }), &[1.0, 1.0], &mut rng);
        assert_eq!(out.signal, w.to_owned());
        assert_eq!(out.shift, 0);
    }

    #[test]
    fn jitter_reslices_within_bounds() {
        let s = session(1000);
        let mut rng = stream(2, &[]);
        let mut seen = HashSet::new();
        for _ in 0..10_000 {
            let w = s.signal().slice(s![.., 500..530]);
            let out = augment(w, 10, 0.0, Some(WindowSource { session: &s, start: 500 }), &[1.0; 2], &mut rng);
            assert!((-10..=10).contains(&out.shift));
            assert_eq!(out.signal[[0, 0]], (500 + out.shift) as f32);
            seen.insert(out.shift);
        }
        assert_eq!(seen.len(), 21);
        // at the session edge the shift falls back to zero instead of leaving the recording
        let w = s.signal().slice(s![.., 0..30]);
        for _ in 0..200 {
            let out = augment(w, 10, 0.0, Some(WindowSource { session: &s, start: 0 }), &[1.0; 2], &mut rng);
            assert!(out.shift >= 0);
        }
    }

    #[test]
    fn noise_adds_expected_variance() {
        // unit-variance input plus N(0, 0.1²) noise has variance 1.01
        let mut rng = stream(3, &[]);
        let normal = Normal::new(0.0f32, 1.0).unwrap();
        let w = Array2::from_shape_fn((2, 200_000), |_| normal.sample(&mut rng));
        let out = augment(w.view(), 0, 0.1, None, &[1.0, 1.0], &mut rng);
        for ch in 0..2 {
            let row = out.signal.row(ch);
            let m = row.iter().map(|&v| v as f64).sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / row.len() as f64;
            assert!((var - 1.01).abs() < 0.015, "channel {ch}: {var}");
        }
    }
}
