//! Finite-difference check of the full detector loss gradient.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{combined_loss, sample_rank_pairs, LossConfig};
use crate::model::{DetectorModel, ModelConfig, Pooling};
use crate::nncore::{Graph, NormMode, Tensor};
use crate::rng::stream;

/// Relative error `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub rel_errors: Vec<f64>,
    pub worst: f64,
    /// Coordinates re-differenced at a smaller step because `h` crossed a relu kink.
    pub kinked: usize,
    pub coordinates: usize,
    pub seconds: f64,
}

fn model_loss(model: &DetectorModel<f64>, x: &Tensor<f64>, labels: &[u8], pairs: &[(usize, usize)]) -> Result<(f64, Vec<bool>)> {
    let mut m = model.clone();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let (out, _) = m.forward(&mut g, xv, NormMode::Train, false)?;
    let loss = combined_loss(&mut g, out.prob, out.logit, labels, &LossConfig::default(), pairs)?;
    Ok((g.value(loss).item(), g.relu_pattern()))
}

/// Full detector (4 channels, 32 samples, batch 4), focal + 0.1·ranking
/// loss, every parameter checked by central differences with step `h`.
/// Every fifth instance uses top-k pooling.
///
/// A central difference is only valid where the loss is smooth on
/// `[θ − h, θ + h]`. When the step flips the sign of any relu input, that
/// coordinate is re-differenced with the largest of 1e-5, 1e-6, 1e-7 that
/// keeps every relu on its side.
pub fn full_model_gradcheck(n_instances: u64, h: f64) -> Result<GradCheckReport> {
    let started = Instant::now();
    let mut rel_errors = Vec::new();
    let (mut kinked, mut coordinates) = (0usize, 0usize);
    for instance in 0..n_instances {
        let mut rng = stream(100 + instance, &[]);
        let pooling = if instance % 5 == 4 { Pooling::TopK } else { Pooling::Attention };
        let cfg = ModelConfig {
            in_channels: 4,
            trunk_channels: 5,
            proj_channels: 6,
            downsample_factor: 2,
            pooling,
            ..Default::default()
        };
        let mut model = DetectorModel::<f64>::init(cfg, &mut rng)?;
        let x = Tensor::from_fn(&[4, 4, 32], |_| rng.sample(StandardNormal));
        let labels = [1u8, 0, 0, 1];
        let pairs = sample_rank_pairs(&labels, 8, instance, 0);

        let mut m = model.clone();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (out, params) = m.forward(&mut g, xv, NormMode::Train, true)?;
        let loss = combined_loss(&mut g, out.prob, out.logit, &labels, &LossConfig::default(), &pairs)?;
        let pattern = g.relu_pattern();
        g.backward(loss)?;
        // unused heads (the attention head under top-k pooling) have no gradient
        let analytic: Vec<f64> = params
            .iter()
            .flat_map(|&p| g.grad(p).map_or_else(|| vec![0.0; g.value(p).len()], <[f64]>::to_vec))
            .collect();

        let mut numeric = Vec::with_capacity(analytic.len());
        for (t, &size) in model.param_sizes().iter().enumerate() {
            for i in 0..size {
                let mut central = |step: f64| -> Result<(f64, bool)> {
                    let orig = model.params_mut()[t][i];
                    model.params_mut()[t][i] = orig + step;
                    let (up, p_up) = model_loss(&model, &x, &labels, &pairs)?;
                    model.params_mut()[t][i] = orig - step;
                    let (dn, p_dn) = model_loss(&model, &x, &labels, &pairs)?;
                    model.params_mut()[t][i] = orig;
                    Ok(((up - dn) / (2.0 * step), p_up == pattern && p_dn == pattern))
                };
                coordinates += 1;
                let (mut fd, smooth) = central(h)?;
                if !smooth {
                    kinked += 1;
                    let mut found = None;
                    for step in [1e-5, 1e-6, 1e-7] {
                        let (d, ok) = central(step)?;
                        if ok {
                            found = Some(d);
                            break;
                        }
                    }
                    fd = found.ok_or_else(|| {
                        Error::Contract(format!("instance {instance}: no kink-free step for {}[{i}]", model.param_names()[t]))
                    })?;
                }
                numeric.push(fd);
            }
        }
        rel_errors.push(rel_err(&analytic, &numeric));
    }
    Ok(GradCheckReport {
        worst: rel_errors.iter().copied().fold(0.0, f64::max),
        rel_errors,
        kinked,
        coordinates,
        seconds: started.elapsed().as_secs_f64(),
    })
}
