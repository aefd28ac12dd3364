//! The reference detector.
//!
//! ```text
//! B×C×T ─ conv(k=7) ─ norm ─ relu ─┬─ conv(k=3) ─ norm ─ relu ─ conv(k=3) ─ norm ─(+)─ relu
//!                                  └────────────────────────────────────────────┘
//!       ─ conv(k=3, stride=s) ─ norm ─ relu               → trunk_channels × T'
//!       ─ conv(1×1) ─ norm ─ relu                          → proj_channels × T'
//!       ├─ head_z: conv(1×1) → per-time logits z_t
//!       └─ head_a: conv(1×1) → softmax over time → w_t
//! logit = Σ_t w_t·z_t,  prob = sigmoid(logit)
//! ```
//!
//! With `Pooling::TopK` the attention head is bypassed and `w` is uniform
//! over the `ceil(topk_fraction·T')` largest per-time logits.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nncore::checkpoint::{load_arrays, save_arrays};
use crate::nncore::{Graph, NormMode, NormStats, Real, RunningStats, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Attention,
    TopK,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub trunk_channels: usize,
    pub proj_channels: usize,
    pub downsample_factor: usize,
    pub trunk_kernel: usize,
    pub res_kernel: usize,
    pub pooling: Pooling,
    pub topk_fraction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 306,
            trunk_channels: 128,
            proj_channels: 512,
            downsample_factor: 4,
            trunk_kernel: 7,
            res_kernel: 3,
            pooling: Pooling::Attention,
            topk_fraction: 0.25,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| {
            Err(Error::Config { path: format!("model.{path}"), message: message.into() })
        };
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("trunk_channels", self.trunk_channels),
            ("proj_channels", self.proj_channels),
            ("downsample_factor", self.downsample_factor),
        ] {
            if v == 0 {
                return bad(name, "must be at least 1");
            }
        }
        if self.trunk_kernel % 2 == 0 {
            return bad("trunk_kernel", "must be odd");
        }
        if self.res_kernel % 2 == 0 {
            return bad("res_kernel", "must be odd");
        }
        if !(self.topk_fraction > 0.0 && self.topk_fraction <= 1.0) {
            return bad("topk_fraction", "must lie in (0, 1]");
        }
        Ok(())
    }

    /// Sequence length after the strided layer.
    pub fn out_len(&self, in_len: usize) -> usize {
        (in_len.max(1) - 1) / self.downsample_factor + 1
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    fn layers(&self) -> Vec<LayerSpec> {
        let (c, h, p) = (self.in_channels, self.trunk_channels, self.proj_channels);
        let (kt, kr) = (self.trunk_kernel, self.res_kernel);
        vec![
            LayerSpec { name: "stem", cin: c, cout: h, kernel: kt, norm: true },
            LayerSpec { name: "res1", cin: h, cout: h, kernel: kr, norm: true },
            LayerSpec { name: "res2", cin: h, cout: h, kernel: kr, norm: true },
            LayerSpec { name: "down", cin: h, cout: h, kernel: kr, norm: true },
            LayerSpec { name: "proj", cin: h, cout: p, kernel: 1, norm: true },
            LayerSpec { name: "head_z", cin: p, cout: 1, kernel: 1, norm: false },
            LayerSpec { name: "head_a", cin: p, cout: 1, kernel: 1, norm: false },
        ]
    }
}

struct LayerSpec {
    name: &'static str,
    cin: usize,
    cout: usize,
    kernel: usize,
    norm: bool,
}

/// Exact trainable-parameter count: conv kernels and biases plus the
/// per-channel scale and shift of every normalization layer.
pub fn count_parameters(config: &ModelConfig) -> usize {
    config
        .layers()
        .iter()
        .map(|l| l.cout * l.cin * l.kernel + l.cout + if l.norm { 2 * l.cout } else { 0 })
        .sum()
}

/// Weighted sum along time of `z` with attention rows `w` (`B×T'`, row-major).
/// Every row of `w` must be nonnegative and sum to 1 within 1e-6.
pub fn pool<T: Real>(z: &[T], w: &[T], len: usize) -> Result<Vec<T>> {
    if len == 0 || z.len() != w.len() || z.len() % len != 0 {
        return Err(Error::Dimension(format!("pool: {} logits, {} weights, length {len}", z.len(), w.len())));
    }
    z.chunks(len)
        .zip(w.chunks(len))
        .map(|(zr, wr)| {
            let total: f64 = wr.iter().map(|v| v.as_f64()).sum();
            if wr.iter().any(|&v| v < T::zero()) || (total - 1.0).abs() > 1e-6 {
                return Err(Error::Contract(format!("attention weights must be a distribution, sum = {total}")));
            }
            Ok(zr.iter().zip(wr).map(|(&a, &b)| a * b).sum())
        })
        .collect()
}

/// Uniform weights over the `ceil(fraction·len)` largest entries of each row.
pub fn topk_weights<T: Real>(z: &[T], len: usize, fraction: f64) -> Vec<T> {
    let k = ((fraction * len as f64).ceil() as usize).clamp(1, len);
    let share = T::one() / T::from_usize(k).unwrap();
    let mut w = vec![T::zero(); z.len()];
    let mut order: Vec<usize> = Vec::with_capacity(len);
    for (zr, wr) in z.chunks(len).zip(w.chunks_mut(len)) {
        order.clear();
        order.extend(0..len);
        order.sort_by(|&a, &b| zr[b].partial_cmp(&zr[a]).unwrap_or(std::cmp::Ordering::Equal));
        for &i in &order[..k] {
            wr[i] = share;
        }
    }
    w
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `B` pooled logits.
    pub logit: Var,
    /// `B` probabilities.
    pub prob: Var,
    /// `B×T'` per-time logits.
    pub per_time_logits: Var,
    /// `B×T'` pooling weights.
    pub attention: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel<T> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    norm_names: Vec<String>,
    norm_stats: Vec<RunningStats<T>>,
}

impl<T: Real> DetectorModel<T> {
    /// Fan-in scaled uniform kernels, zero biases, unit scale and zero shift.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut norm_names = Vec::new();
        let mut norm_stats = Vec::new();
        for l in config.layers() {
            let fan_in = (l.cin * l.kernel) as f64;
            let bound = (3.0 / fan_in).sqrt();
            names.push(format!("{}.conv.weight", l.name));
            params.push(Tensor::from_fn(&[l.cout, l.cin, l.kernel], |_| T::lit(rng.random_range(-bound..bound))));
            names.push(format!("{}.conv.bias", l.name));
            params.push(Tensor::zeros(&[l.cout]));
            if l.norm {
                names.push(format!("{}.norm.scale", l.name));
                params.push(Tensor::full(&[l.cout], T::one()));
                names.push(format!("{}.norm.shift", l.name));
                params.push(Tensor::zeros(&[l.cout]));
                norm_names.push(format!("{}.norm", l.name));
                norm_stats.push(RunningStats::new(l.cout));
            }
        }
        Ok(DetectorModel { config, names, params, norm_names, norm_stats })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.params.iter_mut().map(|p| p.data_mut()).collect()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params.iter().map(Tensor::len).collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn norm_stats(&self) -> &[RunningStats<T>] {
        &self.norm_stats
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> DetectorModel<U> {
        let cast_vec = |v: &[T]| v.iter().map(|&x| U::lit(x.as_f64())).collect();
        DetectorModel {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            norm_names: self.norm_names.clone(),
            norm_stats: self
                .norm_stats
                .iter()
                .map(|s| RunningStats { mean: cast_vec(&s.mean), var: cast_vec(&s.var) })
                .collect(),
        }
    }

    /// Record a forward pass of `input` (`B×C×T`) into `g`.
    ///
    /// Train mode normalizes with batch statistics and updates the running
    /// estimates; eval mode uses the running estimates and leaves the model
    /// untouched. Parameter handles are returned in `param_names` order;
    /// they are tracked leaves only when `track_grads` is set.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        input: Var,
        mode: NormMode,
        track_grads: bool,
    ) -> Result<(ForwardOutput, Vec<Var>)> {
        let DetectorModel { config, params, norm_stats, .. } = self;
        let mut stats: Vec<NormStats<'_, T>> = match mode {
            NormMode::Train => norm_stats.iter_mut().map(NormStats::Train).collect(),
            NormMode::Eval => norm_stats.iter().map(NormStats::Eval).collect(),
        };
        build_forward(config, params, &mut stats, g, input, track_grads)
    }

    /// Eval-mode forward through a shared reference.
    pub fn forward_eval(&self, g: &mut Graph<T>, input: Var) -> Result<ForwardOutput> {
        let mut stats: Vec<NormStats<'_, T>> = self.norm_stats.iter().map(NormStats::Eval).collect();
        Ok(build_forward(&self.config, &self.params, &mut stats, g, input, false)?.0)
    }

    /// Probabilities for a `B×C×T` batch in eval mode.
    pub fn predict(&self, batch: Tensor<T>) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let x = g.constant(batch);
        let out = self.forward_eval(&mut g, x)?;
        Ok(g.value(out.prob).data().to_vec())
    }

    /// Write `<stem>.bin`/`<stem>.json`. The index header carries the model
    /// config, its hash and any caller-provided `extra` metadata.
    pub fn save(&self, stem: &Path, extra: serde_json::Value) -> Result<()> {
        let mut arrays: Vec<(String, &Tensor<T>)> =
            self.names.iter().cloned().zip(self.params.iter()).collect();
        let buffers: Vec<(String, Tensor<T>)> = self
            .norm_names
            .iter()
            .zip(&self.norm_stats)
            .flat_map(|(n, s)| {
                let c = s.mean.len();
                [
                    (format!("{n}.running_mean"), Tensor::new(vec![c], s.mean.clone()).unwrap()),
                    (format!("{n}.running_var"), Tensor::new(vec![c], s.var.clone()).unwrap()),
                ]
            })
            .collect();
        arrays.extend(buffers.iter().map(|(n, t)| (n.clone(), t)));
        let header = serde_json::json!({
            "model_config": self.config,
            "config_hash": self.config.hash(),
            "extra": extra,
        });
        save_arrays(stem, &arrays, header)
    }

    /// Load a checkpoint. When `expected` is given its hash must match the
    /// stored config hash.
    pub fn load(stem: &Path, expected: Option<&ModelConfig>) -> Result<(Self, serde_json::Value)> {
        let (arrays, header) = load_arrays::<T>(stem)?;
        let config: ModelConfig = serde_json::from_value(header["model_config"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad model config header: {e}")))?;
        let stored_hash = header["config_hash"].as_str().unwrap_or_default();
        if stored_hash != config.hash() {
            return Err(Error::Checkpoint("stored config hash does not match stored config".into()));
        }
        if let Some(exp) = expected {
            if exp.hash() != stored_hash {
                return Err(Error::Checkpoint(format!(
                    "config hash mismatch: checkpoint {stored_hash}, expected {}",
                    exp.hash()
                )));
            }
        }
        let mut model = DetectorModel::<T>::init(config, &mut crate::rng::stream(0, &[]))?;
        let mut by_name: std::collections::HashMap<String, Tensor<T>> = arrays.into_iter().collect();
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let t = by_name.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))?;
            if t.shape() != shape {
                return Err(Error::Checkpoint(format!("array `{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t)
        };
        for (name, p) in model.names.iter().zip(model.params.iter_mut()) {
            *p = take(name, &p.shape().to_vec())?;
        }
        for (name, s) in model.norm_names.iter().zip(model.norm_stats.iter_mut()) {
            let c = s.mean.len();
            s.mean = take(&format!("{name}.running_mean"), &[c])?.into_data();
            s.var = take(&format!("{name}.running_var"), &[c])?.into_data();
        }
        Ok((model, header["extra"].clone()))
    }
}

fn build_forward<T: Real>(
    config: &ModelConfig,
    params: &[Tensor<T>],
    stats: &mut [NormStats<'_, T>],
    g: &mut Graph<T>,
    input: Var,
    track: bool,
) -> Result<(ForwardOutput, Vec<Var>)> {
    let shape = g.shape(input).to_vec();
    if shape.len() != 3 || shape[1] != config.in_channels {
        return Err(Error::Dimension(format!(
            "model expects B×{}×T input, got {shape:?}",
            config.in_channels
        )));
    }
    let batch = shape[0];
    let vars: Vec<Var> =
        params.iter().map(|p| if track { g.param(p.clone()) } else { g.constant(p.clone()) }).collect();
    let mut pi = 0usize;
    let mut si = 0usize;
    let mut next = || {
        pi += 1;
        vars[pi - 1]
    };
    let mut layer = |g: &mut Graph<T>, x: Var, stride: usize, norm: bool, stats: &mut [NormStats<'_, T>]| -> Result<Var> {
        let w = next();
        let b = next();
        let k = g.shape(w)[2];
        let y = g.conv1d(x, w, Some(b), stride, (k - 1) / 2)?;
        if norm {
            let (scale, shift) = (next(), next());
            let s = match &mut stats[si] {
                NormStats::Train(s) => NormStats::Train(&mut **s),
                NormStats::Eval(s) => NormStats::Eval(&**s),
            };
            si += 1;
            g.batch_norm(y, scale, shift, s)
        } else {
            Ok(y)
        }
    };

    let h = layer(g, input, 1, true, stats)?;
    let h = g.relu(h);
    let r = layer(g, h, 1, true, stats)?;
    let r = g.relu(r);
    let r = layer(g, r, 1, true, stats)?;
    let h = g.add(h, r)?;
    let h = g.relu(h);
    let h = layer(g, h, config.downsample_factor, true, stats)?;
    let h = g.relu(h);
    let p = layer(g, h, 1, true, stats)?;
    let p = g.relu(p);
    let z = layer(g, p, 1, false, stats)?;
    let a = layer(g, p, 1, false, stats)?;

    let t_out = g.shape(z)[2];
    let z = g.reshape(z, &[batch, t_out])?;
    let w = match config.pooling {
        Pooling::Attention => {
            let a = g.reshape(a, &[batch, t_out])?;
            g.softmax_last(a)?
        }
        Pooling::TopK => {
            let mask = topk_weights(g.value(z).data(), t_out, config.topk_fraction);
            g.constant(Tensor::new(vec![batch, t_out], mask)?)
        }
    };
    let zw = g.mul(z, w)?;
    let logit = g.sum_last(zw)?;
    let prob = g.sigmoid(logit);
    Ok((ForwardOutput { logit, prob, per_time_logits: z, attention: w }, vars))
}
