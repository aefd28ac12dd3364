//! Training loop with validation-AUPRC checkpoint selection, and evaluation
//! of saved checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{locate_windows, KeywordTaskSpec, Normalizer, Session, SplitAssignment, WindowRef, WindowTally};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, sample_rank_pairs, LossConfig};
use crate::metrics::{auprc, auroc, thresholded_metrics, ScoreRow, ScoredSet};
use crate::model::{DetectorModel, ModelConfig};
use crate::nncore::{AdamW, AdamWConfig, Graph, NormMode, Tensor};
use crate::rng::{stream, subseed, tag};
use crate::sampling::{augment, make_balanced_batches, SamplerConfig, WindowSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Seed for batch order and augmentation; `seed` when absent.
    pub data_seed: Option<u64>,
    pub eval_batch_size: usize,
    /// Threshold for the logged thresholded metrics.
    pub log_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 30,
            patience: 5,
            lr: 1e-3,
            weight_decay: 0.01,
            seed: 0,
            data_seed: None,
            eval_batch_size: 256,
            log_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| {
            Err(Error::Config { path: format!("train.{path}"), message: message.into() })
        };
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be at least 1");
        }
        if self.patience > self.max_epochs {
            return bad("patience", "must not exceed max_epochs");
        }
        if !(self.lr > 0.0) {
            return bad("lr", "must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be nonnegative");
        }
        if self.eval_batch_size == 0 {
            return bad("eval_batch_size", "must be at least 1");
        }
        Ok(())
    }

    fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_auprc: f64,
    pub val_auroc: f64,
    pub val_f1: f64,
    pub val_mcc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auprc: f64,
    /// Checkpoint stem relative to the report's directory.
    pub checkpoint: PathBuf,
    pub stopped_early: bool,
    pub n_parameters: usize,
    pub n_train: usize,
    pub n_train_positive: usize,
    pub n_val: usize,
    pub n_val_positive: usize,
    pub val_base_rate: f64,
}

impl TrainReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Metadata stored alongside the weights so a checkpoint can be evaluated on
/// raw sessions without the training context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub normalizer: Normalizer,
    pub task: KeywordTaskSpec,
    pub splits: SplitAssignment,
    pub epoch: usize,
    pub val_auprc: f64,
}

/// Windows of one partition over already-normalized sessions.
#[derive(Clone, Debug)]
pub struct PartitionWindows {
    pub sessions: Vec<Session>,
    /// `(index into sessions, window)` in session order, then token order.
    pub windows: Vec<(usize, WindowRef)>,
    pub n_samples: usize,
    pub tally: WindowTally,
}

impl PartitionWindows {
    pub fn new(sessions: Vec<Session>, task: &KeywordTaskSpec) -> Result<Self> {
        let fs = sessions.first().map_or(1.0, |s| s.sample_rate_hz());
        if let Some(s) = sessions.iter().find(|s| s.sample_rate_hz() != fs) {
            return Err(Error::validation(format!("session {} has a different sample rate", s.session_id())));
        }
        let located: Vec<_> = sessions.par_iter().map(|s| locate_windows(s, task)).collect();
        let mut windows = Vec::new();
        let mut tally = WindowTally::default();
        for (i, (refs, t)) in located.into_iter().enumerate() {
            tally.dropped += t.dropped;
            tally.dropped_positive += t.dropped_positive;
            windows.extend(refs.into_iter().map(|r| (i, r)));
        }
        Ok(PartitionWindows { sessions, windows, n_samples: task.window_samples(fs), tally })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.windows.iter().map(|(_, w)| w.label).collect()
    }

    pub fn n_channels(&self) -> Option<usize> {
        self.sessions.first().map(|s| s.signal().nrows())
    }

    /// Stack the raw windows at `indices` into a `B×C×N` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let c = self.n_channels().unwrap_or(0);
        let mut data = Vec::with_capacity(indices.len() * c * self.n_samples);
        for &i in indices {
            let (s, w) = &self.windows[i];
            let view = w.view(&self.sessions[*s], self.n_samples);
            for row in view.rows() {
                data.extend(row.iter());
            }
        }
        Tensor::new(vec![indices.len(), c, self.n_samples], data).expect("window shape")
    }

    pub fn score_rows(&self, scores: &[f32]) -> Vec<ScoreRow> {
        self.windows
            .iter()
            .zip(scores)
            .map(|((s, w), &score)| ScoreRow {
                session_id: self.sessions[*s].session_id().to_string(),
                token_index: w.token_index,
                label: w.label,
                score: score as f64,
            })
            .collect()
    }
}

/// Eval-mode probabilities for every window, in partition order.
pub fn score_partition(model: &DetectorModel<f32>, part: &PartitionWindows, batch_size: usize) -> Result<Vec<f32>> {
    let idx: Vec<usize> = (0..part.len()).collect();
    let chunks: Vec<Result<Vec<f32>>> =
        idx.par_chunks(batch_size.max(1)).map(|chunk| model.predict(part.batch(chunk))).collect();
    let mut out = Vec::with_capacity(part.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Raw sessions plus the split and task they are trained under.
#[derive(Clone, Copy, Debug)]
pub struct TrainingData<'a> {
    pub sessions: &'a [Session],
    pub splits: &'a SplitAssignment,
    pub task: &'a KeywordTaskSpec,
}

fn pick<'a>(sessions: &'a [Session], ids: &[String]) -> Result<Vec<&'a Session>> {
    ids.iter()
        .map(|id| {
            sessions
                .iter()
                .find(|s| s.session_id() == id)
                .ok_or_else(|| Error::validation(format!("split names unknown session `{id}`")))
        })
        .collect()
}

fn normalized(sessions: &[&Session], normalizer: &Normalizer) -> Result<Vec<Session>> {
    sessions.par_iter().map(|s| normalizer.apply_session(s)).collect()
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters at the best validation epoch.
    pub model: DetectorModel<f32>,
    pub meta: CheckpointMeta,
    /// Seconds spent in `train`; not part of the report.
    pub wall_clock_s: f64,
}

pub const CHECKPOINT_STEM: &str = "best";
pub const REPORT_FILE: &str = "train_report.json";
pub const DIVERGENCE_FILE: &str = "divergence.json";

/// Train on the training partition, selecting the checkpoint with the best
/// validation AUPRC. Writes `best.{bin,json}` and `train_report.json` to `out_dir`.
pub fn train(
    model_config: &ModelConfig,
    loss_config: &LossConfig,
    sampler_config: &SamplerConfig,
    train_config: &TrainConfig,
    data: TrainingData<'_>,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    model_config.validate()?;
    loss_config.validate()?;
    sampler_config.validate()?;
    train_config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let train_raw = pick(data.sessions, &data.splits.train)?;
    let val_raw = pick(data.sessions, std::slice::from_ref(&data.splits.validation))?;
    let normalizer = Normalizer::fit(train_raw.iter().copied())?;
    let train_part = PartitionWindows::new(normalized(&train_raw, &normalizer)?, data.task)?;
    let val_part = PartitionWindows::new(normalized(&val_raw, &normalizer)?, data.task)?;
    let channels = train_part.n_channels().unwrap_or(0);
    if channels != model_config.in_channels {
        return Err(Error::Dimension(format!(
            "model expects {} channels, corpus has {channels}",
            model_config.in_channels
        )));
    }
    let train_labels = train_part.labels();
    let val_labels = val_part.labels();
    if !val_labels.contains(&1) {
        return Err(Error::InfeasibleTask("validation partition has no positive windows".into()));
    }
    let sampler = make_balanced_batches(&train_labels, sampler_config, subseed(train_config.data_seed(), &[tag::SAMPLER]))?;

    let mut model = DetectorModel::<f32>::init(model_config.clone(), &mut stream(train_config.seed, &[tag::INIT]))?;
    let mut opt = AdamW::new(
        AdamWConfig { lr: train_config.lr, weight_decay: train_config.weight_decay, ..Default::default() },
        &model.param_sizes(),
    );
    let val_set = |scores: &[f32]| ScoredSet::new(scores.iter().map(|&s| s as f64).collect(), val_labels.clone());
    let stem = out_dir.join(CHECKPOINT_STEM);
    let data_seed = train_config.data_seed();
    let rank_seed = subseed(data_seed, &[tag::RANK_PAIRS]);

    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, f64, DetectorModel<f32>)> = None;
    let mut since_best = 0;
    let mut global_step = 0u64;
    let mut stopped_early = false;
    for epoch in 0..train_config.max_epochs {
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (step, batch) in sampler.epoch(epoch).enumerate() {
            let mut rng = stream(data_seed, &[tag::AUGMENT, epoch as u64, step as u64]);
            let c = channels;
            let n = train_part.n_samples;
            let mut input = Vec::with_capacity(batch.len() * c * n);
            let mut labels = Vec::with_capacity(batch.len());
            for i in batch.indices() {
                let (s, w) = &train_part.windows[i];
                let session = &train_part.sessions[*s];
                let aug = augment(
                    w.view(session, n),
                    sampler_config.jitter_samples,
                    sampler_config.noise_std_fraction,
                    Some(WindowSource { session, start: w.start }),
                    &vec![1.0; c],
                    &mut rng,
                );
                input.extend(aug.signal.iter());
                labels.push(w.label);
            }
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(vec![labels.len(), c, n], input)?);
            let (out, params) = model.forward(&mut g, x, NormMode::Train, true)?;
            let pairs = sample_rank_pairs(&labels, loss_config.rank_pairs_per_batch, rank_seed, global_step);
            let loss = combined_loss(&mut g, out.prob, out.logit, &labels, loss_config, &pairs)?;
            let loss_value = g.value(loss).item() as f64;
            if !loss_value.is_finite() {
                let diag = serde_json::json!({ "epoch": epoch, "step": step, "loss": loss_value, "epochs": records });
                let path = out_dir.join(DIVERGENCE_FILE);
                std::fs::write(&path, serde_json::to_string_pretty(&diag)?).map_err(|e| Error::io(&path, e))?;
                return Err(Error::Diverged { epoch, step, loss: loss_value });
            }
            g.backward(loss)?;
            let grads: Vec<&[f32]> =
                params.iter().map(|&p| g.grad(p).expect("parameter gradient")).collect();
            opt.step(&mut model.params_mut(), &grads)?;
            loss_sum += loss_value;
            steps += 1;
            global_step += 1;
        }

        let scores = score_partition(&model, &val_part, train_config.eval_batch_size)?;
        let set = val_set(&scores)?;
        let thr = thresholded_metrics(&set, train_config.log_threshold);
        let record = EpochRecord {
            epoch,
            steps,
            train_loss: loss_sum / steps.max(1) as f64,
            val_auprc: auprc(&set)?,
            val_auroc: auroc(&set).unwrap_or(f64::NAN),
            val_f1: thr.f1,
            val_mcc: thr.mcc,
        };
        info!(
            "epoch {epoch}: loss {:.5} val AUPRC {:.4} AUROC {:.4}",
            record.train_loss, record.val_auprc, record.val_auroc
        );
        let improved = best.as_ref().is_none_or(|(_, b, _)| record.val_auprc > b + 1e-6);
        if improved {
            best = Some((epoch, record.val_auprc, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        records.push(record);
        if since_best >= train_config.patience && epoch + 1 < train_config.max_epochs {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, best_val_auprc, best_model) = best.expect("at least one epoch");
    let meta = CheckpointMeta {
        normalizer,
        task: data.task.clone(),
        splits: data.splits.clone(),
        epoch: best_epoch,
        val_auprc: best_val_auprc,
    };
    best_model.save(&stem, serde_json::to_value(&meta)?)?;
    let n_val_positive = val_labels.iter().filter(|&&l| l == 1).count();
    let report = TrainReport {
        best_val_auprc: records.iter().map(|r| r.val_auprc).fold(f64::NEG_INFINITY, f64::max),
        epochs: records,
        best_epoch,
        checkpoint: PathBuf::from(CHECKPOINT_STEM),
        stopped_early,
        n_parameters: best_model.n_parameters(),
        n_train: train_labels.len(),
        n_train_positive: train_labels.iter().filter(|&&l| l == 1).count(),
        n_val: val_labels.len(),
        n_val_positive,
        val_base_rate: n_val_positive as f64 / val_labels.len() as f64,
    };
    debug_assert_eq!(report.best_val_auprc, best_val_auprc);
    report.save(&out_dir.join(REPORT_FILE))?;
    Ok(TrainOutcome { report, model: best_model, meta, wall_clock_s: started.elapsed().as_secs_f64() })
}

/// A checkpoint with the metadata needed to score raw sessions.
pub struct LoadedCheckpoint {
    pub model: DetectorModel<f32>,
    pub meta: CheckpointMeta,
}

pub fn load_checkpoint(stem: &Path, expected: Option<&ModelConfig>) -> Result<LoadedCheckpoint> {
    let (model, extra) = DetectorModel::<f32>::load(stem, expected)?;
    let meta: CheckpointMeta = serde_json::from_value(extra)
        .map_err(|e| Error::Checkpoint(format!("{}: missing training metadata: {e}", stem.display())))?;
    Ok(LoadedCheckpoint { model, meta })
}

impl LoadedCheckpoint {
    /// Score raw sessions: normalize with the stored statistics, window with
    /// the stored task, eval mode, no augmentation. Output follows session
    /// order, then token order. An empty partition yields no rows.
    pub fn evaluate(&self, sessions: &[&Session], batch_size: usize) -> Result<Vec<ScoreRow>> {
        if let Some(s) = sessions.iter().find(|s| s.signal().nrows() != self.model.config().in_channels) {
            return Err(Error::Checkpoint(format!(
                "checkpoint expects {} channels, session {} has {}",
                self.model.config().in_channels,
                s.session_id(),
                s.signal().nrows()
            )));
        }
        let part = PartitionWindows::new(normalized(sessions, &self.meta.normalizer)?, &self.meta.task)?;
        if part.is_empty() {
            warn!("evaluation partition has no windows; returning no scores");
            return Ok(Vec::new());
        }
        let scores = score_partition(&self.model, &part, batch_size)?;
        Ok(part.score_rows(&scores))
    }

    pub fn evaluate_ids(&self, sessions: &[Session], ids: &[String], batch_size: usize) -> Result<Vec<ScoreRow>> {
        self.evaluate(&pick(sessions, ids)?, batch_size)
    }
}

/// Load `stem` and score the named sessions.
pub fn evaluate(stem: &Path, sessions: &[Session], ids: &[String], expected: Option<&ModelConfig>) -> Result<Vec<ScoreRow>> {
    load_checkpoint(stem, expected)?.evaluate_ids(sessions, ids, TrainConfig::default().eval_batch_size)
}
