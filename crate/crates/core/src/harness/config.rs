use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::ReportOptions;
use crate::model::ModelConfig;
use crate::operate::Scenario;
use crate::sampling::SamplerConfig;
use crate::synthgen::SynthConfig;
use crate::training::TrainConfig;

/// Overrides `data_root` when set.
pub const DATA_ROOT_ENV: &str = "MEGKWS_DATA_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub keywords: Vec<String>,
    /// 1-based ranks in the corpus word-frequency list (count descending,
    /// then alphabetical), added to `keywords`.
    pub keyword_ranks: Vec<usize>,
    pub beta_neg_s: f64,
    pub beta_pos_s: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig { keywords: Vec::new(), keyword_ranks: vec![10], beta_neg_s: 0.1, beta_pos_s: 0.3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurvePartition {
    /// Select thresholds on validation, then report test rates at those thresholds.
    Validation,
    /// Select and report on the test curve (presentation only).
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub threshold: f64,
    pub n_resamples: usize,
    pub n_permutations: usize,
    pub level: f64,
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
    pub target_recall: f64,
    pub fa_budgets: Vec<f64>,
    pub curve_partition: CurvePartition,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            threshold: 0.5,
            n_resamples: 4000,
            n_permutations: 10_000,
            level: 0.95,
            seed: 0,
            scenarios: vec![Scenario::assistive(), Scenario::hands_free()],
            target_recall: 0.10,
            fa_budgets: vec![0.5, 2.0],
            curve_partition: CurvePartition::Validation,
        }
    }
}

impl EvaluationConfig {
    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            threshold: self.threshold,
            n_resamples: self.n_resamples,
            n_permutations: self.n_permutations,
            level: self.level,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeywords {
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeywordSelection {
    /// Most frequent word of each length.
    Auto(AutoKeywords),
    List(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    pub neg_grid: Vec<f64>,
    pub pos_grid: Vec<f64>,
    pub keywords: KeywordSelection,
    /// Cap on auto-selected keywords (shortest lengths first).
    pub max_keywords: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            fractions: vec![0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0],
            neg_grid: vec![0.0, 0.05, 0.1, 0.15, 0.2],
            pos_grid: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            keywords: KeywordSelection::Auto(AutoKeywords::Auto),
            max_keywords: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub output_dir: PathBuf,
    pub synth: SynthConfig,
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub seeds: Vec<u64>,
    pub sweeps: SweepConfig,
}

impl Default for RunConfig {
    /// Desk-scale defaults: the synthetic corpus has 16 channels, so the
    /// detector is sized down from the 306-channel reference configuration.
    fn default() -> Self {
        let synth = SynthConfig::default();
        RunConfig {
            data_root: PathBuf::from("data/corpus"),
            output_dir: PathBuf::from("runs"),
            model: ModelConfig {
                in_channels: synth.n_channels,
                trunk_channels: 16,
                proj_channels: 32,
                ..Default::default()
            },
            synth,
            task: TaskConfig::default(),
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
            train: TrainConfig { max_epochs: 6, patience: 3, ..Default::default() },
            evaluation: EvaluationConfig::default(),
            seeds: vec![0, 1, 2],
            sweeps: SweepConfig::default(),
        }
    }
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

/// Set `dotted.path=value` inside a JSON object. The value is parsed as
/// JSON when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_error(assignment, "override must look like `dotted.path=value`"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_error(path, "empty path segment"));
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_error(keys[..i].join("."), "is not an object"))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

/// Recursively overlay `patch` onto `base`; non-object values replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parse JSON with `//` and `/* */` comments over the defaults, apply
    /// overrides, reject unknown keys and validate every section.
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut stripped = String::new();
        json_comments::StripComments::new(text.as_bytes())
            .read_to_string(&mut stripped)
            .map_err(|e| config_error("", format!("cannot strip comments: {e}")))?;
        let value: Value = if stripped.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(&stripped).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?
        };
        if !value.is_object() {
            return Err(config_error("", "top level must be a JSON object"));
        }
        let mut merged = serde_json::to_value(RunConfig::default())?;
        merge(&mut merged, value);
        let mut value = merged;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            config_error(path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, overrides)
    }

    /// Defaults, then the optional file, then the data-root environment
    /// variable, then `overrides` in order.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        let mut all = Vec::with_capacity(overrides.len() + 1);
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            let root = serde_json::to_string(&root.to_string_lossy())?;
            all.push(format!("data_root={root}"));
        }
        all.extend(overrides.iter().cloned());
        Self::from_json_str(&text, &all)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(config_error("seeds", "at least one seed is required"));
        }
        let t = &self.task;
        if !(t.beta_neg_s >= 0.0 && t.beta_pos_s >= 0.0) {
            return Err(config_error("task", "buffers must be nonnegative"));
        }
        if t.keyword_ranks.contains(&0) {
            return Err(config_error("task.keyword_ranks", "ranks are 1-based"));
        }
        let e = &self.evaluation;
        if !(e.threshold.is_finite()) {
            return Err(config_error("evaluation.threshold", "must be finite"));
        }
        if !(e.level > 0.0 && e.level < 1.0) {
            return Err(config_error("evaluation.level", "must lie in (0, 1)"));
        }
        for (i, s) in e.scenarios.iter().enumerate() {
            Scenario::new(s.name.clone(), s.lambda_per_hour)
                .map_err(|err| config_error(format!("evaluation.scenarios[{i}]"), err.to_string()))?;
        }
        if !(0.0..=1.0).contains(&e.target_recall) {
            return Err(config_error("evaluation.target_recall", "must lie in [0, 1]"));
        }
        if e.fa_budgets.iter().any(|b| !(*b >= 0.0)) {
            return Err(config_error("evaluation.fa_budgets", "budgets must be nonnegative"));
        }
        let s = &self.sweeps;
        if s.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(config_error("sweeps.fractions", "fractions must lie in (0, 1]"));
        }
        if s.neg_grid.iter().chain(&s.pos_grid).any(|b| !(*b >= 0.0)) {
            return Err(config_error("sweeps", "offset grids must be nonnegative"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn train_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join("train").join(format!("seed-{seed}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json_str("", &[]).unwrap(), RunConfig::default());
        assert_eq!(RunConfig::from_json_str("{}", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn comments_and_overrides() {
        let text = r#"{
            // line comment
            "seeds": [4, 5], /* block */
            "model": { "trunk_channels": 8 }
        }"#;
        let c = RunConfig::from_json_str(text, &["train.max_epochs=3".into(), "output_dir=out/x".into()]).unwrap();
        assert_eq!(c.seeds, vec![4, 5]);
        assert_eq!(c.model.trunk_channels, 8);
        assert_eq!(c.train.max_epochs, 3);
        assert_eq!(c.output_dir, PathBuf::from("out/x"));
        let c = RunConfig::from_json_str("{}", &["sweeps.keywords=[\"ab\",\"cd\"]".into()]).unwrap();
        assert_eq!(c.sweeps.keywords, KeywordSelection::List(vec!["ab".into(), "cd".into()]));
        let c = RunConfig::from_json_str(r#"{"sweeps": {"keywords": "auto"}}"#, &[]).unwrap();
        assert_eq!(c.sweeps.keywords, KeywordSelection::Auto(AutoKeywords::Auto));
    }

    #[test]
    fn errors_name_the_field() {
        let err = RunConfig::from_json_str(r#"{"model": {"trunk_chanels": 8}}"#, &[]).unwrap_err();
        match &err {
            Error::Config { path, message } => {
                assert!(path.starts_with("model"), "{path}");
                assert!(message.contains("trunk_chanels"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.is_validation());
        let err = RunConfig::from_json_str(r#"{"synth": {"snr": -1}}"#, &[]).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "synth.snr"), "{err:?}");
        let err = RunConfig::from_json_str("{}", &["train.lr=\"fast\"".into()]).unwrap_err();
        assert!(matches!(&err, Error::Config { path, .. } if path == "train.lr"), "{err:?}");
        assert!(RunConfig::from_json_str("{", &[]).unwrap_err().is_validation());
        assert!(RunConfig::from_json_str("{}", &["novalue".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seeds.push(9);
        assert_ne!(a.hash(), b.hash());
    }
}
