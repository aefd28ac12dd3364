use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, TaskConfig};
use crate::corpus::{build_task_spec, select_splits, CorpusManifest, KeywordTaskSpec, Session, SplitAssignment};
use crate::error::{Error, Result};

/// Sessions on disk plus their manifest.
#[derive(Clone, Debug)]
pub struct LoadedCorpus {
    pub manifest: CorpusManifest,
    pub sessions: Vec<Session>,
    pub default_split: SplitAssignment,
}

impl LoadedCorpus {
    pub fn load(root: &Path) -> Result<Self> {
        if !root.join(crate::corpus::MANIFEST_FILE).is_file() {
            return Err(Error::validation(format!(
                "no corpus manifest under {}; run `synth` or point the data root at a corpus",
                root.display()
            )));
        }
        let manifest = CorpusManifest::load(root)?;
        let sessions = manifest.load_sessions(root)?;
        let default_split = manifest.default_split()?;
        Ok(LoadedCorpus { manifest, sessions, default_split })
    }

    pub fn checksums(&self) -> BTreeMap<String, String> {
        self.sessions.iter().map(|s| (s.session_id().to_string(), s.checksum())).collect()
    }

    pub fn session(&self, id: &str) -> Option<&Session> {
        self.sessions.iter().find(|s| s.session_id() == id)
    }

    pub fn hours(&self, ids: &[String]) -> f64 {
        ids.iter().filter_map(|id| self.session(id)).map(|s| s.duration_s() / 3600.0).sum()
    }
}

/// Word-kind token counts, most frequent first, ties alphabetical.
pub fn word_frequencies(sessions: &[Session]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in sessions {
        for ev in s.word_tokens() {
            *counts.entry(ev.word.as_str()).or_default() += 1;
        }
    }
    let mut out: Vec<(String, usize)> = counts.into_iter().map(|(w, c)| (w.to_string(), c)).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Explicit keywords plus words at the configured frequency ranks.
pub fn resolve_keywords(task: &TaskConfig, frequencies: &[(String, usize)]) -> Result<Vec<String>> {
    let mut words: BTreeSet<String> = task.keywords.iter().map(|k| crate::corpus::normalize_word(k)).collect();
    for &rank in &task.keyword_ranks {
        let (w, _) = frequencies.get(rank.wrapping_sub(1)).ok_or_else(|| Error::Config {
            path: "task.keyword_ranks".into(),
            message: format!("rank {rank} exceeds the {} distinct words in the corpus", frequencies.len()),
        })?;
        words.insert(w.clone());
    }
    if words.is_empty() {
        return Err(Error::Config { path: "task".into(), message: "no keywords configured".into() });
    }
    Ok(words.into_iter().collect())
}

/// Most frequent word of each character length, shortest lengths first.
pub fn auto_keywords(frequencies: &[(String, usize)], max: Option<usize>) -> Vec<String> {
    let mut by_len: BTreeMap<usize, &str> = BTreeMap::new();
    for (w, _) in frequencies {
        by_len.entry(w.chars().count()).or_insert(w);
    }
    by_len.into_values().take(max.unwrap_or(usize::MAX)).map(str::to_string).collect()
}

/// Task spec and split for a keyword set under the given buffers.
pub fn prepare_task<S: AsRef<str>>(
    corpus: &LoadedCorpus,
    keywords: &[S],
    beta_neg_s: f64,
    beta_pos_s: f64,
) -> Result<(KeywordTaskSpec, SplitAssignment)> {
    let spec = build_task_spec(&corpus.sessions, keywords, beta_neg_s, beta_pos_s)?;
    let split = select_splits(&corpus.sessions, &spec, &corpus.default_split)?;
    if split.validation != corpus.default_split.validation || split.test != corpus.default_split.test {
        warn!("held-out sessions lacked keyword instances; reassigned validation `{}` and test `{}`", split.validation, split.test);
    }
    Ok((spec, split))
}

/// Keywords and task for the configured run.
pub fn configured_task(cfg: &RunConfig, corpus: &LoadedCorpus) -> Result<(Vec<String>, KeywordTaskSpec, SplitAssignment)> {
    let keywords = resolve_keywords(&cfg.task, &word_frequencies(&corpus.sessions))?;
    let (spec, split) = prepare_task(corpus, &keywords, cfg.task.beta_neg_s, cfg.task.beta_pos_s)?;
    Ok((keywords, spec, split))
}

/// Config hash and per-session checksums, written into every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub corpus_checksums: BTreeMap<String, String>,
    pub version: String,
}

impl Provenance {
    pub fn new(cfg: &RunConfig, corpus: &LoadedCorpus) -> Self {
        Provenance {
            config_hash: cfg.hash(),
            corpus_checksums: corpus.checksums(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}
