use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Session, SplitAssignment};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub session_id: String,
    pub partition: Partition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
}

/// `corpus.json`: the session list with default-split partition hints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub sessions: Vec<ManifestEntry>,
    /// Free-form generator provenance (e.g. the synthetic config).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub generator: serde_json::Value,
}

pub const MANIFEST_FILE: &str = "corpus.json";

impl CorpusManifest {
    pub fn default_split(&self) -> Result<SplitAssignment> {
        let pick = |p: Partition| -> Vec<String> {
            self.sessions.iter().filter(|e| e.partition == p).map(|e| e.session_id.clone()).collect()
        };
        let (val, test) = (pick(Partition::Validation), pick(Partition::Test));
        if val.len() != 1 || test.len() != 1 {
            return Err(Error::validation(format!(
                "manifest needs exactly one validation and one test session, has {} and {}",
                val.len(),
                test.len()
            )));
        }
        Ok(SplitAssignment::new(pick(Partition::Train), val[0].clone(), test[0].clone()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Write every session and a manifest describing them.
    pub fn write_corpus(
        dir: &Path,
        sessions: &[Session],
        split: &SplitAssignment,
        generator: serde_json::Value,
    ) -> Result<Self> {
        let mut entries = Vec::with_capacity(sessions.len());
        for s in sessions {
            let sidecar = s.save(dir)?;
            let id = s.session_id();
            let partition = if id == split.validation {
                Partition::Validation
            } else if id == split.test {
                Partition::Test
            } else {
                Partition::Train
            };
            entries.push(ManifestEntry {
                session_id: id.to_string(),
                partition,
                checksum: Some(sidecar.checksum),
            });
        }
        let manifest = CorpusManifest { sessions: entries, generator };
        manifest.save(dir)?;
        Ok(manifest)
    }

    /// Load all sessions listed in the manifest, in manifest order.
    pub fn load_sessions(&self, dir: &Path) -> Result<Vec<Session>> {
        self.sessions
            .iter()
            .map(|e| {
                let s = Session::load(dir, &e.session_id)?;
                if let Some(sum) = &e.checksum {
                    if *sum != s.checksum() {
                        return Err(Error::validation(format!(
                            "session {} does not match manifest checksum",
                            e.session_id
                        )));
                    }
                }
                Ok(s)
            })
            .collect()
    }
}
