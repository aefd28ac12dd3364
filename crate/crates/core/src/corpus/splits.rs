use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{KeywordTaskSpec, Session};
use crate::error::{Error, Result};

/// Session-level partition. Validation and test hold exactly one session each.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub validation: String,
    pub test: String,
    #[serde(default)]
    pub positive_counts: BTreeMap<String, usize>,
}

impl SplitAssignment {
    pub fn new(train: Vec<String>, validation: impl Into<String>, test: impl Into<String>) -> Self {
        SplitAssignment {
            train,
            validation: validation.into(),
            test: test.into(),
            positive_counts: BTreeMap::new(),
        }
    }

    fn check_cover(&self, ids: &BTreeSet<&str>) -> Result<()> {
        let mut seen = BTreeSet::new();
        let all = self.train.iter().chain([&self.validation, &self.test]);
        for id in all {
            if !seen.insert(id.as_str()) {
                return Err(Error::validation(format!("session `{id}` assigned twice")));
            }
            if !ids.contains(id.as_str()) {
                return Err(Error::validation(format!("split names unknown session `{id}`")));
            }
        }
        if seen.len() != ids.len() {
            return Err(Error::validation("split does not cover every session"));
        }
        Ok(())
    }
}

/// Keyword instance count per session.
pub fn positive_counts(sessions: &[Session], spec: &KeywordTaskSpec) -> BTreeMap<String, usize> {
    sessions
        .iter()
        .map(|s| {
            let c = s.word_tokens().filter(|e| spec.is_keyword(&e.word)).count();
            (s.session_id().to_string(), c)
        })
        .collect()
}

/// Keep the default split when both held-out sessions contain a keyword
/// instance; otherwise move the two sessions with the most instances into
/// test (highest) and validation (second), ties broken by ascending id.
pub fn select_splits(
    sessions: &[Session],
    spec: &KeywordTaskSpec,
    default_split: &SplitAssignment,
) -> Result<SplitAssignment> {
    if sessions.len() < 3 {
        return Err(Error::InfeasibleTask(format!(
            "need at least 3 sessions, have {}",
            sessions.len()
        )));
    }
    let ids: BTreeSet<&str> = sessions.iter().map(|s| s.session_id()).collect();
    if ids.len() != sessions.len() {
        return Err(Error::validation("duplicate session ids"));
    }
    default_split.check_cover(&ids)?;

    let counts = positive_counts(sessions, spec);
    let with_positives = counts.values().filter(|&&c| c > 0).count();
    if with_positives < 2 {
        return Err(Error::InfeasibleTask(format!(
            "only {with_positives} session(s) contain {:?}",
            spec.keywords
        )));
    }

    if counts[&default_split.validation] >= 1 && counts[&default_split.test] >= 1 {
        return Ok(SplitAssignment { positive_counts: counts, ..default_split.clone() });
    }

    let mut ranked: Vec<(&String, usize)> = counts.iter().map(|(k, &v)| (k, v)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let test = ranked[0].0.clone();
    let validation = ranked[1].0.clone();
    let train = sessions
        .iter()
        .map(|s| s.session_id().to_string())
        .filter(|id| *id != test && *id != validation)
        .collect();
    Ok(SplitAssignment { train, validation, test, positive_counts: counts })
}
