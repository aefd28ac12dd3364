use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{normalize_word, Session};
use crate::error::{Error, Result};

/// Keyword set plus the window geometry derived from it.
///
/// `window_s` is the pre-onset buffer, plus the longest observed keyword
/// instance, plus the post-onset buffer. Every keyword instance therefore
/// fits inside its window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordTaskSpec {
    pub keywords: BTreeSet<String>,
    pub beta_neg_s: f64,
    pub beta_pos_s: f64,
    pub d_max_s: BTreeMap<String, f64>,
    pub window_s: f64,
}

impl KeywordTaskSpec {
    pub fn is_keyword(&self, word: &str) -> bool {
        self.keywords.contains(word)
    }

    /// Samples per window at `fs`.
    pub fn window_samples(&self, sample_rate_hz: f64) -> usize {
        (self.window_s * sample_rate_hz).round() as usize
    }

    pub fn longest_keyword_s(&self) -> f64 {
        self.d_max_s.values().copied().fold(0.0, f64::max)
    }
}

/// Longest duration of any word-kind instance of each keyword, over all sessions.
pub fn compute_d_max(
    sessions: &[Session],
    keywords: &BTreeSet<String>,
) -> Result<BTreeMap<String, f64>> {
    let mut d_max = BTreeMap::new();
    for s in sessions {
        for ev in s.word_tokens() {
            if keywords.contains(&ev.word) {
                let entry = d_max.entry(ev.word.clone()).or_insert(0.0_f64);
                *entry = entry.max(ev.duration_s);
            }
        }
    }
    if let Some(missing) = keywords.iter().find(|k| !d_max.contains_key(*k)) {
        return Err(Error::MissingKeyword(missing.clone()));
    }
    Ok(d_max)
}

pub fn build_task_spec<S: AsRef<str>>(
    sessions: &[Session],
    keywords: &[S],
    beta_neg_s: f64,
    beta_pos_s: f64,
) -> Result<KeywordTaskSpec> {
    if !(beta_neg_s >= 0.0 && beta_pos_s >= 0.0) {
        return Err(Error::validation(format!(
            "buffers must be nonnegative, got -{beta_neg_s} / +{beta_pos_s}"
        )));
    }
    let keywords: BTreeSet<String> = keywords
        .iter()
        .map(|k| normalize_word(k.as_ref()))
        .filter(|k| !k.is_empty())
        .collect();
    if keywords.is_empty() {
        return Err(Error::validation("keyword set is empty"));
    }
    let d_max_s = compute_d_max(sessions, &keywords)?;
    let longest = d_max_s.values().copied().fold(0.0, f64::max);
    Ok(KeywordTaskSpec { keywords, beta_neg_s, beta_pos_s, d_max_s, window_s: beta_neg_s + longest + beta_pos_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ChannelConfig, WordEvent};
    use ndarray::Array2;

    fn session(id: &str, words: &[(f64, f64, &str)]) -> Session {
        let events = words.iter().map(|&(o, d, w)| WordEvent::word(o, d, w)).collect();
        Session::new(id, Array2::zeros((1, 250 * 30)), events, ChannelConfig::new(1, 250.0)).unwrap()
    }

    fn kw(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn d_max_is_corpus_maximum() {
        let a = session("a", &[(1.0, 0.41, "watson"), (2.0, 0.9, "the")]);
        let b = session("b", &[(1.0, 0.52, "watson"), (3.0, 0.47, "watson")]);
        let d = compute_d_max(&[a, b], &kw(&["watson"])).unwrap();
        assert_eq!(d["watson"], 0.52);
    }

    #[test]
    fn single_instance_gives_its_duration() {
        let a = session("a", &[(1.0, 0.8, "watson")]);
        assert_eq!(compute_d_max(&[a], &kw(&["watson"])).unwrap()["watson"], 0.8);
    }

    #[test]
    fn missing_keyword_is_named() {
        let a = session("a", &[(1.0, 0.8, "watson")]);
        match compute_d_max(&[a], &kw(&["watson", "holmes"])) {
            Err(Error::MissingKeyword(k)) => assert_eq!(k, "holmes"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn window_is_buffers_plus_longest_keyword() {
        let a = session("a", &[(1.0, 0.8, "watson"), (3.0, 0.3, "holmes")]);
        let s = std::slice::from_ref(&a);
        assert!((build_task_spec(s, &["watson"], 0.0, 0.25).unwrap().window_s - 1.05).abs() < 1e-12);
        assert_eq!(build_task_spec(s, &["watson"], 0.0, 0.0).unwrap().window_s, 0.8);
        let spec = build_task_spec(s, &["Watson", "holmes"], 0.1, 0.3).unwrap();
        assert!((spec.window_s - 1.2).abs() < 1e-12);
        assert_eq!(spec.window_samples(250.0), 300);
        assert!(spec.is_keyword("watson"));
        assert!(build_task_spec(s, &["watson"], -0.1, 0.0).is_err());
    }
}
