//! Synthetic corpus statistics, storage round-trips and windowing.

use std::collections::BTreeMap;
use std::fs;

use megkws::corpus::{build_task_spec, extract_windows, CorpusManifest, Session};
use megkws::metrics::spearman_rank_corr;
use megkws::synthgen::{generate_corpus, SynthConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn config() -> SynthConfig {
    SynthConfig { n_sessions: 4, session_minutes: 3.0, n_channels: 6, vocab_size: 60, ..Default::default() }
}

fn token_counts(sessions: &[Session]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for s in sessions {
        for ev in s.word_tokens() {
            *counts.entry(ev.word.clone()).or_insert(0) += 1;
        }
    }
    counts
}

#[test]
fn token_frequencies_follow_zipf() {
    let cfg = config();
    let corpus = generate_corpus(&cfg).unwrap();
    let counts = token_counts(&corpus.sessions);
    let total: usize = counts.values().sum();
    let pmf = cfg.zipf_pmf();

    // individual bins while the expected count is at least 5, then one tail bin
    let (mut stat, mut bins) = (0.0, 0);
    let (mut tail_obs, mut tail_exp) = (0.0, 0.0);
    for (i, word) in corpus.lexicon.iter().enumerate() {
        let observed = *counts.get(word).unwrap_or(&0) as f64;
        let expected = pmf[i] * total as f64;
        if expected >= 5.0 {
            stat += (observed - expected).powi(2) / expected;
            bins += 1;
        } else {
            tail_obs += observed;
            tail_exp += expected;
        }
    }
    stat += (tail_obs - tail_exp).powi(2) / tail_exp;
    bins += 1;
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.001, "chi-square {stat:.1} on {} df, p = {p:e}", bins - 1);
}

#[test]
fn frequent_words_are_shorter() {
    let corpus = generate_corpus(&config()).unwrap();
    let counts = token_counts(&corpus.sessions);
    let (len, freq): (Vec<f64>, Vec<f64>) =
        counts.iter().map(|(w, &c)| (w.len() as f64, (c as f64).ln())).unzip();
    let c = spearman_rank_corr(&len, &freq).unwrap();
    assert!(c.r < -0.3 && c.p < 0.01, "{c:?}");
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let a = generate_corpus(&config()).unwrap();
    let b = generate_corpus(&config()).unwrap();
    assert_eq!(a.sessions, b.sessions);
    let c = generate_corpus(&SynthConfig { seed: 1, ..config() }).unwrap();
    assert_ne!(a.sessions[0].checksum(), c.sessions[0].checksum());
}

#[test]
fn corpus_round_trip_is_bit_identical() {
    let corpus = generate_corpus(&config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest =
        CorpusManifest::write_corpus(dir.path(), &corpus.sessions, &corpus.default_split, serde_json::json!({})).unwrap();
    let loaded = CorpusManifest::load(dir.path()).unwrap();
    assert_eq!(loaded, manifest);
    let sessions = loaded.load_sessions(dir.path()).unwrap();
    assert_eq!(sessions, corpus.sessions);
    for (a, b) in sessions.iter().zip(&corpus.sessions) {
        assert_eq!(a.checksum(), b.checksum());
        let sa = a.signal().as_slice().unwrap();
        let sb = b.signal().as_slice().unwrap();
        assert!(sa.iter().zip(sb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(loaded.default_split().unwrap(), corpus.default_split);

    // saving the loaded corpus again reproduces every file byte for byte
    let again = tempfile::tempdir().unwrap();
    CorpusManifest::write_corpus(again.path(), &sessions, &corpus.default_split, serde_json::json!({})).unwrap();
    let mut names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 1);
    for name in names {
        assert_eq!(fs::read(dir.path().join(&name)).unwrap(), fs::read(again.path().join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn window_labels_account_for_every_keyword_token() {
    let corpus = generate_corpus(&config()).unwrap();
    let keywords = [corpus.word_at_rank(3).unwrap(), corpus.word_at_rank(7).unwrap()];
    let spec = build_task_spec(&corpus.sessions, &keywords, 0.1, 0.3).unwrap();
    let n = spec.window_samples(250.0);
    for s in &corpus.sessions {
        let set = extract_windows(s, &spec);
        let keyword_tokens = s.word_tokens().filter(|e| keywords.contains(&e.word.as_str())).count();
        let positives: usize = set.examples.iter().map(|w| w.label as usize).sum();
        assert_eq!(positives + set.tally.dropped_positive, keyword_tokens);
        assert_eq!(set.examples.len() + set.tally.dropped, s.word_tokens().count());
        for w in &set.examples {
            assert_eq!(w.signal.dim(), (6, n));
            assert_eq!(w.label == 1, keywords.contains(&w.word.as_str()));
        }
    }
}
