//! Deterministic MEG-like synthetic corpora.
//!
//! Word tokens are laid out back to back with random gaps. Word identities
//! follow a Zipf law over a fixed lexicon in which rarer words get longer
//! strings. Each token adds a rank-one signature `snr * outer(spatial, temporal)`
//! on top of white Gaussian noise. Spatial patterns are orthonormal within
//! blocks of `n_channels` consecutive ranks, so frequent words never share a
//! direction with their neighbours.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ChannelConfig, Session, SplitAssignment, WordEvent};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_sessions: usize,
    pub session_minutes: f64,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    pub word_duration_range_s: (f64, f64),
    pub gap_range_s: (f64, f64),
    pub snr: f64,
    pub n_channels: usize,
    pub sample_rate_hz: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_sessions: 8,
            session_minutes: 10.0,
            vocab_size: 200,
            zipf_exponent: 1.0,
            word_duration_range_s: (0.25, 0.55),
            gap_range_s: (0.1, 0.35),
            snr: 1.0,
            n_channels: 16,
            sample_rate_hz: 250.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| {
            Err(Error::Config { path: format!("synth.{path}"), message: message.into() })
        };
        let (dmin, dmax) = self.word_duration_range_s;
        let (gmin, gmax) = self.gap_range_s;
        if self.n_sessions == 0 {
            return bad("n_sessions", "must be at least 1");
        }
        if !(self.session_minutes > 0.0) {
            return bad("session_minutes", "must be positive");
        }
        if self.vocab_size < 2 {
            return bad("vocab_size", "must be at least 2");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent", "must be finite and nonnegative");
        }
        if !(dmin > 0.0 && dmax >= dmin) {
            return bad("word_duration_range_s", "need 0 < min <= max");
        }
        if !(gmin >= 0.0 && gmax >= gmin) {
            return bad("gap_range_s", "need 0 <= min <= max");
        }
        if !(self.snr >= 0.0 && self.snr.is_finite()) {
            return bad("snr", "must be finite and nonnegative");
        }
        ChannelConfig::new(self.n_channels, self.sample_rate_hz)
            .validate()
            .map_err(|e| Error::Config { path: "synth.n_channels".into(), message: e.to_string() })?;
        if self.session_minutes * 60.0 <= dmax + gmax {
            return bad("session_minutes", "too short to hold a single word");
        }
        Ok(())
    }

    /// Zipf probabilities for ranks 1..=vocab_size.
    pub fn zipf_pmf(&self) -> Vec<f64> {
        let w: Vec<f64> =
            (1..=self.vocab_size).map(|r| (r as f64).powf(-self.zipf_exponent)).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }
}

pub const RIPPLE_DEPTH: f64 = 0.25;

/// Ground-truth signature of one lexicon entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordTemplate {
    /// 1-based frequency rank.
    pub rank: usize,
    pub word: String,
    /// Unit-norm spatial pattern over channels.
    pub spatial: Vec<f64>,
    pub freq_hz: f64,
    pub phase: f64,
}

impl WordTemplate {
    /// Temporal kernel at relative position `u` in [0, 1) of a token of
    /// `duration_s`: a Hann bump with a word-specific ripple of depth
    /// `RIPPLE_DEPTH`. The kernel never changes sign and peaks near 1.
    pub fn temporal(&self, u: f64, duration_s: f64) -> f64 {
        let env = (PI * u).sin().powi(2);
        let ripple = (2.0 * PI * self.freq_hz * u * duration_s + self.phase).cos();
        env * ((1.0 - RIPPLE_DEPTH) + RIPPLE_DEPTH * ripple)
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub sessions: Vec<Session>,
    pub templates: BTreeMap<String, WordTemplate>,
    pub lexicon: Vec<String>,
    pub default_split: SplitAssignment,
}

impl SynthCorpus {
    /// Lexicon word at 1-based rank.
    pub fn word_at_rank(&self, rank: usize) -> Option<&str> {
        self.lexicon.get(rank.checked_sub(1)?).map(String::as_str)
    }
}

const CONSONANTS: &[u8] = b"bcdfghjklmnprstvwz";
const VOWELS: &[u8] = b"aeiou";

/// String length for rank r: grows with log rank so rare words are longer.
fn word_length(rank: usize) -> usize {
    2 + (rank as f64).log2().floor() as usize
}

fn build_lexicon(seed: u64, vocab_size: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut lexicon = Vec::with_capacity(vocab_size);
    for rank in 1..=vocab_size {
        let len = word_length(rank);
        let mut attempt = 0u64;
        loop {
            let mut rng = stream(seed, &[tag::SYNTH_PATTERN, 0, rank as u64, attempt]);
            let word: String = (0..len)
                .map(|i| {
                    let set = if i % 2 == 0 { CONSONANTS } else { VOWELS };
                    set[rng.random_range(0..set.len())] as char
                })
                .collect();
            if seen.insert(word.clone()) {
                lexicon.push(word);
                break;
            }
            attempt += 1;
        }
    }
    lexicon
}

/// Gram-Schmidt over blocks of `n_channels` ranks; each block is an
/// orthonormal set derived from Gaussian draws keyed by (seed, block).
fn spatial_patterns(seed: u64, vocab_size: usize, n_channels: usize) -> Vec<Vec<f64>> {
    let mut patterns = Vec::with_capacity(vocab_size);
    let mut block: Vec<Vec<f64>> = Vec::new();
    for idx in 0..vocab_size {
        let (b, j) = (idx / n_channels, idx % n_channels);
        if j == 0 {
            block.clear();
        }
        let mut attempt = 0u64;
        let v = loop {
            let mut rng = stream(seed, &[tag::SYNTH_PATTERN, 1, b as u64, j as u64, attempt]);
            let mut v: Vec<f64> = (0..n_channels).map(|_| rng.sample(StandardNormal)).collect();
            for u in &block {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|a| *a /= norm);
                break v;
            }
            attempt += 1;
        };
        block.push(v.clone());
        patterns.push(v);
    }
    patterns
}

fn build_templates(config: &SynthConfig, lexicon: &[String]) -> BTreeMap<String, WordTemplate> {
    let spatial = spatial_patterns(config.seed, config.vocab_size, config.n_channels);
    lexicon
        .iter()
        .zip(spatial)
        .enumerate()
        .map(|(i, (word, spatial))| {
            let mut rng = stream(config.seed, &[tag::SYNTH_PATTERN, 2, i as u64]);
            let t = WordTemplate {
                rank: i + 1,
                word: word.clone(),
                spatial,
                freq_hz: rng.random_range(2.0..8.0),
                phase: rng.random_range(0.0..2.0 * PI),
            };
            (word.clone(), t)
        })
        .collect()
}

fn session_id(index: usize) -> String {
    format!("synth-s{index:02}")
}

fn generate_session(
    config: &SynthConfig,
    index: usize,
    lexicon: &[String],
    templates: &BTreeMap<String, WordTemplate>,
    sampler: &WeightedIndex<f64>,
) -> Result<Session> {
    let fs = config.sample_rate_hz;
    let n_samples = (config.session_minutes * 60.0 * fs).round() as usize;
    let total_s = n_samples as f64 / fs;
    let c = config.n_channels;

    let mut signal = Array2::<f32>::zeros((c, n_samples));
    for (ch, mut row) in signal.rows_mut().into_iter().enumerate() {
        let mut rng = stream(config.seed, &[tag::SYNTH_NOISE, index as u64, ch as u64]);
        row.iter_mut().for_each(|v| *v = rng.sample::<f32, _>(StandardNormal));
    }

    let (dmin, dmax) = config.word_duration_range_s;
    let (gmin, gmax) = config.gap_range_s;
    let uniform = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| {
        if hi > lo { rng.random_range(lo..hi) } else { lo }
    };
    let mut layout = stream(config.seed, &[tag::SYNTH_LAYOUT, index as u64]);
    let mut events = Vec::new();
    let mut t = uniform(&mut layout, gmin, gmax);
    loop {
        let mut tok = stream(config.seed, &[tag::SYNTH_LAYOUT, index as u64, events.len() as u64 + 1]);
        let duration = uniform(&mut tok, dmin, dmax);
        if t + duration > total_s {
            break;
        }
        let word = &lexicon[sampler.sample(&mut tok)];
        events.push(WordEvent::word(t, duration, word));
        t += duration + uniform(&mut layout, gmin, gmax);
    }

    if config.snr > 0.0 {
        for ev in &events {
            let tpl = &templates[&ev.word];
            let start = (ev.onset_s * fs).round() as usize;
            let len = ((ev.duration_s * fs).round() as usize).min(n_samples - start);
            for k in 0..len {
                let a = config.snr * tpl.temporal(k as f64 / len as f64, ev.duration_s);
                for ch in 0..c {
                    signal[[ch, start + k]] += (a * tpl.spatial[ch]) as f32;
                }
            }
        }
    }

    Session::new(session_id(index), signal, events, ChannelConfig::new(c, fs))
}

/// Generate the corpus described by `config`. Identical configs give
/// bit-identical sessions regardless of thread scheduling.
pub fn generate_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let lexicon = build_lexicon(config.seed, config.vocab_size);
    let templates = build_templates(config, &lexicon);
    let sampler = WeightedIndex::new(config.zipf_pmf())
        .map_err(|e| Error::validation(format!("zipf weights: {e}")))?;
    let sessions = (0..config.n_sessions)
        .into_par_iter()
        .map(|i| generate_session(config, i, &lexicon, &templates, &sampler))
        .collect::<Result<Vec<_>>>()?;

    let n = config.n_sessions;
    let ids: Vec<String> = (0..n).map(session_id).collect();
    let default_split = if n >= 3 {
        SplitAssignment::new(ids[..n - 2].to_vec(), ids[n - 2].clone(), ids[n - 1].clone())
    } else {
        SplitAssignment::new(Vec::new(), ids[0].clone(), ids[n - 1].clone())
    };
    Ok(SynthCorpus { sessions, templates, lexicon, default_split })
}
