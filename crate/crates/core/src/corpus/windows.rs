use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KeywordTaskSpec, Session};

/// Location of one window inside its session; no signal copy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRef {
    pub token_index: usize,
    pub start: usize,
    pub label: u8,
    pub word: String,
}

/// A labelled fixed-shape window with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowExample {
    pub signal: Array2<f32>,
    pub label: u8,
    pub session_id: String,
    pub token_index: usize,
    pub word: String,
}

/// Events skipped because their window left the recording.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowTally {
    pub dropped: usize,
    pub dropped_positive: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub examples: Vec<WindowExample>,
    pub tally: WindowTally,
}

/// Compute window positions for every word token of `session`.
///
/// The window of token i starts at sample `round((t_i - beta_neg) * fs)` and
/// spans `round(window_s * fs)` samples. Windows that start before the
/// recording or run past its end are skipped and tallied.
pub fn locate_windows(session: &Session, spec: &KeywordTaskSpec) -> (Vec<WindowRef>, WindowTally) {
    let fs = session.sample_rate_hz();
    let n = spec.window_samples(fs);
    let total = session.n_samples();
    let mut refs = Vec::new();
    let mut tally = WindowTally::default();
    for (token_index, ev) in session.word_tokens().enumerate() {
        let label = u8::from(spec.is_keyword(&ev.word));
        let start_s = ev.onset_s - spec.beta_neg_s;
        let start = (start_s * fs).round();
        if start_s < -1e-9 || start < 0.0 || start as usize + n > total {
            tally.dropped += 1;
            tally.dropped_positive += label as usize;
            continue;
        }
        refs.push(WindowRef { token_index, start: start as usize, label, word: ev.word.clone() });
    }
    (refs, tally)
}

/// Locate windows for every session in parallel. Output order follows the
/// input session order, then token index.
pub fn locate_corpus_windows(
    sessions: &[Session],
    spec: &KeywordTaskSpec,
) -> Vec<(Vec<WindowRef>, WindowTally)> {
    sessions.par_iter().map(|s| locate_windows(s, spec)).collect()
}

impl WindowRef {
    pub fn view<'a>(&self, session: &'a Session, n_samples: usize) -> ArrayView2<'a, f32> {
        session.signal().slice(s![.., self.start..self.start + n_samples])
    }
}

pub fn extract_windows(session: &Session, spec: &KeywordTaskSpec) -> WindowSet {
    let n = spec.window_samples(session.sample_rate_hz());
    let (refs, tally) = locate_windows(session, spec);
    let examples = refs
        .into_iter()
        .map(|r| WindowExample {
            signal: r.view(session, n).to_owned(),
            label: r.label,
            session_id: session.session_id().to_string(),
            token_index: r.token_index,
            word: r.word,
        })
        .collect();
    WindowSet { examples, tally }
}
