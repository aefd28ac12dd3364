use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::normalize_word;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Word,
    Phoneme,
    Speech,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Word => "word",
            EventKind::Phoneme => "phoneme",
            EventKind::Speech => "speech",
        }
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "word" => Ok(EventKind::Word),
            "phoneme" => Ok(EventKind::Phoneme),
            "speech" => Ok(EventKind::Speech),
            other => Err(format!("unknown event kind `{other}`")),
        }
    }
}

/// One annotated segment: onset and duration in seconds from session start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordEvent {
    pub onset_s: f64,
    pub duration_s: f64,
    pub kind: EventKind,
    pub word: String,
}

impl WordEvent {
    pub fn word(onset_s: f64, duration_s: f64, word: &str) -> Self {
        WordEvent { onset_s, duration_s, kind: EventKind::Word, word: normalize_word(word) }
    }

    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }

    pub fn is_word(&self) -> bool {
        self.kind == EventKind::Word
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.onset_s.is_finite() && self.onset_s >= 0.0) {
            return Err(Error::validation(format!("negative or non-finite onset {}", self.onset_s)));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::validation(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        if self.kind == EventKind::Word && self.word.is_empty() {
            return Err(Error::validation(format!("word event at {} s has no word", self.onset_s)));
        }
        Ok(())
    }
}

const COLUMNS: [&str; 4] = ["onset", "duration", "kind", "word"];

/// Parse an events table. Columns are located by header name; rows are
/// returned sorted by onset with the original order kept among equal onsets.
pub fn parse_events_tsv(text: &str) -> Result<Vec<WordEvent>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(Error::Parse { line: 1, message: "missing header row".into() })?;
    let names: Vec<&str> = header.trim_end_matches('\r').split('\t').map(str::trim).collect();
    let mut index = [0usize; 4];
    for (slot, col) in index.iter_mut().zip(COLUMNS) {
        *slot = names.iter().position(|n| n.eq_ignore_ascii_case(col)).ok_or_else(|| {
            Error::Parse { line: 1, message: format!("header lacks column `{col}`") }
        })?;
    }

    let mut events = Vec::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let field = |slot: usize| fields.get(index[slot]).map(|f| f.trim()).unwrap_or("");
        let number = |slot: usize| -> Result<f64> {
            let s = field(slot);
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("{} `{s}` is not a number", COLUMNS[slot]),
            })
        };
        let onset_s = number(0)?;
        let duration_s = number(1)?;
        let kind = field(2)
            .parse::<EventKind>()
            .map_err(|message| Error::Parse { line: line_no, message })?;
        let event = WordEvent { onset_s, duration_s, kind, word: normalize_word(field(3)) };
        event
            .validate()
            .map_err(|e| Error::validation(format!("line {line_no}: {e}")))?;
        events.push(event);
    }
    // stable sort keeps file order among equal onsets
    events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    Ok(events)
}

/// Inverse of [`parse_events_tsv`]. Floats use shortest round-trip formatting.
pub fn write_events_tsv(events: &[WordEvent]) -> String {
    let mut out = String::from("onset\tduration\tkind\tword\n");
    for e in events {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", e.onset_s, e.duration_s, e.kind.as_str(), e.word);
    }
    out
}
