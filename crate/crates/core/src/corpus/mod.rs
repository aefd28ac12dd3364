//! Session-structured recordings with word-level event annotations.
//!
//! A corpus is a set of [`Session`]s. Each session carries a channel-major
//! signal matrix and the word events aligned to it. Keyword tasks turn every
//! word token into one fixed-length [`WindowExample`] anchored at the token
//! onset; sessions are the unit of train/validation/test splitting.

mod events;
mod manifest;
mod normalize;
mod session;
mod splits;
mod task;
mod windows;

pub use events::{parse_events_tsv, write_events_tsv, EventKind, WordEvent};
pub use manifest::{CorpusManifest, ManifestEntry, Partition, MANIFEST_FILE};
pub use normalize::Normalizer;
pub use session::{ChannelConfig, Session, SessionSidecar};
pub use splits::{positive_counts, select_splits, SplitAssignment};
pub use task::{build_task_spec, compute_d_max, KeywordTaskSpec};
pub use windows::{
    extract_windows, locate_windows, locate_corpus_windows, WindowExample, WindowRef, WindowSet,
    WindowTally,
};

/// Lowercase a word for keyword comparison. No stemming.
pub fn normalize_word(word: &str) -> String {
    word.trim().to_lowercase()
}
