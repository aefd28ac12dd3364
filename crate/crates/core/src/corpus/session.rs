use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::events::{parse_events_tsv, write_events_tsv, WordEvent};
use crate::error::{Error, Result};

/// Sensor layout: channel count, sampling rate and optional channel names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub n_channels: usize,
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub channel_names: Vec<String>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig { n_channels: 306, sample_rate_hz: 250.0, channel_names: Vec::new() }
    }
}

impl ChannelConfig {
    pub fn new(n_channels: usize, sample_rate_hz: f64) -> Self {
        ChannelConfig { n_channels, sample_rate_hz, channel_names: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 {
            return Err(Error::validation("n_channels must be at least 1"));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::validation("sample_rate_hz must be positive"));
        }
        if !self.channel_names.is_empty() && self.channel_names.len() != self.n_channels {
            return Err(Error::validation(format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                self.n_channels
            )));
        }
        Ok(())
    }
}

/// One recording run. Immutable once constructed.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    session_id: String,
    signal: Array2<f32>,
    events: Vec<WordEvent>,
    channel_config: ChannelConfig,
}

/// JSON sidecar written next to the raw `.f32` signal file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSidecar {
    pub session_id: String,
    pub n_channels: usize,
    pub n_samples: usize,
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub channel_names: Vec<String>,
    /// SHA-256 of the `.f32` file contents, hex encoded.
    pub checksum: String,
}

const EVENT_SLACK_S: f64 = 1e-9;

impl Session {
    pub fn new(
        session_id: impl Into<String>,
        signal: Array2<f32>,
        events: Vec<WordEvent>,
        channel_config: ChannelConfig,
    ) -> Result<Self> {
        let session = Session { session_id: session_id.into(), signal, events, channel_config };
        session.validate()?;
        Ok(session)
    }

    fn validate(&self) -> Result<()> {
        let id = &self.session_id;
        if id.is_empty() || id.contains(['/', '\\']) {
            return Err(Error::validation(format!("invalid session id `{id}`")));
        }
        self.channel_config.validate()?;
        if self.signal.nrows() != self.channel_config.n_channels {
            return Err(Error::validation(format!(
                "session {id}: signal has {} rows, config says {} channels",
                self.signal.nrows(),
                self.channel_config.n_channels
            )));
        }
        if !self.signal.is_standard_layout() {
            return Err(Error::validation(format!("session {id}: signal must be row-major")));
        }
        let duration = self.duration_s();
        let mut prev = f64::NEG_INFINITY;
        for ev in &self.events {
            ev.validate()?;
            if ev.onset_s < prev {
                return Err(Error::validation(format!("session {id}: events not sorted by onset")));
            }
            prev = ev.onset_s;
            if ev.end_s() > duration + EVENT_SLACK_S {
                return Err(Error::validation(format!(
                    "session {id}: event `{}` ends at {} s beyond recording end {} s",
                    ev.word,
                    ev.end_s(),
                    duration
                )));
            }
        }
        Ok(())
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn signal(&self) -> &Array2<f32> {
        &self.signal
    }

    pub fn events(&self) -> &[WordEvent] {
        &self.events
    }

    pub fn channel_config(&self) -> &ChannelConfig {
        &self.channel_config
    }

    pub fn n_samples(&self) -> usize {
        self.signal.ncols()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.channel_config.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz()
    }

    /// Word-kind events in onset order; the position in this iterator is the token index.
    pub fn word_tokens(&self) -> impl Iterator<Item = &WordEvent> {
        self.events.iter().filter(|e| e.is_word())
    }

    /// Same session with a replaced signal (e.g. after normalization).
    pub fn with_signal(&self, signal: Array2<f32>) -> Result<Self> {
        Session::new(self.session_id.clone(), signal, self.events.clone(), self.channel_config.clone())
    }

    fn signal_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.signal.len() * 4);
        for v in self.signal.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.signal_bytes()))
    }

    /// Write `<id>.f32`, `<id>.json` and `<id>.events.tsv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<SessionSidecar> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = self.signal_bytes();
        let sidecar = SessionSidecar {
            session_id: self.session_id.clone(),
            n_channels: self.signal.nrows(),
            n_samples: self.signal.ncols(),
            sample_rate_hz: self.channel_config.sample_rate_hz,
            channel_names: self.channel_config.channel_names.clone(),
            checksum: hex::encode(Sha256::digest(&bytes)),
        };
        let id = &self.session_id;
        let write = |name: String, data: &[u8]| {
            let path = dir.join(name);
            fs::write(&path, data).map_err(|e| Error::io(path, e))
        };
        write(format!("{id}.f32"), &bytes)?;
        write(format!("{id}.json"), serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
        write(format!("{id}.events.tsv"), write_events_tsv(&self.events).as_bytes())?;
        Ok(sidecar)
    }

    /// Load a session saved by [`Session::save`], verifying the checksum.
    pub fn load(dir: &Path, session_id: &str) -> Result<Self> {
        let read = |name: String| {
            let path = dir.join(name);
            fs::read(&path).map_err(|e| Error::io(path, e))
        };
        let sidecar: SessionSidecar = serde_json::from_slice(&read(format!("{session_id}.json"))?)?;
        if sidecar.session_id != session_id {
            return Err(Error::validation(format!(
                "sidecar names session `{}`, expected `{session_id}`",
                sidecar.session_id
            )));
        }
        let bytes = read(format!("{session_id}.f32"))?;
        if bytes.len() != sidecar.n_channels * sidecar.n_samples * 4 {
            return Err(Error::validation(format!(
                "session {session_id}: signal file has {} bytes, expected {}",
                bytes.len(),
                sidecar.n_channels * sidecar.n_samples * 4
            )));
        }
        let checksum = hex::encode(Sha256::digest(&bytes));
        if checksum != sidecar.checksum {
            return Err(Error::validation(format!("session {session_id}: checksum mismatch")));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let signal = Array2::from_shape_vec((sidecar.n_channels, sidecar.n_samples), values)
            .map_err(|e| Error::validation(e.to_string()))?;
        let tsv_path = dir.join(format!("{session_id}.events.tsv"));
        let text = fs::read_to_string(&tsv_path).map_err(|e| Error::io(&tsv_path, e))?;
        let events = parse_events_tsv(&text)?;
        let config = ChannelConfig {
            n_channels: sidecar.n_channels,
            sample_rate_hz: sidecar.sample_rate_hz,
            channel_names: sidecar.channel_names,
        };
        Session::new(sidecar.session_id, signal, events, config)
    }
}
