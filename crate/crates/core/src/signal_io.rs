//! Raw signal files.
//!
//! A signal is stored as `NAME.f32` holding little-endian 32-bit floats in
//! channel-major order, next to a `NAME.json` sidecar
//! `{"channels": C, "samples": N, "sample_rate_hz": R}`.
//!
//! Without explicit references in the metadata, the EEG of trial `T` lives at
//! `eeg/T.f32` and the envelope of stimulus `S` at `envelopes/S.f32`, both
//! relative to the data directory.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, StimulusId, TrialRecord};
use crate::error::{Error, Result};
use crate::signal::SignalSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub channels: usize,
    pub samples: usize,
    pub sample_rate_hz: f64,
}

impl Sidecar {
    pub fn of(series: &SignalSeries) -> Self {
        Sidecar {
            channels: series.channels(),
            samples: series.len(),
            sample_rate_hz: series.sample_rate_hz(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Expected payload size in bytes, or `None` on overflow.
    pub fn byte_len(&self) -> Option<usize> {
        self.channels.checked_mul(self.samples)?.checked_mul(4)
    }
}

pub fn encode_f32_le(series: &SignalSeries) -> Vec<u8> {
    series
        .as_channel_major()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

/// Decodes a payload against its sidecar. Non-finite samples are rejected.
pub fn decode_f32_le(bytes: &[u8], sidecar: &Sidecar) -> std::result::Result<SignalSeries, String> {
    let expected = sidecar
        .byte_len()
        .ok_or_else(|| "sidecar dimensions overflow".to_string())?;
    if sidecar.channels == 0 {
        return Err("sidecar declares zero channels".into());
    }
    if bytes.len() != expected {
        return Err(format!("payload has {} bytes, sidecar implies {expected}", bytes.len()));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err("payload contains non-finite samples".into());
    }
    SignalSeries::from_channel_major(data, sidecar.channels, sidecar.sample_rate_hz).map_err(|e| e.to_string())
}

pub fn sidecar_path(signal_path: &Path) -> PathBuf {
    signal_path.with_extension("json")
}

pub fn write_signal(path: &Path, series: &SignalSeries) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_f32_le(series)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string(&Sidecar::of(series))?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn read_signal(path: &Path) -> Result<SignalSeries> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar = Sidecar::from_json_str(&text).map_err(|e| Error::Signal {
        path: side.clone(),
        reason: e.to_string(),
    })?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f32_le(&bytes, &sidecar).map_err(|reason| Error::Signal {
        path: path.to_path_buf(),
        reason,
    })
}

fn resolve(root: &Path, relative: &str) -> Result<PathBuf> {
    let rel = Path::new(relative);
    let escapes = rel
        .components()
        .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir));
    if relative.is_empty() || escapes {
        return Err(Error::Signal {
            path: rel.to_path_buf(),
            reason: "signal references must be relative paths inside the data directory".into(),
        });
    }
    Ok(root.join(rel))
}

fn file_component(id: &str) -> Result<&str> {
    if id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Error::Signal {
            path: PathBuf::from(id),
            reason: "id cannot be used as a file name; give an explicit reference".into(),
        });
    }
    Ok(id)
}

pub fn eeg_path(root: &Path, trial: &TrialRecord) -> Result<PathBuf> {
    match trial.eeg_ref() {
        Some(r) => resolve(root, r),
        None => Ok(root
            .join("eeg")
            .join(format!("{}.f32", file_component(trial.trial_id())?))),
    }
}

pub fn envelope_path(root: &Path, trial: &TrialRecord, stimulus: &StimulusId) -> Result<PathBuf> {
    match trial.envelope_refs().get(stimulus) {
        Some(r) => resolve(root, r),
        None => Ok(root
            .join("envelopes")
            .join(format!("{}.f32", file_component(stimulus.as_str())?))),
    }
}

/// In-memory signals for a dataset: one EEG series per trial and one
/// envelope per stimulus.
#[derive(Debug, Clone, Default)]
pub struct SignalStore {
    eeg: BTreeMap<String, Arc<SignalSeries>>,
    envelopes: BTreeMap<StimulusId, Arc<SignalSeries>>,
}

impl SignalStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_eeg(&mut self, trial_id: impl Into<String>, eeg: SignalSeries) {
        self.eeg.insert(trial_id.into(), Arc::new(eeg));
    }

    pub fn insert_envelope(&mut self, stimulus: StimulusId, envelope: SignalSeries) {
        self.envelopes.insert(stimulus, Arc::new(envelope));
    }

    pub fn eeg(&self, trial_id: &str) -> Result<&Arc<SignalSeries>> {
        self.eeg
            .get(trial_id)
            .ok_or_else(|| Error::UnknownTrial(trial_id.to_string()))
    }

    pub fn envelope(&self, stimulus: &StimulusId) -> Result<&Arc<SignalSeries>> {
        self.envelopes
            .get(stimulus)
            .ok_or_else(|| Error::MissingEnvelope(stimulus.to_string()))
    }

    pub fn envelopes(&self) -> &BTreeMap<StimulusId, Arc<SignalSeries>> {
        &self.envelopes
    }

    /// Loads every signal the dataset references from `root`.
    pub fn load(root: &Path, dataset: &Dataset) -> Result<Self> {
        let mut store = SignalStore::new();
        for t in dataset.trials() {
            let eeg = read_signal(&eeg_path(root, t)?)?;
            store.insert_eeg(t.trial_id(), eeg);
            for s in t.stimuli() {
                if store.envelopes.contains_key(s) {
                    continue;
                }
                let env = read_signal(&envelope_path(root, t, s)?)?;
                if env.channels() != 1 {
                    return Err(Error::Signal {
                        path: envelope_path(root, t, s)?,
                        reason: format!("envelopes must be single-channel, found {}", env.channels()),
                    });
                }
                store.insert_envelope(s.clone(), env);
            }
        }
        Ok(store)
    }

    /// Writes every signal using the default layout under `root`.
    pub fn write_default_layout(&self, root: &Path) -> Result<()> {
        for (trial, eeg) in &self.eeg {
            let path = root.join("eeg").join(format!("{}.f32", file_component(trial)?));
            write_signal(&path, eeg)?;
        }
        for (stim, env) in &self.envelopes {
            let path = root
                .join("envelopes")
                .join(format!("{}.f32", file_component(stim.as_str())?));
            write_signal(&path, env)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let series = SignalSeries::new(vec![vec![1.0, 2.5, -3.0], vec![0.0, 0.125, 7.0]], 64.0).unwrap();
        let path = dir.path().join("eeg/t1.f32");
        write_signal(&path, &series).unwrap();
        let back = read_signal(&path).unwrap();
        assert_eq!(back, series);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 24);
        // channel-major little-endian: first value is channel 0 sample 0
        assert_eq!(&bytes[..4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[12..16], &0.0f32.to_le_bytes());
    }

    #[test]
    fn decode_checks_payload_size() {
        let side = Sidecar {
            channels: 2,
            samples: 3,
            sample_rate_hz: 64.0,
        };
        assert!(decode_f32_le(&[0u8; 20], &side).is_err());
        assert!(decode_f32_le(&[0u8; 24], &side).is_ok());
        let nan = f32::NAN.to_le_bytes().repeat(6);
        assert!(decode_f32_le(&nan, &side).is_err());
        let huge = Sidecar {
            channels: usize::MAX,
            samples: 2,
            sample_rate_hz: 1.0,
        };
        assert!(decode_f32_le(&[], &huge).is_err());
    }

    #[test]
    fn references_cannot_escape_root() {
        let t = TrialRecord::pair("t1", "s", "A", "B")
            .unwrap()
            .with_eeg_ref("../outside.f32");
        assert!(eeg_path(Path::new("/data"), &t).is_err());
        let t = TrialRecord::pair("t1", "s", "A", "B").unwrap();
        assert_eq!(
            eeg_path(Path::new("/data"), &t).unwrap(),
            PathBuf::from("/data/eeg/t1.f32")
        );
        let a = StimulusId::new("A").unwrap();
        assert_eq!(
            envelope_path(Path::new("/data"), &t, &a).unwrap(),
            PathBuf::from("/data/envelopes/A.f32")
        );
    }
}
