use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{LinearDecoder, Reconstruction};
use crate::balance::Roles;
use crate::dataset::{Dataset, StimulusId, StimulusPair};
use crate::error::{Error, Result};
use crate::metrics::pearson;
use crate::partition::{audit_partition, Partition, Strategy};
use crate::signal::SignalSeries;
use crate::signal_io::SignalStore;

/// Blend and matching settings of a [`MemorizingDecoder`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    /// Blend factor for a fully role-consistent stored envelope.
    pub alpha: f64,
    /// Minimum whole-trial correlation with a stored envelope to use it.
    pub threshold: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            alpha: 0.15,
            threshold: 0.02,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must be in [-1, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// An attended envelope seen during training.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub stimulus: StimulusId,
    pub envelope: Arc<SignalSeries>,
    /// `max(0, (n_att - n_unatt) / (n_att + n_unatt))` over the training trials.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryMatch {
    pub stimulus: StimulusId,
    pub rho: f64,
    /// Effective blend factor `alpha * weight`.
    pub blend: f64,
}

/// A linear decoder that, when its output resembles an envelope attended
/// during training, pulls the output towards that stored envelope.
///
/// The pull is weighted by how consistently the stimulus was attended in
/// training, so stimuli that were attended and ignored equally often are
/// never pulled. The result is a decoder whose accuracy depends on stimulus
/// identity leaking from training to test.
#[derive(Debug, Clone)]
pub struct MemorizingDecoder {
    linear: LinearDecoder,
    entries: Vec<MemoryEntry>,
    cfg: MemoryConfig,
}

impl MemorizingDecoder {
    pub fn from_parts(linear: LinearDecoder, entries: Vec<MemoryEntry>, cfg: MemoryConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(MemorizingDecoder { linear, entries, cfg })
    }

    pub fn linear(&self) -> &LinearDecoder {
        &self.linear
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn config(&self) -> MemoryConfig {
        self.cfg
    }

    /// Best-correlated stored envelope over the valid range of `linear_out`,
    /// if it clears the threshold.
    pub fn best_match(&self, linear_out: &Reconstruction) -> Result<Option<(MemoryMatch, &MemoryEntry)>> {
        let valid = linear_out.valid.clone();
        let pred = linear_out.valid_samples();
        let mut best: Option<(f64, &MemoryEntry)> = None;
        for e in &self.entries {
            if e.envelope.len() != linear_out.samples.len() {
                continue;
            }
            let rho = match pearson(pred, &e.envelope.samples()[valid.clone()]) {
                Ok(r) => r,
                Err(Error::ConstantSeries) => continue,
                Err(err) => return Err(err),
            };
            if best.is_none_or(|(b, _)| rho > b) {
                best = Some((rho, e));
            }
        }
        Ok(best.filter(|(rho, _)| *rho > self.cfg.threshold).map(|(rho, e)| {
            (
                MemoryMatch {
                    stimulus: e.stimulus.clone(),
                    rho,
                    blend: self.cfg.alpha * e.weight,
                },
                e,
            )
        }))
    }

    /// Reconstructs the envelope. `window` is the evaluation window length in
    /// samples; blending z-scores both signals inside windows aligned to the
    /// start of the valid range. Without a match the linear output is returned
    /// unchanged.
    pub fn reconstruct(&self, eeg: &SignalSeries, window: usize) -> Result<(Reconstruction, Option<MemoryMatch>)> {
        if window < 2 {
            return Err(Error::Config(format!("window of {window} samples")));
        }
        let lin = self.linear.reconstruct(eeg)?;
        let Some((m, entry)) = self.best_match(&lin)? else {
            return Ok((lin, None));
        };
        if m.blend == 0.0 {
            return Ok((lin, Some(m)));
        }
        let stored = entry.envelope.samples();
        let mut out = lin.samples.clone();
        let valid = lin.valid.clone();
        let mut start = valid.start;
        while start < valid.end {
            let end = (start + window).min(valid.end);
            let p = zscore(&lin.samples[start..end]);
            let s = zscore(&stored[start..end]);
            for (i, t) in (start..end).enumerate() {
                out[t] = (1.0 - m.blend) * p[i] + m.blend * s[i];
            }
            start = end;
        }
        Ok((Reconstruction { samples: out, valid }, Some(m)))
    }
}

fn zscore(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return vec![0.0; x.len()];
    }
    let sd = var.sqrt();
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// True when every stimulus belongs to exactly one distinct two-speaker pair.
fn has_fixed_pairings(d: &Dataset) -> bool {
    let mut pair_of: BTreeMap<&StimulusId, StimulusPair> = BTreeMap::new();
    for t in d.trials() {
        let Ok(pair) = t.stimulus_pair() else {
            return false;
        };
        for s in t.stimuli() {
            match pair_of.get(s) {
                Some(p) if *p != pair => return false,
                Some(_) => {}
                None => {
                    pair_of.insert(s, pair.clone());
                }
            }
        }
    }
    true
}

/// Stores the attended envelope of every training trial of `partition`.
///
/// When the partition passes a `Lopeo` audit, no stored stimulus belongs to
/// a test pair. With fixed pairings this follows from the audit and a
/// violation returns [`Error::LeakedEnvelope`]; otherwise such stimuli are
/// dropped from the store.
pub fn build_memorizing_decoder(
    linear: LinearDecoder,
    dataset: &Dataset,
    partition: &Partition,
    strategy: Strategy,
    store: &SignalStore,
    cfg: MemoryConfig,
) -> Result<MemorizingDecoder> {
    cfg.validate()?;
    if partition.train.is_empty() {
        return Err(Error::EmptyStore);
    }
    let index = dataset.index();
    let lookup = |id: &String| {
        index
            .get(id.as_str())
            .map(|&i| &dataset.trials()[i])
            .ok_or_else(|| Error::UnknownTrial(id.clone()))
    };

    let mut roles: BTreeMap<StimulusId, Roles> = BTreeMap::new();
    for id in &partition.train {
        let t = lookup(id)?;
        roles.entry(t.attended().clone()).or_default().attended += 1;
        for u in t.unattended() {
            roles.entry(u.clone()).or_default().unattended += 1;
        }
    }

    let mut entries = Vec::new();
    for (stimulus, r) in &roles {
        if r.attended == 0 {
            continue;
        }
        let envelope = store
            .envelope(stimulus)
            .map_err(|_| Error::MissingEnvelope(stimulus.to_string()))?
            .clone();
        let weight = ((r.attended as f64 - r.unattended as f64) / r.total() as f64).max(0.0);
        entries.push(MemoryEntry {
            stimulus: stimulus.clone(),
            envelope,
            weight,
        });
    }

    if strategy == Strategy::Lopeo && audit_partition(partition, dataset, Strategy::Lopeo)?.passed {
        let mut held_out = BTreeSet::new();
        for id in &partition.test {
            held_out.extend(lookup(id)?.stimuli().cloned());
        }
        if has_fixed_pairings(dataset) {
            if let Some(e) = entries.iter().find(|e| held_out.contains(&e.stimulus)) {
                return Err(Error::LeakedEnvelope(e.stimulus.to_string()));
            }
        } else {
            // a stimulus can pair with several partners; keep test stimuli out anyway
            entries.retain(|e| !held_out.contains(&e.stimulus));
        }
    }

    MemorizingDecoder::from_parts(linear, entries, cfg)
}
