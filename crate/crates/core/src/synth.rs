//! Synthetic envelopes and EEG from a linear forward model.
//!
//! Each stimulus gets a low-passed, rectified noise envelope. EEG channels mix
//! the attended envelope, the competing envelopes scaled by `unattended_gain`,
//! and white noise. Channel gains are drawn once per subject.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::balance_index;
use crate::dataset::{Dataset, StimulusId, TrialRecord};
use crate::error::{Error, Result};
use crate::signal::SignalSeries;
use crate::signal_io::SignalStore;

/// Noise level at which ridge decoding of the balanced default scenario
/// (4 pairs, 4 repeats, LOTO with K = 4) scores about 0.69 accuracy with 10 s
/// windows, averaged over seeds 0 to 4.
pub const DEFAULT_NOISE_SIGMA: f64 = 50.0;

pub const ENVELOPE_CUTOFF_HZ: f64 = 8.0;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(stream)) ^ index)
}

const STREAM_ENVELOPE: u64 = 1;
const STREAM_GAINS: u64 = 2;
const STREAM_NOISE: u64 = 3;

fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter_mut().for_each(|v| *v -= mean);
    let sd = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        x.iter_mut().for_each(|v| *v /= sd);
    }
}

/// White noise through a one-pole low-pass at 8 Hz, half-wave rectified and
/// standardized to zero mean and unit variance.
pub fn generate_envelope(length_samples: usize, sample_rate_hz: f64, seed: u64) -> Result<Vec<f64>> {
    if length_samples == 0 {
        return Err(Error::ZeroLength);
    }
    if length_samples < 2 {
        return Err(Error::SeriesTooShort(length_samples));
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::Config(format!("invalid sample rate {sample_rate_hz}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = 1.0 - (-2.0 * std::f64::consts::PI * ENVELOPE_CUTOFF_HZ / sample_rate_hz).exp();
    // settle the filter state before recording
    let burn_in = (sample_rate_hz.ceil() as usize).max(16);
    let mut y = 0.0;
    let mut out = Vec::with_capacity(length_samples);
    for i in 0..burn_in + length_samples {
        let x: f64 = StandardNormal.sample(&mut rng);
        y += a * (x - y);
        if i >= burn_in {
            out.push(y.max(0.0));
        }
    }
    standardize(&mut out);
    Ok(out)
}

/// Channel gains of the forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardGains {
    pub attended: Vec<f64>,
    /// One gain vector per competitor slot.
    pub unattended: Vec<Vec<f64>>,
}

impl ForwardGains {
    /// Standard-normal gains for `channels` channels and `competitors` competing streams.
    pub fn random(channels: usize, competitors: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let attended = draw(channels);
        let unattended = (0..competitors).map(|_| draw(channels)).collect();
        ForwardGains { attended, unattended }
    }

    pub fn channels(&self) -> usize {
        self.attended.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardModel {
    pub attended_gain: f64,
    pub unattended_gain: f64,
    pub noise_sigma: f64,
    pub sample_rate_hz: f64,
}

/// `eeg_c = a g_c att + u sum_k g_c^k unatt_k + sigma n_c`.
pub fn synthesize_trial_eeg(
    att: &[f64],
    unatt: &[&[f64]],
    gains: &ForwardGains,
    model: &ForwardModel,
    noise_seed: u64,
) -> Result<SignalSeries> {
    let n = att.len();
    for u in unatt {
        if u.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: u.len(),
            });
        }
    }
    if gains.unattended.len() < unatt.len() {
        return Err(Error::InconsistentShapes(format!(
            "{} competitor gain vectors for {} competitors",
            gains.unattended.len(),
            unatt.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let channels = gains.channels();
    let mut data = Vec::with_capacity(channels * n);
    for c in 0..channels {
        let ga = model.attended_gain * gains.attended[c];
        for t in 0..n {
            let mut v = ga * att[t];
            for (k, u) in unatt.iter().enumerate() {
                v += model.unattended_gain * gains.unattended[k][c] * u[t];
            }
            if model.noise_sigma != 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                v += model.noise_sigma * z;
            }
            data.push(v);
        }
    }
    SignalSeries::from_channel_major(data, channels, model.sample_rate_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Roles alternate within each pair; balance index 0.
    Balanced,
    /// The first stimulus of each pair is always attended; balance index 1.
    Exclusive,
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Design::Balanced),
            "exclusive" => Ok(Design::Exclusive),
            other => Err(Error::Config(format!("unknown design {other:?}"))),
        }
    }
}

fn default_channels() -> usize {
    8
}
fn default_rate() -> f64 {
    64.0
}
fn default_trial_seconds() -> f64 {
    60.0
}
fn default_attended_gain() -> f64 {
    1.0
}
fn default_unattended_gain() -> f64 {
    0.6
}
fn default_sigma() -> f64 {
    DEFAULT_NOISE_SIGMA
}
fn default_subjects() -> usize {
    1
}
fn default_name() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub n_pairs: usize,
    pub repeats_per_pair: usize,
    pub design: Design,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    #[serde(default = "default_trial_seconds")]
    pub trial_seconds: f64,
    #[serde(default = "default_attended_gain")]
    pub attended_gain: f64,
    #[serde(default = "default_unattended_gain")]
    pub unattended_gain: f64,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    /// Trials are dealt round-robin to subjects; each subject has its own gains.
    #[serde(default = "default_subjects")]
    pub subjects: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(n_pairs: usize, repeats_per_pair: usize, design: Design, seed: u64) -> Self {
        ScenarioConfig {
            name: default_name(),
            n_pairs,
            repeats_per_pair,
            design,
            channels: default_channels(),
            sample_rate_hz: default_rate(),
            trial_seconds: default_trial_seconds(),
            attended_gain: default_attended_gain(),
            unattended_gain: default_unattended_gain(),
            noise_sigma: DEFAULT_NOISE_SIGMA,
            subjects: default_subjects(),
            seed,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn samples_per_trial(&self) -> usize {
        (self.trial_seconds * self.sample_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs < 2 {
            return Err(Error::Config(format!(
                "n_pairs must be at least 2, got {}",
                self.n_pairs
            )));
        }
        if self.repeats_per_pair == 0 || self.channels == 0 || self.subjects == 0 {
            return Err(Error::Config(
                "repeats_per_pair, channels and subjects must be positive".into(),
            ));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Config(format!("invalid sample rate {}", self.sample_rate_hz)));
        }
        if !(self.trial_seconds.is_finite() && self.trial_seconds > 0.0) {
            return Err(Error::Config(format!("invalid trial length {}", self.trial_seconds)));
        }
        if self.samples_per_trial() < 2 {
            return Err(Error::SeriesTooShort(self.samples_per_trial()));
        }
        for (name, v) in [
            ("attended_gain", self.attended_gain),
            ("unattended_gain", self.unattended_gain),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.design == Design::Balanced && !self.repeats_per_pair.is_multiple_of(2) {
            return Err(Error::InfeasibleBalance(self.repeats_per_pair));
        }
        Ok(())
    }

    fn model(&self) -> ForwardModel {
        ForwardModel {
            attended_gain: self.attended_gain,
            unattended_gain: self.unattended_gain,
            noise_sigma: self.noise_sigma,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: ScenarioConfig,
    pub n_trials: usize,
    pub balance_index: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub dataset: Dataset,
    pub signals: SignalStore,
    pub manifest: ScenarioManifest,
}

fn stimulus_ids(pair: usize) -> (StimulusId, StimulusId) {
    let a = StimulusId::new(format!("p{pair:02}a")).expect("valid id");
    let b = StimulusId::new(format!("p{pair:02}b")).expect("valid id");
    (a, b)
}

/// Builds the metadata and signals of a scenario in memory.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let n = cfg.samples_per_trial();

    let mut trials = Vec::with_capacity(cfg.n_pairs * cfg.repeats_per_pair);
    for p in 0..cfg.n_pairs {
        let (a, b) = stimulus_ids(p);
        for r in 0..cfg.repeats_per_pair {
            let flip = cfg.design == Design::Balanced && r % 2 == 1;
            let (att, un) = if flip { (&b, &a) } else { (&a, &b) };
            let index = trials.len();
            let record = TrialRecord::new(
                format!("p{p:02}r{r:02}"),
                format!("sub{:02}", index % cfg.subjects),
                att.clone(),
                vec![un.clone()],
            )
            .map_err(|issue| Error::Metadata {
                record: index,
                field: "trial".into(),
                issue,
            })?;
            trials.push(record);
        }
    }
    let dataset = Dataset::new(cfg.name.clone(), trials)?;

    let envelopes: Vec<(StimulusId, Vec<f64>)> = (0..cfg.n_pairs)
        .into_par_iter()
        .flat_map_iter(|p| {
            let (a, b) = stimulus_ids(p);
            [(a, 2 * p), (b, 2 * p + 1)]
        })
        .map(|(id, i)| {
            let seed = derive_seed(cfg.seed, STREAM_ENVELOPE, i as u64);
            generate_envelope(n, cfg.sample_rate_hz, seed).map(|e| (id, e))
        })
        .collect::<Result<_>>()?;
    let env_of = |id: &StimulusId| -> &[f64] { &envelopes.iter().find(|(s, _)| s == id).expect("generated").1 };

    let gains: Vec<ForwardGains> = (0..cfg.subjects)
        .map(|s| ForwardGains::random(cfg.channels, 1, derive_seed(cfg.seed, STREAM_GAINS, s as u64)))
        .collect();
    let model = cfg.model();
    let eeg: Vec<SignalSeries> = dataset
        .trials()
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let unatt: Vec<&[f64]> = t.unattended().iter().map(env_of).collect();
            let noise_seed = derive_seed(cfg.seed, STREAM_NOISE, i as u64);
            synthesize_trial_eeg(
                env_of(t.attended()),
                &unatt,
                &gains[i % cfg.subjects],
                &model,
                noise_seed,
            )
        })
        .collect::<Result<_>>()?;

    let mut signals = SignalStore::new();
    for (t, series) in dataset.trials().iter().zip(eeg) {
        signals.insert_eeg(t.trial_id(), series);
    }
    for (id, env) in envelopes {
        signals.insert_envelope(id, SignalSeries::mono(env, cfg.sample_rate_hz)?);
    }

    let manifest = ScenarioManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        n_trials: dataset.len(),
        balance_index: balance_index(&dataset)?.balance_index,
    };
    Ok(Scenario {
        dataset,
        signals,
        manifest,
    })
}

impl Scenario {
    /// Writes `trials.csv`, `envelopes/`, `eeg/` and `manifest.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("trials.csv");
        std::fs::write(&csv, self.dataset.to_csv_string()).map_err(|e| Error::io(&csv, e))?;
        self.signals.write_default_layout(dir)?;
        let manifest = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::pearson;

    #[test]
    fn envelope_is_standardized_and_seeded() {
        let a = generate_envelope(3840, 64.0, 7).unwrap();
        let b = generate_envelope(3840, 64.0, 7).unwrap();
        assert_eq!(a, b);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
        assert!(matches!(generate_envelope(0, 64.0, 1), Err(Error::ZeroLength)));
    }

    #[test]
    fn distinct_seeds_are_nearly_uncorrelated() {
        for s in 0..100u64 {
            let a = generate_envelope(3840, 64.0, derive_seed(s, STREAM_ENVELOPE, 0)).unwrap();
            let b = generate_envelope(3840, 64.0, derive_seed(s, STREAM_ENVELOPE, 1)).unwrap();
            assert!(pearson(&a, &b).unwrap().abs() < 0.2);
        }
    }

    #[test]
    fn noiseless_single_channel_copies_attended() {
        let att = generate_envelope(500, 64.0, 1).unwrap();
        let un = generate_envelope(500, 64.0, 2).unwrap();
        let gains = ForwardGains {
            attended: vec![1.0],
            unattended: vec![vec![0.8]],
        };
        let model = ForwardModel {
            attended_gain: 1.0,
            unattended_gain: 0.0,
            noise_sigma: 0.0,
            sample_rate_hz: 64.0,
        };
        let eeg = synthesize_trial_eeg(&att, &[&un], &gains, &model, 3).unwrap();
        assert_eq!(eeg.channel(0), &att[..]);
        assert!(matches!(
            synthesize_trial_eeg(&att, &[&un[..10]], &gains, &model, 3),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn scenario_shapes_and_balance() {
        let mut cfg = ScenarioConfig::new(4, 4, Design::Exclusive, 3);
        cfg.trial_seconds = 5.0;
        let s = build_scenario(&cfg).unwrap();
        assert_eq!(s.dataset.len(), 16);
        assert_eq!(s.manifest.balance_index, 1.0);
        cfg.design = Design::Balanced;
        let s = build_scenario(&cfg).unwrap();
        assert_eq!(s.manifest.balance_index, 0.0);
        assert_eq!(s.signals.eeg("p00r00").unwrap().channels(), 8);
        assert_eq!(s.signals.eeg("p00r00").unwrap().len(), 320);
        cfg.repeats_per_pair = 3;
        assert!(matches!(build_scenario(&cfg), Err(Error::InfeasibleBalance(3))));
    }

    #[test]
    fn config_json_defaults_and_unknown_fields() {
        let cfg =
            ScenarioConfig::from_json_str(r#"{"n_pairs": 3, "repeats_per_pair": 2, "design": "balanced"}"#).unwrap();
        assert_eq!(cfg, ScenarioConfig::new(3, 2, Design::Balanced, 0));
        assert!(ScenarioConfig::from_json_str(
            r#"{"n_pairs": 3, "repeats_per_pair": 2, "design": "balanced", "x": 1}"#
        )
        .is_err());
        assert!(
            ScenarioConfig::from_json_str(r#"{"n_pairs": 1, "repeats_per_pair": 2, "design": "balanced"}"#).is_err()
        );
    }
}
