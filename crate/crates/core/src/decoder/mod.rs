//! Backward (EEG → envelope) decoders.

mod gradient;
mod memorizing;
mod ridge;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SignalSeries;

pub use gradient::{
    fit_gradient_decoder, run_training, EarlyStopping, EpochRecord, PlateauConfig, PlateauScheduler, TrainConfig,
    TrainingLog,
};
pub use memorizing::{build_memorizing_decoder, MemorizingDecoder, MemoryConfig, MemoryEntry, MemoryMatch};
pub use ridge::{fit_ridge, fit_ridge_with, LagMoments, RidgeFit, DEFAULT_LAMBDA_GRID};

/// Inclusive range of lags in samples; output at `t` reads EEG at `t + lag`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagWindow {
    pub min_lag: i64,
    pub max_lag: i64,
}

impl LagWindow {
    pub fn new(min_lag: i64, max_lag: i64) -> Result<Self> {
        if min_lag > max_lag {
            return Err(Error::Config(format!("empty lag window {min_lag}..={max_lag}")));
        }
        Ok(LagWindow { min_lag, max_lag })
    }

    /// Lags covering `[min_ms, max_ms]` at the given rate, rounded to samples.
    pub fn from_millis(min_ms: f64, max_ms: f64, sample_rate_hz: f64) -> Result<Self> {
        let to_samples = |ms: f64| (ms * 1e-3 * sample_rate_hz).round() as i64;
        Self::new(to_samples(min_ms), to_samples(max_ms))
    }

    /// 0 to 250 ms.
    pub fn default_for(sample_rate_hz: f64) -> Self {
        Self::from_millis(0.0, 250.0, sample_rate_hz).expect("non-empty")
    }

    pub fn count(&self) -> usize {
        (self.max_lag - self.min_lag + 1) as usize
    }

    pub fn lags(&self) -> impl Iterator<Item = i64> {
        self.min_lag..=self.max_lag
    }

    /// Output samples whose whole lag window lies inside a series of `len` samples.
    pub fn valid_range(&self, len: usize) -> Range<usize> {
        let start = (-self.min_lag).max(0) as usize;
        let end = (len as i64 - self.max_lag.max(0)).max(0) as usize;
        start..end.max(start)
    }
}

/// Linear backward model `y(t) = sum_c sum_lag w[lag][c] * eeg_c(t + lag) + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDecoder {
    /// Lag-major: `weights[lag_index * channels + channel]`.
    weights: Vec<f64>,
    bias: f64,
    channels: usize,
    lags: LagWindow,
    sample_rate_hz: f64,
}

/// Output of [`LinearDecoder::reconstruct`]. Samples outside `valid` were
/// computed with the EEG zero-padded beyond its ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub samples: Vec<f64>,
    pub valid: Range<usize>,
}

impl Reconstruction {
    pub fn valid_samples(&self) -> &[f64] {
        &self.samples[self.valid.clone()]
    }
}

impl LinearDecoder {
    pub fn new(weights: Vec<f64>, bias: f64, channels: usize, lags: LagWindow, sample_rate_hz: f64) -> Result<Self> {
        if weights.len() != channels * lags.count() {
            return Err(Error::InconsistentShapes(format!(
                "{} weights for {} lags x {channels} channels",
                weights.len(),
                lags.count()
            )));
        }
        Ok(LinearDecoder {
            weights,
            bias,
            channels,
            lags,
            sample_rate_hz,
        })
    }

    pub fn zeros(channels: usize, lags: LagWindow, sample_rate_hz: f64) -> Self {
        LinearDecoder {
            weights: vec![0.0; channels * lags.count()],
            bias: 0.0,
            channels,
            lags,
            sample_rate_hz,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn weight(&self, lag_index: usize, channel: usize) -> f64 {
        self.weights[lag_index * self.channels + channel]
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn set_bias(&mut self, bias: f64) {
        self.bias = bias;
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn lags(&self) -> LagWindow {
        self.lags
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub(crate) fn check_input(&self, eeg: &SignalSeries) -> Result<()> {
        if eeg.channels() != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                found: eeg.channels(),
            });
        }
        let span = (self.lags.max_lag.max(0) + (-self.lags.min_lag).max(0)) as usize;
        if eeg.len() <= span {
            return Err(Error::TooShort {
                len: eeg.len(),
                needed: span,
            });
        }
        Ok(())
    }

    pub fn reconstruct(&self, eeg: &SignalSeries) -> Result<Reconstruction> {
        self.check_input(eeg)?;
        let n = eeg.len();
        let mut out = vec![self.bias; n];
        for (li, lag) in self.lags.lags().enumerate() {
            // t + lag in [0, n)
            let t_start = (-lag).max(0) as usize;
            let t_end = (n as i64 - lag).clamp(0, n as i64) as usize;
            for c in 0..self.channels {
                let w = self.weights[li * self.channels + c];
                if w == 0.0 {
                    continue;
                }
                let x = eeg.channel(c);
                for t in t_start..t_end {
                    out[t] += w * x[(t as i64 + lag) as usize];
                }
            }
        }
        Ok(Reconstruction {
            samples: out,
            valid: self.lags.valid_range(n),
        })
    }
}

/// One trial's signals as seen by a decoder.
#[derive(Debug, Clone)]
pub struct TrialSignals<'a> {
    pub eeg: &'a SignalSeries,
    pub attended: &'a [f64],
    pub unattended: Vec<&'a [f64]>,
}

impl TrialSignals<'_> {
    fn check(&self) -> Result<()> {
        let n = self.eeg.len();
        for s in std::iter::once(&self.attended).chain(&self.unattended) {
            if s.len() != n {
                return Err(Error::InconsistentShapes(format!(
                    "EEG has {n} samples but an envelope has {}",
                    s.len()
                )));
            }
        }
        Ok(())
    }
}

fn check_consistent(trials: &[TrialSignals<'_>]) -> Result<(usize, f64)> {
    let first = trials
        .first()
        .ok_or_else(|| Error::InconsistentShapes("no training trials".into()))?;
    let (channels, rate) = (first.eeg.channels(), first.eeg.sample_rate_hz());
    for t in trials {
        t.check()?;
        if t.eeg.channels() != channels {
            return Err(Error::InconsistentShapes(format!(
                "trials with {channels} and {} channels",
                t.eeg.channels()
            )));
        }
        if t.eeg.sample_rate_hz() != rate {
            return Err(Error::InconsistentShapes(format!(
                "trials sampled at {rate} Hz and {} Hz",
                t.eeg.sample_rate_hz()
            )));
        }
    }
    Ok((channels, rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eeg(channels: usize, n: usize, seed: u64) -> SignalSeries {
        let mut s = seed;
        let data = (0..channels * n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        SignalSeries::from_channel_major(data, channels, 64.0).unwrap()
    }

    #[test]
    fn zero_weights_give_bias() {
        let lags = LagWindow::new(0, 3).unwrap();
        let mut dec = LinearDecoder::zeros(2, lags, 64.0);
        dec.set_bias(0.25);
        let r = dec.reconstruct(&eeg(2, 20, 1)).unwrap();
        assert!(r.samples.iter().all(|&v| v == 0.25));
        assert_eq!(r.valid, 0..17);
    }

    #[test]
    fn unit_weight_copies_channel() {
        let lags = LagWindow::new(0, 0).unwrap();
        let mut dec = LinearDecoder::zeros(3, lags, 64.0);
        dec.weights_mut()[0] = 1.0;
        let x = eeg(3, 30, 2);
        let r = dec.reconstruct(&x).unwrap();
        assert_eq!(r.samples, x.channel(0));
    }

    #[test]
    fn matches_naive_double_loop() {
        let lags = LagWindow::new(-2, 4).unwrap();
        let x = eeg(3, 40, 3);
        let w: Vec<f64> = (0..lags.count() * 3).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let dec = LinearDecoder::new(w.clone(), 0.5, 3, lags, 64.0).unwrap();
        let r = dec.reconstruct(&x).unwrap();
        for t in 0..40i64 {
            let mut expect = 0.5;
            for (li, lag) in (-2i64..=4).enumerate() {
                for c in 0..3 {
                    let idx = t + lag;
                    if (0..40).contains(&idx) {
                        expect += w[li * 3 + c] * x.channel(c)[idx as usize];
                    }
                }
            }
            assert!((r.samples[t as usize] - expect).abs() < 1e-10);
        }
        assert_eq!(r.valid, 2..36);
    }

    #[test]
    fn reconstruction_is_linear_in_weights() {
        let lags = LagWindow::new(0, 5).unwrap();
        let x = eeg(2, 50, 4);
        let w1: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let w2: Vec<f64> = (0..12).map(|i| 1.0 - i as f64 * 0.3).collect();
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let d1 = LinearDecoder::new(w1, 0.3, 2, lags, 64.0).unwrap();
        let d2 = LinearDecoder::new(w2, 0.3, 2, lags, 64.0).unwrap();
        let ds = LinearDecoder::new(sum, 0.3, 2, lags, 64.0).unwrap();
        let (r1, r2, rs) = (
            d1.reconstruct(&x).unwrap(),
            d2.reconstruct(&x).unwrap(),
            ds.reconstruct(&x).unwrap(),
        );
        for t in 0..50 {
            assert!((rs.samples[t] - (r1.samples[t] + r2.samples[t] - 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn input_checks() {
        let dec = LinearDecoder::zeros(2, LagWindow::new(0, 16).unwrap(), 64.0);
        assert!(matches!(
            dec.reconstruct(&eeg(3, 100, 5)),
            Err(Error::ChannelMismatch { expected: 2, found: 3 })
        ));
        assert!(matches!(dec.reconstruct(&eeg(2, 16, 5)), Err(Error::TooShort { .. })));
        assert!(LinearDecoder::new(vec![0.0; 5], 0.0, 2, LagWindow::new(0, 1).unwrap(), 64.0).is_err());
    }

    #[test]
    fn default_lags() {
        let l = LagWindow::default_for(64.0);
        assert_eq!((l.min_lag, l.max_lag, l.count()), (0, 16, 17));
    }
}
