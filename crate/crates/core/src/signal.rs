use crate::error::{Error, Result};

/// Uniformly sampled multichannel real series, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    data: Vec<f64>,
    channels: usize,
    sample_rate_hz: f64,
}

impl SignalSeries {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate_hz: f64) -> Result<Self> {
        let n = channels.first().map_or(0, Vec::len);
        if let Some(bad) = channels.iter().find(|c| c.len() != n) {
            return Err(Error::LengthMismatch {
                left: n,
                right: bad.len(),
            });
        }
        let count = channels.len();
        Self::from_channel_major(channels.concat(), count, sample_rate_hz)
    }

    pub fn mono(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        Self::from_channel_major(samples, 1, sample_rate_hz)
    }

    pub fn from_channel_major(data: Vec<f64>, channels: usize, sample_rate_hz: f64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InconsistentShapes("a series needs at least one channel".into()));
        }
        if !data.len().is_multiple_of(channels) {
            return Err(Error::InconsistentShapes(format!(
                "{} values do not divide into {channels} channels",
                data.len()
            )));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InconsistentShapes(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(SignalSeries {
            data,
            channels,
            sample_rate_hz,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.channels).map(|c| self.channel(c))
    }

    pub fn as_channel_major(&self) -> &[f64] {
        &self.data
    }

    /// Samples of a single-channel series.
    pub fn samples(&self) -> &[f64] {
        debug_assert_eq!(self.channels, 1);
        self.channel(0)
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.data
    }
}
