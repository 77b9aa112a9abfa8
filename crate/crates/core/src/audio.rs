use crate::error::{Error, Result};

/// Multichannel waveform stored frame-interleaved: `samples[t * channels + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    channels: usize,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, channels: usize, sample_rate: u32) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("audio needs at least one channel".into()));
        }
        if !samples.len().is_multiple_of(channels) {
            return Err(Error::Shape {
                shape: vec![samples.len()],
                reason: format!("not divisible into {channels} channels"),
            });
        }
        if let Some(bad) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample at index {bad}")));
        }
        Ok(Self {
            samples,
            channels,
            sample_rate,
        })
    }

    /// Builds a buffer from one vector per channel; all must have equal length.
    pub fn from_channels(channels: &[Vec<f64>], sample_rate: u32) -> Result<Self> {
        let m = channels.len();
        let t = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != t) {
            return Err(Error::Config("channels differ in length".into()));
        }
        let mut samples = Vec::with_capacity(t * m);
        for i in 0..t {
            samples.extend(channels.iter().map(|c| c[i]));
        }
        Self::new(samples, m, sample_rate)
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(samples, 1, sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.samples[t * self.channels + m]
    }

    pub fn channel(&self, m: usize) -> Vec<f64> {
        self.samples.iter().skip(m).step_by(self.channels).copied().collect()
    }

    /// Copy with channels reordered: output channel `i` is input `order[i]`.
    pub fn reorder_channels(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.channels || order.iter().any(|&o| o >= self.channels) {
            return Err(Error::Config(format!("invalid channel order {order:?}")));
        }
        let chans: Vec<Vec<f64>> = order.iter().map(|&o| self.channel(o)).collect();
        Self::from_channels(&chans, self.sample_rate)
    }

    /// Zero-extends every channel to `frames` samples.
    pub fn padded_to(&self, frames: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(frames.max(self.frames()) * self.channels, 0.0);
        Self {
            samples,
            channels: self.channels,
            sample_rate: self.sample_rate,
        }
    }
}
