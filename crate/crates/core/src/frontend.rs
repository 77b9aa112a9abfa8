//! Framing, the learned encoder/decoder pair and masking.
//!
//! The encoder maps each length-`K` segment of each microphone through one
//! shared matrix `U` (`K×F`) followed by a ReLU. The decoder maps masked
//! reference-channel features back through `V` (`F×K`), and overlap-add
//! stitches the segments into a waveform.

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::tensor::{ops, Tensor};

/// Window length and hop, in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub window: usize,
    pub hop: usize,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            window: 256,
            hop: 128,
        }
    }
}

impl FrameSpec {
    pub fn new(window: usize, hop: usize) -> Result<Self> {
        if hop == 0 || hop > window {
            return Err(Error::Config(format!(
                "frame hop must satisfy 0 < hop <= window (window {window}, hop {hop})"
            )));
        }
        Ok(Self { window, hop })
    }

    /// 50% overlap.
    pub fn half_overlap(window: usize) -> Result<Self> {
        Self::new(window, window / 2)
    }

    /// Number of whole frames in `samples` samples.
    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.window {
            0
        } else {
            (samples - self.window) / self.hop + 1
        }
    }

    /// Smallest length `>= samples` that is covered exactly by whole frames.
    pub fn padded_len(&self, samples: usize) -> usize {
        if samples <= self.window {
            return self.window;
        }
        let extra = samples - self.window;
        self.window + extra.div_ceil(self.hop) * self.hop
    }
}

/// Cuts `audio` into `L×K×M` overlapping segments; segment `l` covers
/// samples `[l·hop, l·hop + K)`.
pub fn segment(audio: &AudioBuffer, spec: FrameSpec) -> Result<Tensor> {
    let (t, m, k) = (audio.frames(), audio.channels(), spec.window);
    if t < k {
        return Err(Error::InputTooShort {
            samples: t,
            window: k,
        });
    }
    let l = spec.frame_count(t);
    let src = audio.samples();
    let mut data = Vec::with_capacity(l * k * m);
    for s in 0..l {
        let start = s * spec.hop * m;
        data.extend_from_slice(&src[start..start + k * m]);
    }
    Tensor::new(&[l, k, m], data)
}

/// `w[:, :, m] = ReLU(x[:, :, m] · U)` with one `U` for all channels.
pub fn encode(segments: &Tensor, encoder: &Tensor) -> Result<Tensor> {
    if segments.rank() != 3 {
        return Err(Error::dim("encode", segments.shape(), encoder.shape()));
    }
    Ok(ops::relu(&ops::pointwise_conv(segments, 1, encoder, None)?))
}

/// `d = w_ref ⊙ m`
pub fn apply_mask(reference: &Tensor, mask: &Tensor) -> Result<Tensor> {
    ops::mul(reference, mask)
}

/// `ŝ = d · V`
pub fn decode(masked: &Tensor, decoder: &Tensor) -> Result<Tensor> {
    ops::matmul(masked, decoder)
}

/// Overlap-add with per-sample contributor normalization; the result has
/// `(L−1)·hop + K` samples.
pub fn overlap_add(segments: &Tensor, spec: FrameSpec) -> Result<Tensor> {
    if segments.rank() != 2 || segments.shape()[1] != spec.window {
        return Err(Error::dim("overlap_add", segments.shape(), &[spec.window]));
    }
    let len = (segments.shape()[0] - 1) * spec.hop + spec.window;
    ops::overlap_add(segments, spec.hop, len)
}
