//! WAV input and output: 16-bit PCM and 32-bit IEEE float, any channel count.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ictasnet::AudioBuffer;

/// Sample encoding of a written file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Pcm16,
    Float32,
}

const PCM_SCALE: f64 = 32768.0;

fn format_name(tag: u16) -> &'static str {
    match tag {
        0x0001 => "PCM",
        0x0002 => "Microsoft ADPCM",
        0x0003 => "IEEE float",
        0x0006 => "A-law",
        0x0007 => "mu-law",
        0x0011 => "IMA ADPCM",
        0x0055 => "MPEG layer 3",
        0xFFFE => "extensible",
        _ => "unknown",
    }
}

/// The `fmt ` chunk's format tag, for error messages.
fn format_tag(bytes: &[u8]) -> Option<u16> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return None;
    }
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().ok()?) as usize;
        if id == b"fmt " {
            return bytes.get(pos + 8..pos + 10).map(|b| u16::from_le_bytes([b[0], b[1]]));
        }
        pos = pos.checked_add(8 + len + (len & 1))?;
    }
    None
}

fn unsupported(tag: u16, bits: u16) -> anyhow::Error {
    anyhow::anyhow!(
        "unsupported WAV encoding: format tag 0x{tag:04X} ({}) with {bits} bits per sample; \
         expected 16-bit PCM or 32-bit IEEE float",
        format_name(tag)
    )
}

pub fn read_wav(path: &Path) -> Result<(AudioBuffer, Encoding)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let tag = format_tag(&bytes);
    let mut reader = match WavReader::new(bytes.as_slice()) {
        Ok(r) => r,
        Err(hound::Error::Unsupported) => {
            let tag = tag.context("unsupported WAV file without a format chunk")?;
            return Err(unsupported(tag, 0)).with_context(|| path.display().to_string());
        }
        Err(e) => return Err(e).with_context(|| format!("malformed WAV file {}", path.display())),
    };
    let spec = reader.spec();
    let (samples, encoding) = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => (
            reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f64 / PCM_SCALE))
                .collect::<Result<Vec<_>, _>>()?,
            Encoding::Pcm16,
        ),
        (SampleFormat::Float, 32) => (
            reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<Result<Vec<_>, _>>()?,
            Encoding::Float32,
        ),
        (format, bits) => {
            let fallback = if format == SampleFormat::Float { 3 } else { 1 };
            return Err(unsupported(tag.unwrap_or(fallback), bits)).with_context(|| path.display().to_string());
        }
    };
    if spec.sample_rate != 16000 {
        log::warn!("{}: sample rate {} Hz (models assume 16000 Hz)", path.display(), spec.sample_rate);
    }
    let audio = AudioBuffer::new(samples, spec.channels as usize, spec.sample_rate)
        .with_context(|| format!("decoding {}", path.display()))?;
    Ok((audio, encoding))
}

/// Writes atomically. PCM samples are clamped to the 16-bit range.
pub fn write_wav(path: &Path, audio: &AudioBuffer, encoding: Encoding) -> Result<()> {
    let channels = u16::try_from(audio.channels()).context("too many channels for WAV")?;
    let spec = WavSpec {
        channels,
        sample_rate: audio.sample_rate(),
        bits_per_sample: match encoding {
            Encoding::Pcm16 => 16,
            Encoding::Float32 => 32,
        },
        sample_format: match encoding {
            Encoding::Pcm16 => SampleFormat::Int,
            Encoding::Float32 => SampleFormat::Float,
        },
    };
    crate::fsutil::write_atomic(path, |out| {
        let mut writer = WavWriter::new(out, spec)?;
        for &v in audio.samples() {
            match encoding {
                Encoding::Pcm16 => writer.write_sample((v * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16)?,
                Encoding::Float32 => writer.write_sample(v as f32)?,
            }
        }
        writer.finalize()?;
        Ok(())
    })
}
