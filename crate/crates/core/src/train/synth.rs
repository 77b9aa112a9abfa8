use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// A noisy multichannel mixture and its clean reference-channel target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub noisy: AudioBuffer,
    pub clean: Vec<f64>,
    /// Signal-to-noise ratio of every noisy channel in dB; NaN when unknown.
    pub snr_db: f64,
}

/// Parameters of the synthetic mixture generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    pub duration_s: f64,
    pub mics: usize,
    pub sample_rate: u32,
    /// 1-based channel holding the undelayed copy.
    pub reference_channel: usize,
}

/// Largest absolute sample after normalization.
const PEAK: f64 = 0.9;

/// One amplitude-modulated sinusoid.
#[derive(Debug, Clone, Copy)]
struct Partial {
    amp: f64,
    freq: f64,
    phase: f64,
    mod_freq: f64,
    mod_depth: f64,
    mod_phase: f64,
}

impl Partial {
    fn at(&self, t: f64) -> f64 {
        let envelope = 1.0 + self.mod_depth * (TAU * self.mod_freq * t + self.mod_phase).sin();
        self.amp * envelope * (TAU * self.freq * t + self.phase).sin()
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mics == 0 || self.sample_rate == 0 || self.count == 0 {
            return Err(Error::Config("synthetic data needs mics, sample rate and count ≥ 1".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration_s)));
        }
        if !(1..=self.mics).contains(&self.reference_channel) {
            return Err(Error::Config(format!(
                "reference channel {} outside 1..={}",
                self.reference_channel, self.mics
            )));
        }
        Ok(())
    }

    /// Samples per channel.
    pub fn samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn generate(&self) -> Result<Vec<Example>> {
        self.validate()?;
        (0..self.count).map(|i| self.example(i)).collect()
    }

    /// Example `index`, independent of `count`.
    pub fn example(&self, index: usize) -> Result<Example> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let sr = self.sample_rate as f64;
        let len = self.samples();
        if len == 0 {
            return Err(Error::Config("duration shorter than one sample".into()));
        }

        let partials: Vec<Partial> = (0..rng.gen_range(2..=4))
            .map(|_| Partial {
                amp: rng.gen_range(0.2..1.0),
                freq: rng.gen_range(0.006..0.12) * sr,
                phase: rng.gen_range(0.0..TAU),
                mod_freq: rng.gen_range(1.0..8.0),
                mod_depth: rng.gen_range(0.0..0.9),
                mod_phase: rng.gen_range(0.0..TAU),
            })
            .collect();
        let delay = rng.gen_range(0..=4usize) as f64;
        let snr_db = rng.gen_range(0.0..10.0);
        let reference = self.reference_channel - 1;

        let signal = |shift: f64| -> Vec<f64> {
            (0..len)
                .map(|n| {
                    let t = (n as f64 - shift) / sr;
                    partials.iter().map(|p| p.at(t)).sum()
                })
                .collect()
        };
        let clean = signal(0.0);
        let mut channels = Vec::with_capacity(self.mics);
        for m in 0..self.mics {
            let mut x = if m == reference {
                clean.clone()
            } else {
                signal((m as f64 - reference as f64) * delay)
            };
            let noise: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            let gain = noise_gain(&x, &noise, snr_db);
            x.iter_mut().zip(&noise).for_each(|(v, n)| *v += gain * n);
            channels.push(x);
        }

        let peak = channels
            .iter()
            .chain(std::iter::once(&clean))
            .flat_map(|c| c.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let scale = if peak > 0.0 { PEAK / peak } else { 1.0 };
        let clean: Vec<f64> = clean.iter().map(|v| v * scale).collect();
        for c in &mut channels {
            c.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(Example {
            noisy: AudioBuffer::from_channels(&channels, self.sample_rate)?,
            clean,
            snr_db,
        })
    }
}

/// Gain putting `noise` at `snr_db` below `signal`.
fn noise_gain(signal: &[f64], noise: &[f64], snr_db: f64) -> f64 {
    let ps: f64 = signal.iter().map(|v| v * v).sum();
    let pn: f64 = noise.iter().map(|v| v * v).sum();
    if pn == 0.0 {
        return 0.0;
    }
    (ps / pn / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// `count` examples with the undelayed copy on channel 1.
pub fn synth_dataset(seed: u64, count: usize, duration_s: f64, mics: usize, sample_rate: u32) -> Result<Vec<Example>> {
    SynthSpec {
        seed,
        count,
        duration_s,
        mics,
        sample_rate,
        reference_channel: 1,
    }
    .generate()
}
