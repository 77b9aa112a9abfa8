use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FrameSpec;
use crate::tcn::StackDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Single microphone; the `M = 1` case of [`Variant::MC`].
    #[serde(rename = "sc")]
    SC,
    /// Encoder outputs summed over microphones.
    #[serde(rename = "mc")]
    MC,
    /// Encoder outputs concatenated along features.
    #[serde(rename = "2d")]
    TwoD,
    /// Encoder outputs stacked on a channel axis, one 1-D TCN per channel.
    #[serde(rename = "3d")]
    ThreeD,
    /// Stacked encoder outputs with inter-channel 2-D blocks.
    #[serde(rename = "ic")]
    IC,
    /// Inter-channel blocks with per-stack sizes shrinking from (N, C).
    #[serde(rename = "ic-downsized")]
    ICDownsized,
    /// Inter-channel blocks with per-stack sizes growing up to (N, C).
    #[serde(rename = "ic-upsized")]
    ICUpsized,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::SC,
        Variant::MC,
        Variant::TwoD,
        Variant::ThreeD,
        Variant::IC,
        Variant::ICDownsized,
        Variant::ICUpsized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SC => "sc",
            Variant::MC => "mc",
            Variant::TwoD => "2d",
            Variant::ThreeD => "3d",
            Variant::IC => "ic",
            Variant::ICDownsized => "ic-downsized",
            Variant::ICUpsized => "ic-upsized",
        }
    }

    /// Whether the TCN works on a separate channel axis.
    pub fn has_channel_axis(self) -> bool {
        matches!(
            self,
            Variant::ThreeD | Variant::IC | Variant::ICDownsized | Variant::ICUpsized
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// Architecture hyperparameters. Field names in serialized form follow the
/// usual single-letter symbols.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Blocks per stack.
    #[serde(rename = "D")]
    pub depth: usize,
    /// Stacks.
    #[serde(rename = "S")]
    pub stacks: usize,
    /// Encoder features.
    #[serde(rename = "F")]
    pub encoder_features: usize,
    /// Bottleneck features.
    #[serde(rename = "N")]
    pub features: usize,
    /// TCN channel dimension.
    #[serde(rename = "C")]
    pub channels: usize,
    /// Hidden size of each block.
    #[serde(rename = "H")]
    pub hidden: usize,
    /// Window length in samples.
    #[serde(rename = "K")]
    pub window: usize,
    /// Microphones.
    #[serde(rename = "M")]
    pub mics: usize,
    /// 1-based microphone whose encoding is masked.
    pub reference_channel: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::IC,
            depth: 8,
            stacks: 3,
            encoder_features: 512,
            features: 128,
            channels: 64,
            hidden: 256,
            window: 256,
            mics: 6,
            reference_channel: 5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn frame_spec(&self) -> FrameSpec {
        FrameSpec {
            window: self.window,
            hop: self.window / 2,
        }
    }

    /// 0-based reference channel index.
    pub fn reference_index(&self) -> usize {
        self.reference_channel - 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("D", self.depth),
            ("S", self.stacks),
            ("F", self.encoder_features),
            ("N", self.features),
            ("C", self.channels),
            ("H", self.hidden),
            ("K", self.window),
            ("M", self.mics),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.depth > 30 {
            return Err(Error::Config(format!("D = {} is too deep", self.depth)));
        }
        if self.window < 2 || !self.window.is_multiple_of(2) {
            return Err(Error::Config(format!("K must be even for 50% overlap, got {}", self.window)));
        }
        if self.reference_channel == 0 || self.reference_channel > self.mics {
            return Err(Error::Config(format!(
                "reference_channel {} outside 1..={}",
                self.reference_channel, self.mics
            )));
        }
        if self.variant == Variant::SC && self.mics != 1 {
            return Err(Error::Config(format!("sc variant needs M = 1, got {}", self.mics)));
        }
        if matches!(self.variant, Variant::ICDownsized | Variant::ICUpsized) {
            self.stack_schedule()?;
        }
        Ok(())
    }

    /// Per-stack sizes for the progressive variants. Stack `s` of the
    /// downsized schedule has `⌊N / √2^s⌋` features and `C / 2^s` channels;
    /// the upsized schedule is the same list reversed. Hidden sizes keep the
    /// ratio `H / C`.
    pub fn stack_schedule(&self) -> Result<Vec<StackDims>> {
        let mut dims = Vec::with_capacity(self.stacks);
        for s in 0..self.stacks {
            let divisor = 1usize
                .checked_shl(s as u32)
                .filter(|d| *d <= self.channels && self.channels.is_multiple_of(*d))
                .ok_or_else(|| {
                    Error::Config(format!("C = {} cannot be halved {s} times", self.channels))
                })?;
            let channels = self.channels / divisor;
            if !(self.hidden * channels).is_multiple_of(self.channels) {
                return Err(Error::Config(format!(
                    "H = {} does not scale to {channels} channels",
                    self.hidden
                )));
            }
            let features = shrink_features(self.features, s);
            if features == 0 {
                return Err(Error::Config(format!("N = {} too small for {} stacks", self.features, self.stacks)));
            }
            dims.push(StackDims {
                features,
                channels,
                hidden: self.hidden * channels / self.channels,
            });
        }
        if self.variant == crate::model::Variant::ICUpsized {
            dims.reverse();
        }
        Ok(dims)
    }
}

/// `⌊n / √(2^s)⌋` computed exactly as `isqrt(⌊n² / 2^s⌋)`.
pub(crate) fn shrink_features(n: usize, s: usize) -> usize {
    isqrt((n * n) >> s)
}

fn isqrt(v: usize) -> usize {
    let mut r = (v as f64).sqrt() as usize;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    r
}

/// A named configuration with its published parameter size, if any.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub config: ModelConfig,
    /// Published parameter count in millions.
    pub reference_millions: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn row(variant: Variant, d: usize, s: usize, f: usize, n: usize, c: usize, h: usize) -> ModelConfig {
    ModelConfig {
        variant,
        depth: d,
        stacks: s,
        encoder_features: f,
        features: n,
        channels: c,
        hidden: h,
        ..ModelConfig::default()
    }
}

/// Every architecture row with a published size, plus two toy configs.
pub fn presets() -> Vec<Preset> {
    use Variant::*;
    let p = |name, description, config, size| Preset {
        name,
        description,
        config,
        reference_millions: size,
    };
    let toy = |variant| ModelConfig {
        variant,
        depth: 4,
        stacks: 2,
        encoder_features: 64,
        features: 32,
        channels: 8,
        hidden: 32,
        window: 64,
        mics: 2,
        reference_channel: 1,
        seed: 0,
    };
    vec![
        p("mc", "MC baseline", row(MC, 8, 3, 2048, 512, 1, 2048), Some(79.1)),
        p("2d", "2-D variant", row(TwoD, 8, 3, 2048, 512, 1, 2048), Some(84.4)),
        p("3d", "3-D variant", row(ThreeD, 8, 3, 2048, 64, 8, 32), Some(2.56)),
        p("ic", "inter-channel variant", row(IC, 8, 3, 2048, 64, 8, 32), Some(1.35)),
        p("ic-best", "inter-channel, best row", row(IC, 8, 3, 512, 128, 64, 256), Some(1.67)),
        p("model1", "IC study, S=2", row(IC, 8, 2, 2048, 64, 8, 32), Some(1.34)),
        p("model2", "IC study", row(IC, 8, 3, 2048, 64, 8, 32), Some(1.35)),
        p("model3", "IC study, S=4", row(IC, 8, 4, 2048, 64, 8, 32), Some(1.36)),
        p("model4", "IC study, D=6", row(IC, 6, 3, 2048, 64, 8, 32), Some(1.34)),
        p("model5", "IC study, D=10", row(IC, 10, 3, 2048, 64, 8, 32), Some(1.35)),
        p("model6", "IC study, F=512", row(IC, 8, 3, 512, 64, 8, 32), Some(0.360)),
        p("model7", "IC study, N=128", row(IC, 8, 3, 512, 128, 8, 32), Some(0.425)),
        p("model8", "IC study, F=1024", row(IC, 8, 3, 1024, 128, 8, 32), Some(0.820)),
        p("model9", "IC study, C=32", row(IC, 8, 3, 512, 128, 32, 128), Some(0.738)),
        p("model10", "IC study, C=64", row(IC, 8, 3, 512, 128, 64, 256), Some(1.67)),
        p("modelD", "progressively downsized", row(ICDownsized, 8, 3, 512, 128, 64, 256), Some(1.01)),
        p("modelU", "progressively upsized", row(ICUpsized, 8, 3, 512, 128, 64, 256), Some(0.954)),
        p("modelS", "small inter-channel", row(IC, 8, 3, 512, 64, 16, 64), Some(0.427)),
        p("toy-ic", "desk-scale inter-channel", toy(IC), None),
        p("toy-mc", "desk-scale MC baseline", ModelConfig { hidden: 64, ..toy(MC) }, None),
    ]
}

pub fn preset(name: &str) -> Result<Preset> {
    presets()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))
}
