//! Complete enhancement models: encoder → bottleneck → TCN → mask head →
//! masked reference channel → decoder → overlap-add.

pub mod checkpoint;
mod config;
mod heads;

pub use config::{preset, presets, ModelConfig, Preset, Variant};
pub use heads::{ChannelMaskHead, FeatureMaskHead};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::frontend::{self, FrameSpec};
use crate::init::{Init, LayerRecord};
use crate::layers::Conv1x1;
use crate::tcn::{BlockKind, ParallelTcn, ProgressiveTcn, Tcn};
use crate::tensor::{ops, Parameter, Tensor};

/// How the per-microphone encoder outputs enter the bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Merge {
    Sum,
    Concat,
}

#[derive(Debug, Clone)]
enum Separator {
    /// `(L, F)` or `(L, F·M)` input, 1-D TCN, feature mask head.
    Flat {
        merge: Merge,
        bottleneck: Conv1x1,
        tcn: Tcn,
        head: FeatureMaskHead,
    },
    /// Stacked `(L, F, M)` input reduced to `(L, N, C)` by a feature then a
    /// channel 1×1 conv, followed by one of the channel-aware TCNs.
    Stacked {
        feature: Conv1x1,
        channel: Conv1x1,
        tcn: ChannelTcn,
        head: ChannelMaskHead,
    },
}

#[derive(Debug, Clone)]
enum ChannelTcn {
    Parallel(ParallelTcn),
    InterChannel(Tcn),
    Progressive(ProgressiveTcn),
}

impl ChannelTcn {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            ChannelTcn::Parallel(t) => t.forward(x),
            ChannelTcn::InterChannel(t) => t.forward(x),
            ChannelTcn::Progressive(t) => t.forward(x),
        }
    }
}

/// Override for the estimated mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    #[default]
    Estimated,
    /// Mask fixed at one: the model reduces to decode(encode(reference)).
    Ones,
}

/// Intermediate results of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `L×F` mask in (0, 1).
    pub mask: Tensor,
    /// `L×F` encoder output of the reference microphone.
    pub reference: Tensor,
    /// Enhanced waveform, same length as the input.
    pub waveform: Tensor,
}

#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Parameter>,
    layers: Vec<LayerRecord>,
    encoder: Tensor,
    decoder: Tensor,
    separator: Separator,
}

/// Parameter names, shapes and summary rows of an architecture, obtained
/// without allocating its weights.
#[derive(Debug, Clone)]
pub struct ModelPlan {
    pub config: ModelConfig,
    pub parameters: Vec<(String, Vec<usize>)>,
    pub layers: Vec<LayerRecord>,
}

impl ModelPlan {
    pub fn parameter_count(&self) -> usize {
        self.parameters.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut init = Init::new(config.seed);
        let (encoder, decoder, separator) = Self::build(&config, &mut init)?;
        let (mut params, layers) = init.finish();
        params.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(Self {
            config,
            params,
            layers,
            encoder,
            decoder,
            separator,
        })
    }

    /// Dry run of [`Model::new`]: same names, shapes and rows, no weights.
    pub fn plan(config: &ModelConfig) -> Result<ModelPlan> {
        let mut init = Init::dry_run();
        Self::build(config, &mut init)?;
        let (mut parameters, layers) = init.finish_plan();
        parameters.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(ModelPlan {
            config: config.clone(),
            parameters,
            layers,
        })
    }

    fn build(cfg: &ModelConfig, init: &mut Init) -> Result<(Tensor, Tensor, Separator)> {
        cfg.validate()?;
        let (k, f, n, c, m) = (
            cfg.window,
            cfg.encoder_features,
            cfg.features,
            cfg.channels,
            cfg.mics,
        );

        let mark = init.scalar_count();
        let encoder = init.uniform("encoder.weight", &[k, f], k);
        init.record("encoder", &[k, m], &[f, m], mark);

        let separator = match cfg.variant {
            Variant::SC | Variant::MC | Variant::TwoD => {
                let (merge, width) = if cfg.variant == Variant::TwoD {
                    (Merge::Concat, f * m)
                } else {
                    (Merge::Sum, f)
                };
                let mark = init.scalar_count();
                let bottleneck = Conv1x1::new(init, "bottleneck", 1, width, n);
                init.record("bottleneck", &[width], &[n], mark);
                let tcn = Tcn::new(init, "tcn", BlockKind::OneD, &[n], cfg.hidden, cfg.depth, cfg.stacks)?;
                let head = FeatureMaskHead::new(init, "mask_head", n, f);
                Separator::Flat {
                    merge,
                    bottleneck,
                    tcn,
                    head,
                }
            }
            Variant::ThreeD | Variant::IC | Variant::ICDownsized | Variant::ICUpsized => {
                let schedule = match cfg.variant {
                    Variant::ICDownsized | Variant::ICUpsized => Some(cfg.stack_schedule()?),
                    _ => None,
                };
                let (n1, c1) = schedule
                    .as_ref()
                    .map_or((n, c), |s| (s[0].features, s[0].channels));
                let mark = init.scalar_count();
                let feature = Conv1x1::new(init, "bottleneck.feature", 1, f, n1);
                let channel = Conv1x1::new(init, "bottleneck.channel", 2, m, c1);
                init.record("bottleneck", &[f, m], &[n1, c1], mark);
                let (tcn, out_dims) = match cfg.variant {
                    Variant::ThreeD => (
                        ChannelTcn::Parallel(ParallelTcn::new(init, "tcn", n, c, cfg.hidden, cfg.depth, cfg.stacks)?),
                        (n, c),
                    ),
                    Variant::IC => (
                        ChannelTcn::InterChannel(Tcn::new(
                            init,
                            "tcn",
                            BlockKind::InterChannel,
                            &[n, c],
                            cfg.hidden,
                            cfg.depth,
                            cfg.stacks,
                        )?),
                        (n, c),
                    ),
                    _ => {
                        let prog = ProgressiveTcn::new(init, "tcn", schedule.as_deref().unwrap_or(&[]), cfg.depth)?;
                        let dims = prog.output_dims;
                        (ChannelTcn::Progressive(prog), dims)
                    }
                };
                let head = ChannelMaskHead::new(init, "mask_head", out_dims.0, out_dims.1, f);
                Separator::Stacked {
                    feature,
                    channel,
                    tcn,
                    head,
                }
            }
        };

        let mark = init.scalar_count();
        let decoder = init.uniform("decoder.weight", &[f, k], f);
        init.record("decoder", &[f], &[k], mark);
        Ok((encoder, decoder, separator))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Trainable parameters sorted by name.
    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.params
            .binary_search_by(|p| p.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.params[i].tensor)
    }

    /// Summary rows in forward order.
    pub fn layers(&self) -> &[LayerRecord] {
        &self.layers
    }

    pub fn frame_spec(&self) -> FrameSpec {
        self.config.frame_spec()
    }

    pub fn encoder(&self) -> &Tensor {
        &self.encoder
    }

    pub fn decoder(&self) -> &Tensor {
        &self.decoder
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|p| p.tensor.zero_grad());
    }

    /// Number of TCN blocks (per channel slice for the 3-D variant).
    pub fn block_count(&self) -> usize {
        match &self.separator {
            Separator::Flat { tcn, .. } => tcn.blocks().count(),
            Separator::Stacked { tcn, .. } => match tcn {
                ChannelTcn::Parallel(p) => p.slices.first().map_or(0, |t| t.blocks().count()),
                ChannelTcn::InterChannel(t) => t.blocks().count(),
                ChannelTcn::Progressive(p) => p.stacks.iter().map(|s| s.blocks.len()).sum(),
            },
        }
    }

    /// Mask from the `L×F×M` encoder output.
    pub fn estimate_mask(&self, encoded: &Tensor) -> Result<Tensor> {
        match &self.separator {
            Separator::Flat {
                merge,
                bottleneck,
                tcn,
                head,
            } => {
                let merged = match merge {
                    Merge::Sum => ops::sum_axis(encoded, 2)?,
                    Merge::Concat => {
                        // microphones in ascending order: index m·F + f
                        let (l, f, m) = (encoded.shape()[0], encoded.shape()[1], encoded.shape()[2]);
                        ops::reshape(&ops::permute(encoded, &[0, 2, 1])?, &[l, m * f])?
                    }
                };
                head.forward(&tcn.forward(&bottleneck.forward(&merged)?)?)
            }
            Separator::Stacked {
                feature,
                channel,
                tcn,
                head,
            } => {
                let x = channel.forward(&feature.forward(encoded)?)?;
                head.forward(&tcn.forward(&x)?)
            }
        }
    }

    /// Full pass with intermediate tensors. Inputs whose length is not a
    /// whole number of hops are zero-padded for framing and the output is
    /// truncated back to the input length.
    pub fn forward_detailed(&self, audio: &AudioBuffer, mode: MaskMode) -> Result<ForwardOutput> {
        if audio.channels() != self.config.mics {
            return Err(Error::ChannelMismatch {
                expected: self.config.mics,
                actual: audio.channels(),
            });
        }
        let spec = self.frame_spec();
        let len = audio.frames();
        if len < spec.window {
            return Err(Error::InputTooShort {
                samples: len,
                window: spec.window,
            });
        }
        let padded = audio.padded_to(spec.padded_len(len));
        let segments = frontend::segment(&padded, spec)?;
        let encoded = frontend::encode(&segments, &self.encoder)?;
        let reference = ops::select(&encoded, 2, self.config.reference_index())?;
        let mask = match mode {
            MaskMode::Estimated => self.estimate_mask(&encoded)?,
            MaskMode::Ones => Tensor::full(reference.shape(), 1.0)?,
        };
        let masked = frontend::apply_mask(&reference, &mask)?;
        let decoded = frontend::decode(&masked, &self.decoder)?;
        let waveform = ops::overlap_add(&decoded, spec.hop, len)?;
        Ok(ForwardOutput {
            mask,
            reference,
            waveform,
        })
    }

    /// Enhanced mono waveform with the input's length.
    pub fn forward(&self, audio: &AudioBuffer) -> Result<Tensor> {
        Ok(self.forward_detailed(audio, MaskMode::Estimated)?.waveform)
    }

    /// Inference without gradient bookkeeping beyond what parameters need.
    pub fn enhance(&self, audio: &AudioBuffer) -> Result<Vec<f64>> {
        Ok(self.forward(audio)?.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_names_are_unique_and_sorted() {
        for variant in Variant::ALL {
            let cfg = ModelConfig {
                variant,
                depth: 2,
                stacks: 3,
                encoder_features: 8,
                features: 6,
                channels: 4,
                hidden: 8,
                window: 8,
                mics: if variant == Variant::SC { 1 } else { 2 },
                reference_channel: 1,
                seed: 3,
            };
            let model = Model::new(cfg).unwrap();
            let names: Vec<&str> = model.parameters().iter().map(|p| p.name.as_str()).collect();
            let mut sorted = names.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(names, sorted, "{variant}");
            assert!(model.parameter("encoder.weight").is_some());
            assert!(model.parameter("decoder.weight").is_some());

            let plan = Model::plan(model.config()).unwrap();
            let shapes: Vec<(String, Vec<usize>)> = model
                .parameters()
                .iter()
                .map(|p| (p.name.clone(), p.tensor.shape().to_vec()))
                .collect();
            assert_eq!(plan.parameters, shapes, "{variant}");
            assert_eq!(plan.layers, model.layers(), "{variant}");
        }
    }
}
