//! Parameter counting, receptive fields and model summaries.

use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::error::Result;
use crate::model::{Model, ModelConfig, ModelPlan, Variant};

pub use crate::init::LayerRecord;

/// Trainable scalars, by enumerating the model's parameter tensors.
pub fn count_parameters(model: &Model) -> usize {
    model.parameters().iter().map(|p| p.tensor.len()).sum()
}

/// 1×1 conv with bias.
fn conv(n_in: usize, n_out: usize) -> usize {
    n_in * n_out + n_out
}

/// in-conv, two PReLU slopes, two norms of 2H, depthwise kernel + bias,
/// skip and residual convs.
fn block(width: usize, hidden: usize, taps: usize) -> usize {
    conv(width, hidden) + 2 + 4 * hidden + (taps + 1) * hidden + 2 * conv(hidden, width)
}

fn channel_head(features: usize, channels: usize, encoder_features: usize) -> usize {
    1 + conv(channels, 1) + conv(features, encoder_features)
}

/// Parameter count from the architecture formulas alone, without building
/// the model.
pub fn closed_form_parameters(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let (d, s, f, n, c, h, k, m) = (
        cfg.depth,
        cfg.stacks,
        cfg.encoder_features,
        cfg.features,
        cfg.channels,
        cfg.hidden,
        cfg.window,
        cfg.mics,
    );
    let codec = 2 * k * f;
    let count = match cfg.variant {
        Variant::SC | Variant::MC => conv(f, n) + s * d * block(n, h, 3) + 1 + conv(n, f),
        Variant::TwoD => conv(f * m, n) + s * d * block(n, h, 3) + 1 + conv(n, f),
        Variant::ThreeD => conv(f, n) + conv(m, c) + c * s * d * block(n, h, 3) + channel_head(n, c, f),
        Variant::IC => conv(f, n) + conv(m, c) + s * d * block(c, h, 9) + channel_head(n, c, f),
        Variant::ICDownsized | Variant::ICUpsized => {
            let sched = cfg.stack_schedule()?;
            let n_out = sched.iter().map(|x| x.features).max().unwrap_or(0);
            let c_out = sched.iter().map(|x| x.channels).max().unwrap_or(0);
            let resize = |a: (usize, usize), b: (usize, usize)| {
                (if a.0 != b.0 { conv(a.0, b.0) } else { 0 }) + (if a.1 != b.1 { conv(a.1, b.1) } else { 0 })
            };
            let mut total = conv(f, sched[0].features) + conv(m, sched[0].channels);
            for (i, st) in sched.iter().enumerate() {
                let here = (st.features, st.channels);
                total += d * block(st.channels, st.hidden, 9);
                total += resize(here, (n_out, c_out));
                if let Some(next) = sched.get(i + 1) {
                    total += resize(here, (next.features, next.channels));
                }
            }
            total + channel_head(n_out, c_out, f)
        }
    };
    Ok(codec + count)
}

/// Frames one output frame can see through `stacks` stacks of `depth`
/// dilated convolutions of width `kernel`.
pub fn receptive_field(depth: usize, stacks: usize, kernel: usize) -> usize {
    1 + stacks * (kernel - 1) * ((1usize << depth) - 1)
}

/// `"1.67 M"` style: three significant digits.
pub fn format_millions(count: usize) -> String {
    let m = count as f64 / 1e6;
    let digits = if m >= 100.0 {
        0
    } else if m >= 10.0 {
        1
    } else if m >= 1.0 {
        2
    } else {
        3
    };
    format!("{m:.digits$} M")
}

/// Relative deviation in percent of `count` from `reference_millions`.
pub fn deviation_percent(count: usize, reference_millions: f64) -> f64 {
    (count as f64 / 1e6 - reference_millions) / reference_millions * 100.0
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerSummary {
    pub name: String,
    pub input: String,
    pub output: String,
    pub parameters: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub variant: String,
    pub total_parameters: usize,
    pub total_millions: String,
    pub closed_form_parameters: usize,
    pub receptive_field_frames: usize,
    pub receptive_field_seconds: f64,
    pub sample_rate: u32,
    pub layers: Vec<LayerSummary>,
}

fn shape_label(dims: &[usize]) -> String {
    let mut s = String::from("(L");
    for d in dims {
        let _ = write!(s, ", {d}");
    }
    s.push(')');
    s
}

/// Per-layer summary of a built model. Receptive-field seconds use the
/// frame hop at `sample_rate`.
pub fn summarize(model: &Model, sample_rate: u32) -> Result<ModelSummary> {
    build_summary(model.config(), model.layers(), count_parameters(model), sample_rate)
}

/// Same as [`summarize`] from a dry-run plan; cheap for any model size.
pub fn summarize_plan(plan: &ModelPlan, sample_rate: u32) -> Result<ModelSummary> {
    build_summary(&plan.config, &plan.layers, plan.parameter_count(), sample_rate)
}

/// Dry-run summary straight from a configuration.
pub fn summarize_config(cfg: &ModelConfig, sample_rate: u32) -> Result<ModelSummary> {
    summarize_plan(&Model::plan(cfg)?, sample_rate)
}

fn build_summary(cfg: &ModelConfig, records: &[LayerRecord], total: usize, sample_rate: u32) -> Result<ModelSummary> {
    if sample_rate == 0 {
        return Err(crate::Error::Domain("sample rate must be positive".into()));
    }
    let layers: Vec<LayerSummary> = records
        .iter()
        .map(|r| LayerSummary {
            name: r.name.clone(),
            input: shape_label(&r.input),
            output: shape_label(&r.output),
            parameters: r.parameters,
        })
        .collect();
    let frames = receptive_field(cfg.depth, cfg.stacks, 3);
    Ok(ModelSummary {
        variant: cfg.variant.to_string(),
        layers,
        total_parameters: total,
        total_millions: format_millions(total),
        closed_form_parameters: closed_form_parameters(cfg)?,
        receptive_field_frames: frames,
        receptive_field_seconds: frames as f64 * cfg.frame_spec().hop as f64 / sample_rate as f64,
        sample_rate,
    })
}

impl fmt::Display for ModelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name_w = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let in_w = self.layers.iter().map(|l| l.input.len()).max().unwrap_or(5).max(5);
        let out_w = self.layers.iter().map(|l| l.output.len()).max().unwrap_or(6).max(6);
        writeln!(f, "variant: {}", self.variant)?;
        writeln!(f, "{:<name_w$}  {:<in_w$}  {:<out_w$}  {:>12}", "layer", "input", "output", "params")?;
        for l in &self.layers {
            writeln!(
                f,
                "{:<name_w$}  {:<in_w$}  {:<out_w$}  {:>12}",
                l.name, l.input, l.output, l.parameters
            )?;
        }
        writeln!(f, "total parameters: {} ({})", self.total_parameters, self.total_millions)?;
        writeln!(f, "closed-form count: {}", self.closed_form_parameters)?;
        write!(
            f,
            "receptive field: {} frames ({:.3} s at {} Hz)",
            self.receptive_field_frames, self.receptive_field_seconds, self.sample_rate
        )
    }
}
