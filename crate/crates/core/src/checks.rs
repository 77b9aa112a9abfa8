//! Registry of finite-difference gradient checks covering every
//! differentiable primitive and every composite block.
//!
//! Each case runs on three input shapes and reports its worst relative
//! error. Outputs are reduced to a scalar by projecting onto fixed random
//! weights, so every output element contributes an O(1) gradient.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::error::Result;
use crate::init::Init;
use crate::layers::GlobalNorm;
use crate::model::{preset, ChannelMaskHead, FeatureMaskHead, Model, ModelConfig};
use crate::tcn::{BlockKind, ConvBlock, ProgressiveTcn, StackDims};
use crate::tensor::gradcheck::{grad_check_params, DEFAULT_EPS};
use crate::tensor::{ops, Tensor};
use crate::train::{sdr_loss, synth_dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Primitive,
    Composite,
}

impl CheckKind {
    /// Largest acceptable relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            CheckKind::Primitive => 1e-6,
            CheckKind::Composite => 1e-5,
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckKind::Primitive => "primitive",
            CheckKind::Composite => "composite",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCase {
    pub name: &'static str,
    pub kind: CheckKind,
    run: fn() -> Result<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub kind: CheckKind,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

impl GradCase {
    pub fn run(&self) -> Result<CheckOutcome> {
        Ok(CheckOutcome {
            name: self.name,
            kind: self.kind,
            max_error: (self.run)()?,
            tolerance: self.kind.tolerance(),
        })
    }
}

/// Uniform values in `±[0.1, 1]`, away from activation kinks.
fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("positive extents")
}

fn trainable(shape: &[usize], seed: u64) -> Tensor {
    let t = random(shape, seed);
    Tensor::parameter(shape, t.to_vec()).expect("positive extents")
}

/// Checks `f(inputs)` projected onto fixed random weights.
fn check<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn() -> Result<Tensor>,
{
    let probe = f()?;
    let weights = random(probe.shape(), 0x5eed ^ probe.len() as u64);
    grad_check_params(|| Ok(ops::sum(&ops::mul(&f()?, &weights)?)), inputs, DEFAULT_EPS)
}

fn worst(results: impl IntoIterator<Item = Result<f64>>) -> Result<f64> {
    results.into_iter().try_fold(0.0f64, |acc, r| Ok(acc.max(r?)))
}

const SHAPES: [&[usize]; 3] = [&[5], &[3, 4], &[2, 3, 4]];

fn binary(op: fn(&Tensor, &Tensor) -> Result<Tensor>) -> Result<f64> {
    worst(SHAPES.iter().enumerate().map(|(i, s)| {
        let (a, b) = (trainable(s, 2 * i as u64), trainable(s, 2 * i as u64 + 1));
        check(&[a.clone(), b.clone()], || op(&a, &b))
    }))
}

fn unary(op: impl Fn(&Tensor) -> Result<Tensor>) -> Result<f64> {
    worst(SHAPES.iter().enumerate().map(|(i, s)| {
        let x = trainable(s, 10 + i as u64);
        check(std::slice::from_ref(&x), || op(&x))
    }))
}

fn check_add() -> Result<f64> {
    binary(ops::add)
}

fn check_sub() -> Result<f64> {
    binary(ops::sub)
}

fn check_mul() -> Result<f64> {
    binary(ops::mul)
}

fn check_scale() -> Result<f64> {
    unary(|x| Ok(ops::scale(x, -1.7)))
}

fn check_sum() -> Result<f64> {
    unary(|x| Ok(ops::sum(x)))
}

fn check_mean_of() -> Result<f64> {
    worst(SHAPES.iter().enumerate().map(|(i, s)| {
        let xs: Vec<Tensor> = (0..3).map(|j| trainable(s, 20 + 3 * i as u64 + j)).collect();
        check(&xs, || ops::mean_of(&xs))
    }))
}

fn check_relu() -> Result<f64> {
    unary(|x| Ok(ops::relu(x)))
}

fn check_prelu() -> Result<f64> {
    worst(SHAPES.iter().enumerate().map(|(i, s)| {
        let x = trainable(s, 30 + i as u64);
        let slope = Tensor::parameter(&[1], vec![0.25 + 0.1 * i as f64])?;
        check(&[x.clone(), slope.clone()], || ops::prelu(&x, &slope))
    }))
}

fn check_sigmoid() -> Result<f64> {
    unary(|x| Ok(ops::sigmoid(&ops::scale(x, 3.0))))
}

fn check_reshape() -> Result<f64> {
    unary(|x| ops::reshape(x, &[x.len(), 1]))
}

fn check_permute() -> Result<f64> {
    unary(|x| {
        let perm: Vec<usize> = (0..x.rank()).rev().collect();
        ops::permute(x, &perm)
    })
}

fn check_select() -> Result<f64> {
    unary(|x| ops::select(x, x.rank() - 1, 1))
}

fn check_stack() -> Result<f64> {
    worst(SHAPES.iter().enumerate().map(|(i, s)| {
        let xs: Vec<Tensor> = (0..3).map(|j| trainable(s, 40 + 3 * i as u64 + j)).collect();
        check(&xs, || ops::stack(&xs, s.len()))
    }))
}

fn check_sum_axis() -> Result<f64> {
    unary(|x| ops::sum_axis(x, x.rank() / 2))
}

fn check_matmul() -> Result<f64> {
    worst([(1, 3, 2), (4, 2, 5), (3, 6, 3)].iter().enumerate().map(|(i, &(p, q, r))| {
        let a = trainable(&[p, q], 50 + i as u64);
        let b = trainable(&[q, r], 60 + i as u64);
        check(&[a.clone(), b.clone()], || ops::matmul(&a, &b))
    }))
}

fn check_pointwise_conv() -> Result<f64> {
    let cases: [(&[usize], usize); 3] = [(&[4, 3], 1), (&[3, 4, 2], 1), (&[2, 3, 4], 2)];
    worst(cases.iter().enumerate().map(|(i, &(shape, axis))| {
        let x = trainable(shape, 70 + i as u64);
        let w = trainable(&[shape[axis], 3], 80 + i as u64);
        let b = trainable(&[3], 90 + i as u64);
        check(&[x.clone(), w.clone(), b.clone()], || ops::pointwise_conv(&x, axis, &w, Some(&b)))
    }))
}

fn check_depthwise_conv1d() -> Result<f64> {
    worst([(6, 2, 1), (9, 3, 2), (5, 1, 4)].iter().enumerate().map(|(i, &(l, n, d))| {
        let x = trainable(&[l, n], 100 + i as u64);
        let k = trainable(&[n, 3], 110 + i as u64);
        let b = trainable(&[n], 120 + i as u64);
        check(&[x.clone(), k.clone(), b.clone()], || ops::depthwise_conv1d(&x, &k, &b, d))
    }))
}

fn check_depthwise_conv2d() -> Result<f64> {
    worst([(5, 4, 2, 1), (7, 3, 1, 2), (4, 5, 3, 3)].iter().enumerate().map(|(i, &(l, n, c, d))| {
        let x = trainable(&[l, n, c], 130 + i as u64);
        let k = trainable(&[c, 3, 3], 140 + i as u64);
        let b = trainable(&[c], 150 + i as u64);
        check(&[x.clone(), k.clone(), b.clone()], || ops::depthwise_conv2d(&x, &k, &b, d))
    }))
}

fn check_global_layer_norm() -> Result<f64> {
    let cases: [(&[usize], usize); 3] = [(&[4, 3], 1), (&[3, 2, 4], 2), (&[5, 3, 2], 1)];
    worst(cases.iter().enumerate().map(|(i, &(shape, axis))| {
        let x = trainable(shape, 160 + i as u64);
        let g = trainable(&[shape[axis]], 170 + i as u64);
        let b = trainable(&[shape[axis]], 180 + i as u64);
        check(&[x.clone(), g.clone(), b.clone()], || ops::global_layer_norm(&x, axis, &g, &b))
    }))
}

fn check_overlap_add() -> Result<f64> {
    worst([(3, 4, 2, 8), (4, 6, 3, 13), (2, 5, 5, 7)].iter().enumerate().map(|(i, &(l, k, hop, t))| {
        let x = trainable(&[l, k], 190 + i as u64);
        check(std::slice::from_ref(&x), || ops::overlap_add(&x, hop, t))
    }))
}

fn block_check(kind: BlockKind, cases: &[(&[usize], usize, usize)]) -> Result<f64> {
    worst(cases.iter().enumerate().map(|(i, &(shape, hidden, dilation))| {
        let mut init = Init::new(200 + i as u64);
        let width = *shape.last().expect("rank ≥ 2");
        let block = ConvBlock::new(&mut init, "b", kind, width, hidden, dilation);
        let x = trainable(shape, 210 + i as u64);
        let mut params: Vec<Tensor> = init.finish().0.into_iter().map(|p| p.tensor).collect();
        params.push(x.clone());
        check(&params, || {
            let out = block.forward(&x)?;
            ops::add(&out.residual, &ops::scale(&out.skip, 0.5))
        })
    }))
}

fn check_conv1d_block() -> Result<f64> {
    block_check(BlockKind::OneD, &[(&[7, 3], 6, 1), (&[9, 4], 5, 2), (&[6, 2], 4, 4)])
}

fn check_ic_block() -> Result<f64> {
    block_check(
        BlockKind::InterChannel,
        &[(&[8, 6, 4], 16, 1), (&[5, 3, 2], 8, 2), (&[6, 4, 3], 12, 3)],
    )
}

fn check_downsized_stack() -> Result<f64> {
    let schedules: [&[(usize, usize)]; 3] = [&[(6, 4), (4, 2)], &[(4, 2), (6, 4)], &[(5, 4), (3, 2), (2, 1)]];
    worst(schedules.iter().enumerate().map(|(i, sched)| {
        let mut init = Init::new(220 + i as u64);
        let dims: Vec<StackDims> = sched
            .iter()
            .map(|&(features, channels)| StackDims {
                features,
                channels,
                hidden: 2 * channels,
            })
            .collect();
        let tcn = ProgressiveTcn::new(&mut init, "t", &dims, 2)?;
        let x = trainable(&[6, sched[0].0, sched[0].1], 230 + i as u64);
        let mut params: Vec<Tensor> = init.finish().0.into_iter().map(|p| p.tensor).collect();
        params.push(x.clone());
        check(&params, || tcn.forward(&x))
    }))
}

fn check_mask_head_a() -> Result<f64> {
    worst([(4, 3, 5), (6, 5, 2), (3, 2, 7)].iter().enumerate().map(|(i, &(l, n, f))| {
        let mut init = Init::new(240 + i as u64);
        let head = FeatureMaskHead::new(&mut init, "h", n, f);
        let x = trainable(&[l, n], 250 + i as u64);
        let mut params: Vec<Tensor> = init.finish().0.into_iter().map(|p| p.tensor).collect();
        params.push(x.clone());
        check(&params, || head.forward(&x))
    }))
}

fn check_mask_head_b() -> Result<f64> {
    worst([(4, 3, 2, 5), (5, 4, 3, 3), (3, 2, 4, 6)].iter().enumerate().map(|(i, &(l, n, c, f))| {
        let mut init = Init::new(260 + i as u64);
        let head = ChannelMaskHead::new(&mut init, "h", n, c, f);
        let x = trainable(&[l, n, c], 270 + i as u64);
        let mut params: Vec<Tensor> = init.finish().0.into_iter().map(|p| p.tensor).collect();
        params.push(x.clone());
        check(&params, || head.forward(&x))
    }))
}

fn check_sdr_loss() -> Result<f64> {
    worst([8usize, 33, 100].iter().enumerate().map(|(i, &t)| {
        let s = random(&[t], 280 + i as u64).to_vec();
        let x = trainable(&[t], 290 + i as u64);
        grad_check_params(|| sdr_loss(&s, &x), std::slice::from_ref(&x), DEFAULT_EPS)
    }))
}

fn check_frozen_norm() -> Result<f64> {
    let mut init = Init::new(300);
    let norm = GlobalNorm::new(&mut init, "n", 1, 3);
    let x = trainable(&[5, 3], 301);
    norm.forward(&x)?;
    norm.freeze();
    let params: Vec<Tensor> = init.finish().0.into_iter().map(|p| p.tensor).collect();
    let mut all = params;
    all.push(x.clone());
    let err = check(&all, || norm.forward(&x));
    norm.unfreeze();
    err
}

/// End-to-end SDR loss of a toy inter-channel model on 800-sample inputs.
/// Only mask-head parameters are perturbed: upstream of the head, a step of
/// `DEFAULT_EPS` moves some of the ~10⁵ PReLU inputs across their kink, which
/// the block-level checks already cover.
fn check_model_sdr() -> Result<f64> {
    let names = [
        "mask_head.prelu.slope",
        "mask_head.channel.weight",
        "mask_head.channel.bias",
        "mask_head.feature.bias",
    ];
    let base = preset("toy-ic").expect("toy preset").config;
    worst((0..3u64).map(|i| {
        let model = Model::new(ModelConfig { seed: 310 + i, ..base.clone() })?;
        let ex = synth_dataset(320 + i, 1, 0.05, base.mics, 16000)?.remove(0);
        let params: Vec<Tensor> = names
            .iter()
            .map(|n| model.parameter(n).expect("toy parameter").clone())
            .collect();
        let audio: AudioBuffer = ex.noisy;
        grad_check_params(|| sdr_loss(&ex.clean, &model.forward(&audio)?), &params, DEFAULT_EPS)
    }))
}

macro_rules! cases {
    ($($kind:ident $name:literal => $f:ident),* $(,)?) => {
        vec![$(GradCase { name: $name, kind: CheckKind::$kind, run: $f }),*]
    };
}

/// Every registered check, primitives first.
pub fn registry() -> Vec<GradCase> {
    cases![
        Primitive "add" => check_add,
        Primitive "sub" => check_sub,
        Primitive "mul" => check_mul,
        Primitive "scale" => check_scale,
        Primitive "sum" => check_sum,
        Primitive "mean_of" => check_mean_of,
        Primitive "relu" => check_relu,
        Primitive "prelu" => check_prelu,
        Primitive "sigmoid" => check_sigmoid,
        Primitive "reshape" => check_reshape,
        Primitive "permute" => check_permute,
        Primitive "select" => check_select,
        Primitive "stack" => check_stack,
        Primitive "sum_axis" => check_sum_axis,
        Primitive "matmul" => check_matmul,
        Primitive "pointwise_conv" => check_pointwise_conv,
        Primitive "depthwise_conv1d" => check_depthwise_conv1d,
        Primitive "depthwise_conv2d" => check_depthwise_conv2d,
        Primitive "global_layer_norm" => check_global_layer_norm,
        Primitive "overlap_add" => check_overlap_add,
        Composite "frozen_norm" => check_frozen_norm,
        Composite "conv1d_block" => check_conv1d_block,
        Composite "ic_block" => check_ic_block,
        Composite "downsized_stack" => check_downsized_stack,
        Composite "mask_head_a" => check_mask_head_a,
        Composite "mask_head_b" => check_mask_head_b,
        Composite "sdr_loss" => check_sdr_loss,
        Composite "model_sdr" => check_model_sdr,
    ]
}

pub fn find(name: &str) -> Option<GradCase> {
    registry().into_iter().find(|c| c.name == name)
}
