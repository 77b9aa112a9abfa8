//! Temporal convolutional mask-estimation stacks.
//!
//! Two block kinds share one pipeline:
//!
//! ```text
//! 1×1 conv (expand) → PReLU → norm → dilated depthwise conv → PReLU → norm
//!     ├─ 1×1 conv (compress) → skip
//!     └─ 1×1 conv (compress) → residual, added to the block input
//! ```
//!
//! A [`BlockKind::OneD`] block works on `L×N` maps: the 1×1 convs act on the
//! feature axis and the depthwise conv runs over time. A
//! [`BlockKind::InterChannel`] block works on `L×N×C` maps: the 1×1 convs
//! act on the channel axis only and the depthwise conv is 3×3 over (time,
//! feature), so time and feature extents never change inside the block.

use crate::error::{Error, Result};
use crate::init::Init;
use crate::layers::{Conv1x1, DepthwiseConv, GlobalNorm, PRelu};
use crate::tensor::{ops, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    OneD,
    InterChannel,
}

impl BlockKind {
    /// Axis the 1×1 convs act on.
    fn mix_axis(self) -> usize {
        match self {
            BlockKind::OneD => 1,
            BlockKind::InterChannel => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub residual: Tensor,
    pub skip: Tensor,
}

/// Dilations `1, 2, 4, …, 2^(D−1)` of the blocks in one stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DilationSchedule {
    pub dilations: Vec<usize>,
}

impl DilationSchedule {
    pub fn new(blocks: usize) -> Result<Self> {
        if blocks == 0 || blocks > 30 {
            return Err(Error::Config(format!("blocks per stack must be in 1..=30, got {blocks}")));
        }
        Ok(Self {
            dilations: (0..blocks).map(|i| 1usize << i).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.dilations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dilations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub kind: BlockKind,
    pub in_conv: Conv1x1,
    pub act1: PRelu,
    pub norm1: GlobalNorm,
    pub dconv: DepthwiseConv,
    pub act2: PRelu,
    pub norm2: GlobalNorm,
    pub skip_conv: Conv1x1,
    pub res_conv: Conv1x1,
}

impl ConvBlock {
    /// `width` is the extent of the mixed axis (N for 1-D blocks, C for
    /// inter-channel blocks), `hidden` the expanded extent H.
    pub fn new(init: &mut Init, name: &str, kind: BlockKind, width: usize, hidden: usize, dilation: usize) -> Self {
        let axis = kind.mix_axis();
        let in_conv = Conv1x1::new(init, &format!("{name}.in_conv"), axis, width, hidden);
        let act1 = PRelu::new(init, &format!("{name}.prelu1"));
        let norm1 = GlobalNorm::new(init, &format!("{name}.norm1"), axis, hidden);
        let dconv = match kind {
            BlockKind::OneD => DepthwiseConv::new_1d(init, &format!("{name}.dconv"), hidden, dilation),
            BlockKind::InterChannel => DepthwiseConv::new_2d(init, &format!("{name}.dconv"), hidden, dilation),
        };
        let act2 = PRelu::new(init, &format!("{name}.prelu2"));
        let norm2 = GlobalNorm::new(init, &format!("{name}.norm2"), axis, hidden);
        let skip_conv = Conv1x1::new(init, &format!("{name}.skip_conv"), axis, hidden, width);
        let res_conv = Conv1x1::new(init, &format!("{name}.res_conv"), axis, hidden, width);
        Self {
            kind,
            in_conv,
            act1,
            norm1,
            dconv,
            act2,
            norm2,
            skip_conv,
            res_conv,
        }
    }

    pub fn dilation(&self) -> usize {
        self.dconv.dilation
    }

    /// Runs the block up to the second normalization; exposed so tests can
    /// inspect intermediate shapes.
    pub fn hidden(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let expected = match self.kind {
            BlockKind::OneD => 2,
            BlockKind::InterChannel => 3,
        };
        if x.rank() != expected {
            return Err(Error::dim("conv block", x.shape(), self.in_conv.weight.shape()));
        }
        let h1 = self.in_conv.forward(x)?;
        let h2 = self.act1.forward(&h1)?;
        let h3 = self.norm1.forward(&h2)?;
        let h4 = self.dconv.forward(&h3)?;
        let h5 = self.act2.forward(&h4)?;
        let h6 = self.norm2.forward(&h5)?;
        Ok(vec![h1, h2, h3, h4, h5, h6])
    }

    pub fn forward(&self, x: &Tensor) -> Result<BlockOutput> {
        let hidden = self.hidden(x)?;
        let h = hidden.last().expect("six stages");
        let skip = self.skip_conv.forward(h)?;
        let residual = ops::add(x, &self.res_conv.forward(h)?)?;
        Ok(BlockOutput { residual, skip })
    }

    fn norms(&self) -> [&GlobalNorm; 2] {
        [&self.norm1, &self.norm2]
    }
}

/// `D` blocks with doubling dilation.
#[derive(Debug, Clone)]
pub struct Stack {
    pub blocks: Vec<ConvBlock>,
}

impl Stack {
    pub fn new(init: &mut Init, name: &str, kind: BlockKind, width: usize, hidden: usize, depth: usize) -> Result<Self> {
        let schedule = DilationSchedule::new(depth)?;
        let blocks = schedule
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| ConvBlock::new(init, &format!("{name}.block{i}"), kind, width, hidden, d))
            .collect();
        Ok(Self { blocks })
    }

    /// Returns the residual output of the last block and the sum of all skips.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut residual = x.clone();
        let mut skip_sum: Option<Tensor> = None;
        for block in &self.blocks {
            let out = block.forward(&residual)?;
            residual = out.residual;
            skip_sum = Some(match skip_sum {
                None => out.skip,
                Some(acc) => ops::add(&acc, &out.skip)?,
            });
        }
        Ok((residual, skip_sum.expect("stacks have at least one block")))
    }
}

/// `S` stacks chained on the residual path; the output is the sum of every
/// stack's skip sum.
#[derive(Debug, Clone)]
pub struct Tcn {
    pub stacks: Vec<Stack>,
}

impl Tcn {
    /// Builds the network and records one summary row per block. `dims` is the
    /// per-frame shape of the input (`[N]` or `[N, C]`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init,
        name: &str,
        kind: BlockKind,
        dims: &[usize],
        hidden: usize,
        depth: usize,
        stacks: usize,
    ) -> Result<Self> {
        if stacks == 0 {
            return Err(Error::Config("a TCN needs at least one stack".into()));
        }
        let width = *dims.last().ok_or_else(|| Error::Config("empty TCN dims".into()))?;
        let mut out = Vec::with_capacity(stacks);
        for s in 0..stacks {
            let schedule = DilationSchedule::new(depth)?;
            let mut blocks = Vec::with_capacity(depth);
            for (b, &d) in schedule.dilations.iter().enumerate() {
                let mark = init.scalar_count();
                let block_name = format!("{name}.stack{s}.block{b}");
                blocks.push(ConvBlock::new(init, &block_name, kind, width, hidden, d));
                init.record(block_name, dims, dims, mark);
            }
            out.push(Stack { blocks });
        }
        Ok(Self { stacks: out })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut residual = x.clone();
        let mut total: Option<Tensor> = None;
        for stack in &self.stacks {
            let (r, skip) = stack.forward(&residual)?;
            residual = r;
            total = Some(match total {
                None => skip,
                Some(acc) => ops::add(&acc, &skip)?,
            });
        }
        Ok(total.expect("at least one stack"))
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ConvBlock> {
        self.stacks.iter().flat_map(|s| s.blocks.iter())
    }

    /// Freezes normalization statistics at the values of the last forward.
    pub fn freeze_norms(&self) {
        self.blocks().flat_map(ConvBlock::norms).for_each(GlobalNorm::freeze);
    }

    pub fn unfreeze_norms(&self) {
        self.blocks().flat_map(ConvBlock::norms).for_each(GlobalNorm::unfreeze);
    }
}

/// Parallel per-channel TCNs: channel slice `c` of an `L×N×C` map runs
/// through its own 1-D stacks, and the outputs are restacked along the
/// channel axis. Nothing mixes channels.
#[derive(Debug, Clone)]
pub struct ParallelTcn {
    pub slices: Vec<Tcn>,
}

impl ParallelTcn {
    pub fn new(
        init: &mut Init,
        name: &str,
        features: usize,
        channels: usize,
        hidden: usize,
        depth: usize,
        stacks: usize,
    ) -> Result<Self> {
        if channels == 0 || stacks == 0 {
            return Err(Error::Config("parallel TCN needs positive channels and stacks".into()));
        }
        let schedule = DilationSchedule::new(depth)?;
        let mut slices: Vec<Tcn> = (0..channels)
            .map(|_| Tcn {
                stacks: (0..stacks).map(|_| Stack { blocks: Vec::new() }).collect(),
            })
            .collect();
        // block-major order so that one summary row covers a block position
        // across all slices
        for s in 0..stacks {
            for (b, &d) in schedule.dilations.iter().enumerate() {
                let mark = init.scalar_count();
                for (c, slice) in slices.iter_mut().enumerate() {
                    let block_name = format!("{name}.slice{c}.stack{s}.block{b}");
                    slice.stacks[s]
                        .blocks
                        .push(ConvBlock::new(init, &block_name, BlockKind::OneD, features, hidden, d));
                }
                init.record(
                    format!("{name}.stack{s}.block{b} (x{channels} slices)"),
                    &[features, channels],
                    &[features, channels],
                    mark,
                );
            }
        }
        Ok(Self { slices })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || x.shape()[2] != self.slices.len() {
            return Err(Error::ChannelMismatch {
                expected: self.slices.len(),
                actual: x.shape().get(2).copied().unwrap_or(0),
            });
        }
        let outs = self
            .slices
            .iter()
            .enumerate()
            .map(|(c, tcn)| tcn.forward(&ops::select(x, 2, c)?))
            .collect::<Result<Vec<_>>>()?;
        ops::stack(&outs, 2)
    }
}

/// Per-stack (features, channels) of a progressive-size TCN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackDims {
    pub features: usize,
    pub channels: usize,
    pub hidden: usize,
}

/// Feature then channel 1×1 convs mapping `(N_a, C_a)` to `(N_b, C_b)`;
/// a conv is omitted where the extents already agree.
#[derive(Debug, Clone)]
pub struct Resize {
    pub feature: Option<Conv1x1>,
    pub channel: Option<Conv1x1>,
}

impl Resize {
    fn new(init: &mut Init, name: &str, from: (usize, usize), to: (usize, usize)) -> Self {
        Self {
            feature: (from.0 != to.0).then(|| Conv1x1::new(init, &format!("{name}.feature"), 1, from.0, to.0)),
            channel: (from.1 != to.1).then(|| Conv1x1::new(init, &format!("{name}.channel"), 2, from.1, to.1)),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.feature.is_none() && self.channel.is_none()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        if let Some(f) = &self.feature {
            y = f.forward(&y)?;
        }
        if let Some(c) = &self.channel {
            y = c.forward(&y)?;
        }
        Ok(y)
    }
}

/// Inter-channel TCN whose stacks run at individual sizes. Between stacks
/// the residual path is resized to the next stack's dims; each stack's
/// summed skip is resized once to the output dims before the cross-stack
/// sum. The output dims are the largest features and channels in the
/// schedule.
#[derive(Debug, Clone)]
pub struct ProgressiveTcn {
    pub schedule: Vec<StackDims>,
    pub stacks: Vec<Stack>,
    pub transitions: Vec<Resize>,
    pub skip_resize: Vec<Resize>,
    pub output_dims: (usize, usize),
}

impl ProgressiveTcn {
    pub fn new(init: &mut Init, name: &str, schedule: &[StackDims], depth: usize) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::Config("progressive TCN needs at least one stack".into()));
        }
        for dims in schedule {
            if dims.features == 0 || dims.channels == 0 || dims.hidden == 0 {
                return Err(Error::Config(format!("stack dims must be positive: {dims:?}")));
            }
        }
        let output_dims = (
            schedule.iter().map(|d| d.features).max().unwrap_or(0),
            schedule.iter().map(|d| d.channels).max().unwrap_or(0),
        );
        let dilations = DilationSchedule::new(depth)?;
        let mut stacks = Vec::new();
        let mut transitions = Vec::new();
        let mut skip_resize = Vec::new();
        for (s, dims) in schedule.iter().enumerate() {
            let shape = [dims.features, dims.channels];
            let mut blocks = Vec::new();
            for (b, &d) in dilations.dilations.iter().enumerate() {
                let mark = init.scalar_count();
                let block_name = format!("{name}.stack{s}.block{b}");
                blocks.push(ConvBlock::new(
                    init,
                    &block_name,
                    BlockKind::InterChannel,
                    dims.channels,
                    dims.hidden,
                    d,
                ));
                init.record(block_name, &shape, &shape, mark);
            }
            stacks.push(Stack { blocks });

            let mark = init.scalar_count();
            let up_name = format!("{name}.skip_resize{s}");
            let up = Resize::new(init, &up_name, (dims.features, dims.channels), output_dims);
            if !up.is_identity() {
                init.record(up_name, &shape, &[output_dims.0, output_dims.1], mark);
            }
            skip_resize.push(up);

            if let Some(next) = schedule.get(s + 1) {
                let mark = init.scalar_count();
                let tr_name = format!("{name}.transition{s}");
                let tr = Resize::new(init, &tr_name, (dims.features, dims.channels), (next.features, next.channels));
                if !tr.is_identity() {
                    init.record(tr_name, &shape, &[next.features, next.channels], mark);
                }
                transitions.push(tr);
            }
        }
        Ok(Self {
            schedule: schedule.to_vec(),
            stacks,
            transitions,
            skip_resize,
            output_dims,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let first = &self.schedule[0];
        if x.rank() != 3 || x.shape()[1] != first.features || x.shape()[2] != first.channels {
            return Err(Error::dim("progressive tcn", x.shape(), &[first.features, first.channels]));
        }
        let mut residual = x.clone();
        let mut total: Option<Tensor> = None;
        for (s, stack) in self.stacks.iter().enumerate() {
            let (r, skip) = stack.forward(&residual)?;
            let skip = self.skip_resize[s].forward(&skip)?;
            total = Some(match total {
                None => skip,
                Some(acc) => ops::add(&acc, &skip)?,
            });
            if let Some(tr) = self.transitions.get(s) {
                residual = tr.forward(&r)?;
            }
        }
        Ok(total.expect("at least one stack"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::grad_check_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn dilation_schedule_doubles() {
        assert_eq!(DilationSchedule::new(4).unwrap().dilations, vec![1, 2, 4, 8]);
        assert!(DilationSchedule::new(0).is_err());
    }

    #[test]
    fn block_shapes() {
        let mut init = Init::new(1);
        let b1 = ConvBlock::new(&mut init, "b1", BlockKind::OneD, 6, 10, 2);
        let out = b1.forward(&random(&[9, 6], 2)).unwrap();
        assert_eq!(out.residual.shape(), &[9, 6]);
        assert_eq!(out.skip.shape(), &[9, 6]);

        let b2 = ConvBlock::new(&mut init, "b2", BlockKind::InterChannel, 4, 16, 2);
        let x = random(&[8, 6, 4], 3);
        for h in b2.hidden(&x).unwrap() {
            assert_eq!(&h.shape()[..2], &[8, 6]);
        }
        let out = b2.forward(&x).unwrap();
        assert_eq!(out.residual.shape(), &[8, 6, 4]);
        assert_eq!(out.skip.shape(), &[8, 6, 4]);
        assert!(b2.forward(&random(&[8, 6], 4)).is_err());
    }

    #[test]
    fn zeroed_residual_conv_passes_input() {
        let mut init = Init::new(5);
        for kind in [BlockKind::OneD, BlockKind::InterChannel] {
            let b = ConvBlock::new(&mut init, "b", kind, 3, 12, 1);
            b.res_conv.set_zero();
            let x = match kind {
                BlockKind::OneD => random(&[7, 3], 6),
                BlockKind::InterChannel => random(&[7, 5, 3], 6),
            };
            assert_eq!(b.forward(&x).unwrap().residual.to_vec(), x.to_vec());
        }
    }

    #[test]
    fn stack_dilations_and_identity() {
        let mut init = Init::new(9);
        let stack = Stack::new(&mut init, "s", BlockKind::OneD, 4, 8, 3).unwrap();
        let d: Vec<usize> = stack.blocks.iter().map(ConvBlock::dilation).collect();
        assert_eq!(d, vec![1, 2, 4]);
        stack.blocks.iter().for_each(|b| b.res_conv.set_zero());
        let x = random(&[10, 4], 1);
        let (r, skip) = stack.forward(&x).unwrap();
        assert_eq!(r.to_vec(), x.to_vec());
        assert_eq!(skip.shape(), &[10, 4]);
    }

    #[test]
    fn single_stack_tcn_is_stack_skip() {
        let mut a = Init::new(11);
        let tcn = Tcn::new(&mut a, "t", BlockKind::OneD, &[4], 8, 2, 1).unwrap();
        let x = random(&[6, 4], 2);
        let (_, skip) = tcn.stacks[0].forward(&x).unwrap();
        assert_eq!(tcn.forward(&x).unwrap().to_vec(), skip.to_vec());
    }

    #[test]
    fn parallel_single_channel_matches_tcn() {
        let mut a = Init::new(3);
        let par = ParallelTcn::new(&mut a, "p", 5, 1, 6, 2, 2).unwrap();
        let x = random(&[7, 5, 1], 4);
        let y = par.forward(&x).unwrap();
        let z = par.slices[0].forward(&ops::select(&x, 2, 0).unwrap()).unwrap();
        assert_eq!(y.to_vec(), z.to_vec());
    }

    #[test]
    fn progressive_constant_schedule_matches_plain() {
        let dims = StackDims {
            features: 5,
            channels: 3,
            hidden: 12,
        };
        let mut a = Init::new(21);
        let prog = ProgressiveTcn::new(&mut a, "t", &[dims.clone(), dims.clone()], 2).unwrap();
        assert!(prog.transitions.iter().all(Resize::is_identity));
        let mut b = Init::new(21);
        let plain = Tcn::new(&mut b, "t", BlockKind::InterChannel, &[5, 3], 12, 2, 2).unwrap();
        let x = random(&[6, 5, 3], 8);
        assert_eq!(prog.forward(&x).unwrap().to_vec(), plain.forward(&x).unwrap().to_vec());
    }

    #[test]
    fn progressive_rejects_bad_dims() {
        let mut a = Init::new(0);
        let bad = StackDims {
            features: 0,
            channels: 2,
            hidden: 8,
        };
        assert!(ProgressiveTcn::new(&mut a, "t", &[bad], 2).is_err());
    }

    #[test]
    fn one_d_block_gradients() {
        let mut init = Init::new(13);
        let block = ConvBlock::new(&mut init, "b", BlockKind::OneD, 3, 5, 2);
        let (params, _) = init.finish();
        let x = Tensor::parameter(&[6, 3], random(&[6, 3], 1).to_vec()).unwrap();
        let w = random(&[6, 3], 2);
        let mut all: Vec<Tensor> = params.into_iter().map(|p| p.tensor).collect();
        all.push(x.clone());
        let err = grad_check_params(
            || {
                let out = block.forward(&x)?;
                let y = ops::add(&out.residual, &out.skip)?;
                Ok(ops::sum(&ops::mul(&y, &w)?))
            },
            &all,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
