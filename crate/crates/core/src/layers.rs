//! Parameterized building blocks shared by the TCN stacks and the model
//! heads. Each layer owns handles to its trainable tensors; the tensors are
//! registered with an [`Init`] under hierarchical names at construction.

use std::cell::Cell;

use crate::error::Result;
use crate::init::Init;
use crate::tensor::ops::{self, NormStats};
use crate::tensor::Tensor;

/// 1×1 convolution along a fixed axis.
#[derive(Debug, Clone)]
pub struct Conv1x1 {
    pub axis: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv1x1 {
    pub fn new(init: &mut Init, name: &str, axis: usize, n_in: usize, n_out: usize) -> Self {
        Self {
            axis,
            weight: init.uniform(format!("{name}.weight"), &[n_in, n_out], n_in),
            bias: init.uniform(format!("{name}.bias"), &[n_out], n_in),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::pointwise_conv(x, self.axis, &self.weight, Some(&self.bias))
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Sets weight to the identity (square only) and bias to zero.
    pub fn set_identity(&self) {
        let n = self.n_in();
        let m = self.n_out();
        let mut w = self.weight.data_mut();
        for k in 0..n {
            for j in 0..m {
                w[k * m + j] = if k == j { 1.0 } else { 0.0 };
            }
        }
        self.bias.data_mut().fill(0.0);
    }

    pub fn set_zero(&self) {
        self.weight.data_mut().fill(0.0);
        self.bias.data_mut().fill(0.0);
    }
}

/// PReLU with a single slope, initialized to 0.25.
#[derive(Debug, Clone)]
pub struct PRelu {
    pub slope: Tensor,
}

impl PRelu {
    pub fn new(init: &mut Init, name: &str) -> Self {
        Self {
            slope: init.constant(format!("{name}.slope"), &[1], 0.25),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::prelu(x, &self.slope)
    }
}

/// Global layer norm with affine parameters along `axis`.
///
/// The statistics of the most recent forward are remembered; after
/// [`GlobalNorm::freeze`] later forwards reuse them instead of recomputing.
#[derive(Debug, Clone)]
pub struct GlobalNorm {
    pub axis: usize,
    pub gain: Tensor,
    pub bias: Tensor,
    last: Cell<Option<NormStats>>,
    frozen: Cell<Option<NormStats>>,
}

impl GlobalNorm {
    pub fn new(init: &mut Init, name: &str, axis: usize, extent: usize) -> Self {
        Self {
            axis,
            gain: init.constant(format!("{name}.gain"), &[extent], 1.0),
            bias: init.constant(format!("{name}.bias"), &[extent], 0.0),
            last: Cell::new(None),
            frozen: Cell::new(None),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (y, stats) = ops::global_layer_norm_with(x, self.axis, &self.gain, &self.bias, self.frozen.get())?;
        self.last.set(Some(stats));
        Ok(y)
    }

    pub fn freeze(&self) {
        self.frozen.set(self.last.get());
    }

    pub fn unfreeze(&self) {
        self.frozen.set(None);
    }
}

/// Dilated depthwise convolution with kernel width 3: over time for `L×N`
/// maps, over (time, feature) for `L×N×C` maps.
#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    pub dilation: usize,
    pub kernel: Tensor,
    pub bias: Tensor,
    two_d: bool,
}

impl DepthwiseConv {
    pub fn new_1d(init: &mut Init, name: &str, channels: usize, dilation: usize) -> Self {
        Self {
            dilation,
            kernel: init.uniform(format!("{name}.kernel"), &[channels, 3], 3),
            bias: init.uniform(format!("{name}.bias"), &[channels], 3),
            two_d: false,
        }
    }

    pub fn new_2d(init: &mut Init, name: &str, channels: usize, dilation: usize) -> Self {
        Self {
            dilation,
            kernel: init.uniform(format!("{name}.kernel"), &[channels, 3, 3], 9),
            bias: init.uniform(format!("{name}.bias"), &[channels], 9),
            two_d: true,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if self.two_d {
            ops::depthwise_conv2d(x, &self.kernel, &self.bias, self.dilation)
        } else {
            ops::depthwise_conv1d(x, &self.kernel, &self.bias, self.dilation)
        }
    }
}
