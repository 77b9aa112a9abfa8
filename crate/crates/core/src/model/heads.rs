use crate::error::{Error, Result};
use crate::init::Init;
use crate::layers::{Conv1x1, PRelu};
use crate::tensor::{ops, Tensor};

/// PReLU → 1×1 conv (N→F) → sigmoid, for `L×N` TCN outputs.
#[derive(Debug, Clone)]
pub struct FeatureMaskHead {
    pub act: PRelu,
    pub conv: Conv1x1,
}

impl FeatureMaskHead {
    pub fn new(init: &mut Init, name: &str, features: usize, encoder_features: usize) -> Self {
        let mark = init.scalar_count();
        let act = PRelu::new(init, &format!("{name}.prelu"));
        let conv = Conv1x1::new(init, &format!("{name}.conv"), 1, features, encoder_features);
        init.record(name, &[features], &[encoder_features], mark);
        Self { act, conv }
    }

    pub fn forward(&self, skip_total: &Tensor) -> Result<Tensor> {
        if skip_total.rank() != 2 {
            return Err(Error::dim("feature mask head", skip_total.shape(), self.conv.weight.shape()));
        }
        Ok(ops::sigmoid(&self.conv.forward(&self.act.forward(skip_total)?)?))
    }
}

/// PReLU → 1×1 conv over channels (C→1) → 1×1 conv over features (N→F) →
/// sigmoid, for `L×N×C` TCN outputs. For the 3-D variant this is the only
/// place channels mix.
#[derive(Debug, Clone)]
pub struct ChannelMaskHead {
    pub act: PRelu,
    pub channel: Conv1x1,
    pub feature: Conv1x1,
}

impl ChannelMaskHead {
    pub fn new(init: &mut Init, name: &str, features: usize, channels: usize, encoder_features: usize) -> Self {
        let mark = init.scalar_count();
        let act = PRelu::new(init, &format!("{name}.prelu"));
        let channel = Conv1x1::new(init, &format!("{name}.channel"), 2, channels, 1);
        let feature = Conv1x1::new(init, &format!("{name}.feature"), 1, features, encoder_features);
        init.record(name, &[features, channels], &[encoder_features], mark);
        Self { act, channel, feature }
    }

    pub fn forward(&self, skip_total: &Tensor) -> Result<Tensor> {
        if skip_total.rank() != 3 {
            return Err(Error::dim("channel mask head", skip_total.shape(), self.channel.weight.shape()));
        }
        let (l, n) = (skip_total.shape()[0], skip_total.shape()[1]);
        let squeezed = ops::reshape(&self.channel.forward(&self.act.forward(skip_total)?)?, &[l, n])?;
        Ok(ops::sigmoid(&self.feature.forward(&squeezed)?))
    }
}
