use rand::Rng;

use super::params::{Bound, BufferId, Mode, ParamId, ParamStore, StatUpdate};
use crate::tensor::{
    batch_norm_eval, batch_norm_train, conv2d, dense, relu, Real, Result, Tensor, Var,
};

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            weight: store.kaiming(format!("{name}.weight"), &[outputs, inputs], inputs, rng),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[outputs])),
        }
    }

    pub fn zeros<T: Real>(store: &mut ParamStore<T>, name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), Tensor::zeros(&[outputs, inputs])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[outputs])),
        }
    }

    pub fn forward<'t, T: Real>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        dense(x, b.var(self.weight), b.var(self.bias))
    }
}

/// Per-channel affine normalization: batch statistics while training,
/// running averages (momentum 0.1) at evaluation.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl Norm {
    pub const MOMENTUM: f64 = 0.1;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(
                format!("{name}.running_var"),
                Tensor::full(&[channels], T::one()),
            ),
        }
    }

    pub fn forward<'t, T: Real>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let eps = T::cst(NORM_EPS);
        match b.mode() {
            Mode::Train => {
                let (y, stats) = batch_norm_train(x, b.var(self.gamma), b.var(self.beta), eps)?;
                b.record_stats(StatUpdate {
                    mean: self.running_mean,
                    var: self.running_var,
                    stats,
                });
                Ok(y)
            }
            Mode::Eval => batch_norm_eval(
                x,
                b.var(self.gamma),
                b.var(self.beta),
                b.buffer(self.running_mean).data(),
                b.buffer(self.running_var).data(),
                eps,
            ),
        }
    }
}

/// 3x3 convolution (stride 2, pad 1) followed by normalization and ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub weight: ParamId,
    pub norm: Norm,
}

impl ConvBlock {
    pub const KERNEL: usize = 3;
    pub const STRIDE: usize = 2;
    pub const PAD: usize = 1;

    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let k = Self::KERNEL;
        Self {
            weight: store.kaiming(
                format!("{name}.conv"),
                &[out_channels, in_channels, k, k],
                in_channels * k * k,
                rng,
            ),
            norm: Norm::new(store, &format!("{name}.norm"), out_channels),
        }
    }

    pub fn forward<'t, T: Real>(&self, b: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = conv2d(x, b.var(self.weight), None, Self::STRIDE, Self::PAD)?;
        Ok(relu(self.norm.forward(b, y)?))
    }
}

/// Five stride-2 blocks; block 0 is the stem. `blocks[l]` consumes the
/// feature map "before block l" (the raw image for `l = 0`).
#[derive(Clone, Debug)]
pub struct Backbone {
    pub blocks: Vec<ConvBlock>,
    /// Index of the first block (partial backbones start later).
    pub first: usize,
}

impl Backbone {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: &[usize],
        first: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let blocks = (first..channels.len())
            .map(|l| {
                let inputs = if l == 0 { 3 } else { channels[l - 1] };
                ConvBlock::new(store, &format!("{name}.block{l}"), inputs, channels[l], rng)
            })
            .collect();
        Self { blocks, first }
    }

    /// Runs blocks `[from, to)` (absolute block indices).
    pub fn run<'t, T: Real>(
        &self,
        b: &Bound<'t, T>,
        mut x: Var<'t, T>,
        from: usize,
        to: usize,
    ) -> Result<Var<'t, T>> {
        for l in from..to {
            x = self.blocks[l - self.first].forward(b, x)?;
        }
        Ok(x)
    }

    pub fn end(&self) -> usize {
        self.first + self.blocks.len()
    }
}
