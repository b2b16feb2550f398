//! Parameterized building blocks recorded onto a tape.

use hoi_tensor::{Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;
use crate::params::{Bound, ParamId, ParamStore};

/// Fully connected layer, `y = x · Wᵀ + b` with `W` shaped `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        let weight = store.add_uniform(rng, &format!("{name}.weight"), &[outputs, inputs], inputs);
        let bias = store.add_uniform(rng, &format!("{name}.bias"), &[outputs], inputs);
        Linear {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        Ok(t.linear(x, p.var(self.weight), Some(p.var(self.bias)))?)
    }
}

/// 2-D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add_uniform(
            rng,
            &format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
        );
        let bias = store.add_uniform(rng, &format!("{name}.bias"), &[out_channels], fan_in);
        Conv {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        Ok(t.conv2d(
            x,
            p.var(self.weight),
            Some(p.var(self.bias)),
            self.stride,
            self.padding,
        )?)
    }
}

/// Layer norm over the last axis with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        LayerNorm {
            gamma: store.add(&format!("{name}.gamma"), Tensor::ones([width])),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros([width])),
            eps: hoi_tensor::ops::DEFAULT_LAYER_NORM_EPS,
        }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        Ok(t.layer_norm(x, p.var(self.gamma), p.var(self.beta), self.eps)?)
    }
}
