//! Layer building blocks on top of the autograd tape.

use rand::Rng;

use crate::autograd::{Tape, Tensor, Var};
use crate::params::{ParamGroup, ParamId, ParamStore};

/// Row-wise affine map `x W + b` over `[n, in]` inputs.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_normal(format!("{name}.weight"), group, fan_in, fan_out, gain / (fan_in as f64).sqrt(), rng);
        let b = store.add_zeros(format!("{name}.bias"), group, 1, fan_out);
        Self { w, b, fan_in, fan_out }
    }

    /// Identity-initialized square map.
    pub fn identity(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize) -> Self {
        let mut eye = Tensor::zeros(dim, dim);
        for i in 0..dim {
            eye.data[i * dim + i] = 1.0;
        }
        let w = store.add(format!("{name}.weight"), group, eye);
        let b = store.add_zeros(format!("{name}.bias"), group, 1, dim);
        Self { w, b, fan_in: dim, fan_out: dim }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

/// 3×3 same-padding convolution over an `[h*w, C]` grid.
#[derive(Debug, Clone, Copy)]
pub struct Conv3x3 {
    pub lin: Linear,
}

impl Conv3x3 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self { lin: Linear::new(store, name, group, 9 * c_in, c_out, gain, rng) }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: usize, w: usize) -> Var {
        let cols = tape.im2col3x3(x, h, w);
        self.lin.forward(tape, store, cols)
    }
}

/// Per-cell channel normalization with a learned scale and shift.
#[derive(Debug, Clone, Copy)]
pub struct ChannelNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl ChannelNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), group, Tensor::new(1, dim, vec![1.0; dim]));
        let beta = store.add_zeros(format!("{name}.beta"), group, 1, dim);
        Self { gamma, beta }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let n = tape.layer_norm_rows(x, 1e-5);
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let y = tape.mul_row(n, g);
        tape.add_row(y, b)
    }
}

/// Convolution, normalization and GELU.
#[derive(Debug, Clone, Copy)]
pub struct ConvBlock {
    pub conv: Conv3x3,
    pub norm: ChannelNorm,
}

impl ConvBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            conv: Conv3x3::new(store, &format!("{name}.conv"), group, c_in, c_out, 1.0, rng),
            norm: ChannelNorm::new(store, &format!("{name}.norm"), group, c_out),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: usize, w: usize) -> Var {
        let y = self.conv.forward(tape, store, x, h, w);
        let y = self.norm.forward(tape, store, y);
        tape.gelu(y)
    }
}
