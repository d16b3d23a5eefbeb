//! Trainable building blocks expressed over a [`Graph`].

use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamId, ParamStore};

/// Affine map `x W + b` over the last axis of a `[rows, in]` input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add_glorot(
            format!("{name}.w"),
            &[inputs, outputs],
            inputs,
            outputs,
            rng,
        );
        let bias = store.add_zeros(format!("{name}.b"), &[outputs]);
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: Var) -> Var {
        g.add_bias(g.matmul(x, p[self.weight]), p[self.bias])
    }
}

/// Same-padded 1-D convolution with per-channel bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv1d {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub width: usize,
    pub outputs: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        inputs: usize,
        outputs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let kernels = store.add_glorot(
            format!("{name}.k"),
            &[width, inputs, outputs],
            width * inputs,
            width * outputs,
            rng,
        );
        let bias = store.add_zeros(format!("{name}.b"), &[outputs]);
        Self {
            kernels,
            bias,
            width,
            outputs,
        }
    }

    /// `[batch, length, c_in] -> [batch, length, c_out]`.
    pub fn forward(&self, g: &Graph, p: &Bound, x: Var) -> Var {
        g.add_bias(g.conv1d_same(x, p[self.kernels]), p[self.bias])
    }
}

/// Gated recurrent unit cell (reset, update, candidate gate ordering).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruCell {
    input: Dense,
    hidden: Dense,
    pub size: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let input = Dense::new(store, &format!("{name}.in"), inputs, 3 * size, rng);
        let hidden = Dense::new(store, &format!("{name}.hid"), size, 3 * size, rng);
        Self {
            input,
            hidden,
            size,
        }
    }

    /// One step: `x` is `[batch, in]`, `h` is `[batch, size]`.
    pub fn step(&self, g: &Graph, p: &Bound, x: Var, h: Var) -> Var {
        let s = self.size;
        let xi = self.input.forward(g, p, x);
        let hh = self.hidden.forward(g, p, h);
        let reset = g.sigmoid(g.add(g.slice(xi, 0, s), g.slice(hh, 0, s)));
        let update = g.sigmoid(g.add(g.slice(xi, s, 2 * s), g.slice(hh, s, 2 * s)));
        let candidate = g.tanh(g.add(
            g.slice(xi, 2 * s, 3 * s),
            g.mul(reset, g.slice(hh, 2 * s, 3 * s)),
        ));
        g.add(g.mul(g.one_minus(update), candidate), g.mul(update, h))
    }
}
