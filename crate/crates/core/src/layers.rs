use crate::error::Result;
use crate::graph::{Graph, ParamId, ParamStore, ParamView, Var};
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;

/// A square-kernel convolution whose weights live in a [`ParamStore`].
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), rng::glorot_uniform([cout, cin, k, k], rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([cout]))?;
        Ok(Self { weight, bias, stride, pad })
    }

    /// Stride 1, "same" padding.
    pub fn same(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Self::new(store, name, cin, cout, k, 1, k / 2, rng)
    }

    pub fn forward(&self, g: &mut Graph, params: ParamView<'_>, x: Var) -> Result<Var> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        g.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn out_channels(&self, store: &ParamStore) -> usize {
        store.get(self.weight).shape()[0]
    }
}

/// A transposed convolution; the kernel is stored `[Cin, Cout, k, k]`.
#[derive(Clone, Copy, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), rng::glorot_uniform([cin, cout, k, k], rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([cout]))?;
        Ok(Self { weight, bias, stride, pad })
    }

    pub fn forward(&self, g: &mut Graph, params: ParamView<'_>, x: Var) -> Result<Var> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        g.conv_transpose2d(x, w, b, self.stride, self.pad)
    }
}
