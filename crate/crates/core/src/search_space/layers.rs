//! Fixed (non-searched) layers: biased convolutions and the spatial attention gate.

use alloc::format;

use rand::Rng;

use crate::autograd::{ConvGeom, Graph, Var};
use crate::params::{fan_in_uniform, ParamGroup, ParamId, ParamStore};

/// Convolution with bias, as used by the stem, distillation, fusion,
/// aggregation, attention and tail layers.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
}

impl Conv {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let w = fan_in_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng);
        let b = fan_in_uniform(&[out_channels], fan_in, rng);
        Self {
            weight: store.add(format!("{}.weight", name), ParamGroup::Weights, w),
            bias: store.add(format!("{}.bias", name), ParamGroup::Weights, b),
            geom,
        }
    }

    /// Size-preserving k×k convolution.
    pub fn same(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Self {
        Self::new(name, in_channels, out_channels, kernel, ConvGeom::same(kernel), store, rng)
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, Some(b), self.geom)
    }
}

pub const ESA_POOL_KERNEL: usize = 7;
pub const ESA_POOL_STRIDE: usize = 3;

/// Enhanced spatial attention: a sigmoid mask computed on a strided,
/// pooled, channel-reduced copy of the input.
#[derive(Clone, Debug)]
pub struct Esa {
    pub reduce: Conv,
    pub skip: Conv,
    pub down: Conv,
    pub pooled: Conv,
    pub refine1: Conv,
    pub refine2: Conv,
    pub expand: Conv,
}

impl Esa {
    pub fn new(name: &str, channels: usize, reduction: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let f = channels / reduction;
        let down = ConvGeom {
            stride: 2,
            padding: 0,
            dilation: 1,
            groups: 1,
        };
        Self {
            reduce: Conv::same(&format!("{}.reduce", name), channels, f, 1, store, rng),
            skip: Conv::same(&format!("{}.skip", name), f, f, 1, store, rng),
            down: Conv::new(&format!("{}.down", name), f, f, 3, down, store, rng),
            pooled: Conv::same(&format!("{}.pooled", name), f, f, 3, store, rng),
            refine1: Conv::same(&format!("{}.refine1", name), f, f, 3, store, rng),
            refine2: Conv::same(&format!("{}.refine2", name), f, f, 3, store, rng),
            expand: Conv::same(&format!("{}.expand", name), f, channels, 1, store, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let [_, _, h, w] = g.value(x).dims4();
        let reduced = self.reduce.forward(g, x);
        let strided = self.down.forward(g, reduced);
        let pooled = g.max_pool(strided, ESA_POOL_KERNEL, ESA_POOL_STRIDE);
        let r = self.pooled.forward(g, pooled);
        let r = g.relu(r);
        let r = self.refine1.forward(g, r);
        let r = g.relu(r);
        let r = self.refine2.forward(g, r);
        let up = g.bilinear(r, h, w);
        let skip = self.skip.forward(g, reduced);
        let merged = g.add(up, skip);
        let logits = self.expand.forward(g, merged);
        let mask = g.sigmoid(logits);
        g.mul(x, mask)
    }
}

/// Spatial extents of the attention branch for an `h × w` input:
/// after the stride-2 convolution, and after pooling.
pub fn esa_grid(h: usize, w: usize) -> ((usize, usize), (usize, usize)) {
    use crate::autograd::kernels::pool_output_len;
    let sh = (h - 3) / 2 + 1;
    let sw = (w - 3) / 2 + 1;
    (
        (sh, sw),
        (
            pool_output_len(sh, ESA_POOL_KERNEL, ESA_POOL_STRIDE),
            pool_output_len(sw, ESA_POOL_KERNEL, ESA_POOL_STRIDE),
        ),
    )
}
