//! Mixed layers, mixed residual blocks and distillation cells.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::search_space::layers::{Conv, Esa};
use crate::search_space::operations::{OpLayer, Operation, NUM_OPERATIONS};
use crate::search_space::{SupernetConfig, STAGES_PER_CELL};

/// All nine candidate ops on one input, mixed by `softmax(alpha)`.
#[derive(Clone, Debug)]
pub struct MixedLayer {
    pub ops: Vec<OpLayer>,
    pub alpha: ParamId,
}

impl MixedLayer {
    pub fn new(
        prefix: &str,
        channels: usize,
        alpha: ParamId,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let ops = Operation::ALL
            .iter()
            .map(|&op| OpLayer::new(op, channels, &format!("{}.{}", prefix, op.name()), store, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ops, alpha })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let row = g.param(self.alpha);
        if g.value(row).len() != NUM_OPERATIONS {
            return Err(Error::LengthMismatch {
                what: "alpha row",
                expected: NUM_OPERATIONS,
                got: g.value(row).len(),
            });
        }
        let weights = g.softmax(row);
        let outs = self.ops.iter().map(|op| op.forward(g, x)).collect::<Result<Vec<_>>>()?;
        Ok(g.weighted_sum(&outs, weights))
    }
}

/// The searchable convolution inside a residual block.
#[derive(Clone, Debug)]
pub enum Stage {
    Mixed(MixedLayer),
    Fixed(OpLayer),
}

impl Stage {
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        match self {
            Stage::Mixed(m) => m.forward(g, x),
            Stage::Fixed(op) => op.forward(g, x),
        }
    }

    /// Residual block: `relu(x + stage(x))`.
    pub fn residual_forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let y = self.forward(g, x)?;
        let s = g.add(x, y);
        Ok(g.relu(s))
    }
}

/// Three residual blocks, each preceded by a distillation branch, a fourth
/// distillation of the last refined feature, 1×1 fusion of the four
/// branches, spatial attention and an outer residual connection.
#[derive(Clone, Debug)]
pub struct Cell {
    pub channels: usize,
    pub stages: Vec<Stage>,
    pub distill: Vec<Conv>,
    pub fuse: Conv,
    pub esa: Esa,
}

impl Cell {
    /// `stage(k, name, store, rng)` builds the searchable layer of block `k`.
    pub fn new<R: Rng>(
        prefix: &str,
        cfg: &SupernetConfig,
        mut stage: impl FnMut(usize, &str, &mut ParamStore, &mut R) -> Result<Stage>,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let c = cfg.channels;
        let d = cfg.distilled_channels();
        let mut stages = Vec::with_capacity(STAGES_PER_CELL);
        let mut distill = Vec::with_capacity(STAGES_PER_CELL + 1);
        for k in 0..STAGES_PER_CELL {
            distill.push(Conv::same(&format!("{}.distill{}", prefix, k + 1), c, d, 1, store, rng));
            stages.push(stage(k, &format!("{}.stage{}", prefix, k + 1), store, rng)?);
        }
        distill.push(Conv::same(
            &format!("{}.distill{}", prefix, STAGES_PER_CELL + 1),
            c,
            d,
            cfg.final_distill_kernel,
            store,
            rng,
        ));
        let fuse = Conv::same(&format!("{}.fuse", prefix), d * (STAGES_PER_CELL + 1), c, 1, store, rng);
        let esa = Esa::new(&format!("{}.esa", prefix), c, cfg.esa_reduction, store, rng);
        Ok(Self {
            channels: c,
            stages,
            distill,
            fuse,
            esa,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let got = g.value(x).dims4()[1];
        if got != self.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                got,
            });
        }
        let mut branches = Vec::with_capacity(self.distill.len());
        let mut refined = x;
        for (stage, distill) in self.stages.iter().zip(&self.distill) {
            branches.push(distill.forward(g, refined));
            refined = stage.residual_forward(g, refined)?;
        }
        branches.push(self.distill[STAGES_PER_CELL].forward(g, refined));
        let cat = g.concat(&branches);
        let fused = self.fuse.forward(g, cat);
        let attended = self.esa.forward(g, fused);
        Ok(g.add(x, attended))
    }
}
