//! Analytic parameter and Multi-Adds accounting.
//!
//! A Multi-Add is one multiply-accumulate: a convolution costs its weight
//! count (biases excluded) times the number of output pixels. Parameter
//! totals include biases and, for the super-network, the architecture
//! logits.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::genotype::Genotype;
use crate::search_space::layers::esa_grid;
use crate::search_space::{OpKind, Operation, OperationSpec, SupernetConfig, NUM_OPERATIONS, STAGES_PER_CELL};

/// HR extent (height, width) used for reported Multi-Adds.
pub const HD_720P: (usize, usize) = (720, 1280);

/// The 720p extent cropped to a multiple of `scale`.
pub fn hd_dims_for(scale: usize) -> (usize, usize) {
    let (h, w) = HD_720P;
    (h - h % scale, w - w % scale)
}

/// Weights of one candidate op mapping `channels` to `channels`.
pub fn op_params(spec: &OperationSpec, channels: usize) -> u64 {
    let k2 = (spec.kernel * spec.kernel) as u64;
    let c = channels as u64;
    match spec.kind {
        OpKind::Plain => k2 * c * c,
        OpKind::Separable => 2 * (k2 * c + c * c),
        OpKind::Dilated => k2 * c + c * c,
    }
}

/// LR extent for an HR extent, rejecting sizes the scale does not divide.
pub fn lr_dims(hr_dims: (usize, usize), scale: usize) -> Result<(usize, usize)> {
    let (h, w) = hr_dims;
    if scale == 0 {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    for dim in [h, w] {
        if dim % scale != 0 {
            return Err(Error::NotDivisible { dim, divisor: scale });
        }
    }
    Ok((h / scale, w / scale))
}

pub fn op_multiadds(spec: &OperationSpec, channels: usize, hr_dims: (usize, usize), scale: usize) -> Result<u64> {
    let (h, w) = lr_dims(hr_dims, scale)?;
    Ok(op_params(spec, channels) * (h * w) as u64)
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub multiadds: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComplexityReport {
    pub total_params: u64,
    pub total_multiadds: u64,
    pub per_layer: Vec<LayerCost>,
    pub hr_dims: (usize, usize),
    pub scale: usize,
}

impl ComplexityReport {
    /// Parameters of the candidate-op layers only.
    pub fn candidate_params(&self) -> u64 {
        self.per_layer
            .iter()
            .filter(|l| l.name.contains(".stage"))
            .map(|l| l.params)
            .sum()
    }
}

struct Builder {
    layers: Vec<LayerCost>,
    hr_dims: (usize, usize),
    scale: usize,
}

impl Builder {
    fn push(&mut self, name: String, params: u64, multiadds: u64) {
        self.layers.push(LayerCost {
            name,
            params,
            multiadds,
        });
    }

    /// A biased convolution evaluated on an `out` grid.
    fn conv(&mut self, name: String, cin: usize, cout: usize, k: usize, out: (usize, usize)) {
        let weights = (cout * cin * k * k) as u64;
        self.push(name, weights + cout as u64, weights * (out.0 * out.1) as u64);
    }

    fn finish(self) -> ComplexityReport {
        ComplexityReport {
            total_params: self.layers.iter().map(|l| l.params).sum(),
            total_multiadds: self.layers.iter().map(|l| l.multiadds).sum(),
            per_layer: self.layers,
            hr_dims: self.hr_dims,
            scale: self.scale,
        }
    }
}

fn network_report(
    cfg: &SupernetConfig,
    hr_dims: (usize, usize),
    fan_in: impl Fn(usize) -> usize,
    stage_ops: impl Fn(usize, usize) -> Vec<Operation>,
    arch_logits: bool,
) -> Result<ComplexityReport> {
    cfg.validate()?;
    let lr = lr_dims(hr_dims, cfg.scale)?;
    if lr.0 < 3 || lr.1 < 3 {
        return Err(Error::TooSmall(format!("LR grid {}x{} is below 3x3", lr.0, lr.1)));
    }
    let (strided, pooled) = esa_grid(lr.0, lr.1);
    let c = cfg.channels;
    let d = cfg.distilled_channels();
    let f = cfg.esa_channels();
    let mut b = Builder {
        layers: Vec::new(),
        hr_dims,
        scale: cfg.scale,
    };
    if arch_logits {
        for l in 0..cfg.num_mixed_layers() {
            b.push(format!("arch.alpha.{}", l), NUM_OPERATIONS as u64, 0);
        }
        for j in 0..cfg.num_cells {
            b.push(format!("arch.beta.{}", j), (j + 1) as u64, 0);
        }
    }
    b.conv("stem".into(), 3, c, 3, lr);
    for j in 0..cfg.num_cells {
        let p = format!("cells.{}", j);
        b.conv(format!("{}.aggregate", p), fan_in(j) * c, c, 1, lr);
        for k in 0..STAGES_PER_CELL {
            b.conv(format!("{}.distill{}", p, k + 1), c, d, 1, lr);
            for op in stage_ops(j, k) {
                let params = op_params(&op.spec(), c);
                b.push(format!("{}.stage{}.{}", p, k + 1, op.name()), params, params * (lr.0 * lr.1) as u64);
            }
        }
        let last = STAGES_PER_CELL + 1;
        b.conv(format!("{}.distill{}", p, last), c, d, cfg.final_distill_kernel, lr);
        b.conv(format!("{}.fuse", p), d * last, c, 1, lr);
        b.conv(format!("{}.esa.reduce", p), c, f, 1, lr);
        b.conv(format!("{}.esa.skip", p), f, f, 1, lr);
        b.conv(format!("{}.esa.down", p), f, f, 3, strided);
        b.conv(format!("{}.esa.pooled", p), f, f, 3, pooled);
        b.conv(format!("{}.esa.refine1", p), f, f, 3, pooled);
        b.conv(format!("{}.esa.refine2", p), f, f, 3, pooled);
        b.conv(format!("{}.esa.expand", p), f, c, 1, lr);
    }
    b.conv("fusion.reduce".into(), cfg.num_cells * c, c, 1, lr);
    b.conv("fusion.smooth".into(), c, c, 3, lr);
    b.conv("upsampler".into(), c, 3 * cfg.scale * cfg.scale, 3, lr);
    Ok(b.finish())
}

/// Cost of the derived network of `genotype` built with `cfg`.
pub fn genotype_complexity(genotype: &Genotype, cfg: &SupernetConfig, hr_dims: (usize, usize)) -> Result<ComplexityReport> {
    genotype.validate()?;
    if !genotype.matches(cfg) {
        return Err(Error::InvalidGenotype(format!(
            "genotype is C={} cells={} x{}, config is C={} cells={} x{}",
            genotype.channels, genotype.num_cells, genotype.scale, cfg.channels, cfg.num_cells, cfg.scale
        )));
    }
    network_report(
        cfg,
        hr_dims,
        |j| genotype.connections[j].len(),
        |j, k| alloc::vec![genotype.cells[j][k]],
        false,
    )
}

/// Cost of the super-network: every mixed layer runs all nine ops and every
/// cell aggregates all of its predecessors.
pub fn supernet_complexity(cfg: &SupernetConfig, hr_dims: (usize, usize)) -> Result<ComplexityReport> {
    network_report(cfg, hr_dims, |j| j + 1, |_, _| Operation::ALL.to_vec(), true)
}

/// Size of the discrete search space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cardinality {
    /// Operation triples per cell, 9³.
    pub per_cell: u128,
    /// 9³ × (n − 1)!: one op triple and one predecessor choice per cell.
    pub one_input: u128,
    /// 9³ × Π_{j=1}^{n−1} C(j + 1, 2): one op triple and a top-2 connection
    /// choice per cell.
    pub top2: u128,
}

pub fn search_space_cardinality(num_cells: usize) -> Result<Cardinality> {
    if num_cells == 0 {
        return Err(Error::InvalidArgument("num_cells must be positive".into()));
    }
    let overflow = || Error::InvalidArgument(format!("search space for {} cells overflows u128", num_cells));
    let per_cell = (NUM_OPERATIONS as u128).pow(STAGES_PER_CELL as u32);
    let mut one_input = per_cell;
    let mut top2 = per_cell;
    for j in 1..num_cells as u128 {
        one_input = one_input.checked_mul(j).ok_or_else(overflow)?;
        top2 = top2.checked_mul((j + 1) * j / 2).ok_or_else(overflow)?;
    }
    Ok(Cardinality { per_cell, one_input, top2 })
}
