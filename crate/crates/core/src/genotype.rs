//! Discrete architectures: extraction from the relaxed parameters and the
//! search-free networks built from them.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::search_space::network::{Body, CellInput};
use crate::search_space::{ArchParams, OpLayer, Operation, Stage, SupernetConfig, STAGES_PER_CELL};

/// Connections kept per cell.
pub const KEPT_CONNECTIONS: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Genotype {
    /// Operation of each residual block, per cell.
    pub cells: Vec<[Operation; STAGES_PER_CELL]>,
    /// Kept predecessor indices per cell (0 is the stem, `i > 0` is cell `i - 1`).
    pub connections: Vec<Vec<usize>>,
    pub channels: usize,
    pub num_cells: usize,
    pub scale: usize,
}

impl Genotype {
    /// The same block triple in every cell, each cell fed by its two
    /// nearest predecessors.
    pub fn repeated(ops: [Operation; STAGES_PER_CELL], channels: usize, num_cells: usize, scale: usize) -> Self {
        Self {
            cells: (0..num_cells).map(|_| ops).collect(),
            connections: (0..num_cells)
                .map(|j| if j == 0 { alloc::vec![0] } else { alloc::vec![j - 1, j] })
                .collect(),
            channels,
            num_cells,
            scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidGenotype(msg));
        if self.num_cells == 0 {
            return bad("num_cells must be positive".into());
        }
        if self.cells.len() != self.num_cells {
            return bad(format!("{} cell entries for num_cells {}", self.cells.len(), self.num_cells));
        }
        if self.connections.len() != self.num_cells {
            return bad(format!(
                "{} connection entries for num_cells {}",
                self.connections.len(),
                self.num_cells
            ));
        }
        for (j, kept) in self.connections.iter().enumerate() {
            let expected = KEPT_CONNECTIONS.min(j + 1);
            if kept.len() != expected {
                return bad(format!("cell {} keeps {} connections, expected {}", j, kept.len(), expected));
            }
            if kept.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("cell {} connections must be strictly increasing", j));
            }
            if kept.iter().any(|&i| i > j) {
                return bad(format!("cell {} connects to a later node", j));
            }
        }
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        if !(2..=4).contains(&self.scale) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        Ok(())
    }

    /// Network settings implied by the genotype, with default distillation
    /// and attention widths.
    pub fn network_config(&self) -> SupernetConfig {
        SupernetConfig::new(self.channels, self.num_cells, self.scale)
    }

    pub fn matches(&self, cfg: &SupernetConfig) -> bool {
        self.channels == cfg.channels && self.num_cells == cfg.num_cells && self.scale == cfg.scale
    }
}

/// First index of the maximum; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest values in ascending index order; ties go to
/// the lowest index.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Argmax operation per mixed layer and the two strongest incoming
/// connections per cell.
pub fn extract_genotype(arch: &ArchParams, cfg: &SupernetConfig) -> Result<Genotype> {
    cfg.validate()?;
    arch.validate(cfg.num_cells)?;
    let cells = arch
        .alpha
        .chunks(STAGES_PER_CELL)
        .map(|rows| {
            let mut ops = [Operation::Conv1x1; STAGES_PER_CELL];
            for (slot, row) in ops.iter_mut().zip(rows) {
                *slot = Operation::ALL[argmax(row)];
            }
            ops
        })
        .collect();
    let connections = arch
        .beta
        .iter()
        .map(|group| top_k(group, KEPT_CONNECTIONS.min(group.len())))
        .collect();
    Ok(Genotype {
        cells,
        connections,
        channels: cfg.channels,
        num_cells: cfg.num_cells,
        scale: cfg.scale,
    })
}

/// A network with one fixed operation per block and unweighted kept
/// connections. It has no architecture parameters.
#[derive(Clone, Debug)]
pub struct DerivedNet {
    pub body: Body,
    pub genotype: Genotype,
}

impl DerivedNet {
    pub fn new(genotype: &Genotype, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        Self::with_config(genotype, &genotype.network_config(), store, rng)
    }

    /// Builds with explicit distillation and attention settings; the
    /// genotype's width, depth and scale must match `cfg`.
    pub fn with_config(
        genotype: &Genotype,
        cfg: &SupernetConfig,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        genotype.validate()?;
        if !genotype.matches(cfg) {
            return Err(Error::InvalidGenotype(format!(
                "genotype is C={} cells={} x{}, network config is C={} cells={} x{}",
                genotype.channels, genotype.num_cells, genotype.scale, cfg.channels, cfg.num_cells, cfg.scale
            )));
        }
        let inputs = genotype.connections.iter().map(|k| CellInput::Kept(k.clone())).collect();
        let body = Body::build(
            cfg,
            inputs,
            |j, k, name, store, rng| {
                let op = genotype.cells[j][k];
                let layer = OpLayer::new(op, cfg.channels, &format!("{}.{}", name, op.name()), store, rng)?;
                Ok(Stage::Fixed(layer))
            },
            store,
            rng,
        )?;
        Ok(Self {
            body,
            genotype: genotype.clone(),
        })
    }

    pub fn config(&self) -> &SupernetConfig {
        &self.body.config
    }

    pub fn forward(&self, g: &mut Graph<'_>, lr: Var) -> Result<Var> {
        self.body.forward(g, lr)
    }
}
