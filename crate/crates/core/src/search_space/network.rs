//! The densely connected network shared by the super-network and derived networks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::search_space::arch::ArchParams;
use crate::search_space::cell::{Cell, MixedLayer, Stage};
use crate::search_space::layers::Conv;
use crate::search_space::operations::NUM_OPERATIONS;
use crate::search_space::{SupernetConfig, STAGES_PER_CELL};
use crate::tensor::Tensor;

/// Smallest LR extent accepted by the attention branch's stride-2 convolution.
pub const MIN_INPUT_SIZE: usize = 3;

/// How a cell combines the features of its predecessors.
#[derive(Clone, Debug)]
pub enum CellInput {
    /// All predecessors, each scaled by `softmax(beta)` before concatenation.
    Weighted(ParamId),
    /// Only these predecessor indices, concatenated unweighted.
    Kept(Vec<usize>),
}

/// Concatenates predecessor features, optionally scaling feature `i` by
/// `weights[i]`, and projects back to the cell width with a 1×1 convolution.
pub fn aggregate_cell_input(
    g: &mut Graph<'_>,
    features: &[Var],
    weights: Option<Var>,
    aggregator: &Conv,
) -> Result<Var> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("cell input needs at least one feature".into()));
    }
    let shape = g.value(features[0]).shape().to_vec();
    if features.iter().any(|&f| g.value(f).shape() != shape.as_slice()) {
        return Err(Error::ShapeMismatch("predecessor features differ in shape".into()));
    }
    let parts: Vec<Var> = match weights {
        Some(w) => {
            let len = g.value(w).len();
            if len != features.len() {
                return Err(Error::LengthMismatch {
                    what: "connection weights",
                    expected: features.len(),
                    got: len,
                });
            }
            features.iter().enumerate().map(|(i, &f)| g.scale_by(f, w, i)).collect()
        }
        None => features.to_vec(),
    };
    let cat = if parts.len() == 1 { parts[0] } else { g.concat(&parts) };
    Ok(aggregator.forward(g, cat))
}

/// Stem, cells with their input aggregators, fusion of every cell output,
/// global residual and sub-pixel tail.
#[derive(Clone, Debug)]
pub struct Body {
    pub config: SupernetConfig,
    pub stem: Conv,
    pub aggregators: Vec<Conv>,
    pub inputs: Vec<CellInput>,
    pub cells: Vec<Cell>,
    pub fusion_reduce: Conv,
    pub fusion_smooth: Conv,
    pub upsampler: Conv,
}

pub(crate) fn upsampler_name() -> &'static str {
    "upsampler"
}

impl Body {
    pub(crate) fn build<R: Rng>(
        config: &SupernetConfig,
        inputs: Vec<CellInput>,
        mut stage: impl FnMut(usize, usize, &str, &mut ParamStore, &mut R) -> Result<Stage>,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let stem = Conv::same("stem", 3, c, 3, store, rng);
        let mut aggregators = Vec::with_capacity(config.num_cells);
        let mut cells = Vec::with_capacity(config.num_cells);
        for (j, input) in inputs.iter().enumerate() {
            let fan = match input {
                CellInput::Weighted(_) => j + 1,
                CellInput::Kept(kept) => kept.len(),
            };
            let prefix = format!("cells.{}", j);
            aggregators.push(Conv::same(&format!("{}.aggregate", prefix), fan * c, c, 1, store, rng));
            cells.push(Cell::new(
                &prefix,
                config,
                |k, name, store, rng| stage(j, k, name, store, rng),
                store,
                rng,
            )?);
        }
        let fusion_reduce = Conv::same("fusion.reduce", config.num_cells * c, c, 1, store, rng);
        let fusion_smooth = Conv::same("fusion.smooth", c, c, 3, store, rng);
        let out = 3 * config.scale * config.scale;
        let upsampler = Conv::same(upsampler_name(), c, out, 3, store, rng);
        Ok(Self {
            config: config.clone(),
            stem,
            aggregators,
            inputs,
            cells,
            fusion_reduce,
            fusion_smooth,
            upsampler,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, lr: Var) -> Result<Var> {
        let shape = g.value(lr).shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::ShapeMismatch(format!("expected an N×3×H×W batch, got {:?}", shape)));
        }
        if shape[2] < MIN_INPUT_SIZE || shape[3] < MIN_INPUT_SIZE {
            return Err(Error::TooSmall(format!(
                "LR input {}x{} is below {}x{}",
                shape[2], shape[3], MIN_INPUT_SIZE, MIN_INPUT_SIZE
            )));
        }
        let shallow = self.stem.forward(g, lr);
        let mut features = vec![shallow];
        for ((cell, input), aggregator) in self.cells.iter().zip(&self.inputs).zip(&self.aggregators) {
            let x = match input {
                CellInput::Weighted(beta) => {
                    let logits = g.param(*beta);
                    let weights = g.softmax(logits);
                    aggregate_cell_input(g, &features, Some(weights), aggregator)?
                }
                CellInput::Kept(kept) => {
                    let chosen: Vec<Var> = kept.iter().map(|&i| features[i]).collect();
                    aggregate_cell_input(g, &chosen, None, aggregator)?
                }
            };
            let y = cell.forward(g, x)?;
            features.push(y);
        }
        let cat = g.concat(&features[1..]);
        let fused = self.fusion_reduce.forward(g, cat);
        let fused = self.fusion_smooth.forward(g, fused);
        let body = g.add(fused, shallow);
        let tail = self.upsampler.forward(g, body);
        Ok(g.pixel_shuffle(tail, self.config.scale))
    }
}

/// The continuous search network: every residual block is a mixed layer
/// over all nine operations and every cell sees all of its predecessors.
#[derive(Clone, Debug)]
pub struct Supernet {
    pub body: Body,
    pub alpha: Vec<ParamId>,
    pub beta: Vec<ParamId>,
}

impl Supernet {
    /// Registers weights and zero-initialized architecture logits in `store`.
    pub fn new(config: &SupernetConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let zeros = ArchParams::zeros(config.num_cells);
        let alpha: Vec<ParamId> = zeros
            .alpha
            .iter()
            .enumerate()
            .map(|(l, row)| {
                store.add(
                    format!("arch.alpha.{}", l),
                    ParamGroup::Architecture,
                    Tensor::from_vec(&[NUM_OPERATIONS], row.to_vec()),
                )
            })
            .collect();
        let beta: Vec<ParamId> = zeros
            .beta
            .iter()
            .enumerate()
            .map(|(j, group)| {
                store.add(
                    format!("arch.beta.{}", j),
                    ParamGroup::Architecture,
                    Tensor::from_vec(&[group.len()], group.clone()),
                )
            })
            .collect();
        let inputs = beta.iter().map(|&b| CellInput::Weighted(b)).collect();
        let body = Body::build(
            config,
            inputs,
            |j, k, name, store, rng| {
                let row = alpha[j * STAGES_PER_CELL + k];
                Ok(Stage::Mixed(MixedLayer::new(name, config.channels, row, store, rng)?))
            },
            store,
            rng,
        )?;
        Ok(Self { body, alpha, beta })
    }

    pub fn config(&self) -> &SupernetConfig {
        &self.body.config
    }

    pub fn forward(&self, g: &mut Graph<'_>, lr: Var) -> Result<Var> {
        self.body.forward(g, lr)
    }

    pub fn arch_params(&self, store: &ParamStore) -> ArchParams {
        ArchParams {
            alpha: self
                .alpha
                .iter()
                .map(|&id| {
                    let mut row = [0.0; NUM_OPERATIONS];
                    row.copy_from_slice(store.get(id).data());
                    row
                })
                .collect(),
            beta: self.beta.iter().map(|&id| store.get(id).data().to_vec()).collect(),
        }
    }

    pub fn set_arch_params(&self, store: &mut ParamStore, arch: &ArchParams) -> Result<()> {
        arch.validate(self.config().num_cells)?;
        for (&id, row) in self.alpha.iter().zip(&arch.alpha) {
            store.get_mut(id).data_mut().copy_from_slice(row);
        }
        for (&id, group) in self.beta.iter().zip(&arch.beta) {
            store.get_mut(id).data_mut().copy_from_slice(group);
        }
        Ok(())
    }
}
