//! Cell-level and network-level search space.

pub mod arch;
pub mod cell;
pub mod config;
pub mod layers;
pub mod network;
pub mod operations;

pub use arch::ArchParams;
pub use cell::{Cell, MixedLayer, Stage};
pub use config::{DistillRatio, SupernetConfig};
pub use layers::{Conv, Esa};
pub use network::{aggregate_cell_input, Body, CellInput, Supernet};
pub use operations::{OpKind, OpLayer, Operation, OperationSpec, NUM_OPERATIONS};

/// Mixed residual blocks per cell.
pub const STAGES_PER_CELL: usize = 3;
