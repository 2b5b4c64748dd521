//! File formats, checkpoints, run configuration, image IO and the
//! command-line interface around `dlsr-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod genotype_io;
pub mod imageio;
pub mod scatter;
