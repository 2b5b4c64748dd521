use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::search_space::operations::NUM_OPERATIONS;
use crate::search_space::STAGES_PER_CELL;

/// Continuous architecture parameters.
///
/// `alpha[l]` holds the operation logits of mixed layer `l` (cell `l / 3`,
/// block `l % 3`). `beta[j]` holds the logits of the `j + 1` incoming
/// connections of cell `j`; entry 0 is the stem, entry `i > 0` is the output
/// of cell `i - 1`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArchParams {
    pub alpha: Vec<[f64; NUM_OPERATIONS]>,
    pub beta: Vec<Vec<f64>>,
}

impl ArchParams {
    /// Uniform relaxation: every softmax starts flat.
    pub fn zeros(num_cells: usize) -> Self {
        Self {
            alpha: vec![[0.0; NUM_OPERATIONS]; num_cells * STAGES_PER_CELL],
            beta: (0..num_cells).map(|j| vec![0.0; j + 1]).collect(),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self, num_cells: usize) -> Result<()> {
        if self.alpha.len() != num_cells * STAGES_PER_CELL {
            return Err(Error::LengthMismatch {
                what: "alpha rows",
                expected: num_cells * STAGES_PER_CELL,
                got: self.alpha.len(),
            });
        }
        if self.beta.len() != num_cells {
            return Err(Error::LengthMismatch {
                what: "beta groups",
                expected: num_cells,
                got: self.beta.len(),
            });
        }
        for (j, group) in self.beta.iter().enumerate() {
            if group.len() != j + 1 {
                return Err(Error::LengthMismatch {
                    what: "beta group",
                    expected: j + 1,
                    got: group.len(),
                });
            }
        }
        let finite = self.alpha.iter().flatten().chain(self.beta.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("architecture parameters must be finite".into()));
        }
        Ok(())
    }
}
