use alloc::format;

use crate::error::{Error, Result};

/// Fraction of the cell width kept by each distillation branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistillRatio {
    pub numerator: usize,
    pub denominator: usize,
}

impl DistillRatio {
    pub const HALF: DistillRatio = DistillRatio {
        numerator: 1,
        denominator: 2,
    };
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SupernetConfig {
    pub channels: usize,
    pub num_cells: usize,
    pub scale: usize,
    pub distill_ratio: DistillRatio,
    pub esa_reduction: usize,
    /// Kernel of the last distillation branch (after the third block).
    pub final_distill_kernel: usize,
}

impl Default for SupernetConfig {
    fn default() -> Self {
        Self {
            channels: 48,
            num_cells: 6,
            scale: 2,
            distill_ratio: DistillRatio::HALF,
            esa_reduction: 4,
            final_distill_kernel: 3,
        }
    }
}

impl SupernetConfig {
    pub fn new(channels: usize, num_cells: usize, scale: usize) -> Self {
        Self {
            channels,
            num_cells,
            scale,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        if self.num_cells == 0 {
            return bad("num_cells must be positive".into());
        }
        if !(2..=4).contains(&self.scale) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        let DistillRatio {
            numerator,
            denominator,
        } = self.distill_ratio;
        if numerator == 0 || denominator == 0 || numerator > denominator {
            return bad(format!("distill ratio {}/{} must lie in (0, 1]", numerator, denominator));
        }
        if (self.channels * numerator) % denominator != 0 {
            return bad(format!(
                "channels {} times distill ratio {}/{} is not an integer",
                self.channels, numerator, denominator
            ));
        }
        if self.esa_reduction == 0 || self.channels % self.esa_reduction != 0 {
            return bad(format!(
                "channels {} not divisible by attention reduction {}",
                self.channels, self.esa_reduction
            ));
        }
        if self.final_distill_kernel % 2 == 0 {
            return bad("final distillation kernel must be odd".into());
        }
        Ok(())
    }

    pub fn distilled_channels(&self) -> usize {
        self.channels * self.distill_ratio.numerator / self.distill_ratio.denominator
    }

    pub fn esa_channels(&self) -> usize {
        self.channels / self.esa_reduction
    }

    pub fn num_mixed_layers(&self) -> usize {
        self.num_cells * super::STAGES_PER_CELL
    }
}
