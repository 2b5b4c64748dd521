//! Genotype files: canonical pretty-printed JSON.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use dlsr_core::genotype::Genotype;

/// Canonical text: two-space indented JSON with a trailing newline.
pub fn to_json(genotype: &Genotype) -> String {
    let mut text = serde_json::to_string_pretty(genotype).expect("genotype serializes");
    text.push('\n');
    text
}

/// Parses and validates a genotype document.
pub fn parse(text: &str) -> Result<Genotype> {
    let genotype: Genotype = serde_json::from_str(text).context("invalid genotype document")?;
    genotype.validate()?;
    Ok(genotype)
}

pub fn read(path: &Path) -> Result<Genotype> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read genotype {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

pub fn write(path: &Path, genotype: &Genotype) -> Result<()> {
    fs::write(path, to_json(genotype)).with_context(|| format!("cannot write genotype {}", path.display()))
}
