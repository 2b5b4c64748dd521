//! Plot data: one CSV row per model with size, cost and quality.

use std::io::{Read, Write};

use anyhow::{ensure, Result};
use dlsr_core::metrics::ScatterRow;

pub fn write_scatter<W: Write>(out: W, rows: &[ScatterRow]) -> Result<()> {
    ensure!(!rows.is_empty(), "scatter data needs at least one row");
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scatter<R: Read>(input: R) -> Result<Vec<ScatterRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
