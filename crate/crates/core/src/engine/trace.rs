use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::LossBreakdown;

/// One optimisation step, as written to the trace log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub restart: usize,
    pub total: f64,
    pub val: f64,
    pub prox: f64,
    pub spars: f64,
    pub spars_smooth: f64,
    pub plaus: f64,
    pub div: f64,
    pub cat: f64,
    /// First step after a perturbation.
    pub perturbed: bool,
}

impl TraceRecord {
    pub fn new(t: usize, restart: usize, loss: &LossBreakdown, perturbed: bool) -> Self {
        Self {
            t,
            restart,
            total: loss.total,
            val: loss.validity,
            prox: loss.proximity,
            spars: loss.sparsity,
            spars_smooth: loss.sparsity_smooth,
            plaus: loss.plausibility,
            div: loss.diversity,
            cat: loss.categorical,
            perturbed,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_trace(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
