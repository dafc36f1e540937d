use std::path::Path;

use serde::{Deserialize, Serialize};

use super::session::{OfflineResult, Stop};
use crate::error::Result;

/// Floor applied before taking logarithms of probabilities.
pub const PROB_FLOOR: f32 = 1e-9;

/// Exported per-step IRQ probability of one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrqTrace {
    pub context: String,
    pub tokens: Vec<usize>,
    pub stop: Stop,
    pub irq_prob: Vec<f32>,
    pub log10_irq_prob: Vec<f32>,
    pub onset: Option<usize>,
}

impl IrqTrace {
    pub fn from_result(r: &OfflineResult) -> Self {
        Self {
            context: r.context.clone(),
            tokens: r.tokens.clone(),
            stop: r.stop,
            irq_prob: r.irq_trace.clone(),
            log10_irq_prob: r.irq_trace.iter().map(|p| p.max(PROB_FLOOR).log10()).collect(),
            onset: r.onset,
        }
    }
}

pub fn write_traces(path: impl AsRef<Path>, traces: &[IrqTrace]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(f, traces)?;
    Ok(())
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<IrqTrace>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}
