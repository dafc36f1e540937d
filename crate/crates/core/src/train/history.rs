use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f32,
    pub lr: f32,
    pub grad_norm: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps completed when validation ran.
    pub step: usize,
    pub val_loss: f32,
}

/// One JSON-lines entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Step(StepRecord),
    Epoch(EpochRecord),
    Best { epoch: usize, val_loss: f32 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the retained checkpoint.
    pub best: Option<usize>,
}

impl TrainLog {
    /// Records a validation result; returns true when it is a new best.
    pub fn push_epoch(&mut self, rec: EpochRecord) -> bool {
        self.epochs.push(rec);
        let improved = match self.best {
            None => true,
            Some(b) => rec.val_loss < self.epochs[b].val_loss,
        };
        if improved {
            self.best = Some(self.epochs.len() - 1);
        }
        improved
    }

    pub fn best_epoch(&self) -> Option<&EpochRecord> {
        self.best.map(|b| &self.epochs[b])
    }

    pub fn last_loss(&self) -> Option<f32> {
        self.steps.last().map(|s| s.loss)
    }

    pub fn lines(&self) -> Vec<LogLine> {
        let mut out: Vec<LogLine> = self.steps.iter().copied().map(LogLine::Step).collect();
        out.extend(self.epochs.iter().copied().map(LogLine::Epoch));
        if let Some(b) = self.best_epoch() {
            out.push(LogLine::Best { epoch: b.epoch, val_loss: b.val_loss });
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for line in self.lines() {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let mut log = TrainLog::default();
        let mut best = None;
        for line in BufReader::new(std::fs::File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                LogLine::Step(s) => log.steps.push(s),
                LogLine::Epoch(e) => log.epochs.push(e),
                LogLine::Best { epoch, .. } => best = Some(epoch),
            }
        }
        if let Some(epoch) = best {
            log.best = Some(
                log.epochs
                    .iter()
                    .position(|e| e.epoch == epoch)
                    .ok_or_else(|| Error::Data(format!("best epoch {epoch} not in log")))?,
            );
        }
        Ok(log)
    }
}
