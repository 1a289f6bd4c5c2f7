//! Training history as JSON lines, one object per (epoch, phase).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use demandgraph_core::model::LossBreakdown;
use demandgraph_core::train::{EpochRecord, TrainingHistory};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryPhase {
    /// Losses before the first update.
    Initial,
    Main,
    Adversarial,
    /// Losses after the last update.
    Final,
    Probe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeMetrics {
    /// Held-out accuracy of a linear region probe on the agnostic latent.
    pub agnostic: f64,
    pub specific: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryLine {
    pub held_out: String,
    pub epoch: usize,
    pub phase: HistoryPhase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeMetrics>,
}

impl HistoryLine {
    pub fn losses(held_out: &str, epoch: usize, phase: HistoryPhase, losses: LossBreakdown) -> Self {
        Self { held_out: held_out.to_owned(), epoch, phase, losses: Some(losses), probe: None }
    }
}

pub struct HistoryWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl HistoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| AppError::io(path, e))?;
        Ok(Self { path: path.to_owned(), out: BufWriter::new(file) })
    }

    pub fn write(&mut self, line: &HistoryLine) -> Result<()> {
        let text = serde_json::to_string(line).map_err(|e| AppError::corrupt(&self.path, e))?;
        writeln!(self.out, "{text}").and_then(|()| self.out.flush()).map_err(|e| AppError::io(&self.path, e))
    }

    pub fn epoch(&mut self, held_out: &str, record: &EpochRecord) -> Result<()> {
        self.write(&HistoryLine::losses(held_out, record.epoch, HistoryPhase::Main, record.main))?;
        self.write(&HistoryLine::losses(held_out, record.epoch, HistoryPhase::Adversarial, record.adversarial))
    }

    /// Writes the initial and final evaluations of a finished run; epochs are
    /// expected to have been streamed through [`HistoryWriter::epoch`].
    pub fn bookends(&mut self, held_out: &str, history: &TrainingHistory) -> Result<()> {
        if let Some(initial) = history.initial {
            self.write(&HistoryLine::losses(held_out, 0, HistoryPhase::Initial, initial))?;
        }
        if let Some(last) = history.last {
            self.write(&HistoryLine::losses(held_out, history.epochs.len(), HistoryPhase::Final, last))?;
        }
        Ok(())
    }
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryLine>> {
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| AppError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AppError::corrupt(path, e))?);
    }
    Ok(out)
}
