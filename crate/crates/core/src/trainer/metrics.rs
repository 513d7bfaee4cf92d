//! Per-epoch training metrics, exported as CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const METRICS_HEADER: &str = "epoch,phase,phi,omega,gamma,total,heldout_loss";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub phase: String,
    pub phi: f64,
    pub omega: f64,
    pub gamma: f64,
    pub total: f64,
    pub heldout_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    rows: Vec<EpochRow>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: EpochRow) {
        log::info!(
            "epoch {} [{}] phi {:.4} omega {:.4} gamma {:.4} total {:.4} heldout {:.4}",
            row.epoch,
            row.phase,
            row.phi,
            row.omega,
            row.gamma,
            row.total,
            row.heldout_loss
        );
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[EpochRow] {
        &self.rows
    }

    pub fn rows_for_phase<'a>(&'a self, phase: &'a str) -> impl Iterator<Item = &'a EpochRow> + 'a {
        self.rows.iter().filter(move |r| r.phase == phase)
    }

    /// JSON of the most recent row, for checkpoint metrics snapshots.
    pub fn snapshot_json(&self) -> String {
        match self.rows.last() {
            Some(row) => serde_json::to_string(row).expect("row serialization"),
            None => "{}".to_string(),
        }
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{METRICS_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.epoch, r.phase, r.phi, r.omega, r.gamma, r.total, r.heldout_loss
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let mut log = MetricsLog::new();
        log.push(EpochRow {
            epoch: 1,
            phase: "pretrain".into(),
            phi: -0.5,
            omega: 0.0,
            gamma: 0.0,
            total: -0.5,
            heldout_loss: 1.25,
        });
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        log.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        assert_eq!(lines.next().unwrap(), "1,pretrain,-0.5,0,0,-0.5,1.25");
    }
}
