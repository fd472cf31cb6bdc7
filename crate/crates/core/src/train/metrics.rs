use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsd::PhaseKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub phase: PhaseKind,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_error: f64,
    /// Zero fraction of every conv weight tensor at epoch end.
    pub sparsity: Vec<f64>,
}

pub fn metrics_header(num_conv: usize) -> String {
    let mut h = String::from("epoch,phase,lr,train_loss,val_error");
    for l in 0..num_conv {
        h.push_str(&format!(",sparsity_l{l}"));
    }
    h
}

/// Floats use Rust's shortest round-trip formatting so that parsing a row
/// gives back the exact values.
pub fn metrics_row(m: &EpochMetrics) -> String {
    let mut row = format!(
        "{},{},{},{},{}",
        m.epoch,
        m.phase.as_str(),
        m.lr,
        m.train_loss,
        m.val_error
    );
    for s in &m.sparsity {
        row.push_str(&format!(",{s}"));
    }
    row
}

/// Append-only per-epoch CSV log.
pub struct MetricsLog {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl MetricsLog {
    pub fn create(path: &Path, num_conv: usize) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut log = Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        log.write_line(&metrics_header(num_conv))?;
        Ok(log)
    }

    pub fn open_append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        self.write_line(&metrics_row(m))
    }
}

pub fn write_metrics_csv(path: &Path, num_conv: usize, history: &[EpochMetrics]) -> Result<()> {
    let mut log = MetricsLog::create(path, num_conv)?;
    history.iter().try_for_each(|m| log.append(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_round_trips_floats() {
        let m = EpochMetrics {
            epoch: 3,
            phase: PhaseKind::Sparse,
            lr: 1e-3,
            train_loss: 0.1 + 0.2,
            val_error: 1.0 / 3.0,
            sparsity: vec![0.0, 21.0 / 72.0],
        };
        let row = metrics_row(&m);
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[1], "sparse");
        assert_eq!(fields[3].parse::<f64>().unwrap(), m.train_loss);
        assert_eq!(fields[6].parse::<f64>().unwrap(), 21.0 / 72.0);
        assert_eq!(
            metrics_header(2),
            "epoch,phase,lr,train_loss,val_error,sparsity_l0,sparsity_l1"
        );
    }
}
