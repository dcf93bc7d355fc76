//! Append-only per-epoch metrics log (CSV).

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pruning::EpochMetrics;

pub const COLUMNS: [&str; 6] = ["epoch", "train_loss", "test_error", "sparsity", "lr", "seconds"];
pub const VALIDATION_COLUMN: &str = "val_error";

pub struct MetricsLog {
    path: PathBuf,
    writer: csv::Writer<File>,
    validation: bool,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

impl MetricsLog {
    /// Starts a new log, replacing any file at `path`.
    pub fn create(path: impl AsRef<Path>, validation: bool) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        let mut header: Vec<&str> = COLUMNS.to_vec();
        if validation {
            header.push(VALIDATION_COLUMN);
        }
        writer.write_record(&header).map_err(|e| csv_err(&path, e))?;
        writer.flush().map_err(|e| Error::io(&path, e))?;
        Ok(MetricsLog { path, writer, validation })
    }

    /// Continues an existing log (used when resuming from a checkpoint).
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let header = csv::Reader::from_path(&path)
            .and_then(|mut r| r.headers().cloned())
            .map_err(|e| csv_err(&path, e))?;
        let validation = header.iter().any(|h| h == VALIDATION_COLUMN);
        let file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        Ok(MetricsLog { path, writer, validation })
    }

    pub fn record(&mut self, m: &EpochMetrics) -> Result<()> {
        let mut row = vec![
            m.epoch.to_string(),
            m.train_loss.to_string(),
            m.test_error.to_string(),
            m.sparsity.to_string(),
            m.lr.to_string(),
            format!("{:.3}", m.seconds),
        ];
        if self.validation {
            row.push(m.validation_error.map(|v| v.to_string()).unwrap_or_default());
        }
        self.writer.write_record(&row).map_err(|e| csv_err(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// One parsed row of a metrics log.
#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_error: f64,
    pub sparsity: f64,
    pub lr: f32,
    pub seconds: f64,
    #[serde(default)]
    pub val_error: Option<f64>,
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| csv_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(epoch: usize) -> EpochMetrics {
        EpochMetrics {
            epoch,
            train_loss: 0.25,
            test_error: 1.5,
            validation_error: Some(2.0),
            sparsity: 0.9,
            kept: vec![],
            lr: 0.05,
            seconds: 1.23456,
        }
    }

    #[test]
    fn write_append_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut log = MetricsLog::create(&path, false).unwrap();
        log.record(&metrics(1)).unwrap();
        drop(log);
        let mut log = MetricsLog::append(&path).unwrap();
        log.record(&metrics(2)).unwrap();
        drop(log);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,train_loss,test_error,sparsity,lr,seconds\n"));
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].epoch, 2);
        assert_eq!(rows[0].test_error, 1.5);
        assert_eq!(rows[0].seconds, 1.235);
        assert_eq!(rows[0].val_error, None);
    }

    #[test]
    fn optional_validation_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut log = MetricsLog::create(&path, true).unwrap();
        log.record(&metrics(1)).unwrap();
        assert_eq!(read_metrics(&path).unwrap()[0].val_error, Some(2.0));
    }
}
