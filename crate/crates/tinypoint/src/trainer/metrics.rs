//! Per-epoch metrics records and their CSV rendering.
//!
//! Every training mode emits the same schema so downstream tables can
//! compare runs column-for-column:
//!
//! `epoch,split,ce_tiny,ce_aug,kd,hint,total,oa,lr,beta,alpha,selection`
//!
//! `ce_tiny` is the cross-entropy of the deliverable model (the tiny
//! network, or the full network in teacher runs); `ce_aug` the auxiliary
//! co-trained branch; `kd`/`hint` the distillation components; `total` the
//! mode's documented combination of the former. Test rows carry the
//! evaluation cross-entropy in `ce_tiny` (total equals it) plus overall
//! accuracy.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,split,ce_tiny,ce_aug,kd,hint,total,oa,lr,beta,alpha,selection";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub split: Split,
    pub ce_tiny: f64,
    pub ce_aug: f64,
    pub kd: f64,
    pub hint: f64,
    pub total: f64,
    pub oa: f64,
    pub lr: f64,
    pub beta: f64,
    pub alpha: f64,
    pub selection: String,
}

impl EpochMetrics {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
            self.epoch,
            self.split.name(),
            self.ce_tiny,
            self.ce_aug,
            self.kd,
            self.hint,
            self.total,
            self.oa,
            self.lr,
            self.beta,
            self.alpha,
            self.selection
        )
    }

    pub fn parse_csv_row(line: &str, lineno: usize) -> Result<EpochMetrics> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 12 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 12 metric fields, got {}", parts.len()),
            });
        }
        let num = |idx: usize, what: &str| -> Result<f64> {
            parts[idx].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad {what} '{}'", parts[idx]),
            })
        };
        let split = match parts[1] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("unknown split '{other}'"),
                })
            }
        };
        Ok(EpochMetrics {
            epoch: parts[0].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad epoch '{}'", parts[0]),
            })?,
            split,
            ce_tiny: num(2, "ce_tiny")?,
            ce_aug: num(3, "ce_aug")?,
            kd: num(4, "kd")?,
            hint: num(5, "hint")?,
            total: num(6, "total")?,
            oa: num(7, "oa")?,
            lr: num(8, "lr")?,
            beta: num(9, "beta")?,
            alpha: num(10, "alpha")?,
            selection: parts[11].to_string(),
        })
    }
}

/// Parse a whole metrics CSV (header validated).
pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected metrics header '{h}'"),
            })
        }
        None => return Err(Error::Parse { line: 1, message: "empty metrics file".to_string() }),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| EpochMetrics::parse_csv_row(l, i + 1))
        .collect()
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text)
}

/// Streaming CSV writer: header on creation, one row per record, flushed so
/// partial logs survive aborts.
pub struct MetricsWriter {
    file: std::fs::File,
    path: PathBuf,
    rows: Vec<EpochMetrics>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{CSV_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter { file, path: path.to_path_buf(), rows: Vec::new() })
    }

    pub fn log(&mut self, m: EpochMetrics) -> Result<()> {
        writeln!(self.file, "{}", m.to_csv_row()).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        self.rows.push(m);
        Ok(())
    }

    pub fn rows(&self) -> &[EpochMetrics] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<EpochMetrics> {
        self.rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(epoch: u32, split: Split) -> EpochMetrics {
        EpochMetrics {
            epoch,
            split,
            ce_tiny: 1.25,
            ce_aug: 0.5,
            kd: 0.125,
            hint: 0.0,
            total: 0.9375,
            oa: 0.8125,
            lr: 0.001,
            beta: 0.9,
            alpha: 0.5,
            selection: "4-8-16".to_string(),
        }
    }

    #[test]
    fn row_round_trip() {
        let m = sample(3, Split::Train);
        let row = m.to_csv_row();
        let back = EpochMetrics::parse_csv_row(&row, 2).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn file_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        w.log(sample(0, Split::Train)).unwrap();
        w.log(sample(0, Split::Test)).unwrap();
        let rows = w.into_rows();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        let back = parse_metrics_csv(&text).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_metrics_csv("").is_err());
        assert!(parse_metrics_csv("epoch,split\n").is_err());
        let bad = format!("{CSV_HEADER}\n0,train,1,2,3\n");
        match parse_metrics_csv(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad = format!("{CSV_HEADER}\n0,validation,0,0,0,0,0,0,0,0,0,x\n");
        assert!(parse_metrics_csv(&bad).is_err());
    }
}
