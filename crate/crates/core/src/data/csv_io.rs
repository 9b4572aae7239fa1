//! CSV datasets.
//!
//! One example per row, comma separated, UTF-8, LF or CRLF line endings.
//! The first row is treated as a header when any of its cells is not a
//! number. Reals are written in plain decimal notation using the shortest
//! representation that parses back to the same `f64` (at most 17
//! significant digits).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Where the integer class label lives in a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    /// Header name; requires a header row.
    Name(String),
    /// Zero-based column index.
    Index(usize),
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// Digits select a column index, anything else a header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

/// Decimal text for `v` that parses back bit-exactly.
pub fn format_real(v: f64) -> String {
    // Display never switches to exponent notation and emits the shortest
    // round-tripping digits.
    format!("{v}")
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Reads a labeled dataset.
pub fn load_csv(path: impl AsRef<Path>, label_column: &LabelColumn, class_count: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let mut records = reader.records().enumerate().peekable();

    let mut label_idx = match label_column {
        LabelColumn::Index(i) => Some(*i),
        LabelColumn::Name(_) => None,
    };
    let mut width = None;
    if let Some((_, Ok(first))) = records.peek() {
        let is_header = first.iter().any(|cell| cell.parse::<f64>().is_err());
        if is_header {
            if let LabelColumn::Name(name) = label_column {
                label_idx = Some(first.iter().position(|c| c == name).ok_or_else(|| {
                    Error::Ingest {
                        row: 1,
                        reason: format!("header has no column named {name:?}"),
                    }
                })?);
            }
            width = Some(first.len());
            records.next();
        }
    }
    let label_idx = label_idx.ok_or_else(|| Error::Ingest {
        row: 1,
        reason: "label column given by name but the file has no header".into(),
    })?;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in records {
        let row = i + 1;
        let record = record.map_err(|e| Error::Ingest {
            row,
            reason: e.to_string(),
        })?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Ingest {
                row,
                reason: format!("{} cells, expected {w}", record.len()),
            });
        }
        if label_idx >= w {
            return Err(Error::Ingest {
                row,
                reason: format!("label column {label_idx} beyond {w} cells"),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_idx {
                let label: usize = cell.parse().map_err(|_| Error::Ingest {
                    row,
                    reason: format!("label {cell:?} is not a non-negative integer"),
                })?;
                if label >= class_count {
                    return Err(Error::Ingest {
                        row,
                        reason: format!("label {label} out of range for {class_count} classes"),
                    });
                }
                labels.push(label);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Ingest {
                    row,
                    reason: format!("cell {c} ({cell:?}) is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingest {
                        row,
                        reason: format!("cell {c} is not finite"),
                    });
                }
                data.push(v);
            }
        }
    }
    let dim = width.map_or(0, |w| w.saturating_sub(1));
    let features = Matrix::new(labels.len(), dim, data)?;
    Dataset::labeled(features, labels, class_count)
}

/// Reads an unlabeled numeric matrix (header optional).
pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Ingest {
            row,
            reason: e.to_string(),
        })?;
        if i == 0 && record.iter().any(|c| c.parse::<f64>().is_err()) {
            width = Some(record.len());
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Ingest {
                row,
                reason: format!("{} cells, expected {w}", record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Ingest {
                row,
                reason: format!("cell {c} ({cell:?}) is not a number"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Matrix::new(rows, width.unwrap_or(0), data)
}

/// Writes a numeric matrix with a `prefix0,prefix1,...` header.
pub fn save_matrix_csv(path: impl AsRef<Path>, m: &Matrix, prefix: &str) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header: Vec<String> = (0..m.cols()).map(|c| format!("{prefix}{c}")).collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| format_real(v)).collect();
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes features `f0..f{D-1}` and, when present, a trailing `label` column.
pub fn save_csv(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header: Vec<String> = (0..dataset.dim()).map(|c| format!("f{c}")).collect();
    if dataset.hard_labels.is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (r, row) in dataset.features.row_iter().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|&v| format_real(v)).collect();
        if let Some(labels) = &dataset.hard_labels {
            cells.push(labels[r].to_string());
        }
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}
