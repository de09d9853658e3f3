//! CSV reading and writing for datasets and numeric tables.
//!
//! Files carry a header row. Floats are written with 17 significant digits so
//! that a save/load round trip is exact.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::datasets::Dataset;
use crate::error::{Error, Result};

/// Formats `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    /// Name of the response column; the first column when `None`.
    pub response_column: Option<String>,
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, opts)
}

/// Parses a dataset. Row numbers in errors count data rows from 1 (the
/// header is row 0); columns count from 1.
pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let width = header.len();
    if width < 2 {
        return Err(Error::Parse {
            row: 0,
            col: width,
            msg: "need a response column and at least one predictor".into(),
        });
    }
    let response_idx = match &opts.response_column {
        None => 0,
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                row: 0,
                col: 0,
                msg: format!("no column named {name:?}"),
            })?,
    };

    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != width {
            return Err(Error::Parse {
                row,
                col: rec.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::Parse {
                    row,
                    col: j + 1,
                    msg: "missing value".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                col: j + 1,
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    col: j + 1,
                    msg: "non-finite value".into(),
                });
            }
            values.push(v);
        }
        rows += 1;
    }

    let p = width - 1;
    let y = DVector::from_iterator(rows, (0..rows).map(|i| values[i * width + response_idx]));
    let x = DMatrix::from_fn(rows, p, |i, j| {
        let col = if j < response_idx { j } else { j + 1 };
        values[i * width + col]
    });
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != response_idx)
        .map(|(_, h)| h.clone())
        .collect();
    Dataset::with_names(y, x, header[response_idx].clone(), names)
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(ds, file)
}

/// Writes the response first, then the predictors, in the dataset's units.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut header = vec![ds.response_name().to_string()];
    header.extend(ds.predictor_names().iter().cloned());
    let rows = (0..ds.n()).map(|i| {
        std::iter::once(ds.y()[i])
            .chain(ds.x().row(i).iter().copied())
            .collect::<Vec<f64>>()
    });
    write_table(writer, &header, rows)
}

/// Writes a numeric table with a header.
pub fn write_table<W, I>(writer: W, header: &[String], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}
