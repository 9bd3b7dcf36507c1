//! CSV ingestion.
//!
//! Files have a header row `f0,…,f{d-1},target` for regression or
//! `f0,…,f{d-1},label` for classification, with integer labels.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use drago_core::model::{DatasetMatrix, Labels};

use crate::error::{BenchError, Result};

enum Task {
    Regression,
    Classification,
}

/// Reads a dataset file. `classes` fixes the class count for classification
/// files; by default it is one more than the largest label.
pub fn load_dataset(path: &Path, standardize: bool, classes: Option<usize>) -> Result<DatasetMatrix> {
    let file = File::open(path).map_err(|e| BenchError::Config(format!("cannot open {}: {e}", path.display())))?;
    read_dataset(file, &path.display().to_string(), standardize, classes)
}

pub fn read_dataset<R: Read>(reader: R, name: &str, standardize: bool, classes: Option<usize>) -> Result<DatasetMatrix> {
    let parse_err = |line: usize, msg: String| BenchError::Parse { path: name.to_string(), line, msg };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.len() < 2 {
        return Err(parse_err(1, "expected at least one feature column and a target column".into()));
    }
    let d = header.len() - 1;
    for (j, h) in header.iter().take(d).enumerate() {
        if h != format!("f{j}") {
            return Err(parse_err(1, format!("column {} should be named f{j}, found {h:?}", j + 1)));
        }
    }
    let task = match &header[d] {
        "target" => Task::Regression,
        "label" => Task::Classification,
        other => return Err(parse_err(1, format!("last column must be `target` or `label`, found {other:?}"))),
    };

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != d + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", d + 1, record.len())));
        }
        for (j, cell) in record.iter().take(d).enumerate() {
            let v: f64 = cell.parse().map_err(|_| parse_err(line, format!("f{j}: {cell:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("f{j}: non-finite value {cell:?}")));
            }
            x.push(v);
        }
        let cell = &record[d];
        match task {
            Task::Regression => {
                let v: f64 = cell.parse().map_err(|_| parse_err(line, format!("target: {cell:?} is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(line, format!("target: non-finite value {cell:?}")));
                }
                y.push(v);
            }
            Task::Classification => {
                let c: usize = cell
                    .parse()
                    .map_err(|_| parse_err(line, format!("label: {cell:?} is not a nonnegative integer")))?;
                if let Some(k) = classes {
                    if c >= k {
                        return Err(parse_err(line, format!("label {c} out of range for {k} classes")));
                    }
                }
                labels.push(c);
            }
        }
    }
    let n = x.len() / d;
    if n == 0 {
        return Err(parse_err(2, "no data rows".into()));
    }
    if standardize {
        standardize_columns(&mut x, n, d);
    }
    let data = match task {
        Task::Regression => DatasetMatrix::regression(x, n, d, y)?,
        Task::Classification => {
            let k = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
            DatasetMatrix::classification(x, n, d, labels, k)?
        }
    };
    Ok(data)
}

/// Centers each column and scales it to unit population variance. Constant
/// columns become zero.
pub fn standardize_columns(x: &mut [f64], n: usize, d: usize) {
    for j in 0..d {
        let col = || (0..n).map(|i| i * d + j);
        let first = x[j];
        if col().all(|k| x[k] == first) {
            col().for_each(|k| x[k] = 0.0);
            continue;
        }
        let mean = col().map(|k| x[k]).sum::<f64>() / n as f64;
        col().for_each(|k| x[k] -= mean);
        // second centering pass removes the rounding left by the first
        let drift = col().map(|k| x[k]).sum::<f64>() / n as f64;
        col().for_each(|k| x[k] -= drift);
        let var = col().map(|k| x[k] * x[k]).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        col().for_each(|k| x[k] /= sd);
    }
}

/// Writes a dataset in the format read by [`load_dataset`].
pub fn write_dataset<W: Write>(data: &DatasetMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = data.d();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.push(match data.labels() {
        Labels::Real(_) => "target".into(),
        Labels::Class { .. } => "label".into(),
    });
    w.write_record(&header).map_err(csv_io)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(match data.labels() {
            Labels::Real(y) => format!("{:?}", y[i]),
            Labels::Class { labels, .. } => labels[i].to_string(),
        });
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> BenchError {
    BenchError::Io(std::io::Error::other(e))
}
