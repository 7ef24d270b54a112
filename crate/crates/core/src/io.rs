//! Text formats.
//!
//! * Observed entries: a header line `n_rows n_cols n_entries`, then one
//!   `i j value` line per entry, 1-based.
//! * Dense matrices: CSV, one matrix row per line, no header.
//! * Query logs: CSV with header `i,j,value,sequence_number`, 1-based.
//!
//! Numbers are written in shortest round-trip form, so reading a file back
//! gives bit-identical values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, ObservedMatrix};
use crate::oracle::Query;

/// Shortest decimal text that parses back to exactly `v`.
pub fn format_value(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| parse_error(line, format!("invalid {what} {field:?}")))
}

pub fn read_observed(reader: impl Read) -> Result<ObservedMatrix> {
    let mut lines = BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let (header_line, header) = match lines.next() {
        Some((n, l)) => (n, l?),
        None => return Err(parse_error(1, "missing header `n_rows n_cols n_entries`")),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_error(header_line, "header must be `n_rows n_cols n_entries`"));
    }
    let n_rows: usize = parse_field(fields[0], header_line, "row count")?;
    let n_cols: usize = parse_field(fields[1], header_line, "column count")?;
    let n_entries: usize = parse_field(fields[2], header_line, "entry count")?;
    let mut obs = ObservedMatrix::empty(n_rows, n_cols)
        .map_err(|e| parse_error(header_line, e.to_string()))?;
    let mut last_line = header_line;
    for (line, text) in lines {
        let text = text?;
        last_line = line;
        if obs.len() == n_entries {
            return Err(parse_error(
                line,
                format!("more entries than the {n_entries} declared in the header"),
            ));
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_error(line, "expected `i j value`"));
        }
        let i: usize = parse_field(fields[0], line, "row index")?;
        let j: usize = parse_field(fields[1], line, "column index")?;
        let value: f64 = parse_field(fields[2], line, "value")?;
        if i == 0 || j == 0 {
            return Err(parse_error(line, "indices are 1-based"));
        }
        obs.insert(i - 1, j - 1, value)
            .map_err(|e| parse_error(line, e.to_string()))?;
    }
    if obs.len() != n_entries {
        return Err(parse_error(
            last_line,
            format!("header declares {n_entries} entries but {} were found", obs.len()),
        ));
    }
    Ok(obs)
}

pub fn write_observed(mut writer: impl Write, obs: &ObservedMatrix) -> Result<()> {
    writeln!(writer, "{} {} {}", obs.n_rows(), obs.n_cols(), obs.len())?;
    for ((i, j), v) in obs.iter() {
        writeln!(writer, "{} {} {}", i + 1, j + 1, format_value(v))?;
    }
    Ok(())
}

pub fn load_observed(path: impl AsRef<Path>) -> Result<ObservedMatrix> {
    read_observed(File::open(path)?)
}

pub fn save_observed(path: impl AsRef<Path>, obs: &ObservedMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_observed(&mut w, obs)?;
    w.flush()?;
    Ok(())
}

pub fn read_dense(reader: impl Read) -> Result<DenseMatrix> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut n_cols = None;
    let mut n_rows = 0;
    for record in csv.records() {
        let record = record?;
        let line = record.position().map_or(n_rows + 1, |p| p.line() as usize);
        match n_cols {
            None => n_cols = Some(record.len()),
            Some(n) if n != record.len() => {
                return Err(parse_error(
                    line,
                    format!("row has {} values, expected {n}", record.len()),
                ))
            }
            Some(_) => {}
        }
        for field in record.iter() {
            data.push(parse_field::<f64>(field, line, "value")?);
        }
        n_rows += 1;
    }
    let n_cols = n_cols.ok_or_else(|| parse_error(1, "empty matrix"))?;
    DenseMatrix::from_row_major(n_rows, n_cols, data)
}

pub fn write_dense(mut writer: impl Write, m: &DenseMatrix) -> Result<()> {
    for i in 0..m.n_rows() {
        let row: Vec<String> = (0..m.n_cols()).map(|j| format_value(m.get(i, j))).collect();
        writeln!(writer, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn load_dense(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    read_dense(File::open(path)?)
}

pub fn save_dense(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dense(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn write_query_log(mut writer: impl Write, queries: &[Query]) -> Result<()> {
    writeln!(writer, "i,j,value,sequence_number")?;
    for (k, q) in queries.iter().enumerate() {
        writeln!(writer, "{},{},{},{}", q.row + 1, q.col + 1, format_value(q.value), k + 1)?;
    }
    Ok(())
}

/// Reads a query log back, checking that sequence numbers run 1, 2, ...
pub fn read_query_log(reader: impl Read) -> Result<Vec<Query>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for record in csv.records() {
        let record = record?;
        let line = record.position().map_or(out.len() + 2, |p| p.line() as usize);
        if record.len() != 4 {
            return Err(parse_error(line, "expected `i,j,value,sequence_number`"));
        }
        let i: usize = parse_field(&record[0], line, "row index")?;
        let j: usize = parse_field(&record[1], line, "column index")?;
        let value: f64 = parse_field(&record[2], line, "value")?;
        let seq: usize = parse_field(&record[3], line, "sequence number")?;
        if i == 0 || j == 0 {
            return Err(parse_error(line, "indices are 1-based"));
        }
        if seq != out.len() + 1 {
            return Err(parse_error(line, format!("sequence number {seq} out of order")));
        }
        out.push(Query {
            row: i - 1,
            col: j - 1,
            value,
        });
    }
    Ok(out)
}

pub fn save_query_log(path: impl AsRef<Path>, queries: &[Query]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_query_log(&mut w, queries)?;
    w.flush()?;
    Ok(())
}
