//! CSV helpers shared by the artifact readers and writers.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

/// Reads the named numeric columns, in the requested order.
pub fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    read_columns_from(file, names).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_columns_from(reader: impl std::io::Read, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| Error::Parse(format!("missing column `{n}`")))
        })
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        for (c, &i) in idx.iter().enumerate() {
            let field = rec.get(i).unwrap_or("");
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!("row {}: `{field}` is not a number", line + 1))
            })?;
            cols[c].push(v);
        }
    }
    Ok(cols)
}

/// Reads every column of a numeric CSV, returning the header and rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::Parse(format!(
                        "{}: row {}: `{f}` is not a number",
                        path.display(),
                        line + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((headers, rows))
}

pub fn write_rows<I, R>(path: &Path, headers: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut file = File::create(path)?;
    write_rows_to(&mut file, headers, rows)?;
    file.flush()?;
    Ok(())
}

pub fn write_rows_to<W, I, R>(writer: W, headers: &[&str], rows: I) -> Result<()>
where
    W: std::io::Write,
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut wtr = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    wtr.write_record(headers).map_err(io)?;
    for row in rows {
        wtr.write_record(row).map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Shortest representation that round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
