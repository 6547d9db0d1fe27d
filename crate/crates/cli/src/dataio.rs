//! Datasets, plain matrices and text side files.
//!
//! A dataset file is either a 3-D `.mbgl` array of shape p×n×m (variable
//! fastest, then location, then realization) or a CSV whose header is
//! `realization,location,<name_1>,...,<name_p>` with one row per
//! (realization, location) pair, both counted from 1. Any other path ending
//! in `.csv` holding a matrix is plain numbers without a header.

use std::fs;
use std::path::Path;

use mbgl_core::model::default_names;
use mbgl_core::{DMatrix, Dataset};

use crate::error::{CliError, FormatError};
use crate::matfile::MatrixFile;

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::format(path, FormatError::Shape(format!("{other:?}"))),
    }
}

fn parse_num(path: &Path, row: usize, field: &str) -> Result<f64, CliError> {
    field.trim().parse::<f64>().map_err(|_| {
        CliError::format(
            path,
            FormatError::Shape(format!("row {row}: not a number: {field:?}")),
        )
    })
}

/// Reads a 2-D matrix from `.mbgl` or headerless numeric CSV.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    if !is_csv(path) {
        return MatrixFile::read(path)?
            .to_matrix()
            .map_err(|e| CliError::format(path, e));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        rows.push(
            rec.iter()
                .map(|f| parse_num(path, r + 1, f))
                .collect::<Result<_, _>>()?,
        );
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(CliError::format(
            path,
            FormatError::Shape("empty matrix".into()),
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), CliError> {
    if !is_csv(path) {
        return MatrixFile::from_matrix(m).write(path);
    }
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_names(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn names_text(names: &[String]) -> String {
    names.iter().map(|n| format!("{n}\n")).collect()
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Raw values, shape and names as stored in a dataset file.
pub struct RawData {
    pub p: usize,
    pub n: usize,
    pub m: usize,
    pub values: Vec<f64>,
    pub names: Option<Vec<String>>,
}

pub fn read_raw(path: &Path) -> Result<RawData, CliError> {
    if !is_csv(path) {
        let f = MatrixFile::read(path)?;
        let [p, n, m] = f.dims()[..] else {
            return Err(CliError::format(
                path,
                FormatError::Shape(format!(
                    "dataset must be 3-D p×n×m, got dims {:?}",
                    f.dims()
                )),
            ));
        };
        return Ok(RawData {
            p,
            n,
            m,
            values: f.into_data(),
            names: None,
        });
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let shape_err = |msg: String| CliError::format(path, FormatError::Shape(msg));
    if header.len() < 3
        || !header[0].trim().eq_ignore_ascii_case("realization")
        || !header[1].trim().eq_ignore_ascii_case("location")
    {
        return Err(shape_err(
            "dataset CSV header must be realization,location,<variable names...>".into(),
        ));
    }
    let names: Vec<String> = header
        .iter()
        .skip(2)
        .map(|s| s.trim().to_string())
        .collect();
    let p = names.len();
    let mut rows = Vec::new();
    let (mut n, mut m) = (0usize, 0usize);
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = k + 2;
        let idx = |f: &str| -> Result<usize, CliError> {
            match f.trim().parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(shape_err(format!(
                    "row {row}: index must be a positive integer, got {f:?}"
                ))),
            }
        };
        let (r, s) = (idx(&rec[0])?, idx(&rec[1])?);
        let vals = rec
            .iter()
            .skip(2)
            .map(|f| parse_num(path, row, f))
            .collect::<Result<Vec<_>, _>>()?;
        m = m.max(r + 1);
        n = n.max(s + 1);
        rows.push((r, s, vals));
    }
    if rows.len() != n * m {
        return Err(shape_err(format!(
            "expected one row per (realization, location) pair: {m}×{n} = {} rows, got {}",
            n * m,
            rows.len()
        )));
    }
    let mut values = vec![f64::NAN; p * n * m];
    let mut seen = vec![false; n * m];
    for (r, s, vals) in rows {
        if std::mem::replace(&mut seen[s + n * r], true) {
            return Err(shape_err(format!(
                "duplicate row for realization {} location {}",
                r + 1,
                s + 1
            )));
        }
        values[p * (s + n * r)..p * (s + n * r + 1)].copy_from_slice(&vals);
    }
    Ok(RawData {
        p,
        n,
        m,
        values,
        names: Some(names),
    })
}

/// Loads a dataset, taking names from `names` or the CSV header, and
/// coordinates from `locations` (default: location index).
pub fn read_dataset(
    path: &Path,
    names: Option<&Path>,
    locations: Option<&Path>,
) -> Result<Dataset, CliError> {
    let raw = read_raw(path)?;
    let names = match names {
        Some(f) => read_names(f)?,
        None => raw.names.unwrap_or_else(|| default_names(raw.p)),
    };
    let locations = match locations {
        Some(f) => read_matrix(f)?,
        None => DMatrix::from_fn(raw.n, 1, |s, _| s as f64),
    };
    Ok(Dataset::new(
        raw.p, raw.n, raw.m, raw.values, locations, names,
    )?)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let (p, n, m) = (data.n_vars(), data.n_locations(), data.n_realizations());
    if !is_csv(path) {
        return MatrixFile::new(vec![p, n, m], data.values().to_vec())
            .map_err(|e| CliError::format(path, e))?
            .write(path);
    }
    let mut out = String::from("realization,location");
    for name in data.variable_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for r in 0..m {
        for s in 0..n {
            out.push_str(&format!("{},{}", r + 1, s + 1));
            for v in 0..p {
                out.push_str(&format!(",{}", data.get(v, s, r)));
            }
            out.push('\n');
        }
    }
    write_text(path, &out)
}
