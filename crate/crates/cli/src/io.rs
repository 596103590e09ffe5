//! CSV columns and matrices, the binary tensor format, and file checksums.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn parse_value(path: &Path, row: usize, field: &str) -> CliResult<f64> {
    let v: f64 = field.trim().parse().map_err(|_| {
        CliError::input(format!(
            "{}: row {row}: cannot parse {field:?} as a number",
            path.display()
        ))
    })?;
    if !v.is_finite() {
        return Err(CliError::input(format!(
            "{}: row {row}: non-finite value {field}",
            path.display()
        )));
    }
    Ok(v)
}

fn reader(path: &Path) -> CliResult<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

/// Reads a single-column CSV whose header must be `name`.
pub fn read_column(path: &Path, name: &str) -> CliResult<Vec<f64>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.len() != 1 || &headers[0] != name {
        return Err(CliError::input(format!(
            "{}: expected a single column named {name:?}, found header {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        out.push(parse_value(path, i + 1, &rec[0])?);
    }
    Ok(out)
}

pub fn write_column(path: &Path, name: &str, values: &[f64]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let io = |e: csv::Error| csv_err(path, e);
    w.write_record([name]).map_err(io)?;
    for v in values {
        w.write_record([v.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Header `prefix1, …, prefixd`.
pub fn matrix_header(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

/// Reads an `m × d` matrix whose header must be `prefix1..prefixd`.
pub fn read_matrix(path: &Path, prefix: &str) -> CliResult<DMatrix<f64>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let d = headers.len();
    if d == 0 || headers.iter().ne(matrix_header(prefix, d).iter().map(String::as_str)) {
        return Err(CliError::input(format!(
            "{}: expected header {prefix}1..{prefix}{d}, found {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for field in rec.iter() {
            values.push(parse_value(path, i + 1, field)?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, d, &values))
}

pub fn write_matrix(path: &Path, prefix: &str, m: &DMatrix<f64>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let io = |e: csv::Error| csv_err(path, e);
    w.write_record(matrix_header(prefix, m.ncols())).map_err(io)?;
    for r in 0..m.nrows() {
        w.write_record(m.row(r).iter().map(|v| v.to_string()))
            .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Magic bytes opening every tensor file.
pub const TENSOR_MAGIC: &[u8; 4] = b"MRLN";
pub const TENSOR_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Channels × trials × time samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub channels: usize,
    pub trials: usize,
    pub length: usize,
    pub values: Vec<f64>,
}

impl TensorFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        for dim in [self.channels, self.trials, self.length] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
            return Err("not a tensor file: bad magic bytes (expected \"MRLN\")".into());
        }
        if bytes.len() < HEADER_LEN {
            return Err(format!(
                "truncated tensor header: {} bytes, need {HEADER_LEN}",
                bytes.len()
            ));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != TENSOR_VERSION {
            return Err(format!(
                "unsupported tensor format version {version} (expected {TENSOR_VERSION})"
            ));
        }
        let (d, m, n) = (word(8) as usize, word(12) as usize, word(16) as usize);
        let expected = d
            .checked_mul(m)
            .and_then(|x| x.checked_mul(n))
            .and_then(|x| x.checked_mul(8))
            .and_then(|x| x.checked_add(HEADER_LEN));
        if expected != Some(bytes.len()) {
            return Err(format!(
                "tensor size mismatch: header says {d}×{m}×{n}, so {} bytes, but file has {}",
                expected.map_or_else(|| "overflowing".to_string(), |e| e.to_string()),
                bytes.len()
            ));
        }
        let values: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(format!("non-finite tensor value at flat index {i}"));
        }
        Ok(Self {
            channels: d,
            trials: m,
            length: n,
            values,
        })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }
}
