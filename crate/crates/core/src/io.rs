//! Matrix and vector files.
//!
//! Binary layout (`CSOTMAT1`): the 8 ASCII magic bytes, `rows` and `cols` as
//! little-endian `u64`, then `rows·cols` little-endian binary64 values in
//! row-major order. CSV has no header, one matrix row per line, and cells
//! written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const MAGIC: &[u8; 8] = b"CSOTMAT1";
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    /// `.csv` files are text, everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Binary,
        }
    }
}

pub fn encode_binary(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic(format!("expected CSOTMAT1, found {:?}", String::from_utf8_lossy(&bytes[..8]))));
    }
    let read_u64 = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"));
    let (rows, cols) = (read_u64(8), read_u64(16));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::BadMagic(format!("header declares an oversized {rows}x{cols} matrix")))?;
    if bytes.len() != expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    DenseMatrix::new(rows as usize, cols as usize, values)
}

pub fn encode_csv(m: &DenseMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

/// Parses CSV text; `path` is only used in error messages.
pub fn decode_csv(text: &str, path: &Path) -> Result<DenseMatrix> {
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for cell in line.split(',') {
            let cell = cell.trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(lineno, format!("non-numeric cell {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite cell {cell:?}")));
            }
            values.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(parse_err(lineno, format!("ragged row: {count} cells, expected {c}")));
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(0, "empty matrix file".into()))?;
    DenseMatrix::new(rows, cols, values)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn load_matrix(path: impl AsRef<Path>, format: MatrixFormat) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let bytes = read(path)?;
    match format {
        MatrixFormat::Binary => decode_binary(&bytes),
        MatrixFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "file is not valid UTF-8".into(),
            })?;
            decode_csv(&text, path)
        }
    }
}

pub fn encode(m: &DenseMatrix, format: MatrixFormat) -> Vec<u8> {
    match format {
        MatrixFormat::Binary => encode_binary(m),
        MatrixFormat::Csv => encode_csv(m).into_bytes(),
    }
}

pub fn save_matrix(path: impl AsRef<Path>, m: &DenseMatrix, format: MatrixFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(m, format)).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Reads a vector stored as a single CSV row or a single CSV column.
pub fn load_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let m = load_matrix(path, MatrixFormat::from_path(path))?;
    if m.rows() != 1 && m.cols() != 1 {
        return Err(Error::dim(format!(
            "{}: expected a single row or column, got {}x{}",
            path.display(),
            m.rows(),
            m.cols()
        )));
    }
    Ok(m.into_vec())
}

/// Reads class indices, comma- or newline-separated.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = String::from_utf8(read(path)?).map_err(|_| Error::Parse {
        path: PathBuf::from(path),
        line: 0,
        message: "file is not valid UTF-8".into(),
    })?;
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        for cell in line.split(',').map(str::trim).filter(|c| !c.is_empty()) {
            labels.push(cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("{cell:?} is not a class index"),
            })?);
        }
    }
    Ok(labels)
}

pub fn encode_labels(labels: &[usize]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}
