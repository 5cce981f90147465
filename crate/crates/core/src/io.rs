//! Matrix files and event-log CSV.
//!
//! Text matrices are CSV rows of hexadecimal codes (an optional `0x` prefix is
//! accepted; blank lines and lines starting with `#` are skipped). Binary
//! matrices start with two little-endian `u32`s (rows, cols) followed by the
//! codes in row-major order, each stored little-endian in the format's width
//! rounded up to whole bytes.

use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::engine::PipelineEvent;
use crate::fp::FpFormat;
use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("binary matrix: {0}")]
    Binary(String),
    #[error("matrix file has no rows")]
    Empty,
}

fn parse_code(field: &str, fmt: FpFormat) -> Result<u32, String> {
    let t = field.trim();
    let digits = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
    let v = u32::from_str_radix(digits, 16).map_err(|_| format!("`{t}` is not a hexadecimal code"))?;
    if fmt.width() < 32 && v >> fmt.width() != 0 {
        return Err(format!("code {t} does not fit in {} bits ({fmt})", fmt.width()));
    }
    Ok(v)
}

pub fn read_matrix_text(reader: impl BufRead, fmt: FpFormat) -> Result<Matrix<u32>, IoError> {
    let mut rows: Vec<Vec<u32>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let err = |msg| IoError::Parse { line: i + 1, msg };
        let row = t.split(',').map(|f| parse_code(f, fmt)).collect::<Result<Vec<_>, _>>().map_err(err)?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(err(format!("expected {} values, found {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::Empty);
    }
    Ok(Matrix::from_rows(rows).expect("row lengths checked"))
}

pub fn write_matrix_text(mut w: impl Write, m: &Matrix<u32>, fmt: FpFormat) -> std::io::Result<()> {
    let width = fmt.hex_digits();
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|v| format!("{v:0width$x}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

fn code_bytes(fmt: FpFormat) -> usize {
    fmt.width().div_ceil(8) as usize
}

pub fn read_matrix_binary(bytes: &[u8], fmt: FpFormat) -> Result<Matrix<u32>, IoError> {
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if bytes.len() < 8 {
        return Err(IoError::Binary("shorter than the 8-byte header".into()));
    }
    let (rows, cols) = (u32_at(0) as usize, u32_at(4) as usize);
    if rows == 0 || cols == 0 {
        return Err(IoError::Empty);
    }
    let nb = code_bytes(fmt);
    let expected = rows.checked_mul(cols).and_then(|n| n.checked_mul(nb)).and_then(|n| n.checked_add(8));
    if expected != Some(bytes.len()) {
        return Err(IoError::Binary(format!(
            "{rows}x{cols} {fmt} matrix needs {} bytes, file has {}",
            expected.map_or("too many".to_string(), |n| n.to_string()),
            bytes.len()
        )));
    }
    let data = bytes[8..]
        .chunks_exact(nb)
        .map(|c| c.iter().rev().fold(0u32, |acc, &b| acc << 8 | u32::from(b)))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data).expect("length checked"))
}

pub fn write_matrix_binary(m: &Matrix<u32>, fmt: FpFormat) -> Vec<u8> {
    let nb = code_bytes(fmt);
    let mut out = Vec::with_capacity(8 + m.as_slice().len() * nb);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes()[..nb]);
    }
    out
}

/// Read a matrix file; `.bin` files are binary, anything else is text.
pub fn load_matrix(path: &Path, fmt: FpFormat) -> Result<Matrix<u32>, IoError> {
    let file_err = |source| IoError::File { path: path.display().to_string(), source };
    if path.extension().is_some_and(|e| e == "bin") {
        read_matrix_binary(&std::fs::read(path).map_err(file_err)?, fmt)
    } else {
        let f = std::fs::File::open(path).map_err(file_err)?;
        read_matrix_text(std::io::BufReader::new(f), fmt)
    }
}

pub const TRACE_HEADER: &str = "cycle,row,col,stage,mode";

pub fn write_trace(mut w: impl Write, events: &[PipelineEvent]) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for e in events {
        writeln!(w, "{},{},{},{},{}", e.cycle, e.row, e.col, e.stage.as_str(), e.mode)?;
    }
    Ok(())
}
