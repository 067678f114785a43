//! Triplet import/export for coupling matrices.
//!
//! Text form: a header line `%%rfim-triplets <n> <count>` followed by one
//! `i j value` line per upper-triangle nonzero. Values are written in the
//! shortest form that parses back to the same bits. Binary form: the magic
//! `RFIMTRI1`, then little-endian `u64 n`, `u64 count` and `count` records of
//! `(u64 i, u64 j, f64 value)`. A JSON sidecar records how the matrix was made.

use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CouplingError, CouplingMatrix};

const MAGIC: &[u8; 8] = b"RFIMTRI1";
const TEXT_HEADER: &str = "%%rfim-triplets";

#[derive(Debug, Error)]
pub enum TripletError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed triplet data: {0}")]
    Format(String),
    #[error(transparent)]
    Matrix(#[from] CouplingError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Provenance written next to an exported matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub n: usize,
    pub kind: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

pub fn write_text<W: Write>(matrix: &CouplingMatrix, mut out: W) -> Result<(), TripletError> {
    let entries = matrix.upper_triplets();
    writeln!(out, "{TEXT_HEADER} {} {}", matrix.n(), entries.len())?;
    for (i, j, v) in entries {
        writeln!(out, "{i} {j} {v:?}")?;
    }
    Ok(())
}

pub fn read_text<R: BufRead>(input: R) -> Result<CouplingMatrix, TripletError> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| TripletError::Format("empty input".into()))??;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(TEXT_HEADER) {
        return Err(TripletError::Format(format!("bad header {header:?}")));
    }
    let n: usize = parse(parts.next(), "n")?;
    let count: usize = parse(parts.next(), "count")?;
    let mut entries = Vec::with_capacity(count);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split_whitespace();
        let i: usize = parse(f.next(), "row")?;
        let j: usize = parse(f.next(), "column")?;
        let v: f64 = parse(f.next(), "value")?;
        entries.push((i, j, v));
    }
    if entries.len() != count {
        return Err(TripletError::Format(format!(
            "header promises {count} entries, found {}",
            entries.len()
        )));
    }
    Ok(CouplingMatrix::from_triplets(n, entries)?)
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T, TripletError> {
    field
        .ok_or_else(|| TripletError::Format(format!("missing {what}")))?
        .parse()
        .map_err(|_| TripletError::Format(format!("unparsable {what}")))
}

pub fn write_binary<W: Write>(matrix: &CouplingMatrix, mut out: W) -> Result<(), TripletError> {
    let entries = matrix.upper_triplets();
    out.write_all(MAGIC)?;
    out.write_all(&(matrix.n() as u64).to_le_bytes())?;
    out.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (i, j, v) in entries {
        out.write_all(&(i as u64).to_le_bytes())?;
        out.write_all(&(j as u64).to_le_bytes())?;
        out.write_all(&v.to_bits().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<CouplingMatrix, TripletError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TripletError::Format("bad magic".into()));
    }
    let mut word = [0u8; 8];
    let mut next = |input: &mut R| -> Result<u64, TripletError> {
        input.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let n = next(&mut input)? as usize;
    let count = next(&mut input)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let i = next(&mut input)? as usize;
        let j = next(&mut input)? as usize;
        let v = f64::from_bits(next(&mut input)?);
        entries.push((i, j, v));
    }
    Ok(CouplingMatrix::from_triplets(n, entries)?)
}

pub fn write_sidecar<W: Write>(sidecar: &MatrixSidecar, out: W) -> Result<(), TripletError> {
    serde_json::to_writer_pretty(out, sidecar)?;
    Ok(())
}

pub fn read_sidecar<R: Read>(input: R) -> Result<MatrixSidecar, TripletError> {
    Ok(serde_json::from_reader(input)?)
}
