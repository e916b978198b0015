//! The SAWE embedding container.
//!
//! ```text
//! "SAWE" | version: u32 | rows: u64 | dim: u32 | ids | payload
//! ```
//!
//! All integers are little-endian. `ids` holds one entry per row, each a
//! `u16` byte length followed by UTF-8. The payload is `rows × dim` `f32`
//! values in row-major order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sawe_core::linalg::Matrix;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"SAWE";
pub const VERSION: u32 = 1;

/// Named rows of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub rows: Matrix,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, rows: Matrix) -> CliResult<Self> {
        if ids.len() != rows.rows() {
            return Err(CliError::data(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.rows()
            )));
        }
        Ok(Self { ids, rows })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>], dim: usize) -> CliResult<Self> {
        let mut m = Matrix::zeros(rows.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(CliError::data(format!(
                    "row `{}` has dimension {}, expected {dim}",
                    ids.get(i).map(String::as_str).unwrap_or("?"),
                    r.len()
                )));
            }
            m.row_mut(i).copy_from_slice(r);
        }
        Self::new(ids, m)
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Row lookup by id. Fails on duplicate ids.
    pub fn index(&self) -> CliResult<BTreeMap<&str, usize>> {
        let mut map = BTreeMap::new();
        for (i, id) in self.ids.iter().enumerate() {
            if map.insert(id.as_str(), i).is_some() {
                return Err(CliError::data(format!("duplicate row id `{id}`")));
            }
        }
        Ok(map)
    }

    pub fn encode(&self) -> CliResult<Vec<u8>> {
        let (rows, dim) = (self.rows.rows(), self.rows.cols());
        let dim32 = u32::try_from(dim).map_err(|_| CliError::data("dimension exceeds u32"))?;
        let mut out = Vec::with_capacity(20 + rows * (dim * 4 + 8));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(rows as u64).to_le_bytes());
        out.extend_from_slice(&dim32.to_le_bytes());
        for id in &self.ids {
            let len = u16::try_from(id.len())
                .map_err(|_| CliError::data(format!("id longer than 65535 bytes: {id:.32}...")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for &x in self.rows.as_slice() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> CliResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CliError::data("bad magic, not a SAWE file"));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(CliError::data(format!("unsupported SAWE version {version}")));
        }
        let rows = u64::from_le_bytes(r.array()?);
        let dim = u32::from_le_bytes(r.array()?) as usize;
        let rows = usize::try_from(rows).map_err(|_| CliError::data("row count overflows"))?;
        // Every row needs at least its 2-byte id length.
        if rows > r.remaining() / 2 {
            return Err(CliError::data("truncated SAWE file (id table)"));
        }
        let mut ids = Vec::with_capacity(rows);
        for _ in 0..rows {
            let len = u16::from_le_bytes(r.array()?) as usize;
            let raw = r.take(len)?;
            let id = std::str::from_utf8(raw)
                .map_err(|_| CliError::data("row id is not valid UTF-8"))?;
            ids.push(id.to_owned());
        }
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CliError::data("payload size overflows"))?;
        if r.remaining() != expected {
            return Err(CliError::data(format!(
                "payload has {} bytes, expected {expected} for {rows}x{dim}",
                r.remaining()
            )));
        }
        let payload = r.take(expected)?;
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let rows = Matrix::from_vec(rows, dim, values)?;
        Self::new(ids, rows)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.encode()?).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes).map_err(|e| e.context(path.display()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if n > self.remaining() {
            return Err(CliError::data("truncated SAWE file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> CliResult<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }
}
