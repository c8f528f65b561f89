use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tags::TagSet;

const MAGIC: &[u8; 4] = b"SDEM";

/// Tagset embeddings as written by `embed`: a binary matrix (`SDEM`, u32
/// count, u32 dim, row-major little-endian f64) and a JSONL sidecar mapping
/// each row to its tagset.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDump {
    pub tagsets: Vec<TagSet>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SidecarLine {
    row: usize,
    tags: TagSet,
}

impl EmbeddingDump {
    pub fn new(tagsets: Vec<TagSet>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if tagsets.len() != rows.len() {
            return Err(Error::contract(format!(
                "{} tagsets for {} rows",
                tagsets.len(),
                rows.len()
            )));
        }
        if rows.iter().any(|r| r.len() != rows[0].len()) {
            return Err(Error::contract("embedding rows differ in width"));
        }
        Ok(EmbeddingDump { tagsets, rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.rows.len() * self.dim());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.rows.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.rows.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn sidecar(&self) -> String {
        self.tagsets
            .iter()
            .enumerate()
            .map(|(row, t)| {
                serde_json::to_string(&SidecarLine { row, tags: t.clone() }).expect("sidecar serializes") + "\n"
            })
            .collect()
    }

    pub fn from_parts(bytes: &[u8], sidecar: &str) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "not an SDEM embedding dump".into(),
            });
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let (count, dim) = (u32_at(4), u32_at(8));
        let body = &bytes[12..];
        if body.len() != count * dim * 8 {
            return Err(Error::Parse {
                offset: 12,
                message: format!("expected {count}x{dim} floats, found {} bytes", body.len()),
            });
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let rows: Vec<Vec<f64>> = (0..count).map(|i| values[i * dim..(i + 1) * dim].to_vec()).collect();
        let mut tagsets = Vec::with_capacity(count);
        for (i, line) in sidecar.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let l: SidecarLine = serde_json::from_str(line)?;
            if l.row != i {
                return Err(Error::data(format!("sidecar line {} names row {}", i + 1, l.row)));
            }
            tagsets.push(l.tags);
        }
        if tagsets.len() != count {
            return Err(Error::data(format!(
                "sidecar has {} rows, matrix {count}",
                tagsets.len()
            )));
        }
        Ok(EmbeddingDump { tagsets, rows })
    }
}
