//! On-disk index format: one JSON header line, then for every entry a
//! little-endian `u32` id length, the UTF-8 id, and `dim` little-endian
//! `f32` components.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IndexEntry, RetrievalError, SourceMode, VectorIndex};

const FORMAT: &str = "repogen-index/1";
const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    dim: usize,
    provider: String,
    source_mode: SourceMode,
    count: usize,
}

impl VectorIndex {
    /// Writes the index to `path` via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut out = BufWriter::new(fs::File::create(&tmp)?);
            let header = Header {
                format: FORMAT.into(),
                dim: self.dim,
                provider: self.provider_id.clone(),
                source_mode: self.source_mode,
                count: self.entries.len(),
            };
            serde_json::to_writer(&mut out, &header).map_err(|e| RetrievalError::Format(e.to_string()))?;
            out.write_all(b"\n")?;
            for entry in &self.entries {
                out.write_all(&(entry.id.len() as u32).to_le_bytes())?;
                out.write_all(entry.id.as_bytes())?;
                for c in &entry.vector {
                    out.write_all(&c.to_le_bytes())?;
                }
            }
            out.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Loads an index, verifying the entry count and that every stored
    /// vector is unit length.
    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let mut input = BufReader::new(fs::File::open(path)?);
        let mut line = String::new();
        input.read_line(&mut line)?;
        let header: Header =
            serde_json::from_str(line.trim_end()).map_err(|e| RetrievalError::Format(format!("bad header: {e}")))?;
        if header.format != FORMAT {
            return Err(RetrievalError::Format(format!("unsupported format `{}`", header.format)));
        }
        let mut entries = Vec::with_capacity(header.count);
        let mut u32buf = [0u8; 4];
        for i in 0..header.count {
            input
                .read_exact(&mut u32buf)
                .map_err(|_| RetrievalError::Format(format!("truncated at entry {i} of {}", header.count)))?;
            let len = u32::from_le_bytes(u32buf) as usize;
            let mut id = vec![0u8; len];
            input.read_exact(&mut id).map_err(|_| RetrievalError::Format(format!("truncated id at entry {i}")))?;
            let id = String::from_utf8(id).map_err(|_| RetrievalError::Format(format!("non-UTF-8 id at entry {i}")))?;
            let mut vector = Vec::with_capacity(header.dim);
            for _ in 0..header.dim {
                input
                    .read_exact(&mut u32buf)
                    .map_err(|_| RetrievalError::Format(format!("truncated vector for `{id}`")))?;
                vector.push(f32::from_le_bytes(u32buf));
            }
            let norm = vector.iter().map(|&c| f64::from(c) * f64::from(c)).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(RetrievalError::Format(format!("vector for `{id}` has norm {norm}")));
            }
            entries.push(IndexEntry { id, vector });
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(RetrievalError::Format(format!(
                "{} trailing bytes after {} entries",
                rest.len(),
                header.count
            )));
        }
        Ok(VectorIndex::from_parts(entries, header.dim, header.provider, header.source_mode))
    }
}
