//! Line-delimited JSON helpers shared by every persisted artifact.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Writes `items` as one JSON object per line, replacing any existing file.
///
/// The file is written to a sibling temporary path and renamed into place.
pub fn write_all<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        for item in items {
            serde_json::to_writer(&mut out, &item)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    fs::rename(tmp, path)
}

/// Appends records to `path`, creating it when missing. An unterminated
/// last line left by an interrupted writer is dropped first.
pub fn append<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    drop_torn_tail(path)?;
    let mut out = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

fn drop_torn_tail(path: &Path) -> io::Result<()> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(err) if err.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(err) => return Err(err),
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    tracing::warn!(path = %path.display(), dropped = bytes.len() - keep, "dropping unterminated trailing line");
    OpenOptions::new().write(true).open(path)?.set_len(keep as u64)
}

/// Reads every non-blank line of `path` as a `T`. An unparsable final line
/// without a newline is treated as an interrupted write and skipped.
pub fn read_all<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    let torn = !text.is_empty() && !text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut items = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(line);
        if parsed.is_err() && torn && idx + 1 == lines.len() {
            tracing::warn!(path = %path.display(), line = idx + 1, "skipping unterminated trailing line");
            break;
        }
        let item = parsed.map_err(|err| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {err}", path.display(), idx + 1))
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Like [`read_all`] but a missing file reads as empty.
pub fn read_or_empty<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    match read_all(path) {
        Err(err) if err.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        other => other,
    }
}
