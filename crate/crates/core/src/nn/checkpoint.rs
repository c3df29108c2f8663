//! Flat binary tensor container.
//!
//! Layout (all integers little-endian `u32`, values little-endian `f64`):
//!
//! ```text
//! "BJPA" | version | count | count × { name_len | name (UTF-8) | rank | dims[rank] | values }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::NnError;
use crate::autodiff::Tensor;

pub const MAGIC: &[u8; 4] = b"BJPA";
pub const VERSION: u32 = 1;

fn u32_of(n: usize, what: &str) -> Result<u32, NnError> {
    u32::try_from(n).map_err(|_| NnError::Checkpoint(format!("{what} {n} exceeds u32")))
}

pub fn write_tensors<W: Write>(mut w: W, entries: &[(String, Tensor)]) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&u32_of(entries.len(), "tensor count")?.to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&u32_of(name.len(), "name length")?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&u32_of(t.rank(), "rank")?.to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&u32_of(d, "dimension")?.to_le_bytes())?;
        }
        for v in t.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| NnError::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| NnError::Checkpoint(format!("missing magic: {e}")))?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| NnError::Checkpoint(format!("truncated name: {e}")))?;
        let name =
            String::from_utf8(name).map_err(|e| NnError::Checkpoint(format!("name: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| NnError::Checkpoint(format!("{name}: truncated values: {e}")))?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, values)?));
    }
    Ok(out)
}

pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<(), NnError> {
    write_tensors(BufWriter::new(File::create(path)?), entries)
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>, NnError> {
    read_tensors(BufReader::new(File::open(path)?))
}

/// Prepends `prefix.` to every entry name.
pub fn prefixed(prefix: &str, entries: Vec<(String, Tensor)>) -> Vec<(String, Tensor)> {
    entries
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

/// Selects entries under `prefix.` and strips it.
pub fn strip_prefix(prefix: &str, entries: &[(String, Tensor)]) -> Vec<(String, Tensor)> {
    let p = format!("{prefix}.");
    entries
        .iter()
        .filter_map(|(n, t)| n.strip_prefix(&p).map(|s| (s.to_string(), t.clone())))
        .collect()
}
