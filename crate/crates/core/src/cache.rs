//! On-disk Gram matrix cache, enabled by the `ZOK_CACHE_DIR` environment
//! variable. Entries are keyed by a SHA-256 digest of the input rows and
//! the kernel spec.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{gram_of_rows, GramMatrix, KernelSpec};

pub const CACHE_ENV: &str = "ZOK_CACHE_DIR";
const MAGIC: &[u8; 4] = b"ZOKG";

pub fn cache_key(x: &Array2<f64>, spec: &KernelSpec) -> Result<String> {
    let mut h = Sha256::new();
    h.update((x.nrows() as u64).to_le_bytes());
    h.update((x.ncols() as u64).to_le_bytes());
    for v in x.iter() {
        h.update(v.to_le_bytes());
    }
    h.update(serde_json::to_vec(spec)?);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn entry_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.gram"))
}

fn read_entry(path: &Path, spec: &KernelSpec, m: usize) -> Result<GramMatrix> {
    let bytes = fs::read(path)?;
    if bytes.len() != 12 + 8 * m * m || &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad cache entry {}", path.display())));
    }
    let stored = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    if stored != m {
        return Err(Error::Format(format!("cache entry {} has size {stored}", path.display())));
    }
    let values = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(GramMatrix {
        entries: Array2::from_shape_vec((m, m), values).map_err(|e| Error::Format(e.to_string()))?,
        spec: *spec,
        signed: false,
    })
}

fn write_entry(path: &Path, g: &GramMatrix) -> Result<()> {
    let m = g.size();
    let mut out = Vec::with_capacity(12 + 8 * m * m);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m as u64).to_le_bytes());
    for v in g.entries.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Gram matrix of `x`, read from or stored in `dir`.
pub fn gram_in_dir(dir: &Path, x: &Array2<f64>, spec: &KernelSpec) -> Result<GramMatrix> {
    let path = entry_path(dir, &cache_key(x, spec)?);
    if path.exists() {
        match read_entry(&path, spec, x.nrows()) {
            Ok(g) => return Ok(g),
            Err(e) => log::warn!("ignoring cache entry: {e}"),
        }
    }
    let g = gram_of_rows(x, spec);
    fs::create_dir_all(dir)?;
    write_entry(&path, &g)?;
    Ok(g)
}

/// Uses the cache when `ZOK_CACHE_DIR` is set and computes directly
/// otherwise. Cache I/O failures fall back to direct computation.
pub fn gram_cached(x: &Array2<f64>, spec: &KernelSpec) -> GramMatrix {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => gram_in_dir(Path::new(&dir), x, spec).unwrap_or_else(|e| {
            log::warn!("gram cache unavailable: {e}");
            gram_of_rows(x, spec)
        }),
        _ => gram_of_rows(x, spec),
    }
}
