//! Little-endian checkpoint layout:
//!
//! ```text
//! "MIMD"  u32 version
//! u32 config length, config bytes (TOML text of ModelConfig)
//! u32 record count
//! per record: u32 name length, name, u32 rank, u64 extent × rank, f64 × numel
//! ```
//! Records are written in name order, so equal stores give equal bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, NnError, ParamEntry, ParamStore, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MIMD";

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    let cfg = toml::to_string(&store.config).map_err(|e| bad(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(cfg.len() as u32).to_le_bytes())?;
    out.write_all(cfg.as_bytes())?;
    out.write_all(&(store.entries().len() as u32).to_le_bytes())?;
    for (name, e) in store.entries() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &d in &e.shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &e.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| bad("non-UTF-8 text"))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let cfg_text = read_string(&mut r, len)?;
    let config: ModelConfig = toml::from_str(&cfg_text).map_err(|e| bad(e.to_string()))?;
    let count = read_u32(&mut r)? as usize;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let name = read_string(&mut r, len)?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(bad(format!("`{name}` has rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if entries.insert(name.clone(), ParamEntry { shape, data }).is_some() {
            return Err(bad(format!("duplicate record `{name}`")));
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    ParamStore::from_entries(config, entries)
}

fn at(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Write to `path`, creating missing parent directories.
pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(at(dir))?;
    }
    let f = File::create(path).map_err(at(path))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(store, &mut w)?;
    w.flush().map_err(at(path))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let f = File::open(path).map_err(at(path))?;
    read_checkpoint(BufReader::new(f)).map_err(|e| match e {
        NnError::Checkpoint(m) => NnError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
