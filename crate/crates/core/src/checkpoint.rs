//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"LRCSSM1"
//! u32 config length, config text (model./solver. keys)
//! u32 array count
//! per array: u16 name length, name, u64 value count, f64 values
//! ```
//!
//! Arrays appear in [`ModelParams::tensors`] order. Loading rebuilds the
//! parameter shapes from the embedded config and checks every name and count.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::network::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 7] = b"LRCSSM1";

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams, cfg: &ModelConfig) -> std::io::Result<()> {
    let text = RunConfig {
        model: cfg.clone(),
        ..RunConfig::default()
    }
    .model_text();
    w.write_all(MAGIC)?;
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    let tensors = params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, data) in tensors {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(data.len() as u64).to_le_bytes())?;
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save(path: impl AsRef<Path>, params: &ModelParams, cfg: &ModelConfig) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(file), params, cfg).map_err(|e| Error::io(path, e))
}

struct Reader<R> {
    inner: R,
    what: String,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Validation(format!("{}: truncated checkpoint", self.what)))?;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let b = self.bytes(N)?;
        Ok(b.try_into().expect("length checked by read_exact"))
    }
}

pub fn read_checkpoint<R: Read>(inner: R, what: &str) -> Result<(ModelConfig, ModelParams)> {
    let bad = |m: String| Error::Validation(format!("{what}: {m}"));
    let mut r = Reader {
        inner,
        what: what.to_string(),
    };
    if &r.array::<7>()? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let text_len = u32::from_le_bytes(r.array()?) as usize;
    let text = String::from_utf8(r.bytes(text_len)?).map_err(|_| bad("config is not UTF-8".into()))?;
    let cfg = RunConfig::parse(&text)?.model;
    cfg.validate()?;
    let mut params = ModelParams::zeros(&cfg);
    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut slots = params.tensors_mut();
    if count != slots.len() {
        return Err(bad(format!("holds {count} arrays, config implies {}", slots.len())));
    }
    for (want, slot) in slots.iter_mut() {
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let name = String::from_utf8(r.bytes(name_len)?).map_err(|_| bad("array name is not UTF-8".into()))?;
        if name != *want {
            return Err(bad(format!("expected array '{want}', found '{name}'")));
        }
        let n = u64::from_le_bytes(r.array()?) as usize;
        if n != slot.len() {
            return Err(bad(format!("array '{name}' has {n} values, expected {}", slot.len())));
        }
        for v in slot.iter_mut() {
            *v = f64::from_le_bytes(r.array()?);
        }
    }
    drop(slots);
    let mut rest = Vec::new();
    r.inner
        .read_to_end(&mut rest)
        .map_err(|e| bad(format!("read error: {e}")))?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok((cfg, params))
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file), &path.display().to_string())
}
