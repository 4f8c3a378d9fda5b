//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PLANWRITE\0CKPT" | u32 version | u32 echo length | echo (UTF-8
//! key = value lines) | u32 parameter count | per parameter: u32 name
//! length, name, u32 rank, u64 per dimension, f64 per value
//! ```
//!
//! Values are always stored as f64 whatever precision the model ran in.

use std::io::{Read, Write};
use std::path::Path;

use crate::compute::{Array, Real};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &[u8; 14] = b"PLANWRITE\0CKPT";
pub const VERSION: u32 = 1;
const FINGERPRINT_KEY: &str = "vocab_fingerprint";

/// Metadata read back with the parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub vocab_fingerprint: Option<u64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn io_err(e: std::io::Error) -> Error {
    bad(format!("i/o: {e}"))
}

pub fn write_checkpoint<T: Real, W: Write>(w: &mut W, model: &Model<T>, vocab_fingerprint: Option<u64>) -> Result<()> {
    let mut echo = model.config.echo();
    if let Some(f) = vocab_fingerprint {
        echo.push_str(&format!("{FINGERPRINT_KEY} = {f}\n"));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    buf.extend_from_slice(echo.as_bytes());
    buf.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for (_, p) in model.store.iter() {
        let name = p.name().as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        let shape = p.value.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| bad("invalid UTF-8"))
    }
}

pub fn read_checkpoint<T: Real, R: Read>(r: &mut R) -> Result<(Model<T>, CheckpointMeta)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(io_err)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let echo_len = c.u32()? as usize;
    let echo = c.string(echo_len)?;
    let mut fingerprint = None;
    let mut config_lines = String::new();
    for line in echo.lines() {
        match line.split_once('=') {
            Some((k, v)) if k.trim() == FINGERPRINT_KEY => {
                fingerprint = Some(v.trim().parse().map_err(|_| bad("bad vocabulary fingerprint"))?);
            }
            _ => {
                config_lines.push_str(line);
                config_lines.push('\n');
            }
        }
    }
    let config = ModelConfig::from_echo(&config_lines)?;
    let mut model = Model::<T>::new(config.clone(), 0)?;
    let count = c.u32()? as usize;
    if count != model.store.len() {
        return Err(bad(format!(
            "checkpoint has {count} parameters, configuration expects {}",
            model.store.len()
        )));
    }
    for _ in 0..count {
        let n = c.u32()? as usize;
        let name = c.string(n)?.to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let values = (0..len).map(|_| c.f64().map(T::lit)).collect::<Result<Vec<_>>>()?;
        let id = model
            .store
            .id(&name)
            .ok_or_else(|| bad(format!("unexpected parameter `{name}`")))?;
        let p = model.store.get_mut(id);
        if p.value.shape() != shape.as_slice() {
            return Err(bad(format!(
                "parameter `{name}` has shape {shape:?}, expected {:?}",
                p.value.shape()
            )));
        }
        p.value = Array::from_vec(&shape, values)?;
    }
    if c.pos != buf.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((
        model,
        CheckpointMeta {
            config,
            vocab_fingerprint: fingerprint,
        },
    ))
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &Model<T>, vocab_fingerprint: Option<u64>) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(&mut f, model, vocab_fingerprint)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(Model<T>, CheckpointMeta)> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut f)
}
