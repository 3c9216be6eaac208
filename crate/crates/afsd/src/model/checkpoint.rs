//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "AFSDCKPT"
//! version      u16      1
//! meta_len     u32      length of the metadata string
//! meta         utf-8    resolved config the model was built from
//! count        u32      number of entries
//! per entry:
//!   name_len   u16
//!   name       utf-8
//!   ndim       u8
//!   dims       ndim x u32
//!   data       prod(dims) x f64
//! ```
//!
//! Entries are written in name order so identical parameters produce
//! identical files.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tensorcore::Tensor;

use super::params::ParamStore;
use super::{Afsd, ModelSpec};
use crate::config::Config;
use crate::error::{AfsdError, Result};

pub const MAGIC: &[u8; 8] = b"AFSDCKPT";
pub const VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, meta: &str, params: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| AfsdError::format("checkpoint", e.to_string()))?;
    Ok(buf)
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|e| AfsdError::format("checkpoint", e.to_string()))?;
    String::from_utf8(buf).map_err(|e| AfsdError::format("checkpoint", e.to_string()))
}

/// Returns the metadata string and the parameters.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(String, ParamStore)> {
    if &read_exact::<_, 8>(&mut r)? != MAGIC {
        return Err(AfsdError::format("checkpoint", "bad magic"));
    }
    let version = u16::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(AfsdError::format(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let meta_len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let meta = read_string(&mut r, meta_len)?;
    let count = u32::from_le_bytes(read_exact(&mut r)?);
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let name = read_string(&mut r, name_len)?;
        let [ndim] = read_exact::<_, 1>(&mut r)?;
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(read_exact(&mut r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_exact(&mut r)?));
        }
        let t = Tensor::new(shape, data).map_err(|e| AfsdError::format("checkpoint", format!("{name}: {e}")))?;
        params.insert(name, t);
    }
    Ok((meta, params))
}

pub fn save(path: &Path, meta: &str, params: &ParamStore) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, meta, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(String, ParamStore)> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}

/// Metadata stored with a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub input_dim: usize,
    pub classes: usize,
    pub labels: Vec<String>,
    pub stream: String,
    /// Resolved TOML of the training config.
    pub config: String,
}

pub fn save_model(path: &Path, model: &Afsd, meta: &ModelMeta) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save(path, &serde_json::to_string(meta)?, &model.params)
}

/// Rebuilds a model from a checkpoint written by [`save_model`].
pub fn load_model(path: &Path) -> Result<(Afsd, ModelMeta)> {
    let (meta, params) = load(path)?;
    let meta: ModelMeta =
        serde_json::from_str(&meta).map_err(|e| AfsdError::format("checkpoint metadata", e.to_string()))?;
    let cfg = Config::from_toml_str(&meta.config)?;
    let spec = ModelSpec::from_config(&cfg, meta.input_dim, meta.classes);
    Ok((Afsd::from_params(spec, params)?, meta))
}
