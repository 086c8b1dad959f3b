//! Versioned binary checkpoints: named parameter tensors plus optimizer
//! state, with a small structured-text header describing the architecture
//! so a checkpoint alone is enough to rebuild the model.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"PRLXCKP\0"
//! u32    format version (currently 1)
//! u32    header length, then that many bytes of UTF-8 TOML metadata
//! u64    optimizer step count
//! u32    tensor count, then per tensor:
//!        u32 name length, name bytes,
//!        u8  section (0 = parameter, 1 = first moment, 2 = second moment),
//!        u32 rank, u64 dims..., f64 values...
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::fields::FieldConfig;

use super::{AdamConfig, Model, OptimizerState};

const MAGIC: &[u8; 8] = b"PRLXCKP\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (supported: {VERSION})")]
    BadVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint header: {0}")]
    Header(#[from] toml::de::Error),
    #[error("checkpoint does not rebuild a valid model: {0}")]
    Model(String),
}

/// Architecture and optimizer description stored in the header.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    field: FieldConfig,
    confidence_in: usize,
    confidence_hidden: usize,
    adam: AdamConfig,
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_tensor<W: Write>(
    w: &mut W,
    name: &str,
    section: u8,
    shape: &[usize],
    values: &[f64],
) -> std::io::Result<()> {
    write_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[section])?;
    write_u32(w, shape.len() as u32)?;
    for &d in shape {
        write_u64(w, d as u64)?;
    }
    for &v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>, CheckpointError> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let b = read_exact(r, 4)?;
    Ok(u32::from_le_bytes(b.try_into().unwrap()))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let b = read_exact(r, 8)?;
    Ok(u64::from_le_bytes(b.try_into().unwrap()))
}

/// Limits a length field before allocating, so a corrupt header cannot
/// request an absurd buffer.
fn checked_len(n: u64, what: &str, cap: u64) -> Result<usize, CheckpointError> {
    if n > cap {
        return Err(CheckpointError::Malformed(format!(
            "{what} length {n} exceeds limit {cap}"
        )));
    }
    Ok(n as usize)
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    adam: &AdamConfig,
    state: &OptimizerState,
) -> Result<(), CheckpointError> {
    let meta = Meta {
        field: model.field.cfg.clone(),
        confidence_in: model.confidence.in_dim,
        confidence_hidden: model.confidence.hidden,
        adam: *adam,
    };
    let header = toml::to_string(&meta)
        .map_err(|e| CheckpointError::Malformed(format!("header serialization: {e}")))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u32(&mut w, header.len() as u32)?;
    w.write_all(header.as_bytes())?;
    write_u64(&mut w, state.step)?;

    let params = model.params();
    let count = params.len() + state.m.len() + state.v.len();
    write_u32(&mut w, count as u32)?;
    for (name, t) in &params {
        write_tensor(&mut w, name, 0, t.shape(), t.values())?;
    }
    for (section, moments) in [(1u8, &state.m), (2u8, &state.v)] {
        for (name, values) in moments {
            // Moments are stored flat; their shape is the parameter's.
            write_tensor(&mut w, name, section, &[values.len()], values)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, AdamConfig, OptimizerState), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);

    let magic = read_exact(&mut r, 8)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let header_len = checked_len(read_u32(&mut r)? as u64, "header", 1 << 20)?;
    let header = String::from_utf8(read_exact(&mut r, header_len)?)
        .map_err(|e| CheckpointError::Malformed(format!("header is not UTF-8: {e}")))?;
    let meta: Meta = toml::from_str(&header)?;
    let step = read_u64(&mut r)?;

    let count = checked_len(read_u32(&mut r)? as u64, "tensor count", 1 << 20)?;
    let mut params = BTreeMap::new();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for _ in 0..count {
        let name_len = checked_len(read_u32(&mut r)? as u64, "tensor name", 4096)?;
        let name = String::from_utf8(read_exact(&mut r, name_len)?)
            .map_err(|e| CheckpointError::Malformed(format!("tensor name is not UTF-8: {e}")))?;
        let section = read_exact(&mut r, 1)?[0];
        let rank = checked_len(read_u32(&mut r)? as u64, "tensor rank", 8)?;
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1u64;
        for _ in 0..rank {
            let d = read_u64(&mut r)?;
            numel = numel.saturating_mul(d.max(1));
            shape.push(checked_len(d, "tensor dim", 1 << 32)?);
        }
        let numel = checked_len(numel, "tensor size", 1 << 28)?;
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            let b = read_exact(&mut r, 8)?;
            values.push(f64::from_le_bytes(b.try_into().unwrap()));
        }
        match section {
            0 => {
                params.insert(name, Tensor::param(values, &shape));
            }
            1 => {
                m.insert(name, values);
            }
            2 => {
                v.insert(name, values);
            }
            s => {
                return Err(CheckpointError::Malformed(format!(
                    "tensor {name:?} has unknown section tag {s}"
                )))
            }
        }
    }

    let model = Model::from_params(
        meta.field,
        meta.confidence_in,
        meta.confidence_hidden,
        params,
    )
    .map_err(|e| CheckpointError::Model(e.to_string()))?;
    let state = OptimizerState { step, m, v };
    state
        .check_shapes(&model.params())
        .map_err(CheckpointError::Model)?;
    Ok((model, meta.adam, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = Model::init(FieldConfig::tiny(), 8, &mut rng);
        let adam = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
        let mut state = OptimizerState::default();
        state.step = 42;
        for (name, t) in model.params() {
            state.m.insert(name.clone(), t.values().iter().map(|v| v * 0.25).collect());
            state.v.insert(name, t.values().iter().map(|v| v * v).collect());
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model, &adam, &state).unwrap();
        let (loaded, adam2, state2) = load_checkpoint(&path).unwrap();

        assert_eq!(adam2, adam);
        assert_eq!(state2.step, state.step);
        assert_eq!(state2.m, state.m);
        assert_eq!(state2.v, state.v);
        let a = model.params();
        let b = loaded.params();
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (name, t) in &a {
            let u = &b[name];
            assert_eq!(t.shape(), u.shape(), "{name}");
            let exact = t
                .values()
                .iter()
                .zip(u.values())
                .all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(exact, "parameter {name} changed across the round trip");
        }
        assert_eq!(loaded.field.cfg, model.field.cfg);
        assert_eq!(loaded.confidence.in_dim, model.confidence.in_dim);
    }

    #[test]
    fn corrupt_files_error_instead_of_panicking() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");

        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));

        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadVersion(99))));

        // Truncated mid-header.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&1000u32.to_le_bytes());
        bytes.extend_from_slice(b"short");
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
