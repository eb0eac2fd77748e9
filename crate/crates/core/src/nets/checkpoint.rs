//! Checkpoint persistence: a binary weight blob plus a JSON metadata sidecar.
//!
//! Blob layout: magic `CGZW`, u32 version, u32 tensor count, then per tensor
//! a length-prefixed name, u32 rank, u64 dims, and f64 little-endian data.

use crate::error::{Error, Result};
use crate::nets::BackboneVariant;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CGZW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub backbone_variant: BackboneVariant,
    pub input_size: (usize, usize),
    pub feature_dim: usize,
    pub n_subjects: Option<usize>,
    pub training_seed: u64,
    pub iteration_count: usize,
    pub config_hash: String,
    /// Adam step counter; present when optimizer state is stored for resume.
    pub adam_t: Option<u64>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

/// In-memory checkpoint: metadata plus named tensors.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, ArrayD<f64>>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }
}

fn write_tensor(out: &mut impl Write, name: &str, tensor: &ArrayD<f64>) -> Result<()> {
    let name_bytes = name.as_bytes();
    out.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
    out.write_all(name_bytes)?;
    out.write_all(&(tensor.ndim() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        out.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in tensor.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_vec(input: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let b = read_exact_vec(input, 4)?;
    Ok(u32::from_le_bytes(b.try_into().unwrap()))
}

fn read_u64(input: &mut impl Read) -> Result<u64> {
    let b = read_exact_vec(input, 8)?;
    Ok(u64::from_le_bytes(b.try_into().unwrap()))
}

/// Writes `<path>` (blob) and `<path>.json` (metadata sidecar).
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(checkpoint.tensors.len() as u32).to_le_bytes())?;
    for (name, tensor) in &checkpoint.tensors {
        write_tensor(&mut out, name, tensor)?;
    }
    out.flush()?;
    let sidecar = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.json", ext.to_string_lossy()),
        None => "json".to_string(),
    });
    std::fs::write(sidecar, serde_json::to_string_pretty(&checkpoint.meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
    let magic = read_exact_vec(&mut input, 4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint blob", path.display())));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut input)? as usize;
        let name = String::from_utf8(read_exact_vec(&mut input, name_len)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut input)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut input)? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_exact_vec(&mut input, 8)?.try_into().unwrap()));
        }
        let tensor = ArrayD::from_shape_vec(IxDyn(&dims), data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        tensors.insert(name, tensor);
    }
    let sidecar = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.json", ext.to_string_lossy()),
        None => "json".to_string(),
    });
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)?;
    Ok(Checkpoint { meta, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_blob_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "w".to_string(),
            ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.0, -2.5, 3.0, 0.0, 1e-12, 9.9]).unwrap(),
        );
        let ckpt = Checkpoint {
            meta: CheckpointMeta {
                backbone_variant: BackboneVariant::TinyConv,
                input_size: (64, 64),
                feature_dim: 128,
                n_subjects: Some(4),
                training_seed: 7,
                iteration_count: 10,
                config_hash: "abc".to_string(),
                adam_t: None,
                notes: BTreeMap::new(),
            },
            tensors,
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.meta.iteration_count, 10);
        assert_eq!(back.tensors["w"], ckpt.tensors["w"]);
    }

    #[test]
    fn rejects_garbage_blob() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"nope").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
