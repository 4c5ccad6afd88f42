//! Self-describing checkpoint container: magic, version, config, named
//! tensor sections, and a manifest checksum.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::RtmConfig;
use super::params::{LayerParams, RtmParameters};
use crate::binio::*;
use crate::error::ModelError;
use crate::numeric::Tensor;

const MAGIC: &[u8; 8] = b"RTMCKPT\0";
const VERSION: u32 = 1;

const DTYPE_F64: u8 = 1;
const DTYPE_F32: u8 = 2;
const DTYPE_U64: u8 = 3;

/// One named section. Model weights are `F64` (or `F32` when saved with
/// compact storage); bookkeeping state uses `U64`.
#[derive(Clone, Debug, PartialEq)]
pub enum Section {
    F64(Tensor),
    F32 { shape: Vec<usize>, data: Vec<f32> },
    U64(Vec<u64>),
}

impl Section {
    pub fn to_tensor(&self) -> Option<Tensor> {
        match self {
            Section::F64(t) => Some(t.clone()),
            Section::F32 { shape, data } => Some(Tensor::from_vec(
                shape,
                data.iter().map(|&v| v as f64).collect(),
            )),
            Section::U64(_) => None,
        }
    }

    pub fn as_u64(&self) -> Option<&[u64]> {
        match self {
            Section::U64(v) => Some(v),
            _ => None,
        }
    }
}

/// A parsed checkpoint: the model config plus named sections.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RtmConfig,
    pub sections: BTreeMap<String, Section>,
}

impl Checkpoint {
    pub fn new(config: RtmConfig) -> Checkpoint {
        Checkpoint {
            config,
            sections: BTreeMap::new(),
        }
    }

    /// Bundle model parameters (exact 64-bit storage by default; `compact`
    /// stores weights as f32).
    pub fn with_params(config: RtmConfig, params: &RtmParameters, compact: bool) -> Checkpoint {
        let mut ck = Checkpoint::new(config);
        params.visit(|name, t| {
            let section = if compact {
                Section::F32 {
                    shape: t.shape().to_vec(),
                    data: t.data().iter().map(|&v| v as f32).collect(),
                }
            } else {
                Section::F64(t.clone())
            };
            ck.sections.insert(name, section);
        });
        ck
    }

    /// Rebuild parameters from the stored sections, verifying every shape.
    pub fn to_params(&self) -> Result<RtmParameters, ModelError> {
        let cfg = &self.config;
        cfg.validate()?;
        let tensor = |name: &str, shape: &[usize]| -> Result<Tensor, ModelError> {
            let t = self
                .sections
                .get(name)
                .and_then(Section::to_tensor)
                .ok_or_else(|| ModelError::BadCheckpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(ModelError::BadCheckpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
            Ok(t)
        };
        let d = cfg.d;
        let mut layers = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            layers.push(LayerParams {
                attn_q: tensor(&format!("layers.{i}.attn.wq"), &[d, d])?,
                attn_k: tensor(&format!("layers.{i}.attn.wk"), &[d, d])?,
                attn_v: tensor(&format!("layers.{i}.attn.wv"), &[d, d])?,
                attn_out: tensor(&format!("layers.{i}.attn.wo"), &[d, d])?,
                ffn_w1: tensor(&format!("layers.{i}.ffn.w1"), &[d, cfg.d_ff])?,
                ffn_b1: tensor(&format!("layers.{i}.ffn.b1"), &[cfg.d_ff])?,
                ffn_w2: tensor(&format!("layers.{i}.ffn.w2"), &[cfg.d_ff, d])?,
                ffn_b2: tensor(&format!("layers.{i}.ffn.b2"), &[d])?,
                ln1_gain: tensor(&format!("layers.{i}.ln1.gain"), &[d])?,
                ln1_bias: tensor(&format!("layers.{i}.ln1.bias"), &[d])?,
                ln2_gain: tensor(&format!("layers.{i}.ln2.gain"), &[d])?,
                ln2_bias: tensor(&format!("layers.{i}.ln2.bias"), &[d])?,
            });
        }
        Ok(RtmParameters {
            word_emb: tensor("word_emb", &[cfg.vocab_size, d])?,
            pos_emb: tensor("pos_emb", &[cfg.position_table_len(), d])?,
            seg_emb: tensor("seg_emb", &[3, d])?,
            query_w: tensor("query_proj.w", &[d, d])?,
            query_b: tensor("query_proj.b", &[d])?,
            review_w: tensor("review_proj.w", &[d, d])?,
            review_b: tensor("review_proj.b", &[d])?,
            layers,
            out_w: tensor("out.w", &[d, 1])?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        write_u32(&mut buf, VERSION)?;
        let config_json = serde_json::to_vec(&self.config)
            .map_err(|e| ModelError::BadCheckpoint(format!("config serialization: {e}")))?;
        write_u64(&mut buf, config_json.len() as u64)?;
        buf.extend_from_slice(&config_json);
        write_u32(&mut buf, self.sections.len() as u32)?;
        for (name, section) in &self.sections {
            write_str(&mut buf, name)?;
            match section {
                Section::F64(t) => {
                    write_u8(&mut buf, DTYPE_F64)?;
                    write_u8(&mut buf, t.shape().len() as u8)?;
                    for &dim in t.shape() {
                        write_u64(&mut buf, dim as u64)?;
                    }
                    for &v in t.data() {
                        write_f64(&mut buf, v)?;
                    }
                }
                Section::F32 { shape, data } => {
                    write_u8(&mut buf, DTYPE_F32)?;
                    write_u8(&mut buf, shape.len() as u8)?;
                    for &dim in shape {
                        write_u64(&mut buf, dim as u64)?;
                    }
                    for &v in data {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Section::U64(values) => {
                    write_u8(&mut buf, DTYPE_U64)?;
                    write_u8(&mut buf, 1)?;
                    write_u64(&mut buf, values.len() as u64)?;
                    for &v in values {
                        write_u64(&mut buf, v)?;
                    }
                }
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        let mut file = fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, ModelError> {
        let bytes = fs::read(path)?;
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(ModelError::BadCheckpoint("file too short".into()));
        }
        let (body, stored_digest) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != stored_digest {
            return Err(ModelError::BadCheckpoint("checksum mismatch".into()));
        }
        let mut r = Cursor::new(body);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::BadCheckpoint(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(ModelError::BadCheckpoint(format!(
                "unsupported version {version}"
            )));
        }
        let config_len = read_u64(&mut r)? as usize;
        let mut config_json = vec![0u8; config_len];
        r.read_exact(&mut config_json)?;
        let config: RtmConfig = serde_json::from_slice(&config_json)
            .map_err(|e| ModelError::BadCheckpoint(format!("config parse: {e}")))?;
        let count = read_u32(&mut r)?;
        let mut sections = BTreeMap::new();
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let dtype = read_u8(&mut r)?;
            let rank = read_u8(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let len: usize = shape.iter().product();
            let section = match dtype {
                DTYPE_F64 => {
                    let mut data = Vec::with_capacity(len);
                    for _ in 0..len {
                        data.push(read_f64(&mut r)?);
                    }
                    Section::F64(Tensor::from_vec(&shape, data))
                }
                DTYPE_F32 => {
                    let mut data = Vec::with_capacity(len);
                    for _ in 0..len {
                        let mut b = [0u8; 4];
                        r.read_exact(&mut b)?;
                        data.push(f32::from_le_bytes(b));
                    }
                    Section::F32 { shape, data }
                }
                DTYPE_U64 => {
                    let mut data = Vec::with_capacity(len);
                    for _ in 0..len {
                        data.push(read_u64(&mut r)?);
                    }
                    Section::U64(data)
                }
                other => {
                    return Err(ModelError::BadCheckpoint(format!("unknown dtype {other}")))
                }
            };
            sections.insert(name, section);
        }
        Ok(Checkpoint { config, sections })
    }
}
