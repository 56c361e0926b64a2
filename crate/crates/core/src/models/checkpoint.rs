//! Self-describing parameter container.
//!
//! Layout: the 8-byte magic `A3GNCKPT`, a little-endian `u32` format version, a
//! `u64` header length, the JSON header, then every array's elements as
//! little-endian floats of the recorded dtype, in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn_core::ParamSet;
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 8] = b"A3GNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    seed: u64,
    config_hash: String,
    iteration: u64,
    meta: Value,
    arrays: Vec<ArrayEntry>,
}

/// Named parameter groups (one per network or optimizer moment) plus run metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Real = f32> {
    pub seed: u64,
    pub config_hash: String,
    pub iteration: u64,
    /// Free-form JSON: configs, metric summaries, optimizer step counts.
    pub meta: Value,
    groups: Vec<(String, ParamSet<T>)>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(seed: u64, config_hash: impl Into<String>, iteration: u64) -> Self {
        Self { seed, config_hash: config_hash.into(), iteration, meta: Value::Null, groups: Vec::new() }
    }

    pub fn insert(&mut self, group: &str, params: &ParamSet<T>) {
        self.groups.retain(|(g, _)| g != group);
        self.groups.push((group.to_string(), params.clone()));
    }

    pub fn group(&self, group: &str) -> Result<&ParamSet<T>> {
        self.groups
            .iter()
            .find(|(g, _)| g == group)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Format(format!("checkpoint has no group {group:?}")))
    }

    pub fn group_names(&self) -> Vec<&str> {
        self.groups.iter().map(|(g, _)| g.as_str()).collect()
    }

    /// Copies a stored group into `target`, checking names and shapes.
    pub fn restore_into(&self, group: &str, target: &mut ParamSet<T>) -> Result<()> {
        target.load_from(self.group(group)?.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let mut offset = 0;
        for (g, set) in &self.groups {
            for (name, t) in set.iter() {
                arrays.push(ArrayEntry { group: g.clone(), name: name.to_string(), shape: t.shape().to_vec(), offset });
                offset += t.len();
            }
        }
        let header = Header {
            version: FORMAT_VERSION,
            dtype: T::DTYPE.to_string(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            iteration: self.iteration,
            meta: self.meta.clone(),
            arrays,
        };
        let hjson = serde_json::to_vec(&header)?;
        let width = if T::DTYPE == "f32" { 4 } else { 8 };
        let mut out = Vec::with_capacity(20 + hjson.len() + offset * width);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        for (_, set) in &self.groups {
            for t in set.tensors() {
                for v in t.data() {
                    if width == 4 {
                        out.extend_from_slice(&(v.to_f64c() as f32).to_le_bytes());
                    } else {
                        out.extend_from_slice(&v.to_f64c().to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not an A3GN checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated header"))?;
        let hbytes = body.get(..hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(hbytes)?;
        if header.dtype != T::DTYPE {
            return Err(Error::Format(format!("checkpoint holds {} arrays, expected {}", header.dtype, T::DTYPE)));
        }
        let width = if header.dtype == "f32" { 4 } else { 8 };
        let data = &body[hlen..];
        let mut groups: Vec<(String, ParamSet<T>)> = Vec::new();
        let mut staged: Vec<(String, Vec<String>, Vec<Tensor<T>>)> = Vec::new();
        let mut expected = 0;
        for e in &header.arrays {
            if e.offset != expected {
                return Err(bad("array offsets are not contiguous"));
            }
            let n: usize = e.shape.iter().product();
            let raw = data.get(e.offset * width..(e.offset + n) * width).ok_or_else(|| bad("truncated array data"))?;
            let vals: Vec<T> = raw
                .chunks_exact(width)
                .map(|c| {
                    if width == 4 {
                        T::from_f64c(f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    } else {
                        T::from_f64c(f64::from_le_bytes(c.try_into().unwrap()))
                    }
                })
                .collect();
            let t = Tensor::new(&e.shape, vals)?;
            match staged.last_mut() {
                Some((g, names, ts)) if *g == e.group => {
                    names.push(e.name.clone());
                    ts.push(t);
                }
                _ => staged.push((e.group.clone(), vec![e.name.clone()], vec![t])),
            }
            expected += n;
        }
        if expected * width != data.len() {
            return Err(bad("trailing bytes after array data"));
        }
        for (g, names, ts) in staged {
            groups.push((g, ParamSet::from_parts(names, ts)));
        }
        Ok(Self { seed: header.seed, config_hash: header.config_hash, iteration: header.iteration, meta: header.meta, groups })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        f.write_all(&bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}
