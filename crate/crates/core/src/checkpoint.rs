//! Versioned binary bundle: magic, version, a JSON header describing every
//! array, then the arrays themselves as little-endian bytes.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algo::Algorithm;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DNAVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint has no array `{0}`")]
    MissingArray(String),
    #[error("checkpoint array `{name}` has {got} elements, expected {expected}")]
    Length { name: String, expected: usize, got: usize },
    #[error("{0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::F64(_) => "f64",
            ArrayData::U64(_) => "u64",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    algorithm: Algorithm,
    env_steps: u64,
    iteration: u64,
    config_hash: String,
    config: String,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub algorithm: Algorithm,
    pub env_steps: u64,
    pub iteration: u64,
    /// Hash of the training-relevant part of the run config.
    pub config_hash: String,
    /// Resolved run config as TOML.
    pub config: String,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(algorithm: Algorithm, iteration: u64, env_steps: u64, config_hash: String, config: String) -> Self {
        Self { algorithm, env_steps, iteration, config_hash, config, arrays: Vec::new() }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: ArrayData) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape of `{name}`");
        self.arrays.push(NamedArray { name: name.to_string(), shape: shape.to_vec(), data });
    }

    pub fn push_f32(&mut self, name: &str, data: &[f32]) {
        self.push(name, &[data.len()], ArrayData::F32(data.to_vec()));
    }

    pub fn push_f64(&mut self, name: &str, data: &[f64]) {
        self.push(name, &[data.len()], ArrayData::F64(data.to_vec()));
    }

    pub fn push_u64(&mut self, name: &str, data: &[u64]) {
        self.push(name, &[data.len()], ArrayData::U64(data.to_vec()));
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray, CheckpointError> {
        self.arrays.iter().find(|a| a.name == name).ok_or_else(|| CheckpointError::MissingArray(name.to_string()))
    }

    fn typed<'a, T>(
        &'a self,
        name: &str,
        expected: Option<usize>,
        pick: impl Fn(&'a ArrayData) -> Option<&'a Vec<T>>,
    ) -> Result<&'a [T], CheckpointError> {
        let arr = self.array(name)?;
        let v =
            pick(&arr.data).ok_or_else(|| CheckpointError::Corrupt(format!("array `{name}` has the wrong dtype")))?;
        if let Some(n) = expected {
            if v.len() != n {
                return Err(CheckpointError::Length { name: name.to_string(), expected: n, got: v.len() });
            }
        }
        Ok(v)
    }

    pub fn f32s(&self, name: &str, expected: Option<usize>) -> Result<&[f32], CheckpointError> {
        self.typed(name, expected, |d| if let ArrayData::F32(v) = d { Some(v) } else { None })
    }

    pub fn f64s(&self, name: &str, expected: Option<usize>) -> Result<&[f64], CheckpointError> {
        self.typed(name, expected, |d| if let ArrayData::F64(v) = d { Some(v) } else { None })
    }

    pub fn u64s(&self, name: &str, expected: Option<usize>) -> Result<&[u64], CheckpointError> {
        self.typed(name, expected, |d| if let ArrayData::U64(v) = d { Some(v) } else { None })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.arrays.len());
        for a in &self.arrays {
            entries.push(ArrayEntry {
                name: a.name.clone(),
                dtype: a.data.dtype().to_string(),
                shape: a.shape.clone(),
                offset: payload.len(),
            });
            a.data.write_le(&mut payload);
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            algorithm: self.algorithm,
            env_steps: self.env_steps,
            iteration: self.iteration,
            config_hash: self.config_hash.clone(),
            config: self.config.clone(),
            arrays: entries,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if header_len > body.len() {
            return Err(CheckpointError::Corrupt("header length exceeds file".into()));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        if header.version != version {
            return Err(CheckpointError::Corrupt("header version disagrees with preamble".into()));
        }
        let payload = &body[header_len..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        let mut expected_offset = 0;
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            let width = match e.dtype.as_str() {
                "f32" => 4,
                "f64" | "u64" => 8,
                other => return Err(CheckpointError::Corrupt(format!("unknown dtype `{other}`"))),
            };
            if e.offset != expected_offset || e.offset + n * width > payload.len() {
                return Err(CheckpointError::Corrupt(format!("array `{}` out of bounds", e.name)));
            }
            let raw = &payload[e.offset..e.offset + n * width];
            let data = match e.dtype.as_str() {
                "f32" => {
                    ArrayData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
                }
                "f64" => {
                    ArrayData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
                }
                _ => ArrayData::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
            };
            expected_offset = e.offset + n * width;
            arrays.push(NamedArray { name: e.name, shape: e.shape, data });
        }
        if expected_offset != payload.len() {
            return Err(CheckpointError::Corrupt("trailing bytes after last array".into()));
        }
        Ok(Self {
            algorithm: header.algorithm,
            env_steps: header.env_steps,
            iteration: header.iteration,
            config_hash: header.config_hash,
            config: header.config,
            arrays,
        })
    }

    /// Writes through a temporary file and renames, so a crash never leaves
    /// a truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(Algorithm::Sac, 3, 12_288, "abc".into(), "[run]\nseed = 1\n".into());
        c.push_f32("w", &[1.5, -0.0, f32::MIN_POSITIVE, 3.25e-7]);
        c.push("m", &[2, 2], ArrayData::F64(vec![0.1, 0.2, 1e300, -7.0]));
        c.push_u64("rng", &[u64::MAX, 0, 42]);
        c.push_f32("empty", &[]);
        c
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.f32s("w", Some(4)).unwrap()[0], 1.5);
        assert!(back.f32s("w", Some(5)).is_err());
        assert!(back.f64s("w", None).is_err());
        assert!(matches!(back.u64s("nope", None), Err(CheckpointError::MissingArray(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, CheckpointError::Version { found: 7, expected: 1 }));
        assert!(err.to_string().contains("version 7"));
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(Checkpoint::from_bytes(b"hello"), Err(CheckpointError::BadMagic)));
        let mut bytes = sample().to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let c = sample();
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
    }
}
