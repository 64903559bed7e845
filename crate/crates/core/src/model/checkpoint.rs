//! Checkpoint container.
//!
//! Layout: 8-byte magic `AFFCKPT\0`, little-endian `u32` version, `u64`
//! header length, a JSON header (config, training metadata, tensor table),
//! then every tensor as little-endian `f64` in table order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DecoderConfig, DecoderParams};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"AFFCKPT\0";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub final_loss: Option<f64>,
    pub loss_history: Vec<f64>,
    pub dataset_hash: String,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: DecoderConfig,
    pub params: DecoderParams,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: DecoderConfig,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// Freshly initialised, untrained checkpoint.
    pub fn initial(config: DecoderConfig) -> Self {
        let params = DecoderParams::init(&config);
        Self {
            config,
            params,
            metadata: TrainingMetadata::default(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let groups = self.params.groups();
        let header = Header {
            config: self.config.clone(),
            metadata: self.metadata.clone(),
            tensors: groups
                .iter()
                .map(|(name, v)| TensorEntry {
                    name: name.clone(),
                    len: v.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, values) in groups {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic)
            .map_err(|_| CheckpointError::BadMagic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut u32b = [0u8; 4];
        cur.read_exact(&mut u32b)
            .map_err(|_| CheckpointError::Corrupt("truncated version".into()))?;
        let version = u32::from_le_bytes(u32b);
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let mut u64b = [0u8; 8];
        cur.read_exact(&mut u64b)
            .map_err(|_| CheckpointError::Corrupt("truncated header length".into()))?;
        let header_len = u64::from_le_bytes(u64b) as usize;
        if cur.len() < header_len {
            return Err(CheckpointError::Corrupt("truncated header".into()));
        }
        let (json, mut data) = cur.split_at(header_len);
        let header: Header = serde_json::from_slice(json)
            .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
        header
            .config
            .validate()
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

        let mut params = DecoderParams::zeros(&header.config);
        let groups = params.groups_mut();
        if groups.len() != header.tensors.len() {
            return Err(CheckpointError::Corrupt(format!(
                "expected {} tensors, header lists {}",
                groups.len(),
                header.tensors.len()
            )));
        }
        for ((name, dst), entry) in groups.into_iter().zip(&header.tensors) {
            if name != entry.name || dst.len() != entry.len {
                return Err(CheckpointError::Corrupt(format!(
                    "tensor {} ({}) does not match config shape {} ({})",
                    entry.name,
                    entry.len,
                    name,
                    dst.len()
                )));
            }
            for v in dst.iter_mut() {
                data.read_exact(&mut u64b)
                    .map_err(|_| CheckpointError::Corrupt(format!("truncated tensor {name}")))?;
                *v = f64::from_le_bytes(u64b);
            }
        }
        if !data.is_empty() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                data.len()
            )));
        }
        Ok(Self {
            config: header.config,
            params,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_is_bit_exact() {
        let mut ck = Checkpoint::initial(DecoderConfig {
            seed: 11,
            ..Default::default()
        });
        ck.params.stages[1].conv.weight[3] = f64::MIN_POSITIVE;
        ck.params.head.bias[0] = -0.0;
        ck.metadata.loss_history = vec![1.5, 0.1 + 0.2];
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.config, ck.config);
        assert_eq!(back.metadata, ck.metadata);
        for ((_, a), (_, b)) in ck.params.groups().iter().zip(back.params.groups()) {
            let ab: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let bytes = Checkpoint::initial(DecoderConfig::default()).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::BadMagic)
        ));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&v2),
            Err(CheckpointError::UnsupportedVersion(2))
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Corrupt(_))
        ));
    }
}
