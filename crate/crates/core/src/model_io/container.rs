use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::pipeline::TrainConfig;
use crate::repcam::BackboneConfig;
use crate::tensor::{Shape4, Tensor4};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RCAM";
pub const FORMAT_VERSION: u16 = 1;
/// Magic, version and header length.
const PREFIX_LEN: usize = 4 + 2 + 4;
const CRC_LEN: usize = 4;
/// Prefix of manifest names that hold per-chunk prompts.
pub const TVP_PREFIX: &str = "tvp.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Multi-branch training network.
    Training,
    /// Single-branch network produced by fusion.
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dims: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub kind: ModelKind,
    /// Topology of the stored tensors. A fused model records one branch.
    pub backbone: BackboneConfig,
    /// Branch count of the network the model was trained as.
    pub trained_branches: usize,
    pub train_config: Option<TrainConfig>,
    pub tensors: Vec<TensorEntry>,
}

/// A self-describing model file: header plus tensors in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    pub header: ContainerHeader,
    pub tensors: Vec<Tensor4<f32>>,
}

impl ModelContainer {
    pub fn new(
        kind: ModelKind,
        backbone: BackboneConfig,
        trained_branches: usize,
        train_config: Option<TrainConfig>,
        named: Vec<(String, Tensor4<f32>)>,
    ) -> Self {
        let (entries, tensors) = named
            .into_iter()
            .map(|(name, t)| {
                (
                    TensorEntry {
                        name,
                        dims: t.dims(),
                    },
                    t,
                )
            })
            .unzip();
        Self {
            header: ContainerHeader {
                kind,
                backbone,
                trained_branches,
                train_config,
                tensors: entries,
            },
            tensors,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor4<f32>> {
        self.header
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
    }

    /// Network tensors in manifest order, prompts excluded.
    pub fn network_tensors(&self) -> Vec<Tensor4<f32>> {
        self.header
            .tensors
            .iter()
            .zip(&self.tensors)
            .filter(|(e, _)| !e.name.starts_with(TVP_PREFIX))
            .map(|(_, t)| t.clone())
            .collect()
    }

    /// `(chunk id, prompt)` pairs sorted by chunk.
    pub fn prompts(&self) -> Vec<(usize, Tensor4<f32>)> {
        let mut out: Vec<_> = self
            .header
            .tensors
            .iter()
            .zip(&self.tensors)
            .filter_map(|(e, t)| {
                let id = e.name.strip_prefix(TVP_PREFIX)?.parse().ok()?;
                Some((id, t.clone()))
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Payload bytes spent on each prompt, by chunk.
    pub fn prompt_bytes(&self) -> Vec<(usize, u64)> {
        self.prompts()
            .into_iter()
            .map(|(id, t)| (id, (t.len() * 4) as u64))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        if self.header.tensors.len() != self.tensors.len() {
            return Err(FormatError::Manifest(format!(
                "{} manifest entries for {} tensors",
                self.header.tensors.len(),
                self.tensors.len()
            )));
        }
        for (e, t) in self.header.tensors.iter().zip(&self.tensors) {
            if e.dims != t.dims() {
                return Err(FormatError::Manifest(format!("{} is {} but manifest says {:?}", e.name, t.shape(), e.dims)));
            }
        }
        let header = serde_json::to_vec(&self.header).map_err(|e| FormatError::Header(e.to_string()))?;
        let header_len = u32::try_from(header.len()).map_err(|_| FormatError::Header("header too large".into()))?;
        let payload_len: usize = self.tensors.iter().map(|t| t.len() * 4).sum();
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload_len + CRC_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        let payload_start = out.len();
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[payload_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < 4 {
            return Err(FormatError::Truncated {
                expected: PREFIX_LEN,
                actual: bytes.len(),
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic([bytes[0], bytes[1], bytes[2], bytes[3]]));
        }
        if bytes.len() < PREFIX_LEN {
            return Err(FormatError::Truncated {
                expected: PREFIX_LEN,
                actual: bytes.len(),
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let header_end = PREFIX_LEN + header_len;
        if bytes.len() < header_end {
            return Err(FormatError::Truncated {
                expected: header_end,
                actual: bytes.len(),
            });
        }
        let header: ContainerHeader =
            serde_json::from_slice(&bytes[PREFIX_LEN..header_end]).map_err(|e| FormatError::Header(e.to_string()))?;
        let payload_len: usize = header
            .tensors
            .iter()
            .map(|e| Shape4::from(e.dims).numel() * 4)
            .sum();
        let expected = header_end + payload_len + CRC_LEN;
        if bytes.len() < expected {
            return Err(FormatError::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(FormatError::TrailingBytes(bytes.len() - expected));
        }
        let payload = &bytes[header_end..header_end + payload_len];
        let stored = u32::from_le_bytes(bytes[expected - CRC_LEN..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(FormatError::CrcMismatch { stored, computed });
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let tensors = header
            .tensors
            .iter()
            .map(|e| {
                let shape = Shape4::from(e.dims);
                let data: Vec<f32> = floats.by_ref().take(shape.numel()).collect();
                Tensor4::from_vec(shape, data).expect("length taken from shape")
            })
            .collect();
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}
