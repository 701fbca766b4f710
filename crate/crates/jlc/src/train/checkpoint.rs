//! Self-describing binary checkpoint (`.jlck`).
//!
//! Layout: magic "JLCK" | version u16 | header_len u32 | header JSON |
//! raw f64 little-endian parameter blob | sha256 over everything before it.
//! The JSON header carries the architecture, the loss config, training
//! metadata and every tensor shape, so a file decodes without any external
//! configuration; parameters round-trip bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::arch::{ArchDescriptor, CodecParams};
use crate::codec::entropy::EntropyModel;
use crate::error::{Error, Result};
use crate::losses::jnd::LossConfig;
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"JLCK";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub lambda: f64,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    arch: ArchDescriptor,
    entropy_knots: usize,
    loss: LossConfig,
    meta: CheckpointMeta,
    shapes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: CodecParams,
    pub entropy: EntropyModel,
    pub loss: LossConfig,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    fn all_tensors(&self) -> Vec<&Tensor> {
        let mut v = self.params.param_tensors();
        v.extend(self.entropy.param_tensors());
        v
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.all_tensors();
        let header = Header {
            arch: self.params.arch.clone(),
            entropy_knots: self.entropy.knots(),
            loss: self.loss.clone(),
            meta: self.meta.clone(),
            shapes: tensors.iter().map(|t| t.shape().to_vec()).collect(),
        };
        let header_json = serde_json::to_vec(&header)?;

        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 2 + 4 + 32 {
            return Err(Error::Format("checkpoint file too short".into()));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Format("not a JLC checkpoint (bad magic)".into()));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let (body, stamp) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != stamp {
            return Err(Error::Format("checkpoint hash mismatch (corrupt file)".into()));
        }

        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        if 10 + header_len > body.len() {
            return Err(Error::Format("checkpoint header truncated".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[10..10 + header_len])?;

        let mut pos = 10 + header_len;
        let mut tensors = Vec::with_capacity(header.shapes.len());
        for shape in &header.shapes {
            let n: usize = shape.iter().product();
            if pos + n * 8 > body.len() {
                return Err(Error::Format("checkpoint parameter blob truncated".into()));
            }
            let data: Vec<f64> = body[pos..pos + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pos += n * 8;
            tensors.push(Tensor::from_vec(shape, data));
        }
        if pos != body.len() {
            return Err(Error::Format("checkpoint has trailing bytes".into()));
        }

        // rebuild the typed containers from the canonical order
        let mut params = CodecParams::init(header.arch.clone(), 0)?;
        let mut entropy = EntropyModel::init(
            header.arch.latent_channels,
            header.entropy_knots,
            0,
        );
        let expected: usize = params.param_tensors().len() + entropy.param_tensors().len();
        if tensors.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, architecture needs {expected}",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        for slot in params.param_tensors_mut() {
            let t = it.next().unwrap();
            if t.shape() != slot.shape() {
                return Err(Error::Format("checkpoint tensor shape mismatch".into()));
            }
            *slot = t;
        }
        for slot in entropy.param_tensors_mut() {
            let t = it.next().unwrap();
            if t.shape() != slot.shape() {
                return Err(Error::Format("checkpoint tensor shape mismatch".into()));
            }
            *slot = t;
        }
        params.validate()?;

        Ok(Checkpoint {
            params,
            entropy,
            loss: header.loss,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::distortion::DistortionFamily;
    use crate::losses::jnd::LossVariant;

    fn sample_checkpoint() -> Checkpoint {
        let arch = ArchDescriptor {
            latent_channels: 6,
            hidden_channels: 5,
            downsampling: 4,
            kernel_size: 3,
            nonlinearity: crate::codec::arch::Nonlinearity::Gdn,
        };
        Checkpoint {
            params: CodecParams::init(arch, 11).unwrap(),
            entropy: EntropyModel::init(6, 4, 12),
            loss: LossConfig::new(LossVariant::Iwl, DistortionFamily::Mse, 0.0067),
            meta: CheckpointMeta {
                lambda: 0.0067,
                seed: 11,
                epoch: 3,
            },
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.jlck");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.entropy.content_hash(), ckpt.entropy.content_hash());
    }

    #[test]
    fn corruption_is_detected() {
        let ckpt = sample_checkpoint();
        let mut bytes = ckpt.to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
