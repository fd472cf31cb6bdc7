//! Versioned checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "FEROCCK\0"
//! version    u32
//! body_len   u64
//! body       body_len bytes
//! checksum   32 bytes SHA-256 of body
//! ```
//!
//! The body holds a JSON metadata block, the config snapshot as UTF-8 text,
//! and the named parameter tensors (`name`, dtype tag, shape, raw values).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::StageKind;
use super::metrics::EpochMetrics;
use crate::error::{Error, Result};
use crate::model::{ArchitectureDescriptor, ModelState, Preprocessing};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FEROCCK\0";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub preset: String,
    pub stage: Option<StageKind>,
    /// Checkpoint this model was initialised from, if any.
    pub parent: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState,
    pub preprocessing: Preprocessing,
    pub provenance: Provenance,
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
    pub config_snapshot: String,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    descriptor: ArchitectureDescriptor,
    preprocessing: Preprocessing,
    provenance: Provenance,
    epoch: usize,
    history: Vec<EpochMetrics>,
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let meta = Meta {
        descriptor: ckpt.model.descriptor().clone(),
        preprocessing: ckpt.preprocessing,
        provenance: ckpt.provenance.clone(),
        epoch: ckpt.epoch,
        history: ckpt.history.clone(),
    };
    let mut body = Vec::new();
    put_bytes(&mut body, &serde_json::to_vec(&meta)?);
    put_bytes(&mut body, ckpt.config_snapshot.as_bytes());
    let names = ckpt.model.param_names();
    body.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for (name, t) in names.iter().zip(ckpt.model.params()) {
        body.extend_from_slice(&(name.len() as u16).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
        body.push(DTYPE_F64);
        body.push(t.shape().len() as u8);
        for &d in t.shape() {
            body.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(Sha256::digest(&body).as_slice());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::InvalidArgument("checkpoint body is inconsistent".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 {
        return Err(Error::Checksum);
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checksum);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let body_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    if bytes.len() != HEADER_LEN + body_len + CHECKSUM_LEN {
        return Err(Error::Checksum);
    }
    let body = &bytes[HEADER_LEN..HEADER_LEN + body_len];
    if Sha256::digest(body).as_slice() != &bytes[HEADER_LEN + body_len..] {
        return Err(Error::Checksum);
    }

    let mut c = Cursor { buf: body, pos: 0 };
    let meta: Meta = serde_json::from_slice(c.blob()?)?;
    let config_snapshot = String::from_utf8(c.blob()?.to_vec())
        .map_err(|_| Error::InvalidArgument("config snapshot is not UTF-8".into()))?;
    let count = c.u32()? as usize;
    let expected = meta.descriptor.param_shapes();
    if count != expected.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} tensors", expected.len()),
            actual: format!("{count}"),
        });
    }
    let mut params = Vec::with_capacity(count);
    for (want_name, _) in &expected {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::InvalidArgument("tensor name is not UTF-8".into()))?;
        if name != want_name {
            return Err(Error::InvalidArgument(format!(
                "expected tensor `{want_name}`, found `{name}`"
            )));
        }
        if c.u8()? != DTYPE_F64 {
            return Err(Error::InvalidArgument(format!(
                "tensor `{name}` has an unsupported dtype"
            )));
        }
        let ndim = c.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = c
            .take(n * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        params.push(Tensor::from_vec(&shape, data)?);
    }
    Ok(Checkpoint {
        model: ModelState::from_params(meta.descriptor, params)?,
        preprocessing: meta.preprocessing,
        provenance: meta.provenance,
        epoch: meta.epoch,
        history: meta.history,
        config_snapshot,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsd::PhaseKind;
    use crate::model::build_toy_descriptor;

    fn sample() -> Checkpoint {
        Checkpoint {
            model: ModelState::random(build_toy_descriptor(&[4, 8], 16).unwrap(), 5).unwrap(),
            preprocessing: Preprocessing {
                channel_mean: [0.1 + 0.2, 100.0 / 3.0, 7.0],
                scale: 1.0 / 255.0,
            },
            provenance: Provenance {
                preset: "toy".into(),
                stage: Some(StageKind::OccludedFaces),
                parent: Some("stage1.ckpt".into()),
                seed: 1,
            },
            epoch: 2,
            history: vec![EpochMetrics {
                epoch: 1,
                phase: PhaseKind::Dense,
                lr: 1e-3,
                train_loss: std::f64::consts::LN_2,
                val_error: 0.123456789012345,
                sparsity: vec![0.0, 0.2],
            }],
            config_snapshot: "preset = \"toy\"\n".into(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ck = sample();
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.model.params().iter().zip(ck.model.params()) {
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn bumped_version_is_rejected() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn truncation_and_corruption_fail_checksum() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 15] {
            assert!(
                matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Checksum)),
                "cut {cut}"
            );
        }
        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 40] ^= 0x10;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Checksum)));
        assert!(matches!(
            decode_checkpoint(b"PNG\0\0\0\0\0garbage"),
            Err(Error::BadMagic)
        ));
    }
}
