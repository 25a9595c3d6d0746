//! Model checkpoints: a structured-text architecture descriptor plus the
//! ordered named parameter tensors, in a self-describing binary container.
//!
//! Layout (all integers little-endian): magic "GSNC", u32 version = 1,
//! u32 descriptor length, UTF-8 JSON descriptor, then per tensor:
//! u16 name length, name bytes, u8 rank, u32 dims, f64 data. The descriptor
//! alone determines which tensors must follow (names, shapes, order), so a
//! truncated or reordered file is rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn3d::{Cnn3dConfig, Cnn3dModel};
use crate::error::{Error, Result};
use crate::lstm::{LstmConfig, LstmModel};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GSNC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Architecture descriptor: family tag plus the family's config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "config", rename_all = "snake_case")]
pub enum Descriptor {
    Lstm(LstmConfig),
    Cnn3d(Cnn3dConfig),
}

impl Descriptor {
    pub fn family_name(&self) -> &'static str {
        match self {
            Descriptor::Lstm(_) => "lstm",
            Descriptor::Cnn3d(_) => "cnn3d",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Descriptor::Lstm(c) => c.num_classes,
            Descriptor::Cnn3d(c) => c.num_classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub descriptor: Descriptor,
    pub tensors: Vec<(String, Tensor)>,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let descriptor = serde_json::to_string(&self.descriptor)
            .map_err(|e| Error::Checkpoint(format!("descriptor serialize: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
        out.extend_from_slice(descriptor.as_bytes());
        for (name, tensor) in &self.tensors {
            if name.len() > u16::MAX as usize {
                return Err(Error::Checkpoint(format!("tensor name too long: {name:?}")));
            }
            if tensor.rank() > u8::MAX as usize {
                return Err(Error::Checkpoint(format!("tensor rank too high: {name:?}")));
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(tensor.rank() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
            if *cursor + n > bytes.len() {
                return Err(Error::Checkpoint(format!(
                    "truncated at byte {} while reading {what}",
                    *cursor
                )));
            }
            let slice = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(slice)
        };
        let magic = take(&mut cursor, 4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, expected GSNC".into()));
        }
        let version = u32::from_le_bytes(take(&mut cursor, 4, "version")?.try_into().expect("4"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let desc_len = u32::from_le_bytes(
            take(&mut cursor, 4, "descriptor length")?
                .try_into()
                .expect("4"),
        ) as usize;
        let desc_bytes = take(&mut cursor, desc_len, "descriptor")?;
        let desc_text = std::str::from_utf8(desc_bytes)
            .map_err(|e| Error::Checkpoint(format!("descriptor not UTF-8: {e}")))?;
        let descriptor: Descriptor = serde_json::from_str(desc_text)
            .map_err(|e| Error::Checkpoint(format!("descriptor parse: {e}")))?;

        // The descriptor pins the exact tensor sequence.
        let expected = expected_tensors(&descriptor)?;
        let mut tensors = Vec::with_capacity(expected.len());
        for (expect_name, expect_shape) in &expected {
            let name_len =
                u16::from_le_bytes(take(&mut cursor, 2, "name length")?.try_into().expect("2"))
                    as usize;
            let name = std::str::from_utf8(take(&mut cursor, name_len, "name")?)
                .map_err(|e| Error::Checkpoint(format!("tensor name not UTF-8: {e}")))?
                .to_string();
            if &name != expect_name {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} out of order, expected {expect_name:?}"
                )));
            }
            let rank = take(&mut cursor, 1, "rank")?[0] as usize;
            if rank != expect_shape.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} rank {rank}, expected {}",
                    expect_shape.len()
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(
                    u32::from_le_bytes(take(&mut cursor, 4, "dim")?.try_into().expect("4"))
                        as usize,
                );
            }
            if &shape != expect_shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} shape {shape:?}, expected {expect_shape:?}"
                )));
            }
            let numel: usize = shape.iter().product();
            let payload = take(&mut cursor, numel * 8, "tensor data")?;
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} contains non-finite values"
                )));
            }
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if cursor != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last expected tensor",
                bytes.len() - cursor
            )));
        }
        Ok(ModelCheckpoint {
            descriptor,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Canonical tensor sequence (names and shapes) implied by a descriptor.
fn expected_tensors(descriptor: &Descriptor) -> Result<Vec<(String, Vec<usize>)>> {
    match descriptor {
        Descriptor::Lstm(config) => {
            let model = LstmModel::init(config.clone(), 0)?;
            Ok(model
                .named_params()
                .iter()
                .map(|(n, t)| (n.clone(), t.shape().to_vec()))
                .collect())
        }
        Descriptor::Cnn3d(config) => {
            let model = Cnn3dModel::init(config.clone(), 0)?;
            Ok(model
                .named_params()
                .iter()
                .map(|(n, t)| (n.clone(), t.shape().to_vec()))
                .chain(
                    model
                        .named_state()
                        .iter()
                        .map(|(n, t)| (n.clone(), t.shape().to_vec())),
                )
                .collect())
        }
    }
}

/// Runtime dispatch over the two model families.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Lstm(LstmModel),
    Cnn3d(Cnn3dModel),
}

impl AnyModel {
    pub fn family_name(&self) -> &'static str {
        match self {
            AnyModel::Lstm(_) => "lstm",
            AnyModel::Cnn3d(_) => "cnn3d",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            AnyModel::Lstm(m) => m.config.num_classes,
            AnyModel::Cnn3d(m) => m.config.num_classes,
        }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        match &ckpt.descriptor {
            Descriptor::Lstm(config) => Ok(AnyModel::Lstm(LstmModel::from_named(
                config.clone(),
                &ckpt.tensors,
            )?)),
            Descriptor::Cnn3d(config) => Ok(AnyModel::Cnn3d(Cnn3dModel::from_named(
                config.clone(),
                &ckpt.tensors,
            )?)),
        }
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        match self {
            AnyModel::Lstm(m) => ModelCheckpoint {
                descriptor: Descriptor::Lstm(m.config.clone()),
                tensors: m
                    .named_params()
                    .into_iter()
                    .map(|(n, t)| (n, t.clone()))
                    .collect(),
            },
            AnyModel::Cnn3d(m) => {
                let mut tensors: Vec<(String, Tensor)> = m
                    .named_params()
                    .into_iter()
                    .map(|(n, t)| (n, t.clone()))
                    .collect();
                tensors.extend(m.named_state());
                ModelCheckpoint {
                    descriptor: Descriptor::Cnn3d(m.config.clone()),
                    tensors,
                }
            }
        }
    }

    /// Class probabilities for a `[T, 63]` landmark window.
    pub fn infer_landmarks(&self, seq: &Tensor) -> Result<Tensor> {
        match self {
            AnyModel::Lstm(m) => m.infer(seq),
            AnyModel::Cnn3d(_) => Err(Error::ModalityMismatch {
                expected: "frame volumes",
                got: "landmark sequences",
            }),
        }
    }

    /// Class probabilities for a `[T, H, W, C]` frame volume.
    pub fn infer_volume(&self, volume: &Tensor) -> Result<Tensor> {
        match self {
            AnyModel::Cnn3d(m) => m.infer(volume),
            AnyModel::Lstm(_) => Err(Error::ModalityMismatch {
                expected: "landmark sequences",
                got: "frame volumes",
            }),
        }
    }
}
