use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adamw::OptimizerState;
use super::{StepRecord, TrainConfig};
use crate::datapipe::{SamplerState, Stage};
use crate::encoder::{EncoderConfig, EncoderModel, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GTEF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// Stage that produced the checkpoint; `None` for a fresh initialisation.
    pub stage: Option<Stage>,
    pub step: u64,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub vocab: Vec<String>,
    pub train: Option<TrainConfig>,
    pub sampler: Option<SamplerState>,
    /// Records consumed divided by records available in the stage's sources.
    pub epoch_fraction: f64,
    pub optimizer_step: u64,
    pub log: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: EncoderModel,
    pub optimizer: Option<OptimizerState>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("checkpoint truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
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

    fn block(&mut self) -> Result<&'a [u8]> {
        let len = usize::try_from(self.u64()?).map_err(|_| bad("block too large"))?;
        self.take(len)
    }
}

impl Checkpoint {
    /// Untrained checkpoint wrapping a freshly initialised model.
    pub fn initial(model: EncoderModel, vocab: &Vocabulary, seed: u64) -> Self {
        Self {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                stage: None,
                step: 0,
                seed,
                encoder: model.config().clone(),
                vocab: vocab.tokens().to_vec(),
                train: None,
                sampler: None,
                epoch_fraction: 0.0,
                optimizer_step: 0,
                log: Vec::new(),
            },
            model,
            optimizer: None,
        }
    }

    pub fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::from_tokens(self.meta.vocab.clone())
    }

    fn tensors(&self) -> Vec<(String, &[usize], &[f64])> {
        let model = &self.model;
        let mut out: Vec<(String, &[usize], &[f64])> = model
            .names()
            .iter()
            .zip(model.params())
            .map(|(n, t)| (format!("param.{n}"), t.shape(), t.data()))
            .collect();
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [("adam.m", &opt.m), ("adam.v", &opt.v)] {
                for ((n, t), m) in model.names().iter().zip(model.params()).zip(moments) {
                    out.push((format!("{prefix}.{n}"), t.shape(), m.as_slice()));
                }
            }
        }
        out
    }

    /// Serialises to the binary checkpoint layout: magic, version, a JSON
    /// metadata block, a JSON manifest of `(name, shape, offset)`, then raw
    /// little-endian f64 payloads.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.meta.encoder != *self.model.config() {
            return Err(Error::Contract(
                "metadata encoder config differs from model".into(),
            ));
        }
        let tensors = self.tensors();
        let mut offset = 0u64;
        let manifest: Vec<ManifestEntry> = tensors
            .iter()
            .map(|(name, shape, data)| {
                let e = ManifestEntry {
                    name: name.clone(),
                    shape: shape.to_vec(),
                    offset,
                };
                offset += 8 * data.len() as u64;
                e
            })
            .collect();
        let meta = serde_json::to_vec(&self.meta)?;
        let manifest = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(32 + meta.len() + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, _, data) in &tensors {
            for x in *data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("not a checkpoint: bad magic bytes"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let meta: CheckpointMeta = serde_json::from_slice(r.block()?)?;
        if meta.format_version != version {
            return Err(bad("metadata version disagrees with header"));
        }
        let manifest: Vec<ManifestEntry> = serde_json::from_slice(r.block()?)?;
        let payload = &bytes[r.pos..];

        let mut expected_offset = 0u64;
        let mut tensors = Vec::with_capacity(manifest.len());
        for e in manifest {
            if e.offset != expected_offset {
                return Err(bad(format!(
                    "tensor {} has offset {}, expected {expected_offset}",
                    e.name, e.offset
                )));
            }
            let numel: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start
                .checked_add(numel * 8)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| bad(format!("tensor {} runs past end of file", e.name)))?;
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            expected_offset = end as u64;
            tensors.push((e.name, Tensor::new(e.shape, data)?));
        }
        if expected_offset as usize != payload.len() {
            return Err(bad("trailing bytes after last tensor"));
        }

        let count = meta.encoder.param_layout().len();
        let mut iter = tensors.into_iter();
        let section = |iter: &mut std::vec::IntoIter<(String, Tensor)>, prefix: &str| {
            (0..count)
                .map(|_| {
                    let (name, t) = iter.next().ok_or_else(|| bad("missing tensors"))?;
                    let short = name
                        .strip_prefix(prefix)
                        .and_then(|s| s.strip_prefix('.'))
                        .ok_or_else(|| bad(format!("unexpected tensor {name}")))?;
                    Ok((short.to_string(), t))
                })
                .collect::<Result<Vec<_>>>()
        };
        let params = section(&mut iter, "param")?;
        let model = EncoderModel::from_named(meta.encoder.clone(), params)?;
        let optimizer = if iter.len() == 0 {
            None
        } else {
            let m = section(&mut iter, "adam.m")?;
            let v = section(&mut iter, "adam.v")?;
            for (named, kind) in [(&m, "m"), (&v, "v")] {
                for ((name, t), (want, p)) in
                    named.iter().zip(model.names().iter().zip(model.params()))
                {
                    if name != want || t.shape() != p.shape() {
                        return Err(bad(format!(
                            "adam.{kind}.{name} does not match parameter {want}"
                        )));
                    }
                }
            }
            Some(OptimizerState {
                step: meta.optimizer_step,
                m: m.into_iter().map(|(_, t)| t.into_data()).collect(),
                v: v.into_iter().map(|(_, t)| t.into_data()).collect(),
            })
        };
        if iter.len() != 0 {
            return Err(bad("unexpected extra tensors"));
        }
        Vocabulary::from_tokens(meta.vocab.clone())?;
        if meta.vocab.len() != meta.encoder.vocab_size {
            return Err(bad("vocabulary size disagrees with encoder config"));
        }
        Ok(Self {
            meta,
            model,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
