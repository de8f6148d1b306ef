//! Binary checkpoints.
//!
//! Little-endian layout: magic `HZCK`, format version (u32), roster version
//! (u32), metadata JSON length (u64) and bytes, then tensors until the
//! trailing CRC32 of everything before it. Each tensor is name length (u32),
//! name, dims count (u32), dims (u64 each), and `prod(dims)` f64 values.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::descriptors::DescriptorStats;
use crate::nn::{Mlp, Policy};
use crate::roster::ROSTER_VERSION;
use crate::scalar::Scalar;
use crate::trainer::{Adam, ReturnTracker, TrainState};

pub const MAGIC: &[u8; 4] = b"HZCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("roster version {found} does not match this build ({expected})")]
    RosterVersionMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<u64>, data: Vec<f64>) -> Self {
        Tensor {
            name: name.into(),
            dims,
            data,
        }
    }

    pub fn scalar(name: impl Into<String>, v: f64) -> Self {
        Self::new(name, vec![1], vec![v])
    }

    pub fn vector(name: impl Into<String>, data: Vec<f64>) -> Self {
        Self::new(name, vec![data.len() as u64], data)
    }
}

/// Decoded file contents before interpretation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCheckpoint {
    pub roster_version: u32,
    pub meta_json: String,
    pub tensors: Vec<Tensor>,
}

pub fn encode(raw: &RawCheckpoint) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    b.extend_from_slice(&raw.roster_version.to_le_bytes());
    b.extend_from_slice(&(raw.meta_json.len() as u64).to_le_bytes());
    b.extend_from_slice(raw.meta_json.as_bytes());
    for t in &raw.tensors {
        b.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        b.extend_from_slice(t.name.as_bytes());
        b.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            b.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        if end > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, n: u64) -> Result<usize, CheckpointError> {
        usize::try_from(n).map_err(|_| CheckpointError::Truncated)
    }
}

pub fn decode(bytes: &[u8]) -> Result<RawCheckpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 4 + 4 + 4 + 8 + 4 {
        return Err(CheckpointError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let roster_version = r.u32()?;
    let n = r.u64()?;
    let n = r.len(n)?;
    let meta_json = std::str::from_utf8(r.take(n)?)
        .map_err(|e| CheckpointError::Malformed(format!("metadata is not UTF-8: {e}")))?
        .to_string();
    let mut tensors = Vec::new();
    while r.pos < body.len() {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|e| CheckpointError::Malformed(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let nd = r.u32()? as usize;
        let mut dims = Vec::with_capacity(nd.min(16));
        let mut count: u64 = 1;
        for _ in 0..nd {
            let d = r.u64()?;
            count = count.checked_mul(d).ok_or(CheckpointError::Truncated)?;
            dims.push(d);
        }
        let count = r.len(count)?;
        let raw = r.take(count.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor { name, dims, data });
    }
    Ok(RawCheckpoint {
        roster_version,
        meta_json,
        tensors,
    })
}

/// Everything in a checkpoint that is not a tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub scalar: String,
    /// `pretrain`, `S` (scratch) or `P` (from a pretrained policy).
    pub regime: String,
    pub seed: u64,
    pub epoch: usize,
    pub lr: f64,
    pub curriculum_scale: f64,
    pub embodiments: Vec<String>,
    pub obs_norm_frozen: bool,
    pub run: RunConfig,
}

/// A decoded training state with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub state: TrainState<T>,
}

fn mlp_tensors<T: Scalar>(prefix: &str, m: &Mlp<T>, out: &mut Vec<Tensor>) {
    for (name, dims, data) in m.tensors() {
        out.push(Tensor::new(
            format!("{prefix}.{name}"),
            dims.iter().map(|&d| d as u64).collect(),
            data.iter().map(|v| v.as_f64()).collect(),
        ));
    }
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

impl<T: Scalar> Checkpoint<T> {
    /// Builds the metadata from `state`, overriding its bookkeeping fields.
    pub fn new(state: TrainState<T>, run: RunConfig, embodiments: Vec<String>, regime: &str, seed: u64) -> Self {
        let meta = CheckpointMeta {
            scalar: T::NAME.to_string(),
            regime: regime.to_string(),
            seed,
            epoch: state.epoch,
            lr: state.lr,
            curriculum_scale: state.curriculum_scale,
            embodiments,
            obs_norm_frozen: state.policy.obs_norm.frozen,
            run,
        };
        Checkpoint { meta, state }
    }

    pub fn to_raw(&self) -> RawCheckpoint {
        let s = &self.state;
        let p = &s.policy;
        let mut t = Vec::new();
        mlp_tensors("actor", &p.actor, &mut t);
        mlp_tensors("critic", &p.critic, &mut t);
        mlp_tensors("estimator", &p.estimator, &mut t);
        for (i, ls) in p.log_std.iter().enumerate() {
            t.push(Tensor::vector(format!("log_std.{i}"), to_f64(ls)));
        }
        t.push(Tensor::vector("obs_norm.mean", p.obs_norm.mean.clone()));
        t.push(Tensor::vector("obs_norm.var", p.obs_norm.var.clone()));
        t.push(Tensor::scalar("obs_norm.count", p.obs_norm.count));
        t.push(Tensor::vector("desc_stats.mean", s.desc_stats.mean.clone()));
        t.push(Tensor::vector("desc_stats.std", s.desc_stats.std.clone()));
        for (k, m) in s.adam.m.iter().enumerate() {
            t.push(Tensor::vector(format!("adam.m.{k}"), to_f64(m)));
        }
        for (k, v) in s.adam.v.iter().enumerate() {
            t.push(Tensor::vector(format!("adam.v.{k}"), to_f64(v)));
        }
        t.push(Tensor::scalar("adam.t", s.adam.t as f64));
        t.push(Tensor::vector(
            "returns.value",
            s.returns.value.iter().map(|v| v.unwrap_or(0.0)).collect(),
        ));
        t.push(Tensor::vector(
            "returns.seen",
            s.returns.value.iter().map(|v| if v.is_some() { 1.0 } else { 0.0 }).collect(),
        ));
        t.push(Tensor::vector("weights", s.weights.clone()));
        let mut meta = self.meta.clone();
        meta.epoch = s.epoch;
        meta.lr = s.lr;
        meta.curriculum_scale = s.curriculum_scale;
        meta.obs_norm_frozen = p.obs_norm.frozen;
        RawCheckpoint {
            roster_version: ROSTER_VERSION,
            meta_json: serde_json::to_string(&meta).expect("metadata serializes"),
            tensors: t,
        }
    }

    pub fn from_raw(raw: RawCheckpoint) -> Result<Self, CheckpointError> {
        if raw.roster_version != ROSTER_VERSION {
            return Err(CheckpointError::RosterVersionMismatch {
                found: raw.roster_version,
                expected: ROSTER_VERSION,
            });
        }
        let meta: CheckpointMeta = serde_json::from_str(&raw.meta_json)
            .map_err(|e| CheckpointError::Malformed(format!("metadata: {e}")))?;
        let mut tensors: std::collections::BTreeMap<String, Tensor> =
            raw.tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        let n_sigma = (0..).take_while(|i| tensors.contains_key(&format!("log_std.{i}"))).count();
        let mut take = |name: &str, len: usize| -> Result<Vec<f64>, CheckpointError> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor {name}")))?;
            if t.data.len() != len {
                return Err(CheckpointError::Malformed(format!(
                    "tensor {name} has {} values, expected {len}",
                    t.data.len()
                )));
            }
            Ok(t.data)
        };
        if n_sigma == 0 {
            return Err(CheckpointError::Malformed("no log_std tensors".into()));
        }
        let pcfg = meta.run.trainer.policy.clone();
        pcfg.validate().map_err(CheckpointError::Malformed)?;
        let mut policy = Policy::<T>::new(pcfg, n_sigma, &mut ChaCha8Rng::seed_from_u64(0));
        for (prefix, mlp) in [
            ("actor", &mut policy.actor),
            ("critic", &mut policy.critic),
            ("estimator", &mut policy.estimator),
        ] {
            let names: Vec<String> = mlp.tensors().into_iter().map(|(n, _, _)| n).collect();
            for (name, dst) in names.iter().zip(mlp.tensors_mut()) {
                let data = take(&format!("{prefix}.{name}"), dst.len())?;
                for (d, v) in dst.iter_mut().zip(data) {
                    *d = T::lit(v);
                }
            }
        }
        let action_len = policy.log_std[0].len();
        for i in 0..n_sigma {
            policy.log_std[i] = take(&format!("log_std.{i}"), action_len)?.into_iter().map(T::lit).collect();
        }
        let obs_dim = policy.obs_norm.dim();
        policy.obs_norm.mean = take("obs_norm.mean", obs_dim)?;
        policy.obs_norm.var = take("obs_norm.var", obs_dim)?;
        policy.obs_norm.count = take("obs_norm.count", 1)?[0];
        policy.obs_norm.frozen = meta.obs_norm_frozen;
        let desc_len = DescriptorStats::identity().mean.len();
        let desc_stats = DescriptorStats {
            mean: take("desc_stats.mean", desc_len)?,
            std: take("desc_stats.std", desc_len)?,
        };
        let mut adam = Adam::<T>::for_policy(&mut policy);
        for k in 0..adam.m.len() {
            let n = adam.m[k].len();
            adam.m[k] = take(&format!("adam.m.{k}"), n)?.into_iter().map(T::lit).collect();
            adam.v[k] = take(&format!("adam.v.{k}"), n)?.into_iter().map(T::lit).collect();
        }
        adam.t = take("adam.t", 1)?[0] as u64;
        let n_emb = meta.embodiments.len();
        let value = take("returns.value", n_emb)?;
        let seen = take("returns.seen", n_emb)?;
        let mut returns = ReturnTracker::new(n_emb, meta.run.trainer.return_decay);
        returns.value = value
            .into_iter()
            .zip(seen)
            .map(|(v, s)| if s != 0.0 { Some(v) } else { None })
            .collect();
        let weights = take("weights", n_emb)?;
        if let Some(name) = tensors.keys().next() {
            return Err(CheckpointError::Malformed(format!("unexpected tensor {name}")));
        }
        let state = TrainState {
            policy,
            adam,
            epoch: meta.epoch,
            curriculum_scale: meta.curriculum_scale,
            lr: meta.lr,
            returns,
            weights,
            desc_stats,
        };
        Ok(Checkpoint { meta, state })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.to_raw())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        Self::from_raw(decode(bytes)?)
    }

    /// Writes through a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |e: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp).map_err(io)?;
            f.write_all(&self.to_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}
