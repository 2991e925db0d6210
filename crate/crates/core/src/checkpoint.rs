//! Binary checkpoints.
//!
//! Layout (little-endian): magic `DFLC`, `u32` version, `u32`-length-prefixed
//! config text, `u64` training step, `u64` generator and discriminator
//! optimizer steps, `u32` record count, then per record a `u32`-length-prefixed
//! name, `u32` rank, `u64` dims and `f64` data.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::ParamStore;
use crate::optim::Adam;
use crate::tensor::Tensor;
use crate::trainer::Trainer;

pub const MAGIC: &[u8; 4] = b"DFLC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub gen_opt_step: u64,
    pub disc_opt_step: u64,
    pub tensors: Vec<(String, Tensor)>,
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend(VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_text());
        for v in [self.step, self.gen_opt_step, self.disc_opt_step] {
            out.extend(v.to_le_bytes());
        }
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend((t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(&MAGIC[..]) {
            return Err(Error::Checkpoint("missing DFLC magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch { found: version, expected: VERSION });
        }
        let config = TrainConfig::parse(&r.string()?)?;
        let (step, gen_opt_step, disc_opt_step) = (r.u64()?, r.u64()?, r.u64()?);
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|l| l.checked_mul(8).is_some())
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} has an absurd shape {shape:?}")))?;
            let raw = r.take(len * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config, step, gen_opt_step, disc_opt_step, tensors })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn push_store(out: &mut Vec<(String, Tensor)>, prefix: &str, store: &ParamStore, opt: &Adam) {
    for id in store.ids() {
        out.push((format!("{prefix}/{}", store.name(id)), store.get(id).clone()));
    }
    for (kind, moments) in [("m", &opt.m), ("v", &opt.v)] {
        for id in store.ids() {
            out.push((format!("{prefix}.{kind}/{}", store.name(id)), moments[id.index()].clone()));
        }
    }
}

fn restore_store(
    map: &mut HashMap<String, Tensor>,
    prefix: &str,
    store: &mut ParamStore,
    opt: &mut Adam,
) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    let mut take = |key: String, like: &Tensor| -> Result<Tensor> {
        let t = map.remove(&key).ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
        if t.shape() != like.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {key} has shape {:?}, model expects {:?}",
                t.shape(),
                like.shape()
            )));
        }
        Ok(t)
    };
    for &id in &ids {
        let name = store.name(id).to_string();
        let v = take(format!("{prefix}/{name}"), store.get(id))?;
        store.set(id, v)?;
        opt.m[id.index()] = take(format!("{prefix}.m/{name}"), store.get(id))?;
        opt.v[id.index()] = take(format!("{prefix}.v/{name}"), store.get(id))?;
    }
    Ok(())
}

impl Trainer {
    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        push_store(&mut tensors, "gen", &self.gen_store, &self.gen_opt);
        push_store(&mut tensors, "disc", &self.disc_store, &self.disc_opt);
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            gen_opt_step: self.gen_opt.step,
            disc_opt_step: self.disc_opt.step,
            tensors,
        }
    }

    /// Rebuilds the trainer a checkpoint was taken from. Every tensor must
    /// be present with the expected shape and no extra tensors are allowed.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(ck.config.clone())?;
        let mut map = HashMap::with_capacity(ck.tensors.len());
        for (name, tensor) in &ck.tensors {
            if map.insert(name.clone(), tensor.clone()).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
        }
        restore_store(&mut map, "gen", &mut t.gen_store, &mut t.gen_opt)?;
        restore_store(&mut map, "disc", &mut t.disc_store, &mut t.disc_opt)?;
        if let Some(extra) = map.keys().min() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        t.step = ck.step;
        t.gen_opt.step = ck.gen_opt_step;
        t.disc_opt.step = ck.disc_opt_step;
        Ok(t)
    }
}
