//! Binary checkpoints: model parameters, optimizer moments, step counter,
//! and RNG state, with an integrity checksum.
//!
//! Layout (all integers little-endian):
//! magic `M2R1` | version u32 | record count u64 | records | CRC32 of all
//! preceding bytes. Each record: name length u32 + UTF-8 name, dtype tag u8
//! (255 marks raw bytes), rank u32, extents u64 each, payload.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::optim::Adam;
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"M2R1";
const VERSION: u32 = 1;
const RAW_TAG: u8 = 255;

const STEP_KEY: &str = "__meta.step";
const SEED_KEY: &str = "__meta.rng_seed";
const POS_KEY: &str = "__meta.rng_word_pos";

/// Standard CRC32 (IEEE, reflected, polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

/// Complete training state as named records.
#[derive(Clone, Debug)]
pub struct Checkpoint<S: Scalar> {
    pub step: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<S>)>,
}

impl<S: Scalar> Checkpoint<S> {
    /// Snapshot model parameters, optimizer moments, and RNG state.
    pub fn capture<M: Module<S> + ?Sized>(
        model: &mut M,
        opt: &Adam<S>,
        rng: &ChaCha8Rng,
    ) -> Checkpoint<S> {
        let mut tensors = BTreeMap::new();
        model.visit_params("model", &mut |name, p| {
            tensors.insert(name, (p.shape().to_vec(), p.data().to_vec()));
        });
        for (name, m) in &opt.m {
            tensors.insert(format!("opt.m.{name}"), (vec![m.len()], m.clone()));
        }
        for (name, v) in &opt.v {
            tensors.insert(format!("opt.v.{name}"), (vec![v.len()], v.clone()));
        }
        Checkpoint {
            step: opt.step,
            rng_seed: rng.get_seed(),
            rng_word_pos: rng.get_word_pos(),
            tensors,
        }
    }

    /// Install this snapshot back into a model, optimizer, and RNG. Every
    /// model parameter must be present with a matching shape.
    pub fn restore<M: Module<S> + ?Sized>(
        &self,
        model: &mut M,
        opt: &mut Adam<S>,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let mut failure: Option<Error> = None;
        model.visit_params("model", &mut |name, p| {
            if failure.is_some() {
                return;
            }
            match self.tensors.get(&name) {
                Some((shape, data)) if shape == p.shape() => {
                    match Tensor::param(shape, data.clone()) {
                        Ok(t) => *p = t,
                        Err(e) => failure = Some(e),
                    }
                }
                Some((shape, _)) => {
                    failure = Some(Error::Format(format!(
                        "checkpoint shape {:?} does not match parameter {name} {:?}",
                        shape,
                        p.shape()
                    )));
                }
                None => {
                    failure = Some(Error::Format(format!("checkpoint is missing {name}")));
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        opt.step = self.step;
        opt.m.clear();
        opt.v.clear();
        for (name, (_, data)) in &self.tensors {
            if let Some(p) = name.strip_prefix("opt.m.") {
                opt.m.insert(p.to_string(), data.clone());
            } else if let Some(p) = name.strip_prefix("opt.v.") {
                opt.v.insert(p.to_string(), data.clone());
            }
        }
        *rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_word_pos(self.rng_word_pos);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = self.tensors.len() as u64 + 3;
        out.extend_from_slice(&count.to_le_bytes());
        write_raw(&mut out, STEP_KEY, &self.step.to_le_bytes());
        write_raw(&mut out, SEED_KEY, &self.rng_seed);
        write_raw(&mut out, POS_KEY, &self.rng_word_pos.to_le_bytes());
        for (name, (shape, data)) in &self.tensors {
            write_header(&mut out, name, S::DTYPE_TAG, shape);
            for &v in data {
                v.write_le(&mut out);
            }
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint<S>> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, expected {VERSION}"
            )));
        }
        if bytes.len() < 4 {
            return Err(Error::Format("checkpoint truncated before checksum".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32(body) != stored {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }

        let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let mut step = None;
        let mut seed = None;
        let mut pos = None;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("checkpoint record name is not UTF-8".into()))?
                .to_string();
            let tag = r.take(1)?[0];
            let rank = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            if tag == RAW_TAG {
                let payload = r.take(numel)?.to_vec();
                match name.as_str() {
                    STEP_KEY => step = Some(u64::from_le_bytes(le_array(&payload)?)),
                    SEED_KEY => seed = Some(le_array::<32>(&payload)?),
                    POS_KEY => pos = Some(u128::from_le_bytes(le_array(&payload)?)),
                    other => {
                        return Err(Error::Format(format!("unknown raw record '{other}'")))
                    }
                }
            } else if tag == S::DTYPE_TAG {
                let payload = r.take(numel * S::BYTE_WIDTH)?;
                let data: Vec<S> =
                    payload.chunks_exact(S::BYTE_WIDTH).map(S::read_le).collect();
                tensors.insert(name, (shape, data));
            } else {
                return Err(Error::Format(format!(
                    "record '{name}' has dtype tag {tag}, expected {}",
                    S::DTYPE_TAG
                )));
            }
        }
        match (step, seed, pos) {
            (Some(step), Some(rng_seed), Some(rng_word_pos)) => {
                Ok(Checkpoint { step, rng_seed, rng_word_pos, tensors })
            }
            _ => Err(Error::Format("checkpoint is missing training metadata".into())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint<S>> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn le_array<const N: usize>(payload: &[u8]) -> Result<[u8; N]> {
    payload
        .try_into()
        .map_err(|_| Error::Format(format!("metadata record of {} bytes, expected {N}", payload.len())))
}

fn write_header(out: &mut Vec<u8>, name: &str, tag: u8, shape: &[usize]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(tag);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &e in shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
}

fn write_raw(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    write_header(out, name, RAW_TAG, &[payload.len()]);
    out.extend_from_slice(payload);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        // The final 4 bytes are the checksum, never record data.
        if self.pos + n + 4 > self.bytes.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
