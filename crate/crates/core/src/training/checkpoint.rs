//! Binary checkpoint: `VXCY` magic, `u32` format version, a `u32`-length
//! UTF-8 JSON metadata block, a `u32` record count, then tensor records of
//! `u32` name length, name, `u8` dtype tag, `u8` rank, `u32` extents and
//! little-endian float32 values. All integers are little-endian.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use voxcore::Tensor;

use super::{AdamState, CycleModels, OptStates, TrainConfig};
use crate::error::{Error, Result};
use crate::models::{Architecture, ModelWeights};

pub const MAGIC: &[u8; 4] = b"VXCY";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub models: CycleModels,
    pub optim: OptStates,
    /// Completed epochs.
    pub epoch: usize,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct NetMeta {
    architecture: Architecture,
    fingerprint: String,
    adam_steps: u64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    epoch: usize,
    config: TrainConfig,
    networks: IndexMap<String, NetMeta>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F32);
    out.push(t.rank() as u8);
    for &e in t.shape() {
        put_u32(out, e as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {}: {n} more bytes expected",
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn record(&mut self) -> Result<(String, Tensor<f32>)> {
        let start = self.at;
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Checkpoint(format!("record name at byte {start} is not UTF-8")))?
            .to_string();
        let dtype = self.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Checkpoint(format!("record `{name}`: unknown dtype tag {dtype}")));
        }
        let rank = self.u8()? as usize;
        let shape = (0..rank)
            .map(|_| self.u32().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

fn rebuild(arch: &Architecture) -> Result<ModelWeights> {
    match arch {
        Architecture::Generator(c) => crate::models::build_generator(c, 0),
        Architecture::Discriminator(c) => crate::models::build_discriminator(c, 0),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let states = self.optim.states();
        let networks = self
            .models
            .nets()
            .iter()
            .zip(states.iter())
            .map(|((name, w), (_, s))| {
                (
                    name.to_string(),
                    NetMeta {
                        architecture: w.architecture().clone(),
                        fingerprint: w.fingerprint(),
                        adam_steps: s.t,
                    },
                )
            })
            .collect();
        let meta = Meta {
            format_version: FORMAT_VERSION,
            epoch: self.epoch,
            config: self.config.clone(),
            networks,
        };
        let json = serde_json::to_vec(&meta).expect("checkpoint metadata");

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, json.len() as u32);
        out.extend_from_slice(&json);
        let count: usize = self.models.nets().iter().map(|(_, w)| 3 * w.len()).sum();
        put_u32(&mut out, count as u32);
        for ((net, w), (_, s)) in self.models.nets().iter().zip(states.iter()) {
            for (name, t) in w.iter() {
                put_record(&mut out, &format!("{net}/{name}"), t);
            }
            for (name, t) in w.names().zip(&s.m) {
                put_record(&mut out, &format!("{net}.adam_m/{name}"), t);
            }
            for (name, t) in w.names().zip(&s.v) {
                put_record(&mut out, &format!("{net}.adam_v/{name}"), t);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut c = Cursor { bytes, at: 0 };
        if c.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic (not a VXCY checkpoint)".into()));
        }
        let version = c.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let len = c.u32()? as usize;
        let meta: Meta = serde_json::from_slice(c.take(len)?)?;
        let count = c.u32()? as usize;
        let mut records = IndexMap::with_capacity(count);
        for _ in 0..count {
            let (name, t) = c.record()?;
            if records.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate record `{name}`")));
            }
        }
        if c.at != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.at)));
        }

        let mut nets = Vec::new();
        let mut states = Vec::new();
        for net in ["g", "f", "d_x", "d_y"] {
            let nm = meta
                .networks
                .get(net)
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks network `{net}`")))?;
            let template = rebuild(&nm.architecture)?;
            let group = |prefix: &str| -> Result<IndexMap<String, Tensor<f32>>> {
                template
                    .names()
                    .map(|n| {
                        let key = format!("{prefix}/{n}");
                        records
                            .get(&key)
                            .cloned()
                            .map(|t| (n.to_string(), t))
                            .ok_or_else(|| Error::Checkpoint(format!("missing record `{key}`")))
                    })
                    .collect()
            };
            let w = template.with_values(group(net)?)?;
            if w.fingerprint() != nm.fingerprint {
                return Err(Error::Incompatible(format!(
                    "network {net}: stored fingerprint does not match its layout"
                )));
            }
            let m = group(&format!("{net}.adam_m"))?.into_values().collect();
            let v = group(&format!("{net}.adam_v"))?.into_values().collect();
            nets.push(w);
            states.push(AdamState { m, v, t: nm.adam_steps });
        }
        let expected: usize = nets.iter().map(|w| 3 * w.len()).sum();
        if expected != records.len() {
            return Err(Error::Checkpoint(format!(
                "{} records, {expected} expected",
                records.len()
            )));
        }
        let [g, f, d_x, d_y]: [ModelWeights; 4] = nets.try_into().expect("four networks");
        let [sg, sf, sdx, sdy]: [AdamState; 4] = states.try_into().expect("four states");
        Ok(Checkpoint {
            models: CycleModels { g, f, d_x, d_y },
            optim: OptStates {
                g: sg,
                f: sf,
                d_x: sdx,
                d_y: sdy,
            },
            epoch: meta.epoch,
            config: meta.config,
        })
    }

    /// Write via a temporary sibling file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
