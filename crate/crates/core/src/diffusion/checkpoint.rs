//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header
//! (config, step, rng state, tensor names and shapes), then every tensor as
//! little-endian `f32` in header order.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::lora::LoraAdapter;
use super::net::{Denoiser, ParamSet};
use super::train::{TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::fsutil;

const MAGIC: &[u8; 8] = b"RLKTCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// 128-bit word position, as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Checkpoint("malformed rng state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse::<u128>().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LoraMeta {
    rank: usize,
    alpha: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    step: u64,
    rng: RngState,
    losses: Vec<f64>,
    adam_step: u64,
    lora: Option<LoraMeta>,
    params: Vec<TensorMeta>,
    lora_tensors: Vec<TensorMeta>,
    adam_tensors: Vec<TensorMeta>,
}

/// Serialize the full training state.
pub fn encode(tr: &Trainer) -> Result<Vec<u8>> {
    let p = &tr.net.params;
    let params: Vec<TensorMeta> = p
        .names
        .iter()
        .zip(&p.shapes)
        .map(|(n, s)| TensorMeta {
            name: n.clone(),
            shape: s.clone(),
        })
        .collect();
    let mut blobs: Vec<&Vec<f32>> = p.tensors.iter().collect();
    let mut lora_tensors = Vec::new();
    if let Some(a) = &tr.adapter {
        for (i, c) in a.layers.iter().enumerate() {
            lora_tensors.push(TensorMeta {
                name: format!("lora.{i}.down"),
                shape: vec![a.rank, c.fan_in()],
            });
            lora_tensors.push(TensorMeta {
                name: format!("lora.{i}.up"),
                shape: vec![c.cout, a.rank],
            });
        }
        blobs.extend(a.tensors());
    }
    let mut adam_tensors = Vec::new();
    for (k, (m, v)) in tr.adam.m.iter().zip(&tr.adam.v).enumerate() {
        adam_tensors.push(TensorMeta {
            name: format!("adam.{k}.m"),
            shape: vec![m.len()],
        });
        adam_tensors.push(TensorMeta {
            name: format!("adam.{k}.v"),
            shape: vec![v.len()],
        });
        blobs.push(m);
        blobs.push(v);
    }
    let header = Header {
        config: tr.config.clone(),
        step: tr.step,
        rng: RngState::capture(&tr.rng),
        losses: tr.losses.clone(),
        adam_step: tr.adam.step,
        lora: tr.adapter.as_ref().map(|a| LoraMeta {
            rank: a.rank,
            alpha: a.alpha,
        }),
        params,
        lora_tensors,
        adam_tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let n: usize = blobs.iter().map(|b| b.len()).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 4 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for b in blobs {
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn tensor(&mut self, meta: &TensorMeta) -> Result<Vec<f32>> {
        let n: usize = meta.shape.iter().product();
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Rebuild training state from [`encode`] output.
pub fn decode(bytes: &[u8]) -> Result<Trainer> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)?;
    let mut params = ParamSet::new();
    for m in &header.params {
        params.names.push(m.name.clone());
        params.shapes.push(m.shape.clone());
        params.tensors.push(r.tensor(m)?);
    }
    let net = Denoiser::from_params(&header.config.net, params)?;
    let adapter = match &header.lora {
        Some(meta) => {
            let mut down = Vec::new();
            let mut up = Vec::new();
            for pair in header.lora_tensors.chunks(2) {
                if pair.len() != 2 {
                    return Err(Error::Checkpoint("unpaired adapter tensors".into()));
                }
                down.push(r.tensor(&pair[0])?);
                up.push(r.tensor(&pair[1])?);
            }
            let a = LoraAdapter {
                rank: meta.rank,
                alpha: meta.alpha,
                layers: net.layout.convs.clone(),
                down,
                up,
            };
            a.check(&net)?;
            Some(a)
        }
        None => None,
    };
    let mut adam = AdamState {
        step: header.adam_step,
        m: Vec::new(),
        v: Vec::new(),
    };
    for pair in header.adam_tensors.chunks(2) {
        if pair.len() != 2 {
            return Err(Error::Checkpoint("unpaired optimizer tensors".into()));
        }
        adam.m.push(r.tensor(&pair[0])?);
        adam.v.push(r.tensor(&pair[1])?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok(Trainer {
        rng: header.rng.restore()?,
        config: header.config,
        net,
        adapter,
        adam,
        step: header.step,
        losses: header.losses,
    })
}

pub fn save(tr: &Trainer, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode(tr)?)
}

pub fn load(path: &Path) -> Result<Trainer> {
    decode(&fsutil::read(path)?)
}
