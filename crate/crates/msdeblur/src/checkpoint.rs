//! Single-file checkpoints.
//!
//! Layout: a magic line, a `header_bytes N` line, `N` bytes of TOML header
//! (run state, the full training configuration and a `(key, shape,
//! offset)` entry per tensor), then the tensors as little-endian `f64`s.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use msdeblur_core::adam::AdamState;
use msdeblur_core::model::{DiscriminatorParams, GeneratorParams};
use msdeblur_core::params::ParamSet;
use msdeblur_core::trainer::{TrainConfig, TrainState};
use msdeblur_core::{Shape, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MAGIC: &str = "MSDEBLUR-CHECKPOINT 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    key: String,
    shape: [usize; 4],
    /// Offset into the blob, in `f64`s.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    iteration: u64,
    lr: f64,
    generator_adam_step: u64,
    discriminator_adam_step: u64,
    /// Hex-encoded 32-byte seed.
    rng_seed: String,
    rng_stream: String,
    rng_word_pos: String,
    config: TrainConfig,
    tensors: Vec<TensorEntry>,
}

fn moment_keys<'a>(keys: &[String], adam: &'a AdamState, out: &mut Vec<(String, &'a Tensor)>) {
    for (k, t) in keys.iter().zip(&adam.first) {
        out.push((format!("adam.m.{k}"), t));
    }
    for (k, t) in keys.iter().zip(&adam.second) {
        out.push((format!("adam.v.{k}"), t));
    }
}

fn named_tensors(state: &TrainState) -> Vec<(String, &Tensor)> {
    let mut out: Vec<(String, &Tensor)> = Vec::new();
    state.generator.visit(&mut |k, t| out.push((k, t)));
    state.discriminator.visit(&mut |k, t| out.push((k, t)));
    moment_keys(&state.generator.keys(), &state.generator_adam, &mut out);
    moment_keys(&state.discriminator.keys(), &state.discriminator_adam, &mut out);
    out
}

fn named_tensors_mut(state: &mut TrainState) -> Vec<(String, &mut Tensor)> {
    let gk = state.generator.keys();
    let dk = state.discriminator.keys();
    let mut out: Vec<(String, &mut Tensor)> = Vec::new();
    state.generator.visit_mut(&mut |k, t| out.push((k, t)));
    state.discriminator.visit_mut(&mut |k, t| out.push((k, t)));
    for (keys, adam) in [(&gk, &mut state.generator_adam), (&dk, &mut state.discriminator_adam)] {
        for (k, t) in keys.iter().zip(adam.first.iter_mut()) {
            out.push((format!("adam.m.{k}"), t));
        }
        for (k, t) in keys.iter().zip(adam.second.iter_mut()) {
            out.push((format!("adam.v.{k}"), t));
        }
    }
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    ensure!(s.len() == 64 && s.is_ascii(), "rng seed must be 64 hex digits");
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).context("rng seed is not hex")?;
    }
    Ok(out)
}

/// Serialises the whole run state and its configuration.
pub fn encode(state: &TrainState, cfg: &TrainConfig) -> Result<Vec<u8>> {
    let named = named_tensors(state);
    let mut offset = 0;
    let tensors = named
        .iter()
        .map(|(key, t)| {
            let e = TensorEntry {
                key: key.clone(),
                shape: t.shape().dims(),
                offset,
            };
            offset += t.data().len();
            e
        })
        .collect();
    let header = Header {
        iteration: state.iteration,
        lr: state.lr,
        generator_adam_step: state.generator_adam.step,
        discriminator_adam_step: state.discriminator_adam.step,
        rng_seed: hex(&state.rng.get_seed()),
        rng_stream: state.rng.get_stream().to_string(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
        config: cfg.clone(),
        tensors,
    };
    let text = toml::to_string(&header)?;
    let mut out = format!("{MAGIC}\nheader_bytes {}\n{text}", text.len()).into_bytes();
    out.reserve(offset * 8);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn split_line(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n').context("truncated checkpoint")?;
    Ok((std::str::from_utf8(&bytes[..nl]).context("checkpoint line is not UTF-8")?, &bytes[nl + 1..]))
}

pub fn decode(bytes: &[u8]) -> Result<(TrainConfig, TrainState)> {
    let (magic, rest) = split_line(bytes)?;
    ensure!(magic == MAGIC, "not a checkpoint (bad magic line)");
    let (len_line, rest) = split_line(rest)?;
    let n: usize = len_line
        .strip_prefix("header_bytes ")
        .and_then(|v| v.parse().ok())
        .context("missing header_bytes line")?;
    ensure!(rest.len() >= n, "truncated checkpoint header");
    let header: Header = toml::from_str(std::str::from_utf8(&rest[..n])?).context("parsing checkpoint header")?;
    let blob = &rest[n..];
    let cfg = header.config;
    cfg.validate()?;

    let generator = GeneratorParams::zeros(&cfg.generator);
    let discriminator = DiscriminatorParams::zeros(&cfg.discriminator)?;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(unhex(&header.rng_seed)?);
    rng.set_stream(header.rng_stream.parse().context("rng stream")?);
    rng.set_word_pos(header.rng_word_pos.parse().context("rng word position")?);
    let mut state = TrainState {
        generator_adam: AdamState::new(generator.tensors(), cfg.adam),
        discriminator_adam: AdamState::new(discriminator.tensors(), cfg.adam),
        generator,
        discriminator,
        iteration: header.iteration,
        rng,
        lr: header.lr,
    };
    state.generator_adam.step = header.generator_adam_step;
    state.discriminator_adam.step = header.discriminator_adam_step;

    let mut entries: BTreeMap<&str, &TensorEntry> = BTreeMap::new();
    for e in &header.tensors {
        ensure!(entries.insert(&e.key, e).is_none(), "tensor {} listed twice", e.key);
    }
    let mut used = 0;
    for (key, slot) in named_tensors_mut(&mut state) {
        let e = entries.remove(key.as_str()).with_context(|| format!("checkpoint lacks tensor {key}"))?;
        let [n, c, h, w] = e.shape;
        let shape = Shape::new(n, c, h, w);
        if shape != slot.shape() {
            bail!("tensor {key} has shape {shape}, the configuration expects {}", slot.shape());
        }
        let start = e.offset * 8;
        let end = start + shape.numel() * 8;
        ensure!(end <= blob.len(), "tensor {key} runs past the end of the file");
        let data = blob[start..end].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        *slot = Tensor::from_vec(shape, data)?;
        used += shape.numel();
    }
    if let Some(extra) = entries.keys().next() {
        bail!("checkpoint has unexpected tensor {extra}");
    }
    ensure!(used * 8 == blob.len(), "checkpoint has {} trailing bytes", blob.len() - used * 8);
    Ok((cfg, state))
}

pub fn save(path: &Path, state: &TrainState, cfg: &TrainConfig) -> Result<()> {
    let bytes = encode(state, cfg)?;
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(TrainConfig, TrainState)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("loading {}", path.display()))
}

/// Fails unless `found` has the same architectures as `expected`.
pub fn ensure_same_networks(found: &TrainConfig, expected: &TrainConfig) -> Result<()> {
    if found.generator != expected.generator {
        bail!("checkpoint generator {:?} differs from the configured {:?}", found.generator, expected.generator);
    }
    if found.discriminator != expected.discriminator {
        bail!("checkpoint discriminator differs from the configured one");
    }
    Ok(())
}
