//! Complete training state and its on-disk form.
//!
//! A checkpoint is a directory with two files:
//!
//! - `manifest.json`: format version, config snapshot, counters, RNG
//!   position, Adam step counts and a tensor table (name, dtype, shape,
//!   offset, byte length, sha256).
//! - `tensors.bin`: every tensor as little-endian `f32`, concatenated in
//!   table order.
//!
//! Serialization is canonical, so save, load, save yields identical bytes.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamState;
use super::{rng_stream, INIT_STREAM, TRAIN_STREAM};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{init_params, Discriminator, Encoder, Generator};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";
const DTYPE: &str = "float32-le";

/// Everything needed to continue or use a run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    /// Present once step 2 has started.
    pub encoder: Option<Encoder>,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    pub adam_e: Option<AdamState>,
    pub step1_iters: u64,
    pub step2_iters: u64,
    /// Training draw stream (latents, labels, augmentation).
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    /// Fresh state: G and D initialized from the config seed, no encoder.
    pub fn init(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let (generator, discriminator, _) = init_params::<f32, _>(config, &mut rng_stream(config.seed, INIT_STREAM))?;
        Ok(Checkpoint {
            config: config.clone(),
            adam_g: AdamState::new(&generator.params),
            adam_d: AdamState::new(&discriminator.params),
            generator,
            discriminator,
            encoder: None,
            adam_e: None,
            step1_iters: 0,
            step2_iters: 0,
            rng: rng_stream(config.seed, TRAIN_STREAM),
        })
    }

    /// The encoder `init_params` would produce for this config.
    pub fn initial_encoder(config: &RunConfig) -> Result<Encoder> {
        Ok(init_params::<f32, _>(config, &mut rng_stream(config.seed, INIT_STREAM))?.2)
    }

    /// Named tensors in canonical order.
    fn named_tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = Vec::new();
        push_net(&mut out, "generator", &self.generator.params, &self.generator.buffers, &self.adam_g);
        push_net(
            &mut out,
            "discriminator",
            &self.discriminator.params,
            &self.discriminator.buffers,
            &self.adam_d,
        );
        if let (Some(e), Some(adam)) = (&self.encoder, &self.adam_e) {
            push_net(&mut out, "encoder", &e.params, &e.buffers, adam);
        }
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        let mut out = Vec::new();
        push_net_mut(
            &mut out,
            "generator",
            &mut self.generator.params,
            &mut self.generator.buffers,
            &mut self.adam_g,
        );
        push_net_mut(
            &mut out,
            "discriminator",
            &mut self.discriminator.params,
            &mut self.discriminator.buffers,
            &mut self.adam_d,
        );
        if let (Some(e), Some(adam)) = (&mut self.encoder, &mut self.adam_e) {
            push_net_mut(&mut out, "encoder", &mut e.params, &mut e.buffers, adam);
        }
        out
    }

    /// Every tensor with its name, for comparisons in tests and tooling.
    pub fn tensors(&self) -> Vec<(String, Tensor<f32>)> {
        self.named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }
}

fn push_net<'a>(
    out: &mut Vec<(String, &'a Tensor<f32>)>,
    net: &str,
    params: &'a ParamStore,
    buffers: &'a ParamStore,
    adam: &'a AdamState,
) {
    for (name, t) in params.iter() {
        out.push((format!("{net}/param/{name}"), t));
    }
    for (name, t) in buffers.iter() {
        out.push((format!("{net}/buffer/{name}"), t));
    }
    for (i, name) in params.names().iter().enumerate() {
        out.push((format!("{net}/adam_m/{name}"), &adam.m[i]));
    }
    for (i, name) in params.names().iter().enumerate() {
        out.push((format!("{net}/adam_v/{name}"), &adam.v[i]));
    }
}

fn push_net_mut<'a>(
    out: &mut Vec<(String, &'a mut Tensor<f32>)>,
    net: &str,
    params: &'a mut ParamStore,
    buffers: &'a mut ParamStore,
    adam: &'a mut AdamState,
) {
    let param_names: Vec<String> = params.names().to_vec();
    let buffer_names: Vec<String> = buffers.names().to_vec();
    for (name, t) in param_names.iter().zip(params.tensors_mut()) {
        out.push((format!("{net}/param/{name}"), t));
    }
    for (name, t) in buffer_names.iter().zip(buffers.tensors_mut()) {
        out.push((format!("{net}/buffer/{name}"), t));
    }
    for (name, t) in param_names.iter().zip(adam.m.iter_mut()) {
        out.push((format!("{net}/adam_m/{name}"), t));
    }
    for (name, t) in param_names.iter().zip(adam.v.iter_mut()) {
        out.push((format!("{net}/adam_v/{name}"), t));
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    /// 32-byte ChaCha key, hex.
    seed: String,
    stream: u64,
    /// Position in 32-bit words; decimal string since it is 128-bit.
    word_pos: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamSteps {
    generator: u64,
    discriminator: u64,
    encoder: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    byte_length: u64,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: RunConfig,
    step1_iters: u64,
    step2_iters: u64,
    has_encoder: bool,
    rng: RngState,
    adam_steps: AdamSteps,
    tensors: Vec<TensorEntry>,
}

/// Writes `ckpt` into `dir`, replacing any previous checkpoint there. Files
/// are written next to the target and renamed into place.
pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in ckpt.named_tensors() {
        let offset = blob.len() as u64;
        let start = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let bytes = &blob[start..];
        entries.push(TensorEntry {
            name,
            dtype: DTYPE.into(),
            shape: t.shape().to_vec(),
            offset,
            byte_length: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: ckpt.config.clone(),
        step1_iters: ckpt.step1_iters,
        step2_iters: ckpt.step2_iters,
        has_encoder: ckpt.encoder.is_some(),
        rng: RngState {
            seed: hex::encode(ckpt.rng.get_seed()),
            stream: ckpt.rng.get_stream(),
            word_pos: ckpt.rng.get_word_pos().to_string(),
        },
        adam_steps: AdamSteps {
            generator: ckpt.adam_g.t,
            discriminator: ckpt.adam_d.t,
            encoder: ckpt.adam_e.as_ref().map(|a| a.t),
        },
        tensors: entries,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(TENSORS_FILE), &blob)?;
    write_atomic(&dir.join(MANIFEST_FILE), &json)?;
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    tmp.set_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a checkpoint directory. Every tensor is checked against the
/// manifest and against the architecture the stored config implies; errors
/// name the offending tensor.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::Missing {
            path: manifest_path,
            what: "checkpoint manifest".into(),
        });
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)
        .map_err(|e| Error::checkpoint_file(format!("unreadable manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::checkpoint_file(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    manifest
        .config
        .validate()
        .map_err(|e| Error::checkpoint_file(format!("stored config is invalid: {e}")))?;
    let blob = fs::read(dir.join(TENSORS_FILE))?;

    let mut ckpt = Checkpoint::init(&manifest.config)?;
    if manifest.has_encoder {
        let e = Checkpoint::initial_encoder(&manifest.config)?;
        ckpt.adam_e = Some(AdamState::new(&e.params));
        ckpt.encoder = Some(e);
    }
    ckpt.step1_iters = manifest.step1_iters;
    ckpt.step2_iters = manifest.step2_iters;
    ckpt.adam_g.t = manifest.adam_steps.generator;
    ckpt.adam_d.t = manifest.adam_steps.discriminator;
    match (&mut ckpt.adam_e, manifest.adam_steps.encoder) {
        (Some(a), Some(t)) => a.t = t,
        (None, None) => {}
        _ => return Err(Error::checkpoint_file("encoder presence and encoder Adam state disagree")),
    }
    ckpt.rng = restore_rng(&manifest.rng)?;

    let mut table: HashMap<&str, &TensorEntry> = HashMap::new();
    for entry in &manifest.tensors {
        if table.insert(entry.name.as_str(), entry).is_some() {
            return Err(Error::checkpoint(&entry.name, "listed twice in the manifest"));
        }
    }
    let expected = ckpt.named_tensors_mut();
    let expected_len = expected.len();
    for (name, tensor) in expected {
        let entry = table
            .remove(name.as_str())
            .ok_or_else(|| Error::checkpoint(&name, "missing from the manifest"))?;
        if entry.dtype != DTYPE {
            return Err(Error::checkpoint(&name, format!("unsupported dtype `{}`", entry.dtype)));
        }
        if entry.shape != tensor.shape() {
            return Err(Error::checkpoint(
                &name,
                format!("manifest shape {:?} but the architecture needs {:?}", entry.shape, tensor.shape()),
            ));
        }
        if entry.byte_length != 4 * tensor.numel() as u64 {
            return Err(Error::checkpoint(
                &name,
                format!("byte length {} does not match shape {:?}", entry.byte_length, entry.shape),
            ));
        }
        let start = entry.offset as usize;
        let end = start
            .checked_add(entry.byte_length as usize)
            .filter(|&e| e <= blob.len())
            .ok_or_else(|| Error::checkpoint(&name, format!("tensor data truncated ({} bytes in file)", blob.len())))?;
        let bytes = &blob[start..end];
        if hex::encode(Sha256::digest(bytes)) != entry.sha256 {
            return Err(Error::checkpoint(&name, "checksum mismatch"));
        }
        for (dst, chunk) in tensor.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    if let Some(extra) = table.keys().next() {
        return Err(Error::checkpoint(*extra, "not part of this architecture"));
    }
    debug_assert_eq!(expected_len, manifest.tensors.len());
    Ok(ckpt)
}

/// Loads a checkpoint and rejects it if its architecture differs from `config`.
pub fn load_checkpoint_for(dir: &Path, config: &RunConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(dir)?;
    if let Some(why) = ckpt.config.architecture_mismatch(config) {
        return Err(Error::Config(format!("checkpoint {} is incompatible: {why}", dir.display())));
    }
    Ok(ckpt)
}

fn restore_rng(state: &RngState) -> Result<ChaCha8Rng> {
    let seed: [u8; 32] = hex::decode(&state.seed)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::checkpoint_file("rng seed is not 32 hex-encoded bytes"))?;
    let word_pos: u128 = state
        .word_pos
        .parse()
        .map_err(|_| Error::checkpoint_file("rng word position is not an integer"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(word_pos);
    Ok(rng)
}
