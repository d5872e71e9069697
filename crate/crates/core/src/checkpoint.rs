//! Single-file checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GATGANCK"            8 bytes
//! version               u32
//! header length         u64
//! header                JSON (kind, metadata, tensor names/shapes/offsets/digests)
//! header digest         SHA-256 of the header bytes
//! payload               f64 arrays back to back
//! trailer digest        SHA-256 of every preceding byte
//! ```
//!
//! Serialization is canonical, so `save(load(save(m)))` reproduces the same
//! bytes.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::{EmbedderConfig, TransformerEmbedder};
use crate::model::{GatGanModel, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::{Adam, Trainer, TrainingConfig};

pub const MAGIC: &[u8; 8] = b"GATGANCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_MODEL: &str = "gatgan";
const KIND_EMBEDDER: &str = "embedder";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of arbitrary bytes; checkpoint files are identified by it.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
    sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
    payload_len: u64,
}

/// Named tensors plus JSON metadata, independent of what they describe.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

fn tensor_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CheckpointFormat(format!("truncated {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let bytes = tensor_bytes(t);
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
                sha256: sha256_hex(&bytes),
            });
            payload.extend(bytes);
        }
        let header = serde_json::to_vec(&Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: entries,
            payload_len: payload.len() as u64,
        })?;
        let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + 32 + payload.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&Sha256::digest(&header));
        out.extend_from_slice(&payload);
        let trailer = Sha256::digest(&out);
        out.extend_from_slice(&trailer);
        Ok(out)
    }

    /// Parses and verifies a container. Checks run in file order: magic,
    /// version, header digest, each tensor's digest, then the trailer.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(8, "magic")? != MAGIC {
            return Err(Error::CheckpointFormat("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(c.take(4, "version")?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(c.take(8, "header length")?.try_into().expect("8 bytes"));
        let header_len = usize::try_from(header_len).map_err(|_| Error::CheckpointFormat("header too large".into()))?;
        let header_bytes = c.take(header_len, "header")?;
        if *c.take(32, "header digest")? != *Sha256::digest(header_bytes) {
            return Err(Error::CheckpointDigest { section: "header".into() });
        }
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::CheckpointFormat(format!("header: {e}")))?;
        let payload_len = usize::try_from(header.payload_len)
            .map_err(|_| Error::CheckpointFormat("payload too large".into()))?;
        let payload = c.take(payload_len, "payload")?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start
                .checked_add(n * 8)
                .filter(|&x| x <= payload.len())
                .ok_or_else(|| Error::CheckpointFormat(format!("tensor `{}` overruns payload", e.name)))?;
            let raw = &payload[start..end];
            if sha256_hex(raw) != e.sha256 {
                return Err(Error::CheckpointDigest {
                    section: format!("tensor `{}`", e.name),
                });
            }
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            tensors.push((e.name.clone(), Tensor::new(&e.shape, data)?));
        }
        let body_end = c.pos;
        if *c.take(32, "trailer")? != *Sha256::digest(&bytes[..body_end]) {
            return Err(Error::CheckpointDigest { section: "trailer".into() });
        }
        if c.pos != bytes.len() {
            return Err(Error::CheckpointFormat("trailing bytes after checkpoint".into()));
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    /// Writes the container and returns the file's SHA-256.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::CheckpointFormat(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    fn meta<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        serde_json::from_value(self.meta.clone()).map_err(|e| Error::CheckpointFormat(format!("metadata: {e}")))
    }
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold a u128.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex(&rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand_chacha::rand_core::SeedableRng;
        let bad = || Error::CheckpointFormat("malformed RNG state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    config: TrainingConfig,
    optimizers: BTreeMap<String, AdamState>,
    rng: BTreeMap<String, RngState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    epochs_trained: usize,
    trainer: Option<TrainerState>,
}

fn store_tensors(store: &ParamStore) -> Vec<(String, Tensor)> {
    store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect()
}

fn optimizers(trainer: &Trainer) -> [(&'static str, &Adam); 4] {
    [
        ("encoder", &trainer.encoder_opt),
        ("decoder", &trainer.decoder_opt),
        ("generator", &trainer.generator_opt),
        ("discriminator", &trainer.discriminator_opt),
    ]
}

fn optimizer_tensors(store: &ParamStore, net: &str, opt: &Adam, out: &mut Vec<(String, Tensor)>) {
    for (id, p) in store.iter() {
        if let (Some(m), Some(v)) = (opt.m.get(&id), opt.v.get(&id)) {
            out.push((format!("adam.{net}.m.{}", p.name), m.clone()));
            out.push((format!("adam.{net}.v.{}", p.name), v.clone()));
        }
    }
}

/// Packs a model, and optionally the trainer needed to resume it.
pub fn model_to_container(model: &GatGanModel, trainer: Option<&Trainer>) -> Container {
    let mut tensors = store_tensors(&model.store);
    let trainer_state = trainer.map(|t| {
        let mut opts = BTreeMap::new();
        for (net, opt) in optimizers(t) {
            optimizer_tensors(&model.store, net, opt, &mut tensors);
            opts.insert(
                net.to_string(),
                AdamState {
                    lr: opt.lr,
                    beta1: opt.beta1,
                    beta2: opt.beta2,
                    eps: opt.eps,
                    step: opt.step,
                },
            );
        }
        let rng = [
            ("shuffle", &t.shuffle_rng),
            ("noise", &t.noise_rng),
            ("flip", &t.flip_rng),
            ("prior", &t.prior_rng),
        ]
        .into_iter()
        .map(|(k, r)| (k.to_string(), RngState::capture(r)))
        .collect();
        TrainerState {
            config: t.cfg.clone(),
            optimizers: opts,
            rng,
        }
    });
    let meta = ModelMeta {
        config: model.config.clone(),
        epochs_trained: model.epochs_trained,
        trainer: trainer_state,
    };
    Container {
        kind: KIND_MODEL.into(),
        meta: serde_json::to_value(meta).expect("metadata serializes"),
        tensors,
    }
}

/// Rebuilds a model (and its trainer, when one was saved).
pub fn model_from_container(c: Container) -> Result<(GatGanModel, Option<Trainer>)> {
    c.expect_kind(KIND_MODEL)?;
    let meta: ModelMeta = c.meta()?;
    let mut model = GatGanModel::new(meta.config)?;
    model.epochs_trained = meta.epochs_trained;
    let n = model.store.len();
    if c.tensors.len() < n {
        return Err(Error::CheckpointFormat(format!(
            "expected at least {n} tensors, found {}",
            c.tensors.len()
        )));
    }
    let mut tensors = c.tensors;
    let extra = tensors.split_off(n);
    model.store.load_values(tensors)?;

    let trainer = match meta.trainer {
        None => {
            if !extra.is_empty() {
                return Err(Error::CheckpointFormat("optimizer tensors without trainer state".into()));
            }
            None
        }
        Some(state) => {
            let mut trainer = Trainer::new(state.config)?;
            let rng = |k: &str| -> Result<ChaCha8Rng> {
                state
                    .rng
                    .get(k)
                    .ok_or_else(|| Error::CheckpointFormat(format!("missing RNG state `{k}`")))?
                    .restore()
            };
            trainer.shuffle_rng = rng("shuffle")?;
            trainer.noise_rng = rng("noise")?;
            trainer.flip_rng = rng("flip")?;
            trainer.prior_rng = rng("prior")?;
            let opts = [
                ("encoder", &mut trainer.encoder_opt),
                ("decoder", &mut trainer.decoder_opt),
                ("generator", &mut trainer.generator_opt),
                ("discriminator", &mut trainer.discriminator_opt),
            ];
            for (net, opt) in opts {
                let s = state
                    .optimizers
                    .get(net)
                    .ok_or_else(|| Error::CheckpointFormat(format!("missing optimizer `{net}`")))?;
                *opt = Adam::new(s.lr, s.beta1, s.beta2, s.eps);
                opt.step = s.step;
            }
            for (name, t) in extra {
                let bad = || Error::CheckpointFormat(format!("unexpected tensor `{name}`"));
                let rest = name.strip_prefix("adam.").ok_or_else(bad)?;
                let (net, rest) = rest.split_once('.').ok_or_else(bad)?;
                let (slot, param) = rest.split_once('.').ok_or_else(bad)?;
                let id = model.store.find(param).ok_or_else(bad)?;
                if model.store.value(id).shape() != t.shape() {
                    return Err(bad());
                }
                let opt = match net {
                    "encoder" => &mut trainer.encoder_opt,
                    "decoder" => &mut trainer.decoder_opt,
                    "generator" => &mut trainer.generator_opt,
                    "discriminator" => &mut trainer.discriminator_opt,
                    _ => return Err(bad()),
                };
                match slot {
                    "m" => opt.m.insert(id, t),
                    "v" => opt.v.insert(id, t),
                    _ => return Err(bad()),
                };
            }
            Some(trainer)
        }
    };
    Ok((model, trainer))
}

pub fn save_model(path: impl AsRef<Path>, model: &GatGanModel, trainer: Option<&Trainer>) -> Result<String> {
    model_to_container(model, trainer).save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(GatGanModel, Option<Trainer>)> {
    model_from_container(Container::load(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EmbedderMeta {
    config: EmbedderConfig,
    features: usize,
    trained: bool,
}

pub fn embedder_to_container(e: &TransformerEmbedder) -> Container {
    let meta = EmbedderMeta {
        config: e.config.clone(),
        features: e.features,
        trained: e.trained,
    };
    Container {
        kind: KIND_EMBEDDER.into(),
        meta: serde_json::to_value(meta).expect("metadata serializes"),
        tensors: store_tensors(&e.store),
    }
}

pub fn embedder_from_container(c: Container) -> Result<TransformerEmbedder> {
    use rand_chacha::rand_core::SeedableRng;
    c.expect_kind(KIND_EMBEDDER)?;
    let meta: EmbedderMeta = c.meta()?;
    // Initial values are overwritten below; the seed only shapes the store.
    let mut e = TransformerEmbedder::new(meta.features, meta.config, &mut ChaCha8Rng::seed_from_u64(0))?;
    e.store.load_values(c.tensors)?;
    e.trained = meta.trained;
    Ok(e)
}

pub fn save_embedder(path: impl AsRef<Path>, e: &TransformerEmbedder) -> Result<String> {
    embedder_to_container(e).save(path)
}

pub fn load_embedder(path: impl AsRef<Path>) -> Result<TransformerEmbedder> {
    embedder_from_container(Container::load(path)?)
}
