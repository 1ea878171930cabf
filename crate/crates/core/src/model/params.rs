use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::container;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of named tensors. Gradients share the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Copy)]
enum Init {
    /// `U(-scale/sqrt(fan_in), scale/sqrt(fan_in))` with `fan_in = shape[0]`.
    Uniform(f64),
    /// `U(-b, b)`.
    Bound(f64),
    Zeros,
    Ones,
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.d_model;
    let ff = cfg.d_ff;
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));
    let attn = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
        for m in ["q", "k", "v", "o"] {
            push(format!("{p}.w{m}"), vec![d, d], Init::Uniform(1.0));
            push(format!("{p}.b{m}"), vec![d], Init::Zeros);
        }
    };
    let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
        push(format!("{p}.g"), vec![d], Init::Ones);
        push(format!("{p}.b"), vec![d], Init::Zeros);
    };
    let ffn = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
        push(format!("{p}.w1"), vec![d, ff], Init::Uniform(1.0));
        push(format!("{p}.b1"), vec![ff], Init::Zeros);
        push(format!("{p}.w2"), vec![ff, d], Init::Uniform(1.0));
        push(format!("{p}.b2"), vec![d], Init::Zeros);
    };
    // embedding rows are scaled by sqrt(d) in the forward pass
    push("enc.embed".into(), vec![cfg.vocab_in, d], Init::Bound(1.0 / (d as f64).sqrt()));
    for l in 0..cfg.n_enc_layers {
        norm(&mut push, &format!("enc.{l}.ln1"));
        attn(&mut push, &format!("enc.{l}.attn"));
        norm(&mut push, &format!("enc.{l}.ln2"));
        ffn(&mut push, &format!("enc.{l}.ff"));
    }
    norm(&mut push, "enc.ln");
    push("dec.embed".into(), vec![cfg.vocab_out, d], Init::Bound(1.0 / (d as f64).sqrt()));
    for l in 0..cfg.n_dec_layers {
        norm(&mut push, &format!("dec.{l}.ln1"));
        attn(&mut push, &format!("dec.{l}.self"));
        norm(&mut push, &format!("dec.{l}.ln2"));
        attn(&mut push, &format!("dec.{l}.cross"));
        norm(&mut push, &format!("dec.{l}.ln3"));
        ffn(&mut push, &format!("dec.{l}.ff"));
    }
    norm(&mut push, "dec.ln");
    push("out.w".into(), vec![d, cfg.vocab_out], Init::Uniform(0.1));
    push("out.b".into(), vec![cfg.vocab_out], Init::Zeros);
    out
}

impl ModelParams {
    pub fn from_parts(parts: Vec<(String, Tensor)>) -> Self {
        let mut names = Vec::with_capacity(parts.len());
        let mut tensors = Vec::with_capacity(parts.len());
        let mut index = HashMap::new();
        for (i, (name, t)) in parts.into_iter().enumerate() {
            index.insert(name.clone(), i);
            names.push(name);
            tensors.push(t);
        }
        ModelParams {
            names,
            tensors,
            index,
        }
    }

    /// Deterministic initialization: every tensor draws from the one seeded
    /// stream in layout order.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::new(seed);
        let parts = layout(cfg)
            .into_iter()
            .map(|(name, shape, init)| {
                let mut t = Tensor::zeros(&shape);
                match init {
                    Init::Zeros => {}
                    Init::Ones => t.data.iter_mut().for_each(|v| *v = 1.0),
                    Init::Bound(lim) => {
                        t.data.iter_mut().for_each(|v| *v = rng.uniform(-lim, lim));
                    }
                    Init::Uniform(scale) => {
                        let lim = scale / (shape[0] as f64).sqrt();
                        t.data.iter_mut().for_each(|v| *v = rng.uniform(-lim, lim));
                    }
                }
                (name, t)
            })
            .collect();
        Ok(Self::from_parts(parts))
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect(),
            index: self.index.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape == b.shape)
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| &t.data)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| &t.data).all(|v| v.is_finite())
    }

    /// Checks names and shapes against what `cfg` implies.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = layout(cfg);
        let ok = expected.len() == self.len()
            && expected
                .iter()
                .zip(self.names.iter().zip(&self.tensors))
                .all(|((n, s, _), (name, t))| n == name && *s == t.shape);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("parameters do not match the model configuration".into()))
        }
    }
}

const MAGIC: &[u8; 4] = b"PZCK";
pub const CHECKPOINT_FORMAT: &str = "jigsaw-seq/checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub init_seed: u64,
    pub train_seed: u64,
    /// Digest chain of the artifacts the model was trained from.
    pub lineage: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    endianness: String,
    config: ModelConfig,
    meta: CheckpointMeta,
    tensors: Vec<(String, Vec<usize>)>,
}

/// Trained weights plus everything needed to rebuild the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            endianness: "little".into(),
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors: self
                .params
                .names
                .iter()
                .cloned()
                .zip(self.params.tensors.iter().map(|t| t.shape.clone()))
                .collect(),
        };
        let blobs: Vec<&[f64]> = self.params.tensors.iter().map(|t| &t.data[..]).collect();
        container::encode(MAGIC, &header, &blobs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut blobs): (CheckpointHeader, _) = container::decode("checkpoint", MAGIC, bytes)?;
        if h.format != CHECKPOINT_FORMAT || h.endianness != "little" {
            return Err(Error::format("checkpoint", "unsupported format"));
        }
        let mut parts = Vec::with_capacity(h.tensors.len());
        for (name, shape) in h.tensors {
            let data = blobs.take(shape.iter().product())?;
            parts.push((name, Tensor { shape, data }));
        }
        blobs.finish()?;
        let params = ModelParams::from_parts(parts);
        params.check_against(&h.config)?;
        Ok(Checkpoint {
            config: h.config,
            meta: h.meta,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn digest(&self) -> String {
        container::sha256_hex(&self.to_bytes())
    }
}
