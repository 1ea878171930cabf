//! Pre-norm encoder-decoder with sinusoidal positions on both sides.

use super::params::ModelParams;
use super::tape::{AttnGeom, Tape, Var};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// One training pair: encoder ids and the target sequence (without BOS).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub src: Vec<u32>,
    pub labels: Vec<u32>,
}

/// `batch × tgt_len × vocab` scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub batch: usize,
    pub tgt_len: usize,
    pub vocab: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn row(&self, b: usize, t: usize) -> &[f64] {
        &self.data[(b * self.tgt_len + t) * self.vocab..][..self.vocab]
    }
}

/// Encoder output for one source sequence, reused across decoding steps.
#[derive(Debug, Clone)]
pub struct EncoderMemory {
    pub src_len: usize,
    pub key_valid: Vec<bool>,
    pub states: Vec<f64>,
}

fn sinusoid(len: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d / 2 {
            let freq = (-(2.0 * i as f64) * 10000f64.ln() / d as f64).exp();
            let a = pos as f64 * freq;
            out[pos * d + 2 * i] = a.sin();
            out[pos * d + 2 * i + 1] = a.cos();
        }
        if d % 2 == 1 {
            out[pos * d + d - 1] = (pos as f64).sin();
        }
    }
    out
}

fn check_ids(ids: &[u32], vocab: usize) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= vocab) {
        Some(&id) => Err(Error::TokenOutOfRange { id, vocab }),
        None => Ok(()),
    }
}

/// Pads ragged sequences to a rectangle.
fn rectangle(seqs: &[&[u32]], pad: u32, max: usize, vocab: usize) -> Result<(usize, Vec<usize>)> {
    let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    if len > max {
        return Err(Error::LengthOverflow { len, max });
    }
    let mut ids = Vec::with_capacity(seqs.len() * len);
    for s in seqs {
        check_ids(s, vocab)?;
        ids.extend(s.iter().map(|&v| v as usize));
        ids.extend(std::iter::repeat_n(pad as usize, len - s.len()));
    }
    Ok((len, ids))
}

struct Net<'a, 'r> {
    tape: Tape<'a>,
    cfg: &'a ModelConfig,
    rng: Option<&'r mut SeededRng>,
}

impl<'a, 'r> Net<'a, 'r> {
    fn new(params: &'a ModelParams, cfg: &'a ModelConfig, rng: Option<&'r mut SeededRng>) -> Self {
        Net {
            tape: Tape::new(params),
            cfg,
            rng,
        }
    }

    fn p(&mut self, name: &str) -> Result<Var> {
        self.tape.param(name)
    }

    fn drop(&mut self, x: Var) -> Var {
        let p = self.cfg.dropout_rate;
        match self.rng.as_deref_mut() {
            Some(rng) if p > 0.0 => self.tape.dropout(x, p, rng),
            _ => x,
        }
    }

    fn norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let g = self.p(&format!("{prefix}.g"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        Ok(self.tape.layer_norm(x, g, b))
    }

    fn linear(&mut self, prefix: &str, w: &str, b: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{prefix}.{w}"))?;
        let b = self.p(&format!("{prefix}.{b}"))?;
        Ok(self.tape.linear(x, w, b))
    }

    fn attention(&mut self, prefix: &str, xq: Var, xkv: Var, geom: AttnGeom) -> Result<Var> {
        let q = self.linear(prefix, "wq", "bq", xq)?;
        let k = self.linear(prefix, "wk", "bk", xkv)?;
        let v = self.linear(prefix, "wv", "bv", xkv)?;
        let a = self.tape.attention(q, k, v, geom);
        self.linear(prefix, "wo", "bo", a)
    }

    fn feed_forward(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let h = self.linear(prefix, "w1", "b1", x)?;
        let h = self.tape.gelu(h);
        let h = self.drop(h);
        self.linear(prefix, "w2", "b2", h)
    }

    /// `x + dropout(f(norm(x)))`
    fn residual(&mut self, x: Var, y: Var) -> Var {
        let y = self.drop(y);
        self.tape.add(x, y)
    }

    fn embed(&mut self, table: &str, ids: &[usize], batch: usize, len: usize) -> Result<Var> {
        let d = self.cfg.d_model;
        let t = self.p(table)?;
        let e = self.tape.embed(t, ids, (d as f64).sqrt());
        let pe = sinusoid(len, d);
        let mut pos = Vec::with_capacity(batch * len * d);
        for _ in 0..batch {
            pos.extend_from_slice(&pe);
        }
        let pos = self.tape.input(batch * len, d, pos);
        let x = self.tape.add(e, pos);
        Ok(self.drop(x))
    }

    fn encode(&mut self, ids: &[usize], batch: usize, len: usize, key_valid: &[bool]) -> Result<Var> {
        let mut x = self.embed("enc.embed", ids, batch, len)?;
        let geom = AttnGeom {
            batch,
            q_len: len,
            k_len: len,
            heads: self.cfg.n_heads,
            causal: false,
            key_valid: key_valid.to_vec(),
        };
        for l in 0..self.cfg.n_enc_layers {
            let h = self.norm(&format!("enc.{l}.ln1"), x)?;
            let h = self.attention(&format!("enc.{l}.attn"), h, h, geom.clone())?;
            x = self.residual(x, h);
            let h = self.norm(&format!("enc.{l}.ln2"), x)?;
            let h = self.feed_forward(&format!("enc.{l}.ff"), h)?;
            x = self.residual(x, h);
        }
        if self.cfg.n_enc_layers > 0 {
            x = self.norm("enc.ln", x)?;
        }
        Ok(x)
    }

    #[allow(clippy::too_many_arguments)]
    fn decode(
        &mut self,
        memory: Var,
        src_len: usize,
        key_valid: &[bool],
        ids: &[usize],
        batch: usize,
        len: usize,
    ) -> Result<Var> {
        let mut x = self.embed("dec.embed", ids, batch, len)?;
        let self_geom = AttnGeom {
            batch,
            q_len: len,
            k_len: len,
            heads: self.cfg.n_heads,
            causal: true,
            key_valid: vec![true; batch * len],
        };
        let cross_geom = AttnGeom {
            batch,
            q_len: len,
            k_len: src_len,
            heads: self.cfg.n_heads,
            causal: false,
            key_valid: key_valid.to_vec(),
        };
        for l in 0..self.cfg.n_dec_layers {
            let h = self.norm(&format!("dec.{l}.ln1"), x)?;
            let h = self.attention(&format!("dec.{l}.self"), h, h, self_geom.clone())?;
            x = self.residual(x, h);
            let h = self.norm(&format!("dec.{l}.ln2"), x)?;
            let h = self.attention(&format!("dec.{l}.cross"), h, memory, cross_geom.clone())?;
            x = self.residual(x, h);
            let h = self.norm(&format!("dec.{l}.ln3"), x)?;
            let h = self.feed_forward(&format!("dec.{l}.ff"), h)?;
            x = self.residual(x, h);
        }
        if self.cfg.n_dec_layers > 0 {
            x = self.norm("dec.ln", x)?;
        }
        let w = self.p("out.w")?;
        let b = self.p("out.b")?;
        Ok(self.tape.linear(x, w, b))
    }
}

struct Prepared {
    batch: usize,
    src_len: usize,
    src: Vec<usize>,
    key_valid: Vec<bool>,
    tgt_len: usize,
    tgt: Vec<usize>,
}

fn prepare(cfg: &ModelConfig, src: &[&[u32]], tgt_in: &[&[u32]]) -> Result<Prepared> {
    cfg.validate()?;
    if src.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if src.len() != tgt_in.len() {
        return Err(Error::Shape(format!(
            "{} sources but {} targets",
            src.len(),
            tgt_in.len()
        )));
    }
    let (src_len, src_ids) = rectangle(src, cfg.src_pad, cfg.max_src_len, cfg.vocab_in)?;
    let (tgt_len, tgt_ids) = rectangle(tgt_in, cfg.tgt_pad, cfg.max_tgt_len, cfg.vocab_out)?;
    if src_len == 0 || tgt_len == 0 {
        return Err(Error::InvalidArgument("empty source or target sequence".into()));
    }
    let key_valid = src_ids.iter().map(|&id| id != cfg.src_pad as usize).collect();
    Ok(Prepared {
        batch: src.len(),
        src_len,
        src: src_ids,
        key_valid,
        tgt_len,
        tgt: tgt_ids,
    })
}

/// Teacher-forced logits for already shifted targets.
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    src: &[Vec<u32>],
    tgt_in: &[Vec<u32>],
) -> Result<Logits> {
    let src: Vec<&[u32]> = src.iter().map(|s| &s[..]).collect();
    let tgt: Vec<&[u32]> = tgt_in.iter().map(|s| &s[..]).collect();
    let p = prepare(cfg, &src, &tgt)?;
    let mut net = Net::new(params, cfg, None);
    let mem = net.encode(&p.src, p.batch, p.src_len, &p.key_valid)?;
    let out = net.decode(mem, p.src_len, &p.key_valid, &p.tgt, p.batch, p.tgt_len)?;
    Ok(Logits {
        batch: p.batch,
        tgt_len: p.tgt_len,
        vocab: cfg.vocab_out,
        data: net.tape.value(out).to_vec(),
    })
}

fn shifted(cfg: &ModelConfig, batch: &[Example]) -> (Vec<Vec<u32>>, Vec<Option<usize>>) {
    let len = batch.iter().map(|e| e.labels.len()).max().unwrap_or(0);
    let mut tgt_in = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len() * len);
    for e in batch {
        let mut t = vec![cfg.tgt_bos];
        t.extend_from_slice(&e.labels[..e.labels.len().saturating_sub(1)]);
        tgt_in.push(t);
        for i in 0..len {
            targets.push(match e.labels.get(i) {
                Some(&y) if y != cfg.tgt_pad => Some(y as usize),
                _ => None,
            });
        }
    }
    (tgt_in, targets)
}

fn with_loss<T>(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[Example],
    rng: Option<&mut SeededRng>,
    f: impl FnOnce(&Tape, Var) -> T,
) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if batch.iter().any(|e| e.labels.is_empty()) {
        return Err(Error::InvalidArgument("example with no labels".into()));
    }
    let (tgt_in, targets) = shifted(cfg, batch);
    let src: Vec<&[u32]> = batch.iter().map(|e| &e.src[..]).collect();
    let tgt: Vec<&[u32]> = tgt_in.iter().map(|s| &s[..]).collect();
    let p = prepare(cfg, &src, &tgt)?;
    let mut net = Net::new(params, cfg, rng);
    let mem = net.encode(&p.src, p.batch, p.src_len, &p.key_valid)?;
    let logits = net.decode(mem, p.src_len, &p.key_valid, &p.tgt, p.batch, p.tgt_len)?;
    let loss = net.tape.cross_entropy(logits, &targets)?;
    Ok(f(&net.tape, loss))
}

/// Mean cross-entropy over non-PAD targets and its exact gradient.
/// Dropout is active only when `rng` is given.
pub fn loss_and_grads(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[Example],
    rng: Option<&mut SeededRng>,
) -> Result<(f64, ModelParams)> {
    let (value, grads) = with_loss(params, cfg, batch, rng, |tape, loss| {
        let value = tape.value(loss)[0];
        let grads = value.is_finite().then(|| tape.backward(loss));
        (value, grads)
    })?;
    match grads {
        Some(g) => Ok((value, g)),
        None => Err(Error::NonFinite("loss".into())),
    }
}

/// Loss without dropout or gradients.
pub fn loss_only(params: &ModelParams, cfg: &ModelConfig, batch: &[Example]) -> Result<f64> {
    with_loss(params, cfg, batch, None, |tape, loss| tape.value(loss)[0])
}

pub fn encode_source(params: &ModelParams, cfg: &ModelConfig, src: &[u32]) -> Result<EncoderMemory> {
    let p = prepare(cfg, &[src], &[&[cfg.tgt_bos]])?;
    let mut net = Net::new(params, cfg, None);
    let mem = net.encode(&p.src, 1, p.src_len, &p.key_valid)?;
    Ok(EncoderMemory {
        src_len: p.src_len,
        key_valid: p.key_valid,
        states: net.tape.value(mem).to_vec(),
    })
}

/// Logits for the position after `prefix` (which starts with BOS).
pub fn decoder_logits(
    params: &ModelParams,
    cfg: &ModelConfig,
    memory: &EncoderMemory,
    prefix: &[u32],
) -> Result<Vec<f64>> {
    if prefix.is_empty() {
        return Err(Error::InvalidArgument("decoder prefix must start with BOS".into()));
    }
    if prefix.len() > cfg.max_tgt_len {
        return Err(Error::LengthOverflow {
            len: prefix.len(),
            max: cfg.max_tgt_len,
        });
    }
    check_ids(prefix, cfg.vocab_out)?;
    let ids: Vec<usize> = prefix.iter().map(|&v| v as usize).collect();
    let mut net = Net::new(params, cfg, None);
    let mem = net
        .tape
        .input(memory.src_len, cfg.d_model, memory.states.clone());
    let out = net.decode(mem, memory.src_len, &memory.key_valid, &ids, 1, ids.len())?;
    let v = cfg.vocab_out;
    Ok(net.tape.value(out)[(ids.len() - 1) * v..].to_vec())
}
