//! Minibatch training loop.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::optim::{AdamConfig, OptimizerState};
use super::params::ModelParams;
use super::transformer::{loss_and_grads, Example};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Batches are split into chunks of this size; each chunk is one
    /// independent forward/backward and results are summed in chunk order,
    /// so the outcome does not depend on `workers`.
    pub micro_batch: usize,
    pub workers: usize,
    pub init_seed: u64,
    pub train_seed: u64,
    pub log_every: u64,
    pub optimizer: AdamConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            steps: 10_000,
            batch_size: 32,
            micro_batch: 32,
            workers: 1,
            init_seed: 0,
            train_seed: 1,
            log_every: 50,
            optimizer: AdamConfig::default(),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<TrainLogRecord>,
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
}

fn chunk_grads(
    params: &ModelParams,
    cfg: &ModelConfig,
    chunk: &[Example],
    seed: u64,
) -> Result<(f64, usize, ModelParams)> {
    let count = chunk
        .iter()
        .map(|e| e.labels.iter().filter(|&&y| y != cfg.tgt_pad).count())
        .sum();
    let mut rng = SeededRng::new(seed);
    let dropout = (cfg.dropout_rate > 0.0).then_some(&mut rng);
    let (loss, grads) = loss_and_grads(params, cfg, chunk, dropout)?;
    Ok((loss, count, grads))
}

/// Token-weighted loss and gradient of one batch.
fn batch_grads(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[Example],
    tc: &TrainerConfig,
    step: u64,
) -> Result<(f64, ModelParams)> {
    let chunks: Vec<&[Example]> = batch.chunks(tc.micro_batch.max(1)).collect();
    let seed = |c: usize| derive_seed(tc.train_seed, (step << 16) | c as u64);
    let results: Vec<Result<(f64, usize, ModelParams)>> = if tc.workers <= 1 || chunks.len() == 1 {
        chunks
            .iter()
            .enumerate()
            .map(|(c, ch)| chunk_grads(params, cfg, ch, seed(c)))
            .collect()
    } else {
        let mut slots: Vec<Option<Result<(f64, usize, ModelParams)>>> =
            (0..chunks.len()).map(|_| None).collect();
        let per = chunks.len().div_ceil(tc.workers);
        std::thread::scope(|s| {
            for (w, out) in slots.chunks_mut(per).enumerate() {
                let chunks = &chunks;
                s.spawn(move || {
                    for (i, slot) in out.iter_mut().enumerate() {
                        let c = w * per + i;
                        *slot = Some(chunk_grads(params, cfg, chunks[c], seed(c)));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk computed")).collect()
    };
    let mut parts = Vec::with_capacity(results.len());
    for r in results {
        parts.push(r?);
    }
    if parts.len() == 1 {
        let (loss, _, grads) = parts.pop().expect("one chunk");
        return Ok((loss, grads));
    }
    let total: usize = parts.iter().map(|p| p.1).sum();
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for (l, n, g) in &parts {
        let w = *n as f64 / total as f64;
        loss += w * l;
        for (acc, t) in grads.tensors_mut().iter_mut().zip(g.tensors()) {
            for (a, v) in acc.data.iter_mut().zip(&t.data) {
                *a += w * v;
            }
        }
    }
    Ok((loss, grads))
}

/// Trains from a fresh initialization. Each epoch visits the examples in a
/// seeded shuffled order; `log` receives one JSON line per logged step.
pub fn train(
    cfg: &ModelConfig,
    tc: &TrainerConfig,
    examples: &[Example],
    mut log: Option<&mut dyn Write>,
    mut progress: impl FnMut(&TrainLogRecord),
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::InsufficientData("no training examples".into()));
    }
    if tc.batch_size == 0 || tc.micro_batch == 0 {
        return Err(Error::InvalidArgument("batch sizes must be positive".into()));
    }
    let mut params = ModelParams::init(cfg, tc.init_seed)?;
    let mut opt = OptimizerState::new(tc.optimizer.clone(), &params)?;
    let mut order_rng = SeededRng::derived(tc.train_seed, 0);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut records = Vec::new();
    let mut losses = Vec::with_capacity(tc.steps as usize);
    let mut batch = Vec::with_capacity(tc.batch_size);
    for step in 1..=tc.steps {
        batch.clear();
        while batch.len() < tc.batch_size.min(examples.len()) {
            if cursor == order.len() {
                order_rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(examples[order[cursor]].clone());
            cursor += 1;
        }
        let (loss, grads) = batch_grads(&params, cfg, &batch, tc, step)?;
        let stats = opt.train_step(&mut params, &grads)?;
        losses.push(loss);
        if step % tc.log_every.max(1) == 0 || step == tc.steps {
            let rec = TrainLogRecord {
                step,
                loss,
                lr: stats.lr,
                grad_norm: stats.grad_norm,
            };
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&rec)?;
                writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
            }
            progress(&rec);
            records.push(rec);
        }
    }
    Ok(TrainOutcome {
        params,
        log: records,
        losses,
    })
}
