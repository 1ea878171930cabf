//! Decoding trained models into piece placements, and scoring them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decoder_logits, encode_source, ModelConfig, ModelParams, OutputMode};
use crate::puzzle::{is_permutation, PermutationLabel};
use crate::tokenizer::{EncodedPuzzle, SpecialIds};

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// Grid position of each piece in encoder order.
    pub predicted: PermutationLabel,
    /// Log-probability of the chosen position at each step (index-wise) or
    /// of each generated token (element-wise).
    pub per_step_logprobs: Vec<f64>,
    pub mode: OutputMode,
    /// Number of positions still selectable at each index-wise step.
    pub candidate_counts: Vec<usize>,
    /// Element-wise output whose spans had to be re-segmented.
    pub structure_violation: bool,
}

pub trait PermutationSolver {
    fn solve(&self, encoded: &EncodedPuzzle) -> Result<SolveResult>;
}

fn log_softmax_at(logits: &[f64], allowed: impl Fn(usize) -> bool, pick: usize) -> f64 {
    let max = (0..logits.len())
        .filter(|&i| allowed(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = (0..logits.len())
        .filter(|&i| allowed(i))
        .map(|i| (logits[i] - max).exp())
        .sum();
    logits[pick] - max - sum.ln()
}

fn argmax(logits: &[f64], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in logits.iter().enumerate() {
        if allowed(i) && best.is_none_or(|b| v > logits[b]) {
            best = Some(i);
        }
    }
    best
}

/// Greedy (or beam) decoding over a shrinking set of grid positions.
pub struct IndexWiseSolver<'a> {
    pub params: &'a ModelParams,
    pub config: &'a ModelConfig,
    pub beam_width: usize,
}

impl<'a> IndexWiseSolver<'a> {
    pub fn greedy(params: &'a ModelParams, config: &'a ModelConfig) -> Self {
        IndexWiseSolver {
            params,
            config,
            beam_width: 1,
        }
    }
}

impl PermutationSolver for IndexWiseSolver<'_> {
    fn solve(&self, encoded: &EncodedPuzzle) -> Result<SolveResult> {
        if self.config.mode != OutputMode::IndexWise {
            return Err(Error::InvalidArgument("model was not trained index-wise".into()));
        }
        if self.beam_width <= 1 {
            decode_index_wise(self.params, self.config, encoded)
        } else {
            decode_index_wise_beam(self.params, self.config, encoded, self.beam_width)
        }
    }
}

fn check_capacity(cfg: &ModelConfig, n: usize) -> Result<()> {
    if n == 0 || n > cfg.n_positions() {
        return Err(Error::InvalidArgument(format!(
            "{n} pieces but the model places at most {}",
            cfg.n_positions()
        )));
    }
    Ok(())
}

/// Greedy decoding for exactly N steps. Positions already taken and every
/// id outside `0..N` are excluded before the argmax, so the result is
/// always a permutation.
pub fn decode_index_wise(
    params: &ModelParams,
    cfg: &ModelConfig,
    encoded: &EncodedPuzzle,
) -> Result<SolveResult> {
    let n = encoded.n_pieces();
    check_capacity(cfg, n)?;
    let memory = encode_source(params, cfg, &encoded.encoder_ids)?;
    let mut prefix = vec![cfg.tgt_bos];
    let mut used = vec![false; n];
    let mut predicted = Vec::with_capacity(n);
    let mut logprobs = Vec::with_capacity(n);
    let mut counts = Vec::with_capacity(n);
    for _ in 0..n {
        let logits = decoder_logits(params, cfg, &memory, &prefix)?;
        let allowed = |i: usize| i < n && !used[i];
        counts.push((0..logits.len()).filter(|&i| allowed(i)).count());
        let pick = argmax(&logits, allowed).ok_or_else(|| Error::NonFinite("decoder logits".into()))?;
        logprobs.push(log_softmax_at(&logits, allowed, pick));
        used[pick] = true;
        predicted.push(pick);
        prefix.push(pick as u32);
    }
    Ok(SolveResult {
        predicted: PermutationLabel::new(predicted)?,
        per_step_logprobs: logprobs,
        mode: OutputMode::IndexWise,
        candidate_counts: counts,
        structure_violation: false,
    })
}

/// Beam search over the same constrained space; the best-scoring complete
/// hypothesis wins (ties keep the earlier beam).
pub fn decode_index_wise_beam(
    params: &ModelParams,
    cfg: &ModelConfig,
    encoded: &EncodedPuzzle,
    width: usize,
) -> Result<SolveResult> {
    let n = encoded.n_pieces();
    check_capacity(cfg, n)?;
    let memory = encode_source(params, cfg, &encoded.encoder_ids)?;
    // (score, chosen positions, per-step log-probs)
    let mut beams: Vec<(f64, Vec<usize>, Vec<f64>)> = vec![(0.0, Vec::new(), Vec::new())];
    let mut counts = Vec::with_capacity(n);
    for t in 0..n {
        counts.push(n - t);
        let mut next = Vec::new();
        for (score, chosen, lps) in &beams {
            let mut prefix = vec![cfg.tgt_bos];
            prefix.extend(chosen.iter().map(|&p| p as u32));
            let logits = decoder_logits(params, cfg, &memory, &prefix)?;
            let allowed = |i: usize| i < n && !chosen.contains(&i);
            for pick in (0..n).filter(|&i| allowed(i)) {
                let lp = log_softmax_at(&logits, allowed, pick);
                let mut c = chosen.clone();
                c.push(pick);
                let mut l = lps.clone();
                l.push(lp);
                next.push((score + lp, c, l));
            }
        }
        next.sort_by(|a, b| b.0.total_cmp(&a.0));
        next.truncate(width);
        beams = next;
    }
    let (_, chosen, lps) = beams.into_iter().next().expect("at least one beam");
    Ok(SolveResult {
        predicted: PermutationLabel::new(chosen)?,
        per_step_logprobs: lps,
        mode: OutputMode::IndexWise,
        candidate_counts: counts,
        structure_violation: false,
    })
}

/// Decoder target for element-wise training: the super-tokens laid out in
/// grid order, joined like the encoder input.
pub fn element_wise_target(encoded: &EncodedPuzzle, specials: SpecialIds) -> Vec<u32> {
    let n = encoded.n_pieces();
    let mut by_position = vec![0usize; n];
    for (i, &pos) in encoded.labels.as_slice().iter().enumerate() {
        by_position[pos] = i;
    }
    let mut out = Vec::with_capacity(encoded.encoder_ids.len());
    for (slot, &i) in by_position.iter().enumerate() {
        if slot > 0 && encoded.separated {
            out.push(specials.sep);
        }
        out.extend_from_slice(encoded.span(i));
    }
    out
}

/// Splits generated tokens into one span per grid position. Returns the
/// spans and whether the separator structure had to be ignored.
pub fn segment_generation(
    generated: &[u32],
    n: usize,
    tau: usize,
    separated: bool,
    sep: u32,
) -> (Vec<Vec<u32>>, bool) {
    if separated {
        let spans: Vec<Vec<u32>> = generated.split(|&t| t == sep).map(<[u32]>::to_vec).collect();
        if spans.len() == n && spans.iter().all(|s| s.len() == tau) {
            return (spans, false);
        }
    } else if generated.len() == n * tau {
        return (generated.chunks(tau).map(<[u32]>::to_vec).collect(), false);
    }
    let stride = tau + usize::from(separated);
    let spans = (0..n)
        .map(|g| {
            (0..tau)
                .map(|j| generated.get(g * stride + j).copied().unwrap_or(sep))
                .collect()
        })
        .collect();
    (spans, true)
}

/// Assigns generated spans (grid order) to input pieces by Hamming
/// distance. The closest remaining (span, piece) pair is fixed first; ties go
/// to the lowest piece index, then the lowest grid position.
pub fn match_spans(encoded: &EncodedPuzzle, spans: &[Vec<u32>]) -> Result<PermutationLabel> {
    let n = encoded.n_pieces();
    if spans.len() != n {
        return Err(Error::Shape(format!("{} spans for {n} pieces", spans.len())));
    }
    let dist: Vec<Vec<usize>> = spans
        .iter()
        .map(|span| {
            (0..n)
                .map(|i| {
                    let piece = encoded.span(i);
                    piece.iter().zip(span).filter(|(a, b)| a != b).count()
                        + piece.len().abs_diff(span.len())
                })
                .collect()
        })
        .collect();
    let mut piece_taken = vec![false; n];
    let mut pos_taken = vec![false; n];
    let mut predicted = vec![usize::MAX; n];
    for _ in 0..n {
        let mut best: Option<(usize, usize, usize)> = None;
        for i in (0..n).filter(|&i| !piece_taken[i]) {
            for pos in (0..n).filter(|&p| !pos_taken[p]) {
                let d = dist[pos][i];
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, pos));
                }
            }
        }
        let (_, i, pos) = best.expect("an unmatched pair remains");
        piece_taken[i] = true;
        pos_taken[pos] = true;
        predicted[i] = pos;
    }
    PermutationLabel::new(predicted)
}

/// Regenerates the solved token layout, then recovers placements by matching.
pub struct ElementWiseSolver<'a> {
    pub params: &'a ModelParams,
    pub config: &'a ModelConfig,
    pub specials: SpecialIds,
}

impl PermutationSolver for ElementWiseSolver<'_> {
    fn solve(&self, encoded: &EncodedPuzzle) -> Result<SolveResult> {
        decode_element_wise(self.params, self.config, self.specials, encoded)
    }
}

pub fn decode_element_wise(
    params: &ModelParams,
    cfg: &ModelConfig,
    specials: SpecialIds,
    encoded: &EncodedPuzzle,
) -> Result<SolveResult> {
    if cfg.mode != OutputMode::ElementWise {
        return Err(Error::InvalidArgument("model was not trained element-wise".into()));
    }
    let n = encoded.n_pieces();
    let len = encoded.encoder_ids.len();
    if len > cfg.max_tgt_len {
        return Err(Error::LengthOverflow {
            len,
            max: cfg.max_tgt_len,
        });
    }
    let memory = encode_source(params, cfg, &encoded.encoder_ids)?;
    let mut prefix = vec![cfg.tgt_bos];
    let mut logprobs = Vec::with_capacity(len);
    let allowed = |i: usize| i != cfg.tgt_bos as usize && i != cfg.tgt_pad as usize;
    for _ in 0..len {
        let logits = decoder_logits(params, cfg, &memory, &prefix)?;
        let pick = argmax(&logits, allowed).ok_or_else(|| Error::NonFinite("decoder logits".into()))?;
        logprobs.push(log_softmax_at(&logits, allowed, pick));
        prefix.push(pick as u32);
    }
    let (spans, violation) = segment_generation(&prefix[1..], n, encoded.tau, encoded.separated, specials.sep);
    Ok(SolveResult {
        predicted: match_spans(encoded, &spans)?,
        per_step_logprobs: logprobs,
        mode: OutputMode::ElementWise,
        candidate_counts: Vec::new(),
        structure_violation: violation,
    })
}

fn same_len(y: &[usize], yhat: &[usize]) -> Result<()> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(Error::Shape(format!(
            "label lengths {} and {} differ or are empty",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}

/// Fraction of pieces placed at their true position.
pub fn absolute_accuracy(y: &PermutationLabel, yhat: &PermutationLabel) -> Result<f64> {
    let (y, yhat) = (y.as_slice(), yhat.as_slice());
    same_len(y, yhat)?;
    let hits = y.iter().zip(yhat).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y.len() as f64)
}

/// 1 when every piece is placed correctly, else 0.
pub fn perfect_accuracy(y: &PermutationLabel, yhat: &PermutationLabel) -> Result<f64> {
    let (y, yhat) = (y.as_slice(), yhat.as_slice());
    same_len(y, yhat)?;
    Ok(if y == yhat { 1.0 } else { 0.0 })
}

/// Both metrics restricted to pieces with `present[i]`.
pub fn present_only_scores(y: &PermutationLabel, yhat: &PermutationLabel, present: &[bool]) -> Result<(f64, f64)> {
    let (y, yhat) = (y.as_slice(), yhat.as_slice());
    same_len(y, yhat)?;
    let idx: Vec<usize> = (0..y.len()).filter(|&i| present[i]).collect();
    if idx.is_empty() {
        return Err(Error::InvalidArgument("no present pieces".into()));
    }
    let hits = idx.iter().filter(|&&i| y[i] == yhat[i]).count();
    Ok((hits as f64 / idx.len() as f64, if hits == idx.len() { 1.0 } else { 0.0 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Every grid position counts, including those of masked pieces.
    #[default]
    AllPositions,
    PresentOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub absolute: f64,
    pub perfect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuzzleRecord {
    pub index: usize,
    pub n_pieces: usize,
    pub missing: usize,
    pub absolute: f64,
    pub perfect: f64,
    pub absolute_present: f64,
    pub perfect_present: f64,
    pub structure_violation: bool,
    pub predicted: Vec<usize>,
    pub truth: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub scoring: Scoring,
    /// Headline numbers under `scoring`.
    pub absolute: f64,
    pub perfect: f64,
    pub all_positions: Scores,
    pub present_only: Scores,
    pub n_puzzles: usize,
    pub structure_violations: usize,
    #[serde(skip)]
    pub records: Vec<PuzzleRecord>,
}

impl EvalSummary {
    pub fn from_records(records: Vec<PuzzleRecord>, scoring: Scoring) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InsufficientData("empty evaluation set".into()));
        }
        let n = records.len() as f64;
        let mean = |f: fn(&PuzzleRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let all_positions = Scores {
            absolute: mean(|r| r.absolute),
            perfect: mean(|r| r.perfect),
        };
        let present_only = Scores {
            absolute: mean(|r| r.absolute_present),
            perfect: mean(|r| r.perfect_present),
        };
        let head = match scoring {
            Scoring::AllPositions => all_positions,
            Scoring::PresentOnly => present_only,
        };
        Ok(EvalSummary {
            scoring,
            absolute: head.absolute,
            perfect: head.perfect,
            all_positions,
            present_only,
            n_puzzles: records.len(),
            structure_violations: records.iter().filter(|r| r.structure_violation).count(),
            records,
        })
    }

    /// Per-puzzle table with a header row.
    pub fn records_csv(&self) -> String {
        let mut out = String::from(
            "index,n_pieces,missing,absolute,perfect,absolute_present,perfect_present,structure_violation,predicted,truth\n",
        );
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.index,
                r.n_pieces,
                r.missing,
                r.absolute,
                r.perfect,
                r.absolute_present,
                r.perfect_present,
                r.structure_violation,
                join(&r.predicted),
                join(&r.truth)
            ));
        }
        out
    }
}

fn score_one(solver: &dyn PermutationSolver, index: usize, e: &EncodedPuzzle) -> Result<PuzzleRecord> {
    let res = solver.solve(e)?;
    debug_assert!(is_permutation(res.predicted.as_slice()));
    let present: Vec<bool> = e.missing.iter().map(|m| !m).collect();
    let absolute = absolute_accuracy(&e.labels, &res.predicted)?;
    let perfect = perfect_accuracy(&e.labels, &res.predicted)?;
    let (absolute_present, perfect_present) = if present.iter().any(|&p| p) {
        present_only_scores(&e.labels, &res.predicted, &present)?
    } else {
        (absolute, perfect)
    };
    Ok(PuzzleRecord {
        index,
        n_pieces: e.n_pieces(),
        missing: e.missing.iter().filter(|&&m| m).count(),
        absolute,
        perfect,
        absolute_present,
        perfect_present,
        structure_violation: res.structure_violation,
        predicted: res.predicted.into_vec(),
        truth: e.labels.as_slice().to_vec(),
    })
}

/// Solves every puzzle and aggregates both metrics in dataset order.
/// Work is split over `workers` threads; the summary does not depend on it.
pub fn evaluate(
    solver: &(dyn PermutationSolver + Sync),
    dataset: &[EncodedPuzzle],
    scoring: Scoring,
    workers: usize,
) -> Result<EvalSummary> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData("empty evaluation set".into()));
    }
    let workers = workers.clamp(1, dataset.len());
    let records: Vec<Result<PuzzleRecord>> = if workers == 1 {
        dataset.iter().enumerate().map(|(i, e)| score_one(solver, i, e)).collect()
    } else {
        let per = dataset.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = dataset
                .chunks(per)
                .enumerate()
                .map(|(w, chunk)| {
                    s.spawn(move || {
                        chunk
                            .iter()
                            .enumerate()
                            .map(|(i, e)| score_one(solver, w * per + i, e))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };
    EvalSummary::from_records(records.into_iter().collect::<Result<_>>()?, scoring)
}
