//! Corpus statistics over token streams: entropy against a uniform
//! baseline, frequency-rank (Zipf) and vocabulary growth (Heaps).
//!
//! Only content ids (`< k`) are counted; separators, masks and other
//! specials are structural and dropped before any statistic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrequencyTable {
    pub counts: BTreeMap<u32, u64>,
    pub total: u64,
}

impl FrequencyTable {
    /// Counts the ids below `k` in `ids`.
    pub fn from_ids(ids: &[u32], k: usize) -> Self {
        let mut ft = FrequencyTable::default();
        ft.extend(ids, k);
        ft
    }

    pub fn extend(&mut self, ids: &[u32], k: usize) {
        for &id in ids.iter().filter(|&&id| (id as usize) < k) {
            *self.counts.entry(id).or_insert(0) += 1;
            self.total += 1;
        }
    }

    pub fn merge(&mut self, other: &FrequencyTable) {
        for (&id, &c) in &other.counts {
            *self.counts.entry(id).or_insert(0) += c;
        }
        self.total += other.total;
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }
}

/// Entropy in nats, `0 · ln 0 = 0`.
pub fn shannon_entropy(ft: &FrequencyTable) -> Result<f64> {
    if ft.total == 0 {
        return Err(Error::InsufficientData("empty frequency table".into()));
    }
    let n = ft.total as f64;
    let h = -ft
        .counts
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

pub fn nats_to_bits(h: f64) -> f64 {
    h / std::f64::consts::LN_2
}

/// Mean per-puzzle entropy for one content length `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthEntropy {
    pub n: usize,
    pub puzzles: usize,
    pub mean_h: f64,
}

/// Entropy of each puzzle's content tokens, averaged over puzzles with the
/// same number of content tokens. Rows come out sorted by `n`.
pub fn per_puzzle_entropy(puzzles: &[Vec<u32>], k: usize) -> Vec<LengthEntropy> {
    let mut groups: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for ids in puzzles {
        let ft = FrequencyTable::from_ids(ids, k);
        let Ok(h) = shannon_entropy(&ft) else { continue };
        let g = groups.entry(ft.total as usize).or_insert((0, 0.0));
        g.0 += 1;
        g.1 += h;
    }
    groups
        .into_iter()
        .map(|(n, (count, sum))| LengthEntropy {
            n,
            puzzles: count,
            mean_h: sum / count as f64,
        })
        .collect()
}

/// Mean empirical entropy of `trials` sequences of `n` i.i.d. uniform ids
/// over `k`, for each requested `n`.
pub fn uniform_baseline(n_values: &[usize], k: usize, trials: usize, seed: u64) -> Result<Vec<(usize, f64)>> {
    if trials == 0 || k == 0 {
        return Err(Error::InvalidArgument("trials and k must be positive".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut counts = vec![0u64; k];
    let mut out = Vec::with_capacity(n_values.len());
    for &n in n_values {
        if n == 0 {
            return Err(Error::InvalidArgument("sequence length 0".into()));
        }
        let mut sum = 0.0;
        for _ in 0..trials {
            counts.iter_mut().for_each(|c| *c = 0);
            for _ in 0..n {
                counts[rng.below(k as u64) as usize] += 1;
            }
            let nf = n as f64;
            sum -= counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / nf;
                    p * p.ln()
                })
                .sum::<f64>();
        }
        out.push((n, (sum / trials as f64).max(0.0)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZipfRow {
    pub rank: usize,
    pub token: u32,
    pub count: u64,
}

/// Tokens by descending count, ties by ascending id; ranks start at 1.
pub fn zipf_curve(ft: &FrequencyTable) -> Vec<ZipfRow> {
    let mut items: Vec<(u32, u64)> = ft.counts.iter().map(|(&t, &c)| (t, c)).collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    items
        .into_iter()
        .enumerate()
        .map(|(i, (token, count))| ZipfRow {
            rank: i + 1,
            token,
            count,
        })
        .collect()
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Log-log slope of count against rank.
pub fn zipf_slope(rows: &[ZipfRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.rank as f64).ln(), (r.count as f64).ln()))
        .collect();
    ols_slope(&pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeapsCurve {
    /// `(n, distinct ids among the first n tokens)`.
    pub rows: Vec<(usize, usize)>,
    /// Log-log slope of distinct count against `n`; 0 when undetermined.
    pub beta: f64,
}

/// Distinct-token count after the first `n` tokens for each sample point.
pub fn heaps_curve(stream: &[u32], sample_points: &[usize]) -> Result<HeapsCurve> {
    let mut points = sample_points.to_vec();
    points.sort_unstable();
    points.dedup();
    if let Some(&last) = points.last() {
        if last > stream.len() {
            return Err(Error::InvalidArgument(format!(
                "sample point {last} exceeds stream length {}",
                stream.len()
            )));
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut rows = Vec::with_capacity(points.len());
    let mut consumed = 0;
    for &n in &points {
        while consumed < n {
            seen.insert(stream[consumed]);
            consumed += 1;
        }
        rows.push((n, seen.len()));
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(n, u)| *n > 0 && *u > 0)
        .map(|&(n, u)| ((n as f64).ln(), (u as f64).ln()))
        .collect();
    Ok(HeapsCurve {
        rows,
        beta: ols_slope(&pts).unwrap_or(0.0),
    })
}

/// Roughly geometric sample points `1, 2, 4, ...` ending at `len`.
pub fn geometric_points(len: usize, per_octave: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if len == 0 {
        return out;
    }
    let step = 2f64.powf(1.0 / per_octave.max(1) as f64);
    let mut x = 1.0f64;
    while (x as usize) < len {
        out.push(x as usize);
        x *= step;
    }
    out.push(len);
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub n: usize,
    pub puzzles: usize,
    pub mean_h_nats: f64,
    pub mean_h_bits: f64,
    pub uniform_h_nats: f64,
    pub uniform_h_bits: f64,
    /// `uniform − puzzle`, in nats.
    pub gap_nats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub vocab_size: usize,
    pub total_tokens: u64,
    pub distinct_tokens: usize,
    pub corpus_entropy_nats: f64,
    pub zipf_slope: Option<f64>,
    pub heaps_beta: f64,
    pub entropy_by_length: Vec<EntropyRow>,
    pub zipf: Vec<ZipfRow>,
    pub heaps: Vec<(usize, usize)>,
}

/// Runs all statistics over puzzles given as encoder id sequences, in
/// dataset order.
pub fn analyze(puzzles: &[Vec<u32>], k: usize, baseline_trials: usize, seed: u64) -> Result<AnalysisReport> {
    let mut ft = FrequencyTable::default();
    let mut stream = Vec::new();
    for ids in puzzles {
        ft.extend(ids, k);
        stream.extend(ids.iter().filter(|&&id| (id as usize) < k));
    }
    let corpus_entropy_nats = shannon_entropy(&ft)?;
    let lengths = per_puzzle_entropy(puzzles, k);
    let ns: Vec<usize> = lengths.iter().map(|r| r.n).collect();
    let base = uniform_baseline(&ns, k, baseline_trials, seed)?;
    let entropy_by_length = lengths
        .iter()
        .zip(&base)
        .map(|(r, &(_, u))| EntropyRow {
            n: r.n,
            puzzles: r.puzzles,
            mean_h_nats: r.mean_h,
            mean_h_bits: nats_to_bits(r.mean_h),
            uniform_h_nats: u,
            uniform_h_bits: nats_to_bits(u),
            gap_nats: u - r.mean_h,
        })
        .collect();
    let zipf = zipf_curve(&ft);
    let heaps = heaps_curve(&stream, &geometric_points(stream.len(), 4))?;
    Ok(AnalysisReport {
        vocab_size: k,
        total_tokens: ft.total,
        distinct_tokens: ft.distinct(),
        corpus_entropy_nats,
        zipf_slope: zipf_slope(&zipf),
        heaps_beta: heaps.beta,
        entropy_by_length,
        zipf,
        heaps: heaps.rows,
    })
}

impl AnalysisReport {
    pub fn entropy_csv(&self) -> String {
        let mut s = String::from("n,puzzles,mean_h_nats,mean_h_bits,uniform_h_nats,uniform_h_bits,gap_nats\n");
        for r in &self.entropy_by_length {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.n, r.puzzles, r.mean_h_nats, r.mean_h_bits, r.uniform_h_nats, r.uniform_h_bits, r.gap_nats
            );
        }
        s
    }

    pub fn zipf_csv(&self) -> String {
        let mut s = String::from("rank,token,frequency\n");
        for r in &self.zipf {
            let _ = writeln!(s, "{},{},{}", r.rank, r.token, r.count);
        }
        s
    }

    pub fn heaps_csv(&self) -> String {
        let mut s = String::from("n,unique\n");
        for (n, u) in &self.heaps {
            let _ = writeln!(s, "{n},{u}");
        }
        s
    }

    /// Writes `entropy.csv`, `zipf.csv`, `heaps.csv` and `analysis.json`
    /// (summary plus the given provenance fields) into `dir`.
    pub fn write(&self, dir: &Path, provenance: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let sidecar = serde_json::json!({
            "provenance": provenance,
            "vocab_size": self.vocab_size,
            "total_tokens": self.total_tokens,
            "distinct_tokens": self.distinct_tokens,
            "corpus_entropy_nats": self.corpus_entropy_nats,
            "corpus_entropy_bits": nats_to_bits(self.corpus_entropy_nats),
            "zipf_slope": self.zipf_slope,
            "heaps_beta": self.heaps_beta,
            "files": ["entropy.csv", "zipf.csv", "heaps.csv"],
        });
        let files = [
            ("entropy.csv", self.entropy_csv()),
            ("zipf.csv", self.zipf_csv()),
            ("heaps.csv", self.heaps_csv()),
            ("analysis.json", serde_json::to_string_pretty(&sidecar)? + "\n"),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
