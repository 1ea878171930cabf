// One PASS/FAIL line per acceptance criterion. Runs without the libtest
// harness so the lines show up in plain `cargo test` output.
//
// ACCEPTANCE_ONLY=1,4,5 restricts the run to the listed criteria.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use anyhow::{ensure, Context};
use jigsaw_seq::analysis::{
    analyze, heaps_curve, geometric_points, per_puzzle_entropy, shannon_entropy, uniform_baseline,
    zipf_curve, zipf_slope, FrequencyTable,
};
use jigsaw_seq::model::{
    loss_and_grads, loss_only, train, AdamConfig, Example, ModelConfig, ModelParams, ModelShape, OutputMode,
    TrainLogRecord, TrainerConfig,
};
use jigsaw_seq::numerics::{kmeans_assign, kmeans_fit, pca_fit, Matrix};
use jigsaw_seq::pipeline::{self, RunConfig, RunPaths};
use jigsaw_seq::puzzle::manifest::Manifest;
use jigsaw_seq::puzzle::{cut_image, is_permutation, make_puzzle, mark_missing, shuffle, synth_image, PermutationLabel, PuzzleInstance};
use jigsaw_seq::rng::SeededRng;
use jigsaw_seq::solver::{
    absolute_accuracy, evaluate, perfect_accuracy, ElementWiseSolver, IndexWiseSolver, PermutationSolver, Scoring,
};
use jigsaw_seq::tokenizer::{encode_puzzle, fit_codebook, to_debug_text, Codebook, EncodedPuzzle, TokenizerConfig};

mod common;

type Verdict = anyhow::Result<(bool, String)>;

/// Shared state: the criterion-1 run directory is reused by later criteria.
struct Ctx {
    _dir: tempfile::TempDir,
    desk: RunPaths,
    desk_cfg: RunConfig,
}

fn load_split(paths: &RunPaths, split: &str) -> anyhow::Result<Vec<PuzzleInstance>> {
    let m = Manifest::read(paths.manifest(split))?;
    m.puzzles(Path::new("."))
        .map(|r| r.map(|(_, p)| p).map_err(Into::into))
        .collect()
}

fn ensure_desk_run(ctx: &Ctx) -> anyhow::Result<()> {
    if !ctx.desk.codebook().is_file() {
        pipeline::stage_make_dataset(&ctx.desk_cfg, &ctx.desk)?;
        pipeline::stage_fit_tokenizer(&ctx.desk_cfg, &ctx.desk)?;
        pipeline::stage_tokenize(&ctx.desk_cfg, &ctx.desk)?;
    }
    Ok(())
}

fn reduced_shape() -> ModelShape {
    ModelShape {
        d_model: 64,
        n_heads: 4,
        n_enc_layers: 2,
        n_dec_layers: 2,
        d_ff: 256,
        dropout_rate: 0.1,
    }
}

fn reduced_trainer(seed: u64) -> TrainerConfig {
    TrainerConfig {
        steps: 1500,
        init_seed: seed,
        train_seed: seed + 100,
        log_every: 500,
        optimizer: AdamConfig {
            lr: 1e-3,
            warmup_steps: 200,
            total_steps: 1500,
            ..AdamConfig::default()
        },
        ..TrainerConfig::default()
    }
}

fn progress(tag: &str) -> impl FnMut(&TrainLogRecord) + '_ {
    move |r| eprintln!("  [{tag}] step {:>5} loss {:.4}", r.step, r.loss)
}

fn encode_all(cb: &Codebook, puzzles: &[PuzzleInstance]) -> anyhow::Result<Vec<EncodedPuzzle>> {
    Ok(puzzles.iter().map(|p| encode_puzzle(cb, p)).collect::<Result<_, _>>()?)
}

fn train_and_score(
    mode: OutputMode,
    cb: &Codebook,
    train_set: &[EncodedPuzzle],
    test_set: &[EncodedPuzzle],
    seed: u64,
    tag: &str,
) -> anyhow::Result<f64> {
    let n = train_set[0].n_pieces();
    let len = train_set[0].encoder_ids.len();
    let specials = cb.specials();
    let cfg = match mode {
        OutputMode::IndexWise => ModelConfig::index_wise(&reduced_shape(), specials, n, len),
        OutputMode::ElementWise => ModelConfig::element_wise(&reduced_shape(), specials, len, len),
    };
    let examples = pipeline::training_examples(mode, cb, train_set);
    let out = train(&cfg, &reduced_trainer(seed), &examples, None, progress(tag))?;
    let summary = match mode {
        OutputMode::IndexWise => evaluate(&IndexWiseSolver::greedy(&out.params, &cfg), test_set, Scoring::AllPositions, 1)?,
        OutputMode::ElementWise => evaluate(
            &ElementWiseSolver {
                params: &out.params,
                config: &cfg,
                specials,
            },
            test_set,
            Scoring::AllPositions,
            1,
        )?,
    };
    Ok(summary.absolute)
}

// 1. desk-scale learning through the full pipeline
fn desk_scale_learning(ctx: &Ctx) -> Verdict {
    let t0 = Instant::now();
    ensure_desk_run(ctx)?;
    pipeline::stage_analyze(&ctx.desk_cfg, &ctx.desk, "train")?;
    let ckpt = pipeline::stage_train(&ctx.desk_cfg, &ctx.desk, progress("desk"))?;
    let report = pipeline::stage_eval(&ctx.desk_cfg, &ctx.desk, &[])?.remove(0);
    let baseline = 1.0 / 9.0;
    let pass = report.absolute >= 0.60 && report.absolute >= 5.0 * baseline && report.perfect > 0.0;
    Ok((
        pass,
        format!(
            "{} params, {} steps: test absolute {:.4} (need >= 0.60 and >= {:.4}), perfect {:.4} (need > 0), {:.1} min",
            ckpt.params.num_scalars(),
            ctx.desk_cfg.trainer.steps,
            report.absolute,
            5.0 * baseline,
            report.perfect,
            t0.elapsed().as_secs_f64() / 60.0
        ),
    ))
}

// 2. lexicographic ordering ablation, three seeds
fn lex_order_ablation(ctx: &Ctx) -> Verdict {
    ensure_desk_run(ctx)?;
    let cb = Codebook::load(ctx.desk.codebook())?;
    let mut unsorted = cb.clone();
    unsorted.config.lex_order = false;
    let (train_p, test_p) = (load_split(&ctx.desk, "train")?, load_split(&ctx.desk, "test")?);
    let mut full = Vec::new();
    let mut ablated = Vec::new();
    for seed in 0..3 {
        full.push(train_and_score(
            OutputMode::IndexWise,
            &cb,
            &encode_all(&cb, &train_p)?,
            &encode_all(&cb, &test_p)?,
            seed,
            &format!("lex seed {seed}"),
        )?);
        ablated.push(train_and_score(
            OutputMode::IndexWise,
            &unsorted,
            &encode_all(&unsorted, &train_p)?,
            &encode_all(&unsorted, &test_p)?,
            seed,
            &format!("no-lex seed {seed}"),
        )?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let wins = full.iter().zip(&ablated).filter(|(f, a)| a < f).count();
    Ok((
        mean(&ablated) < mean(&full) && wins == 3,
        format!(
            "mean absolute full {:.4} vs w/o lex order {:.4}; per seed {:?} vs {:?} ({wins}/3 seeds ordered)",
            mean(&full),
            mean(&ablated),
            full.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            ablated.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
        ),
    ))
}

// 3. element-wise vs index-wise at T=1, and refusal at T=4
fn granularity_degeneracy(ctx: &Ctx) -> Verdict {
    ensure_desk_run(ctx)?;
    let (train_p, test_p) = (load_split(&ctx.desk, "train")?, load_split(&ctx.desk, "test")?);
    let cfg = TokenizerConfig {
        granularity: 1,
        ..ctx.desk_cfg.tokenizer.clone()
    };
    let pieces: Vec<_> = train_p.iter().flat_map(|p| p.pieces.iter().cloned()).collect();
    let cb = fit_codebook(&pieces, &cfg, ctx.desk_cfg.tokenizer_seed)?;
    let (tr, te) = (encode_all(&cb, &train_p)?, encode_all(&cb, &test_p)?);
    let index_wise = train_and_score(OutputMode::IndexWise, &cb, &tr, &te, 0, "T=1 index-wise")?;
    let element_wise = train_and_score(OutputMode::ElementWise, &cb, &tr, &te, 0, "T=1 element-wise")?;

    let out = Command::new(env!("CARGO_BIN_EXE_jigsaw-seq"))
        .args(["--out"])
        .arg(ctx.desk.root.join("refusal"))
        .args(["--set", "mode=element_wise", "--set", "tokenizer.granularity=4", "eval"])
        .output()?;
    let refused = out.status.code() == Some(2) && String::from_utf8_lossy(&out.stderr).contains("--force");
    let gap = (element_wise - index_wise).abs();
    Ok((
        gap <= 0.15 && refused,
        format!(
            "T=1 absolute: element-wise {element_wise:.4}, index-wise {index_wise:.4}, gap {gap:.4} (<= 0.15); \
             element-wise T=4 refused with exit code {:?}",
            out.status.code()
        ),
    ))
}

// 4. every decode is a permutation
fn permutation_guarantee() -> Verdict {
    let mut rng = SeededRng::new(4);
    let mut decodes = 0usize;
    let mut valid = 0usize;
    let specials = jigsaw_seq::tokenizer::SpecialIds::after(12);
    for model in 0..50u64 {
        let g = [1, 2, 3, 4][model as usize % 4];
        let n = g * g;
        let tau = 1 + model as usize % 4;
        let len = n * tau + n - 1;
        let shape = ModelShape {
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 16,
            dropout_rate: 0.0,
        };
        let element = model % 5 == 4;
        let cfg = if element {
            ModelConfig::element_wise(&shape, specials, len, len)
        } else {
            ModelConfig::index_wise(&shape, specials, n, len)
        };
        let params = ModelParams::init(&cfg, model)?;
        for _ in 0..200 {
            let mut labels: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut labels);
            let mut ids = Vec::with_capacity(len);
            for i in 0..n {
                if i > 0 {
                    ids.push(specials.sep);
                }
                ids.extend((0..tau).map(|_| rng.below(12) as u32));
            }
            let enc = EncodedPuzzle {
                encoder_ids: ids,
                labels: PermutationLabel::new(labels)?,
                piece_order: (0..n).collect(),
                missing: vec![false; n],
                tau,
                separated: true,
            };
            let res = if element {
                ElementWiseSolver {
                    params: &params,
                    config: &cfg,
                    specials,
                }
                .solve(&enc)?
            } else {
                IndexWiseSolver::greedy(&params, &cfg).solve(&enc)?
            };
            decodes += 1;
            valid += usize::from(res.predicted.len() == n && is_permutation(res.predicted.as_slice()));
        }
    }
    Ok((valid == decodes && decodes >= 10_000, format!("{valid}/{decodes} decodes are valid permutations")))
}

// 5. metric oracles
fn metric_oracles() -> Verdict {
    let mut rng = SeededRng::new(5);
    let mut mismatches = 0usize;
    let mut sum9 = 0.0;
    let mut n9 = 0usize;
    for i in 0..100_000 {
        let n = if i % 2 == 0 { 9 } else { 1 + rng.index(16) };
        let mut y: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut y);
        let yhat = match i % 10 {
            0 => y.clone(),
            1 => {
                let mut v = y.clone();
                if n > 1 {
                    v.swap(0, n - 1);
                }
                v
            }
            _ => {
                let mut v: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut v);
                v
            }
        };
        let matches = y.iter().zip(&yhat).filter(|(a, b)| a == b).count();
        let naive_abs = matches as f64 / n as f64;
        let naive_perf = if matches == n { 1.0 } else { 0.0 };
        let (yl, yh) = (PermutationLabel::new(y)?, PermutationLabel::new(yhat)?);
        let abs = absolute_accuracy(&yl, &yh)?;
        let perf = perfect_accuracy(&yl, &yh)?;
        mismatches += usize::from(abs != naive_abs || perf != naive_perf);
        if n == 9 && i % 10 >= 2 {
            sum9 += abs;
            n9 += 1;
        }
    }
    let mean = sum9 / n9 as f64;
    Ok((
        mismatches == 0 && (mean - 1.0 / 9.0).abs() <= 0.01,
        format!("{mismatches} mismatches over 100000 pairs; mean absolute over {n9} random N=9 pairs {mean:.4} (1/9 = 0.1111)"),
    ))
}

// 6. numerics oracles
fn numerics_oracles() -> Verdict {
    let mut worst_eig = 0.0f64;
    let mut worst_proj = 0.0f64;
    let mut worst_orth = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = SeededRng::new(600 + seed);
        let (n, d) = (20 + rng.index(60), 2 + rng.index(10));
        let x = common::random_matrix(&mut rng, n, d);
        let k = 1 + rng.index(d);
        let m = pca_fit(&x, k)?;
        let (vals, vecs) = common::jacobi_eigen(&common::covariance(&x));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        for (i, &o) in order.iter().take(k).enumerate() {
            worst_eig = worst_eig.max((m.explained_variance[i] - vals[o]).abs() / vals[o].max(1.0));
        }
        // projectors onto the leading subspace, free of sign conventions
        for r in 0..d {
            for c in 0..d {
                let ours: f64 = (0..k).map(|i| m.components.get(i, r) * m.components.get(i, c)).sum();
                let oracle: f64 = order.iter().take(k).map(|&o| vecs[r][o] * vecs[c][o]).sum();
                worst_proj = worst_proj.max((ours - oracle).abs());
            }
        }
        let gram = m.components.matmul_t(&m.components)?;
        worst_orth = worst_orth.max(gram.frobenius_distance(&Matrix::identity(k)));
    }

    let mut local_ok = 0;
    let mut monotone_ok = true;
    for case in 0..100u64 {
        let mut rng = SeededRng::new(6000 + case);
        let n = 4 + rng.index(9);
        let k = 1 + rng.index(3);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| rng.uniform(-3.0, 3.0)).collect()).collect();
        let x = Matrix::from_rows(&rows)?;
        let m = kmeans_fit(&x, k, case, 100, 1e-9)?;
        monotone_ok &= m.inertia_history.windows(2).all(|w| w[1] <= w[0]);
        let assign = kmeans_assign(&m, &x)?;
        let base = common::partition_inertia(&x, &assign, k);
        let mut optimal = (base - m.inertia).abs() <= 1e-9 * base.max(1.0);
        for r in 0..n {
            for c in (0..k).filter(|&c| c != assign[r]) {
                let mut moved = assign.clone();
                moved[r] = c;
                optimal &= common::partition_inertia(&x, &moved, k) >= base * (1.0 - 1e-9) - 1e-12;
            }
        }
        local_ok += usize::from(optimal);
    }
    for seed in 0..10u64 {
        let mut rng = SeededRng::new(seed);
        let x = Matrix::from_vec(500, 4, (0..2000).map(|_| rng.normal()).collect())?;
        let m = kmeans_fit(&x, 12, seed, 100, 1e-9)?;
        monotone_ok &= m.inertia_history.windows(2).all(|w| w[1] <= w[0]);
    }
    Ok((
        worst_eig <= 1e-6 && worst_proj <= 1e-6 && worst_orth <= 1e-8 && local_ok == 100 && monotone_ok,
        format!(
            "PCA eigenvalue error {worst_eig:.2e}, projector error {worst_proj:.2e}, orthonormality {worst_orth:.2e}; \
             k-means locally optimal in {local_ok}/100 cases; inertia monotone: {monotone_ok}"
        ),
    ))
}

// 7. finite-difference gradient check and initial loss
fn gradient_check() -> Verdict {
    let specials = jigsaw_seq::tokenizer::SpecialIds::after(16);
    let shape = ModelShape {
        d_model: 12,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 24,
        dropout_rate: 0.0,
    };
    let cfg = ModelConfig::index_wise(&shape, specials, 4, 11);
    let mut params = ModelParams::init(&cfg, 7)?;
    let mut rng = SeededRng::new(77);
    let batch: Vec<Example> = (0..3)
        .map(|_| {
            let mut labels: Vec<u32> = (0..4).collect();
            rng.shuffle(&mut labels);
            Example {
                src: (0..11).map(|i| if i % 3 == 2 { specials.sep } else { rng.below(16) as u32 }).collect(),
                labels,
            }
        })
        .collect();
    let (_, grads) = loss_and_grads(&params, &cfg, &batch, None)?;
    let total = params.num_scalars();
    let eps = 1e-5;
    // central differences carry ~1e-11 of roundoff at this loss scale, so
    // gradients below FLOOR are compared in absolute terms
    const FLOOR: f64 = 1e-6;
    let mut worst = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut floored = 0usize;
    let coords = 250;
    for _ in 0..coords {
        let t = rng.index(params.len());
        let i = rng.index(params.tensor(t).len());
        let orig = params.tensor(t).data[i];
        params.tensor_mut(t).data[i] = orig + eps;
        let up = loss_only(&params, &cfg, &batch)?;
        params.tensor_mut(t).data[i] = orig - eps;
        let down = loss_only(&params, &cfg, &batch)?;
        params.tensor_mut(t).data[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.tensor(t).data[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
        worst_abs = worst_abs.max((analytic - numeric).abs());
        floored += usize::from(analytic.abs().max(numeric.abs()) < FLOOR);
    }

    // initial loss of the default-size model
    let big_specials = jigsaw_seq::tokenizer::SpecialIds::after(256);
    let big = ModelConfig::index_wise(&ModelShape::default(), big_specials, 9, 44);
    let big_params = ModelParams::init(&big, 0)?;
    let big_batch: Vec<Example> = (0..16)
        .map(|_| {
            let mut labels: Vec<u32> = (0..9).collect();
            rng.shuffle(&mut labels);
            Example {
                src: (0..44).map(|i| if i % 5 == 4 { big_specials.sep } else { rng.below(256) as u32 }).collect(),
                labels,
            }
        })
        .collect();
    let initial = loss_only(&big_params, &big, &big_batch)?;
    let expect = (big.vocab_out as f64).ln();
    let rel_loss = (initial - expect).abs() / expect;
    Ok((
        total <= 5000 && worst <= 1e-4 && rel_loss <= 0.02,
        format!(
            "{total}-param model, max relative error {worst:.2e} over {coords} coordinates \
             ({floored} below {FLOOR:e}, max absolute error {worst_abs:.1e}); \
             initial loss {initial:.4} vs ln {} = {expect:.4} ({:.2}% off, {} params)",
            big.vocab_out,
            rel_loss * 100.0,
            big_params.num_scalars()
        ),
    ))
}

// 8. tokenizer conventions and codebook roundtrip
fn tokenizer_bit_exactness(ctx: &Ctx) -> Verdict {
    let cb = common::identity_codebook(true, true);
    let pz = shuffle(cut_image(&common::cell_image(), 3)?, 5);
    let enc = encode_puzzle(&cb, &pz)?;
    let text = to_debug_text(&enc.encoder_ids, &cb.specials());
    let golden_ok = text == common::golden("t4_clockwise_3x3.txt");
    let len_ok = enc.tau == 12 && enc.encoder_ids.len() == 9 * 12 + 8;

    ensure_desk_run(ctx)?;
    let bytes = std::fs::read(ctx.desk.codebook())?;
    let loaded = Codebook::from_bytes(&bytes)?;
    let roundtrip = loaded.to_bytes() == bytes;
    let saved = ctx.desk.root.join("codebook-copy.pzcb");
    loaded.save(&saved)?;
    let resaved = std::fs::read(&saved)? == bytes;
    Ok((
        golden_ok && len_ok && roundtrip && resaved,
        format!(
            "golden clockwise T=4 sequence match: {golden_ok}; tau {} and length {} (9*12+8 = 116); \
             codebook bytes identical after load/save: {}",
            enc.tau,
            enc.encoder_ids.len(),
            roundtrip && resaved
        ),
    ))
}

// 9. analysis suite
fn analysis_suite(ctx: &Ctx) -> Verdict {
    ensure_desk_run(ctx)?;
    let ds = jigsaw_seq::tokenizer::TokenDataset::load(ctx.desk.tokens("train"))?;
    let k = ds.header.vocab_size;
    let puzzles: Vec<Vec<u32>> = ds.records.iter().map(|r| r.encoded.encoder_ids.clone()).collect();
    let mut bounds_ok = true;
    for row in per_puzzle_entropy(&puzzles, k) {
        bounds_ok &= row.mean_h >= 0.0 && row.mean_h <= (row.n.min(k) as f64).ln() + 1e-12;
    }
    for ids in puzzles.iter().take(500) {
        let ft = FrequencyTable::from_ids(ids, k);
        let h = shannon_entropy(&ft)?;
        bounds_ok &= h >= 0.0 && h <= ((ft.total as usize).min(k) as f64).ln() + 1e-12;
    }
    let mut rng = SeededRng::new(9);
    for _ in 0..200 {
        let kk = 1 + rng.index(50);
        let ids: Vec<u32> = (0..1 + rng.index(300)).map(|_| rng.below(kk as u64) as u32).collect();
        let ft = FrequencyTable::from_ids(&ids, kk);
        let h = shannon_entropy(&ft)?;
        bounds_ok &= h >= 0.0 && h <= ((ft.total as usize).min(kk) as f64).ln() + 1e-12;
    }
    let report = analyze(&puzzles, k, 100, ctx.desk_cfg.analysis_seed)?;
    bounds_ok &= report.corpus_entropy_nats <= ((report.total_tokens as usize).min(k) as f64).ln() + 1e-12;

    let uniform = uniform_baseline(&[50_000], 256, 3, 1)?[0].1;
    let uniform_gap = (uniform - 256f64.ln()).abs();

    // Zipf: i.i.d. draws with P(rank r) proportional to 1/r
    let v = 400usize;
    let weights: Vec<f64> = (1..=v).map(|r| 1.0 / r as f64).collect();
    let total_w: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(v);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total_w;
        cdf.push(acc);
    }
    let stream: Vec<u32> = (0..2_000_000)
        .map(|_| {
            let u = rng.unit();
            cdf.partition_point(|&c| c < u).min(v - 1) as u32
        })
        .collect();
    let zipf = zipf_slope(&zipf_curve(&FrequencyTable::from_ids(&stream, v))).context("zipf slope")?;

    // Heaps: the n-th token is new exactly when floor(n^beta) grows
    let mut heaps_err = 0.0f64;
    let mut betas = Vec::new();
    for beta in [0.5, 0.7] {
        let len = 1_000_000usize;
        let mut next = 0u32;
        let mut stream = Vec::with_capacity(len);
        for n in 1..=len {
            let want = (n as f64).powf(beta).floor() as u32;
            if want > next {
                stream.push(next);
                next += 1;
            } else {
                stream.push(rng.below(u64::from(next.max(1))) as u32);
            }
        }
        let fitted = heaps_curve(&stream, &geometric_points(len, 4))?.beta;
        heaps_err = heaps_err.max((fitted - beta).abs());
        betas.push(fitted);
    }

    let csv = report.entropy_csv();
    let header = csv.lines().next().unwrap_or_default().to_string();
    let gap_csv = header.contains("gap") && csv.lines().count() > 1;
    let on_disk = ctx.desk.analysis_dir("train").join("entropy.csv");
    pipeline::stage_analyze(&ctx.desk_cfg, &ctx.desk, "train")?;
    let disk_ok = std::fs::read_to_string(&on_disk)? == csv;

    Ok((
        bounds_ok && uniform_gap <= 0.05 && (zipf + 1.0).abs() <= 0.05 && heaps_err <= 0.05 && gap_csv && disk_ok,
        format!(
            "entropy bounds hold: {bounds_ok}; uniform n=50000 k=256 H={uniform:.4} vs ln 256 = {:.4}; \
             zipf slope {zipf:.4}; heaps beta {:.4}/{:.4} for 0.5/0.7; entropy CSV header `{header}` written: {disk_ok}",
            256f64.ln(),
            betas[0],
            betas[1]
        ),
    ))
}

// 10. missing pieces: bit-exact masking and evaluation at several levels
fn missing_pieces(ctx: &Ctx) -> Verdict {
    ensure_desk_run(ctx)?;
    let cb = Codebook::load(ctx.desk.codebook())?;
    let specials = cb.specials();
    let mut exact = true;
    let mut checked = 0;
    for seed in 0..100u64 {
        let full = make_puzzle(&synth_image(seed, 96), 3, seed, 0)?;
        let plain = encode_puzzle(&cb, &full)?;
        let by_piece: Vec<&[u32]> = {
            let mut v = vec![&[][..]; 9];
            for (slot, &i) in plain.piece_order.iter().enumerate() {
                v[i] = plain.span(slot);
            }
            v
        };
        for m in 0..3 {
            let pz = mark_missing(full.clone(), m, seed + 1000)?;
            let enc = encode_puzzle(&cb, &pz)?;
            let masked = enc.encoder_ids.iter().filter(|&&id| id == specials.mask).count();
            exact &= masked == m * enc.tau;
            exact &= enc.encoder_ids.len() == plain.encoder_ids.len();
            for (slot, &i) in enc.piece_order.iter().enumerate() {
                let span = enc.span(slot);
                exact &= if pz.pieces[i].present {
                    span == by_piece[i]
                } else {
                    span.iter().all(|&id| id == specials.mask)
                };
            }
            for (pos, &id) in enc.encoder_ids.iter().enumerate() {
                let sep_slot = pos % (enc.tau + 1) == enc.tau;
                exact &= sep_slot == (id == specials.sep);
            }
            checked += 1;
        }
    }

    let dir = ctx.desk.root.join("missing");
    let paths = RunPaths::new(&dir);
    let cfg = RunConfig::from_toml(
        &ctx.desk_cfg.to_toml(),
        &[
            "corpus.train_count=600".into(),
            "corpus.test_count=100".into(),
            "corpus.missing_min=0".into(),
            "corpus.missing_max=2".into(),
            "model.d_model=32".into(),
            "model.d_ff=128".into(),
            "trainer.steps=300".into(),
            "trainer.optimizer.total_steps=300".into(),
            "trainer.optimizer.warmup_steps=50".into(),
            "trainer.log_every=100".into(),
        ],
    )?;
    let counts: Vec<usize> = {
        let (train_m, _) = pipeline::stage_make_dataset(&cfg, &paths)?;
        train_m.entries.iter().map(|e| e.missing_count).collect()
    };
    ensure!(counts.iter().all(|&m| m <= 2), "training missing counts outside 0..=2");
    pipeline::stage_fit_tokenizer(&cfg, &paths)?;
    pipeline::stage_tokenize(&cfg, &paths)?;
    pipeline::stage_train(&cfg, &paths, progress("missing"))?;
    let reports = pipeline::stage_eval(&cfg, &paths, &[0, 1, 2])?;
    let mut lines = Vec::new();
    let mut eval_ok = reports.len() == 3;
    for r in &reports {
        let s = &r.summary;
        let vals = [s.all_positions.absolute, s.all_positions.perfect, s.present_only.absolute, s.present_only.perfect];
        eval_ok &= vals.iter().all(|v| (0.0..=1.0).contains(v));
        eval_ok &= paths.eval_report(&format!("-missing{}", r.missing_level.unwrap_or(99))).is_file();
        lines.push(format!(
            "m={}: all {:.3}/{:.3} present-only {:.3}/{:.3}",
            r.missing_level.unwrap_or(0),
            vals[0],
            vals[1],
            vals[2],
            vals[3]
        ));
    }
    let mixed = (0..3).all(|m| counts.contains(&m));
    Ok((
        exact && eval_ok && mixed,
        format!(
            "masking bit-exact on {checked} puzzle/level pairs: {exact}; trained on 0-2 missing ({}); {}",
            if mixed { "all levels present" } else { "levels absent" },
            lines.join("; ")
        ),
    ))
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let dir = tempfile::tempdir().expect("temp dir");
    let desk = RunPaths::new(dir.path().join("desk"));
    let mut desk_cfg = RunConfig::default();
    desk_cfg.output_dir = desk.root.display().to_string();
    let ctx = Ctx {
        _dir: dir,
        desk,
        desk_cfg,
    };

    type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;
    let criteria: Vec<(u32, &str, Check)> = vec![
        (1, "desk-scale learning", Box::new(|| desk_scale_learning(&ctx))),
        (2, "ablation directionality (lex order)", Box::new(|| lex_order_ablation(&ctx))),
        (3, "granularity degeneracy", Box::new(|| granularity_degeneracy(&ctx))),
        (4, "permutation guarantee", Box::new(permutation_guarantee)),
        (5, "metric oracles", Box::new(metric_oracles)),
        (6, "numerics oracles", Box::new(numerics_oracles)),
        (7, "gradient check", Box::new(gradient_check)),
        (8, "tokenizer bit-exactness", Box::new(|| tokenizer_bit_exactness(&ctx))),
        (9, "analysis suite", Box::new(|| analysis_suite(&ctx))),
        (10, "missing pieces", Box::new(|| missing_pieces(&ctx))),
    ];
    let mut failed = 0;
    for (id, name, check) in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(id)) {
            continue;
        }
        let t0 = Instant::now();
        let (pass, detail) = match check() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {} {name} ({:.1}s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
