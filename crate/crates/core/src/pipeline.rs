//! End-to-end experiment stages over a run directory.
//!
//! Every stage reads the artifacts of the previous ones by path, checks
//! that their recorded digests still match the configuration and inputs,
//! and writes a deterministic artifact of its own.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, AnalysisReport};
use crate::container::sha256_hex;
use crate::error::{Error, Result};
use crate::model::{
    train, Checkpoint, CheckpointMeta, Example, ModelConfig, ModelShape, OutputMode, TrainLogRecord,
    TrainerConfig,
};
use crate::puzzle::manifest::{ImageSource, Manifest, ManifestEntry};
use crate::puzzle::{assemble, Image, Piece, PuzzleInstance};
use crate::rng::{derive_seed, SeededRng};
use crate::solver::{
    absolute_accuracy, element_wise_target, evaluate, perfect_accuracy, ElementWiseSolver, EvalSummary,
    IndexWiseSolver, PermutationSolver, Scoring, SolveResult,
};
use crate::tokenizer::{
    encode_puzzle, fit_codebook, Codebook, EncodedPuzzle, PieceSource, TokenDataset, TokenDatasetHeader,
    TokenRecord, TokenizerConfig, TOKENS_FORMAT,
};

/// Environment variable naming the root that relative output directories
/// resolve against.
pub const OUTPUT_ROOT_ENV: &str = "JIGSAW_SEQ_OUT";
pub const EVAL_FORMAT: &str = "jigsaw-seq/eval/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Synthetic,
    Images,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub kind: CorpusKind,
    /// Directory of PNG/PPM files for `kind = "images"`, read in name order.
    pub image_dir: Option<String>,
    pub train_count: usize,
    pub test_count: usize,
    pub grid_side: usize,
    pub piece_px: usize,
    /// Each puzzle gets a missing count drawn uniformly from this range.
    pub missing_min: usize,
    pub missing_max: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            kind: CorpusKind::Synthetic,
            image_dir: None,
            train_count: 2000,
            test_count: 200,
            grid_side: 3,
            piece_px: 32,
            missing_min: 0,
            missing_max: 0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub beam_width: usize,
    pub scoring: Scoring,
    pub workers: usize,
    /// Run element-wise decoding even where it is impractical.
    pub force: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            beam_width: 1,
            scoring: Scoring::AllPositions,
            workers: 1,
            force: false,
        }
    }
}

/// One document describing a whole experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: String,
    pub mode: OutputMode,
    pub tokenizer_seed: u64,
    pub analysis_seed: u64,
    pub corpus: CorpusConfig,
    pub tokenizer: TokenizerConfig,
    pub model: ModelShape,
    pub trainer: TrainerConfig,
    pub solver: SolverConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut trainer = TrainerConfig::default();
        trainer.steps = 3000;
        trainer.optimizer.lr = 7e-4;
        trainer.optimizer.total_steps = 3000;
        RunConfig {
            output_dir: "runs/default".into(),
            mode: OutputMode::IndexWise,
            tokenizer_seed: 7,
            analysis_seed: 11,
            corpus: CorpusConfig::default(),
            tokenizer: TokenizerConfig {
                granularity: 2,
                reduced_dim: 32,
                vocab_size: 256,
                ..TokenizerConfig::default()
            },
            model: ModelShape::default(),
            trainer,
            solver: SolverConfig::default(),
        }
    }
}

fn json_digest<T: Serialize>(v: &T) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("config serializes"))
}

/// Parses a TOML scalar/array literal, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl RunConfig {
    /// Parses a TOML document, then applies `section.key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse()?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("override {ov:?} is not key=value")))?;
            let parts: Vec<&str> = key.trim().split('.').collect();
            let mut table = &mut doc;
            for p in &parts[..parts.len() - 1] {
                let entry = table
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                table = entry
                    .as_table_mut()
                    .ok_or_else(|| Error::InvalidArgument(format!("override path {key:?} crosses a value")))?;
            }
            table.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
        }
        let cfg: RunConfig = toml::Value::Table(doc).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        let c = &self.corpus;
        if c.grid_side == 0 || c.piece_px == 0 {
            return Err(Error::InvalidArgument("grid_side and piece_px must be positive".into()));
        }
        if c.piece_px % self.tokenizer.granularity != 0 {
            return Err(Error::NotDivisible {
                side: c.piece_px,
                divisor: self.tokenizer.granularity,
                remainder: c.piece_px % self.tokenizer.granularity,
            });
        }
        let n = c.grid_side * c.grid_side;
        if c.missing_min > c.missing_max || c.missing_max >= n {
            return Err(Error::TooManyMissing {
                requested: c.missing_max,
                pieces: n,
            });
        }
        if c.kind == CorpusKind::Images && c.image_dir.is_none() {
            return Err(Error::InvalidArgument("corpus.kind = \"images\" needs corpus.image_dir".into()));
        }
        self.trainer.optimizer.validate()?;
        self.model_config(self.tokenizer.specials()).validate()
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn corpus_digest(&self) -> String {
        json_digest(&self.corpus)
    }

    pub fn n_pieces(&self) -> usize {
        self.corpus.grid_side * self.corpus.grid_side
    }

    pub fn model_config(&self, specials: crate::tokenizer::SpecialIds) -> ModelConfig {
        let n = self.n_pieces();
        let src = self.tokenizer.encoder_len(n);
        match self.mode {
            OutputMode::IndexWise => ModelConfig::index_wise(&self.model, specials, n, src),
            OutputMode::ElementWise => ModelConfig::element_wise(&self.model, specials, src, src),
        }
    }

    /// Refuses element-wise decoding above granularity 2 unless forced.
    pub fn check_mode(&self) -> Result<()> {
        let t = self.tokenizer.granularity;
        if self.mode == OutputMode::ElementWise && t > 2 && !self.solver.force {
            let n = self.n_pieces();
            return Err(Error::Refused(format!(
                "element-wise decoding at granularity T={t} must regenerate {} tokens per puzzle \
                 (N*tau + N - 1 with tau = {}), one autoregressive step each; the sequence grows too \
                 long to be practical, which is why index-wise decoding is used for T > 2. Pass \
                 --force to run it anyway",
                self.tokenizer.encoder_len(n),
                self.tokenizer.tokens_per_piece()
            )));
        }
        Ok(())
    }
}

/// File layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    /// Resolves a relative `dir` against `$JIGSAW_SEQ_OUT` when it is set.
    pub fn resolve(dir: &str) -> Self {
        let p = PathBuf::from(dir);
        let root = match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(base) if p.is_relative() => PathBuf::from(base).join(p),
            _ => p,
        };
        RunPaths { root }
    }

    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    pub fn manifest(&self, split: &str) -> PathBuf {
        self.root.join(format!("{split}.manifest.json"))
    }
    pub fn codebook(&self) -> PathBuf {
        self.root.join("codebook.pzcb")
    }
    pub fn tokens(&self, split: &str) -> PathBuf {
        self.root.join(format!("{split}.tokens"))
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.jsonl")
    }
    pub fn eval_report(&self, tag: &str) -> PathBuf {
        self.root.join(format!("eval{tag}.json"))
    }
    pub fn eval_csv(&self, tag: &str) -> PathBuf {
        self.root.join(format!("eval{tag}_puzzles.csv"))
    }
    pub fn analysis_dir(&self, split: &str) -> PathBuf {
        self.root.join("analysis").join(split)
    }
    pub fn config_echo(&self) -> PathBuf {
        self.root.join("run_config.toml")
    }

    fn ensure(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn stale(path: &Path, detail: impl Into<String>) -> Error {
    Error::DigestMismatch {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|s| s.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "ppm" | "pnm")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Builds the train and test manifests described by `corpus`.
pub fn build_manifests(corpus: &CorpusConfig, digest: &str) -> Result<(Manifest, Manifest)> {
    let g = corpus.grid_side;
    let images = match (&corpus.kind, &corpus.image_dir) {
        (CorpusKind::Images, Some(dir)) => {
            let files = list_images(Path::new(dir))?;
            if files.len() < corpus.train_count + corpus.test_count {
                return Err(Error::InsufficientData(format!(
                    "{} images in {dir}, need {}",
                    files.len(),
                    corpus.train_count + corpus.test_count
                )));
            }
            Some(files)
        }
        _ => None,
    };
    let split = |name: &str, tag: u64, offset: usize, count: usize| {
        let mut rng = SeededRng::derived(corpus.seed, tag);
        let entries = (0..count)
            .map(|i| {
                let image_seed = derive_seed(corpus.seed, (tag << 32) | i as u64);
                let source = match &images {
                    Some(files) => ImageSource::Path(files[offset + i].to_string_lossy().into_owned()),
                    None => ImageSource::Seed(image_seed),
                };
                let span = (corpus.missing_max - corpus.missing_min) as u64 + 1;
                ManifestEntry {
                    id: format!("{name}-{i:06}"),
                    source,
                    grid_side: g,
                    missing_count: corpus.missing_min + rng.below(span) as usize,
                    shuffle_seed: derive_seed(image_seed, 1),
                }
            })
            .collect();
        Manifest::new(name, digest, corpus.piece_px, entries)
    };
    let train = split("train", 1, 0, corpus.train_count);
    let test = split("test", 2, corpus.train_count, corpus.test_count);
    Ok((train, test))
}

/// Replays the pieces of every puzzle in a manifest.
pub struct ManifestPieces<'a> {
    pub manifest: &'a Manifest,
    pub base_dir: &'a Path,
}

impl PieceSource for ManifestPieces<'_> {
    fn visit(&self, f: &mut dyn FnMut(&Piece) -> Result<()>) -> Result<()> {
        for item in self.manifest.puzzles(self.base_dir) {
            let (_, pz) = item?;
            for p in &pz.pieces {
                f(p)?;
            }
        }
        Ok(())
    }
}

pub fn stage_make_dataset(cfg: &RunConfig, paths: &RunPaths) -> Result<(Manifest, Manifest)> {
    cfg.validate()?;
    paths.ensure()?;
    let (train, test) = build_manifests(&cfg.corpus, &cfg.corpus_digest())?;
    train.write(paths.manifest("train"))?;
    test.write(paths.manifest("test"))?;
    write_file(&paths.config_echo(), cfg.to_toml())?;
    Ok((train, test))
}

fn load_manifest(cfg: &RunConfig, paths: &RunPaths, split: &str) -> Result<(Manifest, String)> {
    let path = paths.manifest(split);
    let bytes = read_file(&path)?;
    let m = Manifest::read(&path)?;
    if m.config_digest != cfg.corpus_digest() {
        return Err(stale(&path, "manifest was built from a different corpus configuration"));
    }
    Ok((m, sha256_hex(&bytes)))
}

fn codebook_lineage(cfg: &RunConfig, manifest_digest: &str) -> String {
    format!(
        "manifest={manifest_digest} tokenizer={}",
        json_digest(&(&cfg.tokenizer, cfg.tokenizer_seed))
    )
}

pub fn stage_fit_tokenizer(cfg: &RunConfig, paths: &RunPaths) -> Result<Codebook> {
    cfg.validate()?;
    let (train, digest) = load_manifest(cfg, paths, "train")?;
    let source = ManifestPieces {
        manifest: &train,
        base_dir: Path::new("."),
    };
    let mut cb = fit_codebook(&source, &cfg.tokenizer, cfg.tokenizer_seed)?;
    cb.lineage = codebook_lineage(cfg, &digest);
    cb.save(paths.codebook())?;
    Ok(cb)
}

fn load_codebook(cfg: &RunConfig, paths: &RunPaths) -> Result<(Codebook, String)> {
    let path = paths.codebook();
    let bytes = read_file(&path)?;
    let cb = Codebook::from_bytes(&bytes)?;
    let (_, train_digest) = load_manifest(cfg, paths, "train")?;
    if cb.lineage != codebook_lineage(cfg, &train_digest) {
        return Err(stale(&path, "codebook does not match the tokenizer settings or training manifest"));
    }
    Ok((cb, sha256_hex(&bytes)))
}

/// Encodes every puzzle of a manifest, optionally overriding its missing count.
pub fn encode_manifest(cb: &Codebook, manifest: &Manifest, missing: Option<usize>) -> Result<Vec<TokenRecord>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let mut e = e.clone();
            if let Some(m) = missing {
                e.missing_count = m;
            }
            let pz = manifest.puzzle(&e, Path::new("."))?;
            Ok(TokenRecord {
                id: e.id.clone(),
                encoded: encode_puzzle(cb, &pz)?,
            })
        })
        .collect()
}

fn token_dataset(
    cb: &Codebook,
    cb_digest: &str,
    manifest: &Manifest,
    manifest_digest: &str,
    records: Vec<TokenRecord>,
) -> TokenDataset {
    let g = manifest.entries.first().map_or(0, |e| e.grid_side);
    TokenDataset {
        header: TokenDatasetHeader {
            format: TOKENS_FORMAT.into(),
            split: manifest.split.clone(),
            codebook_digest: cb_digest.into(),
            manifest_digest: manifest_digest.into(),
            grid_side: g,
            n_pieces: g * g,
            tau: cb.config.tokens_per_piece(),
            separated: cb.config.use_separator,
            vocab_size: cb.config.vocab_size,
            specials: cb.specials(),
            count: records.len(),
        },
        records,
    }
}

pub fn stage_tokenize(cfg: &RunConfig, paths: &RunPaths) -> Result<(TokenDataset, TokenDataset)> {
    cfg.validate()?;
    let (cb, cb_digest) = load_codebook(cfg, paths)?;
    let mut out = Vec::new();
    for split in ["train", "test"] {
        let (m, md) = load_manifest(cfg, paths, split)?;
        let ds = token_dataset(&cb, &cb_digest, &m, &md, encode_manifest(&cb, &m, None)?);
        ds.save(paths.tokens(split))?;
        out.push(ds);
    }
    let test = out.pop().expect("two splits");
    let train = out.pop().expect("two splits");
    Ok((train, test))
}

fn load_tokens(cfg: &RunConfig, paths: &RunPaths, split: &str) -> Result<(TokenDataset, String)> {
    let (_, cb_digest) = load_codebook(cfg, paths)?;
    let (_, md) = load_manifest(cfg, paths, split)?;
    let path = paths.tokens(split);
    let bytes = read_file(&path)?;
    let ds = TokenDataset::from_bytes(&bytes)?;
    if ds.header.codebook_digest != cb_digest || ds.header.manifest_digest != md {
        return Err(stale(&path, "token file predates the current codebook or manifest"));
    }
    Ok((ds, sha256_hex(&bytes)))
}

/// Training pairs for the configured output mode.
pub fn training_examples(mode: OutputMode, cb: &Codebook, data: &[EncodedPuzzle]) -> Vec<Example> {
    data.iter()
        .map(|e| Example {
            src: e.encoder_ids.clone(),
            labels: match mode {
                OutputMode::IndexWise => e.labels.as_slice().iter().map(|&p| p as u32).collect(),
                OutputMode::ElementWise => element_wise_target(e, cb.specials()),
            },
        })
        .collect()
}

fn model_digest(cfg: &RunConfig) -> String {
    json_digest(&(&cfg.mode, &cfg.model, &cfg.trainer))
}

fn checkpoint_lineage(cfg: &RunConfig, cb_digest: &str, tokens_digest: &str) -> String {
    format!(
        "codebook={cb_digest} train_tokens={tokens_digest} model={}",
        model_digest(cfg)
    )
}

fn lineage_field<'a>(lineage: &'a str, key: &str) -> Option<&'a str> {
    lineage
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
}

pub fn stage_train(cfg: &RunConfig, paths: &RunPaths, progress: impl FnMut(&TrainLogRecord)) -> Result<Checkpoint> {
    cfg.validate()?;
    cfg.check_mode()?;
    let (cb, cb_digest) = load_codebook(cfg, paths)?;
    let (ds, tokens_digest) = load_tokens(cfg, paths, "train")?;
    let encoded: Vec<EncodedPuzzle> = ds.records.into_iter().map(|r| r.encoded).collect();
    let examples = training_examples(cfg.mode, &cb, &encoded);
    let mcfg = cfg.model_config(cb.specials());
    let log_path = paths.train_log();
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut tc = cfg.trainer.clone();
    tc.workers = tc.workers.max(1);
    let out = train(&mcfg, &tc, &examples, Some(&mut log), progress)?;
    let ckpt = Checkpoint {
        config: mcfg,
        meta: CheckpointMeta {
            step: tc.steps,
            init_seed: tc.init_seed,
            train_seed: tc.train_seed,
            lineage: checkpoint_lineage(cfg, &cb_digest, &tokens_digest),
        },
        params: out.params,
    };
    ckpt.save(paths.checkpoint())?;
    Ok(ckpt)
}

fn load_checkpoint(cfg: &RunConfig, paths: &RunPaths, cb: &Codebook, cb_digest: &str) -> Result<Checkpoint> {
    let path = paths.checkpoint();
    let ckpt = Checkpoint::load(&path)?;
    if lineage_field(&ckpt.meta.lineage, "codebook") != Some(cb_digest) {
        return Err(stale(&path, "checkpoint was trained on a different codebook"));
    }
    if lineage_field(&ckpt.meta.lineage, "model") != Some(model_digest(cfg).as_str())
        || ckpt.config != cfg.model_config(cb.specials())
    {
        return Err(stale(&path, "checkpoint was trained with different model or trainer settings"));
    }
    Ok(ckpt)
}

/// Solver matching the checkpoint's output mode.
pub fn make_solver<'a>(
    ckpt: &'a Checkpoint,
    cb: &Codebook,
    solver: &SolverConfig,
) -> Box<dyn PermutationSolver + Sync + 'a> {
    match ckpt.config.mode {
        OutputMode::IndexWise => Box::new(IndexWiseSolver {
            params: &ckpt.params,
            config: &ckpt.config,
            beam_width: solver.beam_width.max(1),
        }),
        OutputMode::ElementWise => Box::new(ElementWiseSolver {
            params: &ckpt.params,
            config: &ckpt.config,
            specials: cb.specials(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub config_digest: String,
    pub dataset_digest: String,
    pub checkpoint_digest: String,
    pub mode: OutputMode,
    pub beam_width: usize,
    /// `None` when the puzzles keep their manifest missing counts.
    pub missing_level: Option<usize>,
    pub n: usize,
    pub absolute: f64,
    pub perfect: f64,
    pub summary: EvalSummary,
    pub per_puzzle_csv: String,
}

/// Evaluates on the test split, once per requested missing level (or once
/// on the tokenized test file when `missing_levels` is empty).
pub fn stage_eval(cfg: &RunConfig, paths: &RunPaths, missing_levels: &[usize]) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    cfg.check_mode()?;
    let (cb, cb_digest) = load_codebook(cfg, paths)?;
    let ckpt = load_checkpoint(cfg, paths, &cb, &cb_digest)?;
    let ckpt_digest = ckpt.digest();
    let solver = make_solver(&ckpt, &cb, &cfg.solver);
    let mut sets: Vec<(Option<usize>, Vec<EncodedPuzzle>, String)> = Vec::new();
    if missing_levels.is_empty() {
        let (ds, digest) = load_tokens(cfg, paths, "test")?;
        sets.push((None, ds.records.into_iter().map(|r| r.encoded).collect(), digest));
    } else {
        let (m, md) = load_manifest(cfg, paths, "test")?;
        for &level in missing_levels {
            if level >= cfg.n_pieces() {
                return Err(Error::TooManyMissing {
                    requested: level,
                    pieces: cfg.n_pieces(),
                });
            }
            let recs = encode_manifest(&cb, &m, Some(level))?;
            let digest = json_digest(&(md.as_str(), cb_digest.as_str(), level));
            sets.push((Some(level), recs.into_iter().map(|r| r.encoded).collect(), digest));
        }
    }
    let mut reports = Vec::new();
    for (level, data, digest) in sets {
        let summary = evaluate(solver.as_ref(), &data, cfg.solver.scoring, cfg.solver.workers)?;
        let tag = level.map_or(String::new(), |m| format!("-missing{m}"));
        let csv_path = paths.eval_csv(&tag);
        write_file(&csv_path, summary.records_csv())?;
        let report = EvalReport {
            format: EVAL_FORMAT.into(),
            config_digest: cfg.digest(),
            dataset_digest: digest,
            checkpoint_digest: ckpt_digest.clone(),
            mode: ckpt.config.mode,
            beam_width: cfg.solver.beam_width.max(1),
            missing_level: level,
            n: summary.n_puzzles,
            absolute: summary.absolute,
            perfect: summary.perfect,
            per_puzzle_csv: csv_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            summary,
        };
        write_file(&paths.eval_report(&tag), serde_json::to_string_pretty(&report)? + "\n")?;
        reports.push(report);
    }
    Ok(reports)
}

/// Outcome of solving one puzzle.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub encoded: EncodedPuzzle,
    pub result: SolveResult,
    pub absolute: f64,
    pub perfect: f64,
    /// Pieces placed where the solver put them.
    pub image: Image,
    /// Shuffled-order index of the piece placed at each grid position.
    pub layout: Vec<usize>,
}

/// Encodes, solves and reassembles one puzzle.
pub fn solve_puzzle(cb: &Codebook, pz: &PuzzleInstance, solver: &dyn PermutationSolver) -> Result<SolveReport> {
    let encoded = encode_puzzle(cb, pz)?;
    let result = solver.solve(&encoded)?;
    let ordered: Vec<Piece> = encoded.piece_order.iter().map(|&i| pz.pieces[i].clone()).collect();
    let image = assemble(&ordered, result.predicted.as_slice(), pz.grid_side)?;
    let mut layout = vec![0; pz.len()];
    for (slot, &pos) in result.predicted.as_slice().iter().enumerate() {
        layout[pos] = encoded.piece_order[slot];
    }
    Ok(SolveReport {
        absolute: absolute_accuracy(&encoded.labels, &result.predicted)?,
        perfect: perfect_accuracy(&encoded.labels, &result.predicted)?,
        encoded,
        result,
        image,
        layout,
    })
}

/// What to solve with `stage_solve`.
#[derive(Debug, Clone)]
pub enum PuzzleInput {
    /// Entry `i` of the test manifest.
    TestIndex(usize),
    /// A fresh synthetic image.
    Seed(u64),
    /// An image file, cropped and resized to the configured geometry.
    ImageFile(PathBuf),
}

pub fn load_puzzle(cfg: &RunConfig, paths: &RunPaths, input: &PuzzleInput, shuffle_seed: u64, missing: usize) -> Result<PuzzleInstance> {
    let c = &cfg.corpus;
    let img = match input {
        PuzzleInput::TestIndex(i) => {
            let (m, _) = load_manifest(cfg, paths, "test")?;
            let e = m
                .entries
                .get(*i)
                .ok_or_else(|| Error::InvalidArgument(format!("test split has {} puzzles", m.entries.len())))?;
            return m.puzzle(e, Path::new("."));
        }
        PuzzleInput::Seed(s) => crate::puzzle::synth_image(*s, c.grid_side * c.piece_px),
        PuzzleInput::ImageFile(p) => {
            crate::puzzle::manifest::prepare_image(&crate::puzzle::load_image(p)?, c.grid_side, c.piece_px)?
        }
    };
    crate::puzzle::make_puzzle(&img, c.grid_side, shuffle_seed, missing)
}

pub fn stage_solve(
    cfg: &RunConfig,
    paths: &RunPaths,
    input: &PuzzleInput,
    shuffle_seed: u64,
    missing: usize,
) -> Result<SolveReport> {
    cfg.validate()?;
    cfg.check_mode()?;
    let (cb, cb_digest) = load_codebook(cfg, paths)?;
    let ckpt = load_checkpoint(cfg, paths, &cb, &cb_digest)?;
    let pz = load_puzzle(cfg, paths, input, shuffle_seed, missing)?;
    let solver = make_solver(&ckpt, &cb, &cfg.solver);
    solve_puzzle(&cb, &pz, solver.as_ref())
}

pub fn stage_analyze(cfg: &RunConfig, paths: &RunPaths, split: &str) -> Result<AnalysisReport> {
    cfg.validate()?;
    let (ds, digest) = load_tokens(cfg, paths, split)?;
    let puzzles: Vec<Vec<u32>> = ds.records.iter().map(|r| r.encoded.encoder_ids.clone()).collect();
    let report = analyze(&puzzles, ds.header.vocab_size, 100, cfg.analysis_seed)?;
    report.write(
        &paths.analysis_dir(split),
        serde_json::json!({
            "config_digest": cfg.digest(),
            "tokens_digest": digest,
            "codebook_digest": ds.header.codebook_digest,
            "split": split,
            "baseline_trials": 100,
            "baseline_seed": cfg.analysis_seed,
        }),
    )?;
    Ok(report)
}

/// All stages in order.
pub fn run_all(cfg: &RunConfig, paths: &RunPaths, progress: impl FnMut(&TrainLogRecord)) -> Result<Vec<EvalReport>> {
    cfg.check_mode()?;
    stage_make_dataset(cfg, paths)?;
    stage_fit_tokenizer(cfg, paths)?;
    stage_tokenize(cfg, paths)?;
    stage_analyze(cfg, paths, "train")?;
    stage_train(cfg, paths, progress)?;
    stage_eval(cfg, paths, &[])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_to_nested_keys() {
        let cfg = RunConfig::from_toml(
            "[corpus]\ntrain_count = 5\n",
            &["tokenizer.granularity=1".into(), "model.d_model=64".into(), "mode=element_wise".into()],
        )
        .unwrap();
        assert_eq!(cfg.corpus.train_count, 5);
        assert_eq!(cfg.tokenizer.granularity, 1);
        assert_eq!(cfg.model.d_model, 64);
        assert_eq!(cfg.mode, OutputMode::ElementWise);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("bogus = 1\n", &[]).is_err());
        assert!(RunConfig::from_toml("[corpus]\nbogus = 1\n", &[]).is_err());
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn element_wise_refused_above_two() {
        let mut cfg = RunConfig::default();
        cfg.mode = OutputMode::ElementWise;
        cfg.tokenizer.granularity = 4;
        assert!(matches!(cfg.check_mode(), Err(Error::Refused(_))));
        cfg.solver.force = true;
        cfg.check_mode().unwrap();
        cfg.solver.force = false;
        cfg.tokenizer.granularity = 1;
        cfg.check_mode().unwrap();
    }

    #[test]
    fn manifests_are_deterministic_and_disjoint() {
        let corpus = CorpusConfig {
            train_count: 20,
            test_count: 5,
            missing_min: 1,
            missing_max: 1,
            ..Default::default()
        };
        let (a, t) = build_manifests(&corpus, "x").unwrap();
        let (b, _) = build_manifests(&corpus, "x").unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.entries.len(), 20);
        assert!(a.entries.iter().all(|e| e.missing_count == 1));
        let train_src: Vec<_> = a.entries.iter().map(|e| e.source.clone()).collect();
        assert!(t.entries.iter().all(|e| !train_src.contains(&e.source)));
    }

    #[test]
    fn lineage_fields_parse() {
        let l = "codebook=ab train_tokens=cd model=ef";
        assert_eq!(lineage_field(l, "codebook"), Some("ab"));
        assert_eq!(lineage_field(l, "model"), Some("ef"));
        assert_eq!(lineage_field(l, "nope"), None);
    }
}
