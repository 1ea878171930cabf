use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use jigsaw_seq::pipeline::{self, PuzzleInput, RunConfig, RunPaths};
use jigsaw_seq::puzzle::write_ppm;

#[derive(Parser)]
#[command(name = "jigsaw-seq", version, about = "Blind jigsaw solving as sequence-to-sequence prediction")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set tokenizer.granularity=1`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run directory; relative paths resolve against $JIGSAW_SEQ_OUT.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Worker threads for training chunks and evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Allow element-wise decoding at granularities where it is impractical.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/test manifests.
    MakeDataset,
    /// Fit PCA + k-means on the training pieces.
    FitTokenizer,
    /// Encode both splits into token files.
    Tokenize,
    /// Train the model and write a checkpoint plus a JSONL log.
    Train,
    /// Score the checkpoint on the test split.
    Eval {
        /// Re-mask the test puzzles with these missing counts, one report each.
        #[arg(long, value_delimiter = ',')]
        missing: Vec<usize>,
    },
    /// Solve one puzzle and dump the reassembled image.
    Solve {
        #[arg(long, conflicts_with_all = ["seed", "image"])]
        index: Option<usize>,
        #[arg(long, conflicts_with = "image")]
        seed: Option<u64>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        shuffle_seed: u64,
        #[arg(long, default_value_t = 0)]
        missing: usize,
        /// Where to write the reassembled PPM (default: <run>/solved.ppm).
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Entropy, Zipf and Heaps curves for a tokenized split.
    Analyze {
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Every stage in order.
    Run,
}

fn load_config(c: &Common) -> anyhow::Result<RunConfig> {
    let mut overrides = c.overrides.clone();
    if let Some(w) = c.workers {
        overrides.push(format!("trainer.workers={w}"));
        overrides.push(format!("solver.workers={w}"));
    }
    if c.force {
        overrides.push("solver.force=true".into());
    }
    let cfg = match &c.config {
        Some(p) => RunConfig::load(p, &overrides)?,
        None => RunConfig::from_toml(&RunConfig::default().to_toml(), &overrides)?,
    };
    Ok(cfg)
}

fn progress(r: &jigsaw_seq::model::TrainLogRecord) {
    eprintln!(
        "step {:>6}  loss {:.4}  lr {:.2e}  grad_norm {:.3}",
        r.step, r.loss, r.lr, r.grad_norm
    );
}

fn print_eval(reports: &[pipeline::EvalReport]) {
    for r in reports {
        let level = r.missing_level.map_or("as manifest".to_string(), |m| m.to_string());
        println!(
            "missing {level}: absolute {:.4} perfect {:.4} (present-only {:.4}/{:.4}) over {} puzzles",
            r.absolute, r.perfect, r.summary.present_only.absolute, r.summary.present_only.perfect, r.n
        );
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli.common)?;
    let paths = RunPaths::resolve(cli.common.out.as_deref().unwrap_or(&cfg.output_dir));
    match cli.command {
        Command::MakeDataset => {
            let (train, test) = pipeline::stage_make_dataset(&cfg, &paths)?;
            println!(
                "{} train / {} test puzzles in {}",
                train.entries.len(),
                test.entries.len(),
                paths.root.display()
            );
        }
        Command::FitTokenizer => {
            let cb = pipeline::stage_fit_tokenizer(&cfg, &paths)?;
            println!(
                "codebook: {} centroids from {} patches, digest {}",
                cb.kmeans.k(),
                cb.fit_patches,
                cb.digest()
            );
        }
        Command::Tokenize => {
            let (train, test) = pipeline::stage_tokenize(&cfg, &paths)?;
            println!("tokenized {} train / {} test puzzles", train.records.len(), test.records.len());
        }
        Command::Train => {
            let ckpt = pipeline::stage_train(&cfg, &paths, progress)?;
            println!("checkpoint {} ({} parameters)", paths.checkpoint().display(), ckpt.params.num_scalars());
        }
        Command::Eval { missing } => print_eval(&pipeline::stage_eval(&cfg, &paths, &missing)?),
        Command::Solve {
            index,
            seed,
            image,
            shuffle_seed,
            missing,
            dump,
        } => {
            let input = match (index, seed, image) {
                (_, _, Some(p)) => PuzzleInput::ImageFile(p),
                (_, Some(s), _) => PuzzleInput::Seed(s),
                (i, _, _) => PuzzleInput::TestIndex(i.unwrap_or(0)),
            };
            let rep = pipeline::stage_solve(&cfg, &paths, &input, shuffle_seed, missing)?;
            let g = cfg.corpus.grid_side;
            println!("piece (shuffled index) placed at each grid cell:");
            for row in rep.layout.chunks(g) {
                println!("  {}", row.iter().map(|i| format!("{i:>3}")).collect::<String>());
            }
            println!("absolute {:.4} perfect {}", rep.absolute, rep.perfect);
            let dump = dump.unwrap_or_else(|| paths.root.join("solved.ppm"));
            write_ppm(&rep.image, &dump).with_context(|| format!("writing {}", dump.display()))?;
            println!("reassembled image: {}", dump.display());
        }
        Command::Analyze { split } => {
            let rep = pipeline::stage_analyze(&cfg, &paths, &split)?;
            println!(
                "{} tokens, {} distinct, entropy {:.4} nats, zipf slope {:?}, heaps beta {:.4}; CSVs in {}",
                rep.total_tokens,
                rep.distinct_tokens,
                rep.corpus_entropy_nats,
                rep.zipf_slope,
                rep.heaps_beta,
                paths.analysis_dir(&split).display()
            );
        }
        Command::Run => print_eval(&pipeline::run_all(&cfg, &paths, progress)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<jigsaw_seq::Error>()
                .map_or(1, jigsaw_seq::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
