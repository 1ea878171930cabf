// Every stage of an experiment, driven by one configuration, in a scratch
// run directory. The binary exposes the same stages as subcommands.

use jigsaw_seq::pipeline::{self, RunConfig, RunPaths};

const CONFIG: &str = r#"
output_dir = "unused"

[corpus]
train_count = 40
test_count = 10
grid_side = 3
piece_px = 8
missing_max = 1

[tokenizer]
granularity = 2
reduced_dim = 8
vocab_size = 32

[model]
d_model = 16
n_heads = 2
n_enc_layers = 1
n_dec_layers = 1
d_ff = 32
dropout_rate = 0.0

[trainer]
steps = 40
batch_size = 8
micro_batch = 8
log_every = 20

[trainer.optimizer]
lr = 0.003
warmup_steps = 5
total_steps = 40
"#;

pub fn run_example() -> anyhow::Result<()> {
    let cfg = RunConfig::from_toml(CONFIG, &[])?;
    let dir = tempfile::tempdir()?;
    let paths = RunPaths::new(dir.path());
    let reports = pipeline::run_all(&cfg, &paths, |r| println!("step {} loss {:.4}", r.step, r.loss))?;
    let r = &reports[0];
    println!("absolute {:.3} perfect {:.3} on {} test puzzles", r.absolute, r.perfect, r.n);

    let by_level = pipeline::stage_eval(&cfg, &paths, &[0, 1])?;
    for r in &by_level {
        println!(
            "missing {:?}: all positions {:.3}, present only {:.3}",
            r.missing_level, r.summary.all_positions.absolute, r.summary.present_only.absolute
        );
    }
    let solved = pipeline::stage_solve(&cfg, &paths, &pipeline::PuzzleInput::TestIndex(0), 0, 0)?;
    println!("layout of test puzzle 0: {:?}", solved.layout);
    let mut files: Vec<String> = std::fs::read_dir(dir.path())?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    files.sort();
    println!("artifacts: {files:?}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
