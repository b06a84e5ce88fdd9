use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use supergen::config::PipelineConfig;
use supergen::pipeline::{
    stage_ablate, stage_eval, stage_generate, stage_pipeline, stage_pretrain, stage_select,
    stage_train, Paths,
};
use supergen::Error;

/// Zero-shot supervision generation pipeline on synthetic tasks.
#[derive(Parser)]
#[command(name = "supergen", version, about)]
struct Cli {
    /// Pipeline configuration file (TOML). Omit to use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set sampling.temperature=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Run directory for artifacts.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,

    /// Run seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Overwrite existing artifacts.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads (0 = all cores). Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the language model on the task corpus.
    PretrainLm,
    /// Generate the class-conditional sample pool.
    Generate,
    /// Score the pool and select the training set.
    Select,
    /// Fine-tune the classifier on the selected set.
    Train,
    /// Evaluate the trained classifier on the gold set.
    Eval,
    /// Run every stage end to end and write the manifest.
    Pipeline,
    /// Run the ablation grid over the evaluation seeds.
    Ablate,
}

fn run(cli: &Cli) -> Result<(), Error> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(|e| Error::config("--workers", e.to_string()))?;
    }
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path, &cli.overrides)?,
        None => PipelineConfig::from_toml("", &cli.overrides)?,
    };
    let paths = Paths::new(&cli.out);
    match cli.command {
        Command::PretrainLm => {
            stage_pretrain(&cfg, cli.seed, &paths, cli.force)?;
            println!("wrote {}", paths.lm().display());
        }
        Command::Generate => {
            stage_generate(&cfg, cli.seed, &paths, cli.force)?;
            println!("wrote {}", paths.pool().display());
        }
        Command::Select => {
            stage_select(&cfg, cli.seed, &paths, cli.force)?;
            println!("wrote {}", paths.train_set().display());
        }
        Command::Train => {
            stage_train(&cfg, cli.seed, &paths, cli.force)?;
            println!("wrote {} and {}", paths.classifier().display(), paths.trace().display());
        }
        Command::Eval => {
            let value = stage_eval(&cfg, cli.seed, &paths, cli.force)?;
            println!("{} = {value:.4}", cfg.evaluation.metric.name());
        }
        Command::Pipeline => {
            let value = stage_pipeline(&cfg, cli.seed, &paths, cli.force)?;
            println!("{} = {value:.4}", cfg.evaluation.metric.name());
        }
        Command::Ablate => {
            let rows = stage_ablate(&cfg, &paths, cli.force)?;
            for (variant, result) in &rows {
                println!(
                    "{:<24} mean {:.4} std {:.4}",
                    variant.name(),
                    result.mean,
                    result.std
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
