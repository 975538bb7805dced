//! `geneview` — multi-view ensemble classification of genetic mutations
//! from text evidence.
//!
//! Exit codes: 0 on success, 2 for input/config errors, 3 for internal
//! faults.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geneview::pipeline::{
    cmd_blend, cmd_evaluate, cmd_featurize, cmd_predict, cmd_prepare, cmd_run_all, cmd_train,
    BlendStrategy, OutputLock, PipelineConfig, StageStatus,
};
use geneview::synth::{generate, SynthOptions};

#[derive(Parser)]
#[command(
    name = "geneview",
    version,
    about = "Multi-view ensemble classification of genetic mutations from text evidence",
    after_help = config_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Pipeline config file (section.key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker thread count (1 = deterministic reference mode).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Override the recipe list (comma-separated presets or file paths).
    #[arg(long)]
    recipe: Option<String>,
    /// Override the blending strategy.
    #[arg(long, value_parser = ["grid", "logloss_min", "logloss_min_cl"])]
    strategy: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and join the input files, cache the corpus, dump entity texts.
    Prepare(CommonArgs),
    /// Fit featurizers per fold and write feature matrices.
    Featurize(CommonArgs),
    /// Train one boosted model per fold per recipe.
    Train(CommonArgs),
    /// Write validation predictions in the submission format.
    Predict(CommonArgs),
    /// Fit ensemble weights and write blended predictions.
    Blend(CommonArgs),
    /// Score recipes and the blend; write report.json / report.txt.
    Evaluate(CommonArgs),
    /// The whole pipeline: prepare through evaluate.
    RunAll(CommonArgs),
    /// Generate the synthetic demo corpus files.
    Synth {
        /// Directory for the generated files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Permute the class column (signal-free control corpus).
        #[arg(long, default_value_t = false)]
        shuffle_labels: bool,
    },
}

fn config_help() -> String {
    let mut s = String::from("Config keys:\n");
    for (key, doc) in PipelineConfig::documented_keys() {
        s.push_str(&format!("  {key:<26} {doc}\n"));
    }
    s.push_str("\nEnvironment overrides: GV_<SECTION>_<KEY>, e.g. GV_RUN_SEED=7.\n");
    s
}

fn load_config(args: &CommonArgs) -> geneview::Result<PipelineConfig> {
    let mut config = PipelineConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    if let Some(output) = &args.output {
        config.output = output.clone();
    }
    if let Some(recipes) = &args.recipe {
        config.recipes = recipes
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
    }
    if let Some(strategy) = &args.strategy {
        config.strategy = BlendStrategy::parse(strategy)?;
    }
    Ok(config)
}

fn print_status(status: &StageStatus) {
    if status.cache_hit {
        println!("{}: cache hit", status.stage);
    } else {
        println!("{}: done", status.stage);
    }
}

fn run(cli: Cli) -> geneview::Result<()> {
    match cli.command {
        Command::Prepare(args) => {
            let config = load_config(&args)?;
            let _lock = OutputLock::acquire(&config.output)?;
            let (corpus, status) = cmd_prepare(&config)?;
            print_status(&status);
            println!(
                "corpus: {} samples, {} documents",
                corpus.len(),
                corpus.documents.len()
            );
        }
        Command::Featurize(args) => {
            let config = load_config(&args)?;
            let _lock = OutputLock::acquire(&config.output)?;
            let (corpus, status) = cmd_prepare(&config)?;
            print_status(&status);
            for name in config.recipes.clone() {
                print_status(&cmd_featurize(&config, &corpus, &name)?);
            }
        }
        Command::Train(args) => {
            let config = load_config(&args)?;
            let _lock = OutputLock::acquire(&config.output)?;
            let (corpus, status) = cmd_prepare(&config)?;
            print_status(&status);
            for name in config.recipes.clone() {
                print_status(&cmd_train(&config, &corpus, &name)?);
            }
        }
        Command::Predict(args) => {
            let config = load_config(&args)?;
            let _lock = OutputLock::acquire(&config.output)?;
            let (corpus, status) = cmd_prepare(&config)?;
            print_status(&status);
            for name in config.recipes.clone() {
                print_status(&cmd_predict(&config, &corpus, &name)?);
            }
        }
        Command::Blend(args) => {
            let config = load_config(&args)?;
            let _lock = OutputLock::acquire(&config.output)?;
            let (corpus, status) = cmd_prepare(&config)?;
            print_status(&status);
            print_status(&cmd_blend(&config, &corpus)?);
        }
        Command::Evaluate(args) => {
            let config = load_config(&args)?;
            let _lock = OutputLock::acquire(&config.output)?;
            let (corpus, status) = cmd_prepare(&config)?;
            print_status(&status);
            let (report, status) = cmd_evaluate(&config, &corpus)?;
            print_status(&status);
            print!("{}", report.render_table());
        }
        Command::RunAll(args) => {
            let config = load_config(&args)?;
            let (report, statuses) = cmd_run_all(&config)?;
            for status in &statuses {
                print_status(status);
            }
            print!("{}", report.render_table());
        }
        Command::Synth {
            out,
            samples,
            seed,
            shuffle_labels,
        } => {
            std::fs::create_dir_all(&out).map_err(|e| geneview::Error::io(&out, e))?;
            let files = generate(&SynthOptions {
                samples,
                seed,
                shuffle_labels,
                ..SynthOptions::default()
            });
            let write = |name: &str, content: &str| -> geneview::Result<()> {
                let path = out.join(name);
                std::fs::write(&path, content).map_err(|e| geneview::Error::io(&path, e))
            };
            write("variants.csv", &files.variants)?;
            write("text.txt", &files.texts)?;
            write("bioentities.tsv", &files.bioentities)?;
            write("keywords.txt", &files.keywords)?;
            write("split_ids.txt", &files.split_ids)?;
            println!("wrote synthetic corpus ({samples} samples) to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
