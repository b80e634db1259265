//! Command-line front end: run experiments, compare runs, render previews.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hybrid_gradient::harness::{self, ExperimentConfig, RunRecord};
use hybrid_gradient::pipeline::Pipeline;
use hybrid_gradient::rng::SeedString;

#[derive(Parser)]
#[command(name = "hybrid-gradient", version, about = "Optimize procedural training-data generators against a validation set")]
struct Cli {
    /// Cap the worker thread pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $HYBRID_GRADIENT_OUT or ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge run records into a comparison CSV.
    Compare {
        /// Run directories (each holding trajectory.jsonl + summary.json).
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also print which run reached this loss target first.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Render sample previews at a fixed decision vector.
    RenderPreview {
        /// JSON file: {"layout": "csg29" | "toy6", "values": [..]}.
        #[arg(long)]
        beta: PathBuf,
        /// Number of samples.
        #[arg(long, short)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        size: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> hybrid_gradient::Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let experiment = ExperimentConfig::from_path(&config)?;
            let record = harness::run_experiment(&experiment, seed)?;
            let out_dir = out.unwrap_or_else(harness::default_out_dir);
            record.write(&out_dir)?;
            println!(
                "{}: {} steps, best L = {:.6}, final L = {:.6}, {} generator calls, {} sgd steps -> {}",
                record.summary.method,
                record.trajectory.len(),
                record.summary.best_loss,
                record.summary.final_loss,
                record.summary.generator_calls,
                record.summary.sgd_steps,
                out_dir.display()
            );
            Ok(())
        }
        Command::Compare { runs, out, target } => {
            let records: hybrid_gradient::Result<Vec<RunRecord>> =
                runs.iter().map(|dir| RunRecord::load(dir)).collect();
            let records = records?;
            std::fs::write(&out, harness::comparison_csv(&records))?;
            println!("wrote {} ({} runs)", out.display(), records.len());
            if let Some(target) = target {
                print!("{}", harness::target_table(&records, target));
            }
            Ok(())
        }
        Command::RenderPreview {
            beta,
            n,
            out,
            seed,
            size,
        } => {
            let beta = harness::load_beta_file(&beta)?;
            let pipeline: Box<dyn Pipeline> = match beta.layout().name {
                "toy6" => Box::new(hybrid_gradient::toy::ToyPipeline::new(size, size)),
                _ => Box::new(hybrid_gradient::pipeline::CsgPipeline::new(
                    size,
                    size,
                    hybrid_gradient::sample::Task::Normals,
                )),
            };
            std::fs::create_dir_all(&out)?;
            for i in 0..n {
                let sample = pipeline.generate(&beta, SeedString::new(seed, i as u64));
                harness::preview::write_preview(&out, i, &sample)?;
            }
            println!("wrote {n} previews to {}", out.display());
            Ok(())
        }
    }
}
