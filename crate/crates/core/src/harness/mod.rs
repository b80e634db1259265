//! Experiment orchestration: strict config loading, method dispatch, run
//! records, and comparison output.

pub mod compare;
pub mod config;
pub mod preview;
pub mod record;

pub use compare::{comparison_csv, evaluations_to_target, parse_comparison_csv, target_table};
pub use config::{ExperimentConfig, Method, PipelineKind};
pub use record::{default_out_dir, RunRecord, RunSummary};

use crate::baselines::{fixed_beta_run, BrsConfig, BrsRunner, FixedBetaConfig};
use crate::decision::DecisionVector;
use crate::error::Result;
use crate::optimizer::{HybridOptimizer, StepRecord};
use crate::pipeline::{generate_dataset, CsgPipeline, Pipeline};
use crate::rng::SeedString;
use crate::sample::Sample;
use crate::toy::ToyPipeline;

pub fn build_pipeline(config: &ExperimentConfig) -> Box<dyn Pipeline> {
    match config.pipeline {
        PipelineKind::Csg => Box::new(CsgPipeline::new(
            config.image.width,
            config.image.height,
            config.image.task,
        )),
        PipelineKind::Toy => Box::new(ToyPipeline::new(config.image.width, config.image.height)),
    }
}

/// The held-out target set: generated once at the configured decision
/// vector with its own seed stream, independent of the run's master seed.
pub fn build_validation(config: &ExperimentConfig, pipeline: &dyn Pipeline) -> Result<Vec<Sample>> {
    let beta = config.validation_beta()?;
    let seeds: Vec<SeedString> = (0..config.validation.size)
        .map(|i| SeedString::new(crate::rng::mix64(config.validation.seed), i as u64))
        .collect();
    Ok(generate_dataset(pipeline, &beta, &seeds))
}

/// Execute the configured method and return its record. `seed_override`
/// replaces the file's master seed (the CLI --seed flag).
pub fn run_experiment(config: &ExperimentConfig, seed_override: Option<u64>) -> Result<RunRecord> {
    let master_seed = seed_override.unwrap_or(config.master_seed);
    let pipeline = build_pipeline(config);
    let validation = build_validation(config, pipeline.as_ref())?;
    let model = config.model_config();
    let beta0 = config.beta0()?;
    let pipeline_name = match config.pipeline {
        PipelineKind::Csg => "csg",
        PipelineKind::Toy => "toy",
    };

    let (trajectory, final_beta) = match config.method {
        Method::Hybrid => {
            let opt = HybridOptimizer {
                pipeline: pipeline.as_ref(),
                validation: &validation,
                model,
                config: config.hybrid_config()?,
                master_seed,
            };
            let state = opt.run(&beta0)?;
            (state.trajectory, state.beta.values().to_vec())
        }
        Method::Brs => {
            let b = config.brs.as_ref().expect("validated");
            let runner = BrsRunner {
                pipeline: pipeline.as_ref(),
                validation: &validation,
                model,
                config: BrsConfig {
                    probes: b.probes,
                    sigma: b.sigma,
                    gamma: b.gamma,
                    rms_decay: b.rms_decay,
                    rms_epsilon: b.rms_epsilon,
                    outer_steps: b.outer_steps,
                    samples_per_eval: b.samples_per_eval,
                    train: config.train_config(),
                    weight_carryover: b.weight_carryover,
                },
                master_seed,
            };
            let state = runner.run(&beta0)?;
            (state.trajectory, state.beta.values().to_vec())
        }
        Method::FixedBeta => {
            let f = config.fixed_beta.as_ref().expect("validated");
            let fb = FixedBetaConfig {
                draws: f.draws,
                dataset_size: f.dataset_size,
                train_steps: f.train_steps,
                snapshot_every: f.snapshot_every,
                train: config.train_config(),
            };
            let outcome = fixed_beta_run(pipeline.as_ref(), &model, &fb, &validation, master_seed)?;
            // draw-major cumulative cost frame: each draw pays its dataset
            // up front, then its SGD steps
            let trajectory: Vec<StepRecord> = outcome
                .snapshots
                .iter()
                .enumerate()
                .map(|(i, s)| StepRecord {
                    t: i,
                    loss: s.loss,
                    beta: vec![s.draw as f64],
                    generator_calls: ((s.draw + 1) * f.dataset_size) as u64,
                    sgd_steps: (s.draw * f.train_steps + s.step) as u64,
                    wall_ms: 0,
                })
                .collect();
            (trajectory, outcome.best_beta.values().to_vec())
        }
    };

    Ok(RunRecord::new(
        config.method.name(),
        pipeline_name,
        master_seed,
        final_beta,
        trajectory,
        config.to_toml(),
    ))
}

/// Load a decision vector from a JSON file {"layout": name, "values": [..]}.
pub fn load_beta_file(path: &std::path::Path) -> Result<DecisionVector> {
    #[derive(serde::Deserialize)]
    struct BetaFile {
        layout: String,
        values: Vec<f64>,
    }
    let parsed: BetaFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let layout = crate::decision::BetaLayout::by_name(&parsed.layout).ok_or_else(|| {
        crate::error::Error::Config(format!("unknown layout {:?}", parsed.layout))
    })?;
    Ok(DecisionVector::new(layout, parsed.values)?.clip_to_valid())
}
