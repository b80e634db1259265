//! Black-box comparison methods sharing the trainer and generator: basic
//! random search over the decision vector, and snapshot selection over
//! random fixed decision vectors.

use rand::Rng;
use rayon::prelude::*;

use crate::decision::DecisionVector;
use crate::error::Result;
use crate::model::{ModelConfig, ModelParams};
use crate::optimizer::{RmsProp, StepRecord};
use crate::pipeline::{generate_dataset, Pipeline};
use crate::rng::{mix64, SeedString};
use crate::sample::Sample;
use crate::train::{self, TrainConfig};

#[derive(Clone, Debug)]
pub struct BrsConfig {
    /// Probe directions per step (m); each costs two full evaluations.
    pub probes: usize,
    pub sigma: f64,
    pub gamma: f64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub outer_steps: usize,
    /// Samples generated and consumed per evaluation (n).
    pub samples_per_eval: usize,
    pub train: TrainConfig,
    /// When set, the carried snapshot advances after each step by one
    /// extra evaluation at the unperturbed beta (whose loss is recorded);
    /// when unset, weights stay frozen at the carried snapshot and the
    /// recorded loss is the mean over probe evaluations.
    pub weight_carryover: bool,
}

/// Exact cost bookkeeping shared by the baselines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub generator_calls: u64,
    pub sgd_steps: u64,
}

/// One full black-box evaluation: generate n samples, train n numeric SGD
/// steps from `w0`, score on the validation set. Returns the loss and the
/// trained weights. Costs exactly n generator calls and n SGD steps.
pub fn evaluate_beta(
    pipeline: &dyn Pipeline,
    model: &ModelConfig,
    train: &TrainConfig,
    beta: &DecisionVector,
    seeds: &[SeedString],
    w0: &ModelParams,
    validation: &[Sample],
    counters: &mut Counters,
) -> Result<(f64, ModelParams)> {
    let beta = beta.clip_to_valid();
    let samples = generate_dataset(pipeline, &beta, seeds);
    counters.generator_calls += seeds.len() as u64;
    let mut params = w0.clone();
    for s in &samples {
        train::train_step_numeric(model, &mut params, s, train.learning_rate)?;
    }
    counters.sgd_steps += seeds.len() as u64;
    let loss = train::validation_loss_numeric(model, &params, validation, model.task)?;
    Ok((loss, params))
}

/// Generic random-search step over any objective: probe the objective at
/// beta +- delta along Gaussian directions, form the normalized-difference
/// gradient estimate (the same form the Jacobian estimator uses, applied
/// to the scalar map), and take an RMSprop step.
pub fn brs_gradient_step<F>(
    objective: F,
    beta: &DecisionVector,
    rms: &mut RmsProp,
    probes: usize,
    sigma: f64,
    gamma: f64,
    probe_seed: SeedString,
) -> Result<(DecisionVector, Vec<f64>)>
where
    F: Fn(&DecisionVector) -> Result<f64> + Sync,
{
    let directions = crate::fd::sample_directions(beta.len(), probes, sigma, probe_seed);
    let pairs: Vec<Result<(f64, f64)>> = directions
        .par_iter()
        .map(|delta| {
            let neg: Vec<f64> = delta.iter().map(|d| -d).collect();
            let plus = objective(&beta.shifted(delta).clip_to_valid())?;
            let minus = objective(&beta.shifted(&neg).clip_to_valid())?;
            Ok((plus, minus))
        })
        .collect();

    let mut gradient = vec![0.0; beta.len()];
    for (delta, pair) in directions.iter().zip(pairs) {
        let (plus, minus) = pair?;
        let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        let coeff = (plus - minus) / (2.0 * norm);
        for (g, d) in gradient.iter_mut().zip(delta) {
            *g += coeff * d / norm;
        }
    }
    for g in &mut gradient {
        *g /= probes as f64;
    }

    Ok((rms.step(beta, &gradient, gamma), gradient))
}

pub struct BrsRunner<'a> {
    pub pipeline: &'a dyn Pipeline,
    pub validation: &'a [Sample],
    pub model: ModelConfig,
    pub config: BrsConfig,
    pub master_seed: u64,
}

#[derive(Clone, Debug)]
pub struct BrsState {
    pub t: usize,
    pub beta: DecisionVector,
    pub weights: ModelParams,
    pub rms: RmsProp,
    pub counters: Counters,
    pub trajectory: Vec<StepRecord>,
}

const BRS_DATA_TAG: u64 = 21;
const BRS_PROBE_TAG: u64 = 22;
const BRS_INIT_TAG: u64 = 23;

impl<'a> BrsRunner<'a> {
    pub fn initial_state(&self, beta0: &DecisionVector) -> BrsState {
        BrsState {
            t: 0,
            beta: beta0.clip_to_valid(),
            weights: ModelParams::init(
                &self.model,
                SeedString::new(mix64(self.master_seed ^ mix64(BRS_INIT_TAG)), 0),
            ),
            rms: RmsProp::new(beta0.len(), self.config.rms_decay, self.config.rms_epsilon),
            counters: Counters::default(),
            trajectory: Vec::new(),
        }
    }

    fn data_seeds(&self, t: usize) -> Vec<SeedString> {
        let stream = mix64(self.master_seed ^ mix64(BRS_DATA_TAG));
        (0..self.config.samples_per_eval)
            .map(|i| SeedString::new(stream, (t * self.config.samples_per_eval + i) as u64))
            .collect()
    }

    /// One outer step: 2m probe evaluations (each a private copy of the
    /// carried weights), one RMSprop update, and optionally the snapshot
    /// advance at the unperturbed beta.
    pub fn step(&self, state: &mut BrsState) -> Result<()> {
        let started = std::time::Instant::now();
        let t = state.t;
        let seeds = self.data_seeds(t);
        let beta = state.beta.clone();
        let carried = state.weights.clone();

        // every probe evaluation shares this step's seed set, so both
        // sides of a pair (and all pairs) see the same generator noise
        let losses = std::sync::Mutex::new(Vec::new());
        let calls = std::sync::atomic::AtomicU64::new(0);
        let objective = |b: &DecisionVector| -> Result<f64> {
            let mut local = Counters::default();
            let (loss, _) = evaluate_beta(
                self.pipeline,
                &self.model,
                &self.config.train,
                b,
                &seeds,
                &carried,
                self.validation,
                &mut local,
            )?;
            calls.fetch_add(local.generator_calls, std::sync::atomic::Ordering::SeqCst);
            losses.lock().expect("poisoned").push(loss);
            Ok(loss)
        };

        let probe_seed = SeedString::new(mix64(self.master_seed ^ mix64(BRS_PROBE_TAG)), t as u64);
        let (next_beta, _gradient) = brs_gradient_step(
            objective,
            &beta,
            &mut state.rms,
            self.config.probes,
            self.config.sigma,
            self.config.gamma,
            probe_seed,
        )?;
        let probe_calls = calls.load(std::sync::atomic::Ordering::SeqCst);
        state.counters.generator_calls += probe_calls;
        state.counters.sgd_steps += probe_calls;

        let loss = if self.config.weight_carryover {
            // advance the snapshot by training at the unperturbed beta
            let (loss, trained) = evaluate_beta(
                self.pipeline,
                &self.model,
                &self.config.train,
                &beta,
                &seeds,
                &carried,
                self.validation,
                &mut state.counters,
            )?;
            state.weights = trained;
            loss
        } else {
            let ls = losses.into_inner().expect("poisoned");
            ls.iter().sum::<f64>() / ls.len() as f64
        };

        state.beta = next_beta;
        state.trajectory.push(StepRecord {
            t,
            loss,
            beta: beta.values().to_vec(),
            generator_calls: state.counters.generator_calls,
            sgd_steps: state.counters.sgd_steps,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        state.t += 1;
        Ok(())
    }

    pub fn run(&self, beta0: &DecisionVector) -> Result<BrsState> {
        let mut state = self.initial_state(beta0);
        for _ in 0..self.config.outer_steps {
            self.step(&mut state)?;
        }
        Ok(state)
    }
}

// ── Random fixed beta ───────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct FixedBetaConfig {
    /// Number of independent random decision vectors.
    pub draws: usize,
    /// Dataset size generated per draw (also the number of SGD steps,
    /// cycling through the dataset when train_steps exceeds it).
    pub dataset_size: usize,
    pub train_steps: usize,
    /// Validation is scored every this many SGD steps.
    pub snapshot_every: usize,
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct SnapshotRecord {
    pub draw: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct FixedBetaOutcome {
    pub best: SnapshotRecord,
    pub best_beta: DecisionVector,
    pub snapshots: Vec<SnapshotRecord>,
    pub counters: Counters,
}

/// Train one network per random beta on a fixed generated dataset and
/// return the best validation snapshot across all draws.
pub fn fixed_beta_run(
    pipeline: &dyn Pipeline,
    model: &ModelConfig,
    config: &FixedBetaConfig,
    validation: &[Sample],
    master_seed: u64,
) -> Result<FixedBetaOutcome> {
    assert!(config.draws >= 1);
    let layout = pipeline.layout().clone();

    // per-draw work is independent; order restored on collect
    let runs: Vec<Result<(Vec<SnapshotRecord>, DecisionVector, Counters)>> = (0..config.draws)
        .into_par_iter()
        .map(|draw| {
            let mut counters = Counters::default();
            // uniform draw within each entry's bounds
            let mut rng = SeedString::new(mix64(master_seed ^ mix64(31)), draw as u64).rng();
            let values: Vec<f64> = layout
                .blocks()
                .iter()
                .flat_map(|b| {
                    let (lo, hi) = (b.bound.lo.max(-10.0), b.bound.hi.min(10.0));
                    (0..b.len)
                        .map(|_| rng.gen_range(lo..=hi))
                        .collect::<Vec<f64>>()
                })
                .collect();
            let beta = DecisionVector::new(layout.clone(), values)?.clip_to_valid();

            let data_stream = mix64(master_seed ^ mix64(32) ^ mix64(draw as u64));
            let seeds: Vec<SeedString> = (0..config.dataset_size)
                .map(|i| SeedString::new(data_stream, i as u64))
                .collect();
            let dataset = generate_dataset(pipeline, &beta, &seeds);
            counters.generator_calls += dataset.len() as u64;

            let mut params = ModelParams::init(
                model,
                SeedString::new(mix64(master_seed ^ mix64(33)), draw as u64),
            );
            let mut snapshots = Vec::new();
            for step in 1..=config.train_steps {
                let sample = &dataset[(step - 1) % dataset.len()];
                train::train_step_numeric(model, &mut params, sample, config.train.learning_rate)?;
                counters.sgd_steps += 1;
                if step % config.snapshot_every == 0 || step == config.train_steps {
                    let loss =
                        train::validation_loss_numeric(model, &params, validation, model.task)?;
                    snapshots.push(SnapshotRecord { draw, step, loss });
                }
            }
            Ok((snapshots, beta, counters))
        })
        .collect();

    let mut all = Vec::new();
    let mut betas = Vec::new();
    let mut counters = Counters::default();
    for r in runs {
        let (snaps, beta, c) = r?;
        all.extend(snaps);
        betas.push(beta);
        counters.generator_calls += c.generator_calls;
        counters.sgd_steps += c.sgd_steps;
    }

    let best = all
        .iter()
        .min_by(|a, b| a.loss.partial_cmp(&b.loss).expect("finite losses"))
        .expect("at least one snapshot")
        .clone();
    let best_beta = betas[best.draw].clone();
    Ok(FixedBetaOutcome {
        best,
        best_beta,
        snapshots: all,
        counters,
    })
}
