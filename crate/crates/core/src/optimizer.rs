//! The outer optimization loop: generate a dataset, train the carried
//! network for a few unrolled steps, backpropagate the validation loss to
//! the training samples, chain that with the finite-difference generator
//! Jacobian, and update the decision vector with RMSprop. The trained
//! weights are retained for the next outer step.

use serde::{Deserialize, Serialize};

use crate::autodiff::{EvalCache, Tape};
use crate::decision::DecisionVector;
use crate::error::{Error, Result};
use crate::fd::{self, JacobianEstimate, ProbeConfig};
use crate::model::{ModelConfig, ModelParams};
use crate::pipeline::{generate_dataset, Pipeline};
use crate::rng::{mix64, SeedString};
use crate::sample::Sample;
use crate::train::{self, TrainConfig};

/// Per-coordinate adaptive update shared by the hybrid optimizer and the
/// random-search baseline, with clipping folded into the step.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub decay: f64,
    pub epsilon: f64,
    accumulator: Vec<f64>,
}

impl RmsProp {
    pub fn new(dim: usize, decay: f64, epsilon: f64) -> Self {
        RmsProp {
            decay,
            epsilon,
            accumulator: vec![0.0; dim],
        }
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accumulator
    }

    /// acc <- rho acc + (1 - rho) g^2; beta <- clip(beta - gamma g / (sqrt(acc) + eps)).
    pub fn step(
        &mut self,
        beta: &DecisionVector,
        gradient: &[f64],
        gamma: f64,
    ) -> DecisionVector {
        assert_eq!(gradient.len(), beta.len());
        let mut delta = vec![0.0; gradient.len()];
        for (i, g) in gradient.iter().enumerate() {
            self.accumulator[i] = self.decay * self.accumulator[i] + (1.0 - self.decay) * g * g;
            delta[i] = -gamma * g / (self.accumulator[i].sqrt() + self.epsilon);
        }
        beta.shifted(&delta).clip_to_valid()
    }
}

/// Where the generator Jacobian comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianSource {
    /// Central differences along Gaussian probes (the normal mode).
    FiniteDifference,
    /// The pipeline's exact Jacobian (toy pipeline only); isolates the
    /// analytic half of the chain for oracle checks.
    Analytic,
}

#[derive(Clone, Debug)]
pub struct HybridConfig {
    /// Samples generated and consumed per outer step (n).
    pub samples_per_step: usize,
    /// Total outer steps (T).
    pub outer_steps: usize,
    /// Outer learning rate gamma.
    pub gamma: f64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub train: TrainConfig,
    pub probes: ProbeConfig,
    pub jacobian: JacobianSource,
}

impl HybridConfig {
    fn validate(&self) -> Result<()> {
        if self.samples_per_step == 0 || self.outer_steps == 0 {
            return Err(Error::Config(
                "samples_per_step and outer_steps must be >= 1".into(),
            ));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config("gamma must be >= 0".into()));
        }
        Ok(())
    }
}

/// One trajectory record per outer step; `beta` and `loss` are the values
/// *used and measured at* step t, before the update.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub loss: f64,
    pub beta: Vec<f64>,
    pub generator_calls: u64,
    pub sgd_steps: u64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub t: usize,
    pub beta: DecisionVector,
    pub weights: ModelParams,
    pub rms: RmsProp,
    pub generator_calls: u64,
    pub sgd_steps: u64,
    pub trajectory: Vec<StepRecord>,
}

pub struct HybridOptimizer<'a> {
    pub pipeline: &'a dyn Pipeline,
    pub validation: &'a [Sample],
    pub model: ModelConfig,
    pub config: HybridConfig,
    /// Master seed; data, probe and init streams are derived from it.
    pub master_seed: u64,
}

const DATA_STREAM_TAG: u64 = 1;
const PROBE_STREAM_TAG: u64 = 2;
const INIT_STREAM_TAG: u64 = 3;

/// Chain rule across the generator boundary: sum over samples of the
/// flattened sample gradient times that sample's Jacobian.
pub fn hybrid_gradient(
    sample_grads: &[Vec<f64>],
    jacobians: &[JacobianEstimate],
) -> Result<Vec<f64>> {
    assert_eq!(sample_grads.len(), jacobians.len());
    let cols = jacobians
        .first()
        .map(|j| j.cols)
        .ok_or(Error::EmptyValidation)?;
    let mut total = vec![0.0; cols];
    for (g, j) in sample_grads.iter().zip(jacobians) {
        let partial = j.vjp(g)?;
        for (t, p) in total.iter_mut().zip(partial) {
            *t += p;
        }
    }
    Ok(total)
}

impl<'a> HybridOptimizer<'a> {
    pub fn initial_state(&self, beta0: &DecisionVector) -> Result<OptimizerState> {
        self.config.validate()?;
        let weights = ModelParams::init(
            &self.model,
            SeedString::new(mix64(self.master_seed ^ mix64(INIT_STREAM_TAG)), 0),
        );
        Ok(OptimizerState {
            t: 0,
            beta: beta0.clip_to_valid(),
            weights,
            rms: RmsProp::new(beta0.len(), self.config.rms_decay, self.config.rms_epsilon),
            generator_calls: 0,
            sgd_steps: 0,
            trajectory: Vec::new(),
        })
    }

    pub fn data_seed(&self, t: usize, i: usize) -> SeedString {
        SeedString::new(
            mix64(self.master_seed ^ mix64(DATA_STREAM_TAG)),
            (t * self.config.samples_per_step + i) as u64,
        )
    }

    fn probe_seed(&self, t: usize, sample: usize) -> SeedString {
        let stream = mix64(self.master_seed ^ mix64(PROBE_STREAM_TAG));
        if self.config.probes.share_across_samples {
            SeedString::new(stream, t as u64)
        } else {
            SeedString::new(stream, (t * (self.config.samples_per_step + 1) + 1 + sample) as u64)
        }
    }

    /// One outer step; errors are annotated with the step index.
    pub fn outer_step(&self, state: &mut OptimizerState) -> Result<()> {
        self.step_inner(state).map_err(|e| e.at_step(state.t))
    }

    fn step_inner(&self, state: &mut OptimizerState) -> Result<()> {
        let started = std::time::Instant::now();
        let t = state.t;
        let n = self.config.samples_per_step;
        let beta = state.beta.clone();

        // fresh seeds per outer step: the dataset is resampled, the probe
        // pairs inside this step still share each sample's seed exactly
        let seeds: Vec<SeedString> = (0..n).map(|i| self.data_seed(t, i)).collect();
        let samples = generate_dataset(self.pipeline, &beta, &seeds);
        state.generator_calls += n as u64;

        // unrolled training from the carried weights, then the validation
        // loss and one reverse sweep back to every consumed sample
        let mut tape = Tape::new();
        let mut trace = train::unrolled_train(
            &mut tape,
            &self.model,
            &self.config.train,
            &state.weights,
            &samples,
        )?;
        train::attach_eval(
            &mut tape,
            &self.model,
            &mut trace,
            self.validation,
            self.model.task,
        )?;
        state.sgd_steps += self.config.train.steps as u64;

        let mut cache = EvalCache::new();
        let grads = train::backprop_to_inputs(&mut tape, &trace, &mut cache)?;

        // gamma = 0 freezes beta: the network still trains and the weights
        // still carry over, but no probes are spent
        if self.config.gamma > 0.0 {
            let flat_grads: Vec<Vec<f64>> = grads
                .per_sample
                .iter()
                .map(|(gi, gt)| {
                    let mut v = Vec::with_capacity(gi.numel() + gt.numel());
                    v.extend_from_slice(gi.data());
                    v.extend_from_slice(gt.data());
                    v
                })
                .collect();

            let jacobians: Result<Vec<JacobianEstimate>> = (0..n)
                .map(|i| match self.config.jacobian {
                    JacobianSource::FiniteDifference => {
                        let est = fd::estimate_jacobian(
                            |b: &DecisionVector| self.pipeline.generate(b, seeds[i]).flatten(),
                            &beta,
                            &self.config.probes,
                            self.probe_seed(t, i),
                        )?;
                        Ok(est)
                    }
                    JacobianSource::Analytic => {
                        let data = self.pipeline.analytic_jacobian(&beta, seeds[i])?;
                        Ok(JacobianEstimate {
                            rows: flat_grads[i].len(),
                            cols: beta.len(),
                            data,
                            probes: 0,
                            sigma: 0.0,
                        })
                    }
                })
                .collect();
            let jacobians = jacobians?;
            if self.config.jacobian == JacobianSource::FiniteDifference {
                state.generator_calls += (2 * self.config.probes.count * n) as u64;
            }

            let gradient = hybrid_gradient(&flat_grads, &jacobians)?;
            state.beta = state.rms.step(&beta, &gradient, self.config.gamma);
        }

        // weight carryover: w_{t+1}^(1) = w_t^(n+1)
        let fw = grads.final_weights;
        state.weights = ModelParams {
            w1: fw[0].clone(),
            b1: fw[1].clone(),
            w2: fw[2].clone(),
            b2: fw[3].clone(),
        };

        state.trajectory.push(StepRecord {
            t,
            loss: grads.loss,
            beta: beta.values().to_vec(),
            generator_calls: state.generator_calls,
            sgd_steps: state.sgd_steps,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        state.t += 1;
        Ok(())
    }

    /// Run T outer steps from `beta0`. Deterministic given the master seed.
    pub fn run(&self, beta0: &DecisionVector) -> Result<OptimizerState> {
        let mut state = self.initial_state(beta0)?;
        for _ in 0..self.config.outer_steps {
            self.outer_step(&mut state)?;
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::BetaLayout;
    use crate::model::Activation;
    use crate::sample::Task;
    use crate::toy::ToyPipeline;

    fn toy_setup(n: usize, t: usize, gamma: f64) -> (ToyPipeline, ModelConfig, HybridConfig) {
        let pipeline = ToyPipeline::new(6, 6);
        let model = ModelConfig {
            input_dim: 36,
            hidden_dim: 8,
            pixels: 36,
            task: Task::Normals,
            activation: Activation::Tanh,
        };
        let config = HybridConfig {
            samples_per_step: n,
            outer_steps: t,
            gamma,
            rms_decay: 0.99,
            rms_epsilon: 1e-8,
            train: TrainConfig {
                learning_rate: 0.05,
                steps: n,
            },
            probes: ProbeConfig {
                count: 4,
                sigma: 0.02,
                share_across_samples: true,
            },
            jacobian: JacobianSource::FiniteDifference,
        };
        (pipeline, model, config)
    }

    fn toy_validation(pipeline: &ToyPipeline, beta: &DecisionVector, count: usize) -> Vec<Sample> {
        (0..count)
            .map(|i| pipeline.generate(beta, SeedString::new(999, i as u64)))
            .collect()
    }

    fn toy_beta(values: [f64; 6]) -> DecisionVector {
        DecisionVector::new(BetaLayout::toy(), values.to_vec()).unwrap()
    }

    #[test]
    fn rmsprop_first_step_magnitude() {
        // g = 1, rho = 0.99: acc = 0.01, step = 0.01/(0.1 + 1e-8) ~ 0.1
        let layout = BetaLayout::free(1);
        let beta = DecisionVector::new(layout, vec![0.0]).unwrap();
        let mut rms = RmsProp::new(1, 0.99, 1e-8);
        let next = rms.step(&beta, &[1.0], 0.01);
        let moved = (next.values()[0] - 0.0).abs();
        assert!((moved - 0.1).abs() < 1e-6, "step magnitude {moved}");
    }

    #[test]
    fn rmsprop_zero_gradient_keeps_beta() {
        let layout = BetaLayout::free(3);
        let beta = DecisionVector::new(layout, vec![0.3, -0.4, 2.0]).unwrap();
        let mut rms = RmsProp::new(3, 0.99, 1e-8);
        let next = rms.step(&beta, &[0.0, 0.0, 0.0], 0.5);
        assert_eq!(next.values(), beta.values());
    }

    #[test]
    fn rmsprop_update_respects_bounds() {
        let beta = toy_beta([0.99, 0.0, 0.1, 1.0, 0.0, 0.0]);
        let mut rms = RmsProp::new(6, 0.99, 1e-8);
        // a huge negative gradient pushes center_x up; clipping holds it
        let next = rms.step(&beta, &[-100.0, 0.0, 0.0, 0.0, 0.0, 0.0], 10.0);
        assert_eq!(next.values()[0], 1.0);
        assert_eq!(next, next.clip_to_valid());
    }

    #[test]
    fn hybrid_gradient_identity_jacobian_passes_through() {
        let grads = vec![vec![0.5, -1.0, 2.0]];
        let eye = JacobianEstimate {
            rows: 3,
            cols: 3,
            data: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            probes: 1,
            sigma: 0.0,
        };
        let g = hybrid_gradient(&grads, &[eye.clone()]).unwrap();
        assert_eq!(g, vec![0.5, -1.0, 2.0]);

        // all-zero upstream gives a zero hybrid gradient
        let zeros = vec![vec![0.0, 0.0, 0.0]];
        let g = hybrid_gradient(&zeros, &[eye]).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn one_step_counters_match_closed_form() {
        let (pipeline, model, config) = toy_setup(3, 1, 0.01);
        let beta0 = toy_beta([0.0, 0.0, 0.4, 1.0, 0.2, -0.2]);
        let validation = toy_validation(&pipeline, &toy_beta([0.2, 0.1, 0.3, 1.2, 0.5, 0.1]), 3);
        let opt = HybridOptimizer {
            pipeline: &pipeline,
            validation: &validation,
            model,
            config: config.clone(),
            master_seed: 42,
        };
        let state = opt.run(&beta0).unwrap();
        assert_eq!(state.trajectory.len(), 1);
        let n = config.samples_per_step as u64;
        let m = config.probes.count as u64;
        assert_eq!(state.generator_calls, n + 2 * m * n);
        assert_eq!(state.sgd_steps, n);
    }

    #[test]
    fn run_is_deterministic_and_counts_t_times() {
        let (pipeline, model, config) = toy_setup(2, 4, 0.01);
        let beta0 = toy_beta([0.0, 0.0, 0.4, 1.0, 0.2, -0.2]);
        let validation = toy_validation(&pipeline, &toy_beta([0.2, 0.1, 0.3, 1.2, 0.5, 0.1]), 3);
        let opt = HybridOptimizer {
            pipeline: &pipeline,
            validation: &validation,
            model,
            config: config.clone(),
            master_seed: 7,
        };
        let a = opt.run(&beta0).unwrap();
        let b = opt.run(&beta0).unwrap();
        assert_eq!(a.trajectory.len(), 4);
        let key = |s: &OptimizerState| -> Vec<u64> {
            s.trajectory
                .iter()
                .flat_map(|r| {
                    let mut v = vec![r.loss.to_bits()];
                    v.extend(r.beta.iter().map(|x| x.to_bits()));
                    v
                })
                .collect()
        };
        assert_eq!(key(&a), key(&b));
        // closed-form totals: T(n + 2mn) generator calls, T*n sgd steps
        let (n, m, t) = (2u64, config.probes.count as u64, 4u64);
        assert_eq!(a.generator_calls, t * (n + 2 * m * n));
        assert_eq!(a.sgd_steps, t * n);
    }

    #[test]
    fn gamma_zero_freezes_beta_but_trains() {
        let (pipeline, model, config) = toy_setup(2, 3, 0.0);
        let beta0 = toy_beta([0.1, -0.1, 0.4, 1.0, 0.0, 0.0]);
        let validation = toy_validation(&pipeline, &beta0, 4);
        let opt = HybridOptimizer {
            pipeline: &pipeline,
            validation: &validation,
            model,
            config,
            master_seed: 11,
        };
        let state = opt.run(&beta0).unwrap();
        for r in &state.trajectory {
            assert_eq!(r.beta, beta0.values());
        }
        // validation loss still moves because the network keeps training
        let losses: Vec<f64> = state.trajectory.iter().map(|r| r.loss).collect();
        assert!(losses.windows(2).any(|w| w[1] != w[0]), "{losses:?}");
        // no probe renders were spent
        assert_eq!(state.generator_calls, 3 * 2);
    }

    #[test]
    fn weight_carryover_is_bit_exact() {
        let (pipeline, model, config) = toy_setup(2, 1, 0.01);
        let beta0 = toy_beta([0.0, 0.0, 0.4, 1.0, 0.2, -0.2]);
        let validation = toy_validation(&pipeline, &beta0, 2);
        let opt = HybridOptimizer {
            pipeline: &pipeline,
            validation: &validation,
            model,
            config,
            master_seed: 3,
        };
        let mut state = opt.initial_state(&beta0).unwrap();
        opt.outer_step(&mut state).unwrap();
        let carried = state.weights.clone();

        // recompute w^(n+1) directly with the numeric path
        let seeds: Vec<SeedString> = (0..2).map(|i| opt.data_seed(0, i)).collect();
        let samples = generate_dataset(&pipeline, &beta0, &seeds);
        let mut params = ModelParams::init(
            &opt.model,
            SeedString::new(mix64(3u64 ^ mix64(INIT_STREAM_TAG)), 0),
        );
        for s in &samples {
            train::train_step_numeric(&opt.model, &mut params, s, 0.05).unwrap();
        }
        assert_eq!(carried, params);
    }
}
