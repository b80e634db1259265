//! Unrolled SGD training and backpropagation of the validation loss to
//! the training samples.
//!
//! One tape holds the whole trajectory: each weight state w^(k+1) is an
//! expression w^(k) - eta * d l_train / d w^(k), where the inner gradient
//! is itself a subgraph emitted by `derive`. Differentiating the final
//! validation loss through that chain therefore differentiates through
//! gradients, which is why the tape supports gradients-of-gradients.

use crate::autodiff::{Bindings, EvalCache, Expr, Tape};
use crate::error::{Error, Result};
use crate::model::{self, ModelConfig, ModelExprs, ModelParams};
use crate::sample::{Sample, Task};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    /// Inner SGD learning rate; fixed during one outer update.
    pub learning_rate: f64,
    /// Unrolled steps per outer update; batch size is fixed at 1.
    pub steps: usize,
}

pub const DIVERGENCE_NORM: f64 = 1e6;

/// Sample leaves consumed by one SGD step.
#[derive(Clone, Copy, Debug)]
pub struct SampleExprs {
    /// (1, in) input image.
    pub image: Expr,
    /// (1, out) flattened ground truth.
    pub target: Expr,
}

/// The recorded unrolled trajectory: weight states w^(1)..w^(n+1), the
/// sample leaves, and (once attached) the scalar validation loss.
pub struct TrainTrace {
    pub weight_states: Vec<Vec<Expr>>,
    pub samples: Vec<SampleExprs>,
    pub eval: Option<Expr>,
}

impl TrainTrace {
    pub fn initial_weights(&self) -> &[Expr] {
        &self.weight_states[0]
    }

    pub fn final_weights(&self) -> &[Expr] {
        self.weight_states.last().expect("n+1 states")
    }
}

/// One SGD step as a graph transformation: w' = w - eta * dL/dw, with the
/// gradient emitted symbolically so w' stays differentiable with respect
/// to both the weights and the consumed sample.
pub fn sgd_step(tape: &mut Tape, loss: Expr, weights: &[Expr], eta: f64) -> Result<Vec<Expr>> {
    let grads = tape.derive(loss, weights)?;
    weights
        .iter()
        .zip(grads)
        .map(|(w, g)| {
            let step = tape.scale(g, eta)?;
            tape.sub(*w, step)
        })
        .collect()
}

/// Build the full unrolled training graph, consuming samples in order.
/// Weight states are evaluated once to catch divergence early.
pub fn unrolled_train(
    tape: &mut Tape,
    config: &ModelConfig,
    train: &TrainConfig,
    w0: &ModelParams,
    samples: &[Sample],
) -> Result<TrainTrace> {
    assert!(train.steps >= 1, "at least one step");
    assert!(
        samples.len() >= train.steps,
        "need {} samples, got {}",
        train.steps,
        samples.len()
    );
    assert!(train.learning_rate >= 0.0);

    let model0 = ModelExprs::leaves(tape, w0);
    let mut weight_states = vec![model0.as_vec()];
    let mut sample_exprs = Vec::with_capacity(train.steps);

    for sample in samples.iter().take(train.steps) {
        let current = ModelExprs::from_vec(weight_states.last().expect("nonempty"));
        let image = tape.leaf(Tensor::new(vec![1, sample.pixels()], sample.image.clone())?);
        let target = tape.leaf(Tensor::new(
            vec![1, config.output_dim()],
            sample.ground_truth.clone(),
        )?);
        sample_exprs.push(SampleExprs { image, target });
        let loss = model::train_loss(tape, config, &current, image, target)?;
        let next = sgd_step(tape, loss, &current.as_vec(), train.learning_rate)?;
        weight_states.push(next);
    }

    // forward check: finite weights within the divergence bound
    let bindings = Bindings::new();
    for (step, state) in weight_states.iter().enumerate() {
        let values = tape.evaluate(state, &bindings)?;
        for v in &values {
            let norm = v.l2_norm();
            if !norm.is_finite() || norm > DIVERGENCE_NORM {
                return Err(Error::Divergence { step, norm });
            }
        }
    }

    Ok(TrainTrace {
        weight_states,
        samples: sample_exprs,
        eval: None,
    })
}

/// Attach the validation loss to the trace's final weights.
pub fn attach_eval(
    tape: &mut Tape,
    config: &ModelConfig,
    trace: &mut TrainTrace,
    validation: &[Sample],
    task: Task,
) -> Result<Expr> {
    let final_model = ModelExprs::from_vec(trace.final_weights());
    let loss = model::eval_loss(tape, config, &final_model, validation, task)?;
    trace.eval = Some(loss);
    Ok(loss)
}

/// Gradients of the validation loss with respect to every consumed sample
/// and the initial weights, from one reverse sweep seeded at the loss.
pub struct InputGrads {
    /// Per sample k: (d L / d image^(k), d L / d target^(k)).
    pub per_sample: Vec<(Tensor, Tensor)>,
    /// d L / d w^(1), one tensor per weight.
    pub initial_weights: Vec<Tensor>,
    /// The evaluated validation loss.
    pub loss: f64,
    /// Numeric final weights, for carrying into the next outer step.
    pub final_weights: Vec<Tensor>,
}

pub fn backprop_to_inputs(
    tape: &mut Tape,
    trace: &TrainTrace,
    cache: &mut EvalCache,
) -> Result<InputGrads> {
    let loss = trace.eval.ok_or(Error::EmptyValidation)?;

    let mut wrt: Vec<Expr> = Vec::with_capacity(trace.samples.len() * 2 + 4);
    for s in &trace.samples {
        wrt.push(s.image);
        wrt.push(s.target);
    }
    wrt.extend_from_slice(trace.initial_weights());
    let grads = tape.derive(loss, &wrt)?;

    let mut requests = grads.clone();
    requests.push(loss);
    requests.extend_from_slice(trace.final_weights());
    let bindings = Bindings::new();
    let mut values = tape.evaluate_cached(&requests, &bindings, cache)?;

    let final_weights = values.split_off(requests.len() - trace.final_weights().len());
    let loss_value = values.pop().expect("loss evaluated").item();

    let mut per_sample = Vec::with_capacity(trace.samples.len());
    let mut it = values.into_iter();
    for (k, _) in trace.samples.iter().enumerate() {
        let gi = it.next().expect("image grad");
        let gt = it.next().expect("target grad");
        if !gi.all_finite() || !gt.all_finite() {
            return Err(Error::NonFiniteGradient { sample: k });
        }
        per_sample.push((gi, gt));
    }
    let initial_weights: Vec<Tensor> = it.collect();

    Ok(InputGrads {
        per_sample,
        initial_weights,
        loss: loss_value,
        final_weights,
    })
}

// ── Numeric path ────────────────────────────────────────────────────────
//
// The black-box baselines train with the same graph construction but a
// throwaway tape per step, so weight updates are arithmetically identical
// to the unrolled path while nothing is retained.

/// One in-place numeric SGD step.
pub fn train_step_numeric(
    config: &ModelConfig,
    params: &mut ModelParams,
    sample: &Sample,
    learning_rate: f64,
) -> Result<()> {
    let mut tape = Tape::new();
    let model = ModelExprs::leaves(&mut tape, params);
    let image = tape.leaf(Tensor::new(vec![1, sample.pixels()], sample.image.clone())?);
    let target = tape.leaf(Tensor::new(
        vec![1, config.output_dim()],
        sample.ground_truth.clone(),
    )?);
    let loss = model::train_loss(&mut tape, config, &model, image, target)?;
    let grads = tape.derive(loss, &model.as_vec())?;
    let values = tape.evaluate(&grads, &Bindings::new())?;

    let mut tensors = [
        &mut params.w1,
        &mut params.b1,
        &mut params.w2,
        &mut params.b2,
    ];
    for (t, g) in tensors.iter_mut().zip(values) {
        for (w, gv) in t.data_mut().iter_mut().zip(g.data()) {
            *w -= learning_rate * gv;
        }
    }
    Ok(())
}

/// Numeric validation loss of a parameter snapshot.
pub fn validation_loss_numeric(
    config: &ModelConfig,
    params: &ModelParams,
    validation: &[Sample],
    task: Task,
) -> Result<f64> {
    let mut tape = Tape::new();
    let model = ModelExprs::leaves(&mut tape, params);
    let loss = model::eval_loss(&mut tape, config, &model, validation, task)?;
    Ok(tape.evaluate(&[loss], &Bindings::new())?[0].item())
}
