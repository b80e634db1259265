//! The small predictive model and both losses, built as tape expressions.
//!
//! The model is a two-layer perceptron over the flattened input image,
//! producing a per-pixel output map. Everything here returns expressions
//! so the trainer can differentiate through whole training runs.

use rand::Rng;

use crate::autodiff::{Expr, Tape};
use crate::error::{Error, Result};
use crate::rng::SeedString;
use crate::sample::{Sample, Task};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Identity hidden layer; makes the model linear (used by convexity
    /// sanity tests).
    Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub pixels: usize,
    pub task: Task,
    pub activation: Activation,
}

impl ModelConfig {
    pub fn for_image(width: usize, height: usize, hidden_dim: usize, task: Task) -> Self {
        ModelConfig {
            input_dim: width * height,
            hidden_dim,
            pixels: width * height,
            task,
            activation: Activation::Tanh,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.pixels * self.task.gt_channels()
    }

    pub fn weight_count(&self) -> usize {
        self.input_dim * self.hidden_dim
            + self.hidden_dim
            + self.hidden_dim * self.output_dim()
            + self.output_dim()
    }
}

const INIT_SCALE: f64 = 0.1;

/// Numeric model weights: two affine layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ModelParams {
    /// Deterministic initialization, uniform in +-0.1.
    pub fn init(config: &ModelConfig, seed: SeedString) -> Self {
        let mut rng = seed.rng();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE)).collect()
        };
        let out = config.output_dim();
        ModelParams {
            w1: Tensor::new(
                vec![config.input_dim, config.hidden_dim],
                draw(config.input_dim * config.hidden_dim),
            )
            .expect("consistent shape"),
            b1: Tensor::new(vec![1, config.hidden_dim], draw(config.hidden_dim))
                .expect("consistent shape"),
            w2: Tensor::new(
                vec![config.hidden_dim, out],
                draw(config.hidden_dim * out),
            )
            .expect("consistent shape"),
            b2: Tensor::new(vec![1, out], draw(out)).expect("consistent shape"),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn max_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.l2_norm())
            .fold(0.0, f64::max)
    }
}

/// The model's weights as leaf expressions on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ModelExprs {
    pub w1: Expr,
    pub b1: Expr,
    pub w2: Expr,
    pub b2: Expr,
}

impl ModelExprs {
    pub fn leaves(tape: &mut Tape, params: &ModelParams) -> Self {
        ModelExprs {
            w1: tape.leaf(params.w1.clone()),
            b1: tape.leaf(params.b1.clone()),
            w2: tape.leaf(params.w2.clone()),
            b2: tape.leaf(params.b2.clone()),
        }
    }

    pub fn as_vec(&self) -> Vec<Expr> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }

    pub fn from_vec(v: &[Expr]) -> Self {
        ModelExprs {
            w1: v[0],
            b1: v[1],
            w2: v[2],
            b2: v[3],
        }
    }
}

/// Forward pass: (1, in) -> (1, out).
pub fn predict(
    tape: &mut Tape,
    config: &ModelConfig,
    model: &ModelExprs,
    input: Expr,
) -> Result<Expr> {
    let pre = tape.matmul(input, model.w1)?;
    let pre = tape.add(pre, model.b1)?;
    let hidden = match config.activation {
        Activation::Tanh => tape.tanh(pre)?,
        Activation::Linear => pre,
    };
    let out = tape.matmul(hidden, model.w2)?;
    tape.add(out, model.b2)
}

/// Training loss: mean squared error between the prediction and the
/// flattened ground truth, both (1, out).
pub fn train_loss(
    tape: &mut Tape,
    config: &ModelConfig,
    model: &ModelExprs,
    input: Expr,
    target: Expr,
) -> Result<Expr> {
    let pred = predict(tape, config, model, input)?;
    if tape.shape(target) != tape.shape(pred) {
        return Err(Error::ShapeMismatch {
            op: "train_loss",
            lhs: tape.shape(pred).to_vec(),
            rhs: tape.shape(target).to_vec(),
        });
    }
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff)?;
    tape.mean(sq)
}

const NORM_EPSILON: f64 = 1e-9;
const ACOS_GUARD: f64 = 1e-7;

/// Per-pixel L2 normalization of a (P, 3) map; the epsilon keeps the norm
/// differentiable at zero predictions.
fn normalize_rows(tape: &mut Tape, v: Expr) -> Result<Expr> {
    let rows = tape.shape(v)[0];
    let sq = tape.square(v)?;
    let ones_col = tape.constant(Tensor::filled(vec![3, 1], 1.0));
    let row_sums = tape.matmul(sq, ones_col)?;
    let eps = tape.scalar(NORM_EPSILON);
    let guarded = tape.add(row_sums, eps)?;
    let norm = tape.sqrt(guarded)?;
    let inv = tape.recip(norm)?;
    let ones_row = tape.constant(Tensor::filled(vec![1, 3], 1.0));
    let inv3 = tape.matmul(inv, ones_row)?;
    let unit = tape.mul(v, inv3)?;
    debug_assert_eq!(tape.shape(unit), &[rows, 3]);
    Ok(unit)
}

/// Row-wise dot product of two (P, 3) maps -> (P, 1).
fn rowwise_dot(tape: &mut Tape, a: Expr, b: Expr) -> Result<Expr> {
    let prod = tape.mul(a, b)?;
    let ones_col = tape.constant(Tensor::filled(vec![3, 1], 1.0));
    tape.matmul(prod, ones_col)
}

/// Differentiable validation loss over a set of samples, pooled over all
/// valid pixels. For normals this is the mean angle between the per-pixel
/// normalized prediction and the ground truth (arccos of the clamped dot
/// product); for depth it is masked mean squared error.
pub fn eval_loss(
    tape: &mut Tape,
    config: &ModelConfig,
    model: &ModelExprs,
    validation: &[Sample],
    task: Task,
) -> Result<Expr> {
    if validation.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let total_valid: usize = validation.iter().map(|s| s.hit_count()).sum();
    if total_valid == 0 {
        return Err(Error::EmptyValidation);
    }

    let mut total: Option<Expr> = None;
    for sample in validation {
        let pixels = sample.pixels();
        let channels = task.gt_channels();
        let input = tape.constant(Tensor::new(vec![1, pixels], sample.image.clone())?);
        let pred_flat = predict(tape, config, model, input)?;
        let pred = tape.reshape(pred_flat, vec![pixels, channels])?;
        let gt = tape.constant(Tensor::new(
            vec![pixels, channels],
            sample.ground_truth.clone(),
        )?);
        let mask_col = tape.constant(Tensor::new(
            vec![pixels, 1],
            sample.mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect(),
        )?);

        let per_pixel = match task {
            Task::Normals => {
                let unit = normalize_rows(tape, pred)?;
                let dots = rowwise_dot(tape, unit, gt)?;
                let clamped = tape.clamp(dots, -1.0 + ACOS_GUARD, 1.0 - ACOS_GUARD)?;
                tape.acos(clamped)?
            }
            Task::Depth => {
                let diff = tape.sub(pred, gt)?;
                tape.square(diff)?
            }
        };
        let masked = tape.mul(per_pixel, mask_col)?;
        let s = tape.sum(masked)?;
        total = Some(match total {
            None => s,
            Some(prev) => tape.add(prev, s)?,
        });
    }

    tape.scale(total.expect("validation nonempty"), 1.0 / total_valid as f64)
}
