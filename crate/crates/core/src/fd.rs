//! Finite-difference Jacobian of the black-box generator: averaged central
//! differences along random Gaussian directions.
//!
//! For each sample seed r_i the estimate is
//!     (1/m) sum_j  [f(clip(b + d_j), r_i) - f(clip(b - d_j), r_i)] / (2 |d_j|)
//!                  (outer) d_j / |d_j|
//! with both evaluations of a probe sharing the same r_i. The estimator is
//! kept exactly in this form; for linear maps its expectation is the true
//! Jacobian shrunk by 1/dim (E[d dT / |d|^2] = I/dim), a scale the outer
//! optimizer's per-coordinate normalization absorbs.

use rayon::prelude::*;

use crate::decision::DecisionVector;
use crate::error::{Error, Result};
use crate::rng::SeedString;

#[derive(Clone, Copy, Debug)]
pub struct ProbeConfig {
    /// Number of probe directions m.
    pub count: usize,
    /// Per-entry standard deviation of the Gaussian directions.
    pub sigma: f64,
    /// Whether one probe set is shared by all samples of an outer step.
    pub share_across_samples: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            count: 8,
            sigma: 0.02,
            share_across_samples: true,
        }
    }
}

/// Dense row-major (flat sample length x beta length) estimate.
#[derive(Clone, Debug)]
pub struct JacobianEstimate {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub probes: usize,
    pub sigma: f64,
}

impl JacobianEstimate {
    /// Vector-Jacobian product g^T J for a flattened upstream gradient.
    pub fn vjp(&self, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.rows {
            return Err(Error::ShapeMismatch {
                op: "vjp",
                lhs: vec![upstream.len()],
                rhs: vec![self.rows],
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, g) in upstream.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, j) in out.iter_mut().zip(row) {
                *o += g * j;
            }
        }
        Ok(out)
    }
}

/// Draw m probe directions with i.i.d. Normal(0, sigma) entries.
pub fn sample_directions(dim: usize, count: usize, sigma: f64, seed: SeedString) -> Vec<Vec<f64>> {
    assert!(dim >= 1 && count >= 1);
    assert!(sigma > 0.0);
    let mut rng = seed.rng();
    (0..count)
        .map(|_| {
            (0..dim)
                .map(|_| sigma * crate::rng::standard_normal(&mut rng))
                .collect()
        })
        .collect()
}

/// Estimate the Jacobian of `f` at `beta` for one sample seed. `f` is the
/// flattened generator output; it is called 2m times, always with the same
/// seed, at clip(beta +- delta). The perturbed points are clipped but the
/// outer-product direction stays the original draw, so the estimator
/// formula is unchanged by the clipping rule.
pub fn estimate_jacobian<F>(
    f: F,
    beta: &DecisionVector,
    config: &ProbeConfig,
    probe_seed: SeedString,
) -> Result<JacobianEstimate>
where
    F: Fn(&DecisionVector) -> Vec<f64> + Sync,
{
    let directions = sample_directions(beta.len(), config.count, config.sigma, probe_seed);
    estimate_with_directions(f, beta, &directions, config.sigma)
}

/// Same estimator over caller-supplied directions.
pub fn estimate_with_directions<F>(
    f: F,
    beta: &DecisionVector,
    directions: &[Vec<f64>],
    sigma: f64,
) -> Result<JacobianEstimate>
where
    F: Fn(&DecisionVector) -> Vec<f64> + Sync,
{
    let cols = beta.len();
    assert!(!directions.is_empty());

    // probe evaluations run in parallel; the reduction below is a
    // fixed-order sequential sum for reproducibility
    let diffs: Vec<(Vec<f64>, f64)> = directions
        .par_iter()
        .map(|delta| {
            let neg: Vec<f64> = delta.iter().map(|d| -d).collect();
            let plus = f(&beta.shifted(delta).clip_to_valid());
            let minus = f(&beta.shifted(&neg).clip_to_valid());
            let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
            let diff: Vec<f64> = plus
                .iter()
                .zip(&minus)
                .map(|(p, q)| (p - q) / (2.0 * norm))
                .collect();
            (diff, norm)
        })
        .collect();

    let rows = diffs[0].0.len();
    let mut data = vec![0.0; rows * cols];
    for (probe, (diff, norm)) in diffs.iter().enumerate() {
        if !diff.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteProbe { probe });
        }
        let unit: Vec<f64> = directions[probe].iter().map(|d| d / norm).collect();
        for (r, dv) in diff.iter().enumerate() {
            if *dv == 0.0 {
                continue;
            }
            let row = &mut data[r * cols..(r + 1) * cols];
            for (acc, u) in row.iter_mut().zip(&unit) {
                *acc += dv * u;
            }
        }
    }
    let scale = 1.0 / directions.len() as f64;
    for v in &mut data {
        *v *= scale;
    }

    Ok(JacobianEstimate {
        rows,
        cols,
        data,
        probes: directions.len(),
        sigma,
    })
}
