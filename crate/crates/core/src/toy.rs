//! Closed-form differentiable pipeline used as the oracle for validating
//! the hybrid gradient: a Gaussian blob whose center, width, amplitude and
//! normal-field tilt are the entries of `beta`, with the seed jittering
//! the blob position. The Jacobian of the flattened output with respect to
//! `beta` is available analytically.

use std::sync::Arc;

use rand::Rng;

use crate::decision::{BetaLayout, DecisionVector};
use crate::error::Result;
use crate::pipeline::Pipeline;
use crate::rng::SeedString;
use crate::sample::{Sample, Task};

pub struct ToyPipeline {
    layout: Arc<BetaLayout>,
    pub width: usize,
    pub height: usize,
}

const JITTER: f64 = 0.1;

struct ToyParams {
    cx: f64,
    cy: f64,
    width: f64,
    amplitude: f64,
    tilt_x: f64,
    tilt_y: f64,
    jx: f64,
    jy: f64,
}

impl ToyPipeline {
    pub fn new(width: usize, height: usize) -> Self {
        ToyPipeline {
            layout: BetaLayout::toy(),
            width,
            height,
        }
    }

    fn params(&self, beta: &DecisionVector, seed: SeedString) -> ToyParams {
        let mut rng = seed.rng();
        ToyParams {
            cx: beta.block("center_x")[0],
            cy: beta.block("center_y")[0],
            width: beta.block("width")[0],
            amplitude: beta.block("amplitude")[0],
            tilt_x: beta.block("tilt_x")[0],
            tilt_y: beta.block("tilt_y")[0],
            jx: rng.gen_range(-JITTER..JITTER),
            jy: rng.gen_range(-JITTER..JITTER),
        }
    }

    /// Pixel center coordinates on the [-1, 1] grid.
    fn grid(&self, row: usize, col: usize) -> (f64, f64) {
        let u = ((col as f64 + 0.5) / self.width as f64) * 2.0 - 1.0;
        let v = 1.0 - ((row as f64 + 0.5) / self.height as f64) * 2.0;
        (u, v)
    }
}

impl Pipeline for ToyPipeline {
    fn layout(&self) -> &Arc<BetaLayout> {
        &self.layout
    }

    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn task(&self) -> Task {
        Task::Normals
    }

    fn generate(&self, beta: &DecisionVector, seed: SeedString) -> Sample {
        let p = self.params(beta, seed);
        let pixels = self.width * self.height;
        let mut image = vec![0.0; pixels];
        let mut ground_truth = vec![0.0; pixels * 3];

        let s = (p.tilt_x * p.tilt_x + p.tilt_y * p.tilt_y + 1.0).sqrt();
        let normal = [p.tilt_x / s, p.tilt_y / s, 1.0 / s];

        for row in 0..self.height {
            for col in 0..self.width {
                let idx = row * self.width + col;
                let (u, v) = self.grid(row, col);
                let dx = u - p.cx - p.jx;
                let dy = v - p.cy - p.jy;
                let r2 = dx * dx + dy * dy;
                image[idx] = p.amplitude * (-r2 / (2.0 * p.width * p.width)).exp();
                ground_truth[idx * 3..idx * 3 + 3].copy_from_slice(&normal);
            }
        }

        Sample {
            width: self.width,
            height: self.height,
            task: Task::Normals,
            image,
            ground_truth,
            mask: vec![true; pixels],
        }
    }

    fn analytic_jacobian(&self, beta: &DecisionVector, seed: SeedString) -> Result<Vec<f64>> {
        let p = self.params(beta, seed);
        let pixels = self.width * self.height;
        let rows = pixels + pixels * 3;
        let cols = beta.len();
        let mut jac = vec![0.0; rows * cols];

        for row in 0..self.height {
            for col in 0..self.width {
                let idx = row * self.width + col;
                let (u, v) = self.grid(row, col);
                let dx = u - p.cx - p.jx;
                let dy = v - p.cy - p.jy;
                let r2 = dx * dx + dy * dy;
                let w2 = p.width * p.width;
                let g = (-r2 / (2.0 * w2)).exp();
                let val = p.amplitude * g;
                let r = &mut jac[idx * cols..(idx + 1) * cols];
                r[0] = val * dx / w2; // center_x
                r[1] = val * dy / w2; // center_y
                r[2] = val * r2 / (w2 * p.width); // width
                r[3] = g; // amplitude
            }
        }

        // constant normal field n = (tx, ty, 1)/s, s = sqrt(tx^2+ty^2+1)
        let (tx, ty) = (p.tilt_x, p.tilt_y);
        let s = (tx * tx + ty * ty + 1.0).sqrt();
        let s3 = s * s * s;
        let dn_dtx = [(1.0 + ty * ty) / s3, -tx * ty / s3, -tx / s3];
        let dn_dty = [-tx * ty / s3, (1.0 + tx * tx) / s3, -ty / s3];
        for pix in 0..pixels {
            for c in 0..3 {
                let row = pixels + pix * 3 + c;
                jac[row * cols + 4] = dn_dtx[c];
                jac[row * cols + 5] = dn_dty[c];
            }
        }

        Ok(jac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beta(values: [f64; 6]) -> DecisionVector {
        DecisionVector::new(BetaLayout::toy(), values.to_vec()).unwrap()
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let p = ToyPipeline::new(6, 5);
        let b = beta([0.1, -0.2, 0.5, 1.0, 0.4, -0.3]);
        let seed = SeedString::new(21, 3);
        let jac = p.analytic_jacobian(&b, seed).unwrap();
        let flat_len = p.generate(&b, seed).flat_len();
        let cols = b.len();

        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for j in 0..cols {
            let fd: Vec<f64> = {
                let mut vp = b.values().to_vec();
                vp[j] += step;
                let plus = p
                    .generate(&DecisionVector::new(b.layout().clone(), vp.clone()).unwrap(), seed)
                    .flatten();
                vp[j] = b.values()[j] - step;
                let minus = p
                    .generate(&DecisionVector::new(b.layout().clone(), vp).unwrap(), seed)
                    .flatten();
                plus.iter()
                    .zip(minus)
                    .map(|(a, m)| (a - m) / (2.0 * step))
                    .collect()
            };
            for i in 0..flat_len {
                let a = jac[i * cols + j];
                let err = (a - fd[i]).abs() / 1.0f64.max(a.abs()).max(fd[i].abs());
                worst = worst.max(err);
            }
        }
        assert!(worst <= 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn center_shift_translates_the_blob() {
        let p = ToyPipeline::new(16, 16);
        let seed = SeedString::new(22, 0);
        let a = p.generate(&beta([0.0, 0.0, 0.4, 1.0, 0.0, 0.0]), seed);
        // shifting center_x by exactly two pixel widths moves the image
        let shift = 2.0 * (2.0 / 16.0);
        let b = p.generate(&beta([shift, 0.0, 0.4, 1.0, 0.0, 0.0]), seed);
        for row in 0..16 {
            for col in 0..14 {
                let i0 = row * 16 + col;
                let i1 = row * 16 + col + 2;
                assert!(
                    (a.image[i0] - b.image[i1]).abs() < 1e-12,
                    "blob not translated at ({row},{col})"
                );
            }
        }
    }

    #[test]
    fn clip_enforces_width_floor() {
        let b = beta([0.0, 0.0, -3.0, 1.0, 0.0, 0.0]).clip_to_valid();
        assert_eq!(b.block("width")[0], 0.05);
    }

    #[test]
    fn ground_truth_normals_are_unit() {
        let p = ToyPipeline::new(4, 4);
        let s = p.generate(&beta([0.0, 0.0, 0.3, 1.0, 0.8, -0.6]), SeedString::new(23, 0));
        for i in 0..s.pixels() {
            let n = &s.ground_truth[i * 3..i * 3 + 3];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-12);
            assert!(s.mask[i]);
        }
    }

    #[test]
    fn jitter_depends_on_seed_only() {
        let p = ToyPipeline::new(8, 8);
        let b = beta([0.0, 0.0, 0.4, 1.0, 0.0, 0.0]);
        let s1 = p.generate(&b, SeedString::new(24, 0));
        let s2 = p.generate(&b, SeedString::new(24, 0));
        let s3 = p.generate(&b, SeedString::new(24, 1));
        assert_eq!(s1, s2);
        assert_ne!(s1.image, s3.image);
    }
}
