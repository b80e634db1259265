//! Evaluation metrics for normal and depth maps over masked pixel sets.

use crate::error::{Error, Result};
use crate::sample::{Sample, Task};

/// Per-pixel unit normals with a validity mask.
#[derive(Clone, Debug)]
pub struct NormalMap {
    /// len = pixels * 3.
    pub normals: Vec<f64>,
    pub mask: Vec<bool>,
}

impl NormalMap {
    pub fn new(normals: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        assert_eq!(normals.len(), mask.len() * 3, "3 components per pixel");
        for (i, valid) in mask.iter().enumerate() {
            if !valid {
                continue;
            }
            let n = &normals[i * 3..i * 3 + 3];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (len - 1.0).abs() > 1e-4 {
                return Err(Error::Record(format!(
                    "normal at valid pixel {i} has length {len}"
                )));
            }
        }
        Ok(NormalMap { normals, mask })
    }

    pub fn from_sample(s: &Sample) -> Result<Self> {
        assert_eq!(s.task, Task::Normals);
        NormalMap::new(s.ground_truth.clone(), s.mask.clone())
    }
}

/// Per-pixel positive depths with a validity mask.
#[derive(Clone, Debug)]
pub struct DepthMap {
    pub depths: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DepthMap {
    pub fn new(depths: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        assert_eq!(depths.len(), mask.len());
        for (i, valid) in mask.iter().enumerate() {
            if *valid && depths[i] <= 0.0 {
                return Err(Error::NonPositiveDepth { pixel: i });
            }
        }
        Ok(DepthMap { depths, mask })
    }
}

fn angles(pred: &NormalMap, gt: &NormalMap) -> Result<Vec<f64>> {
    if pred.mask != gt.mask {
        return Err(Error::MaskMismatch);
    }
    let out: Vec<f64> = pred
        .mask
        .iter()
        .enumerate()
        .filter(|(_, valid)| **valid)
        .map(|(i, _)| {
            let a = &pred.normals[i * 3..i * 3 + 3];
            let b = &gt.normals[i * 3..i * 3 + 3];
            let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            dot.clamp(-1.0, 1.0).acos()
        })
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyValidation);
    }
    Ok(out)
}

/// Mean angle error in radians.
pub fn mean_angle_error(pred: &NormalMap, gt: &NormalMap) -> Result<f64> {
    let a = angles(pred, gt)?;
    Ok(a.iter().sum::<f64>() / a.len() as f64)
}

/// Median angle error; even pixel counts average the two central order
/// statistics.
pub fn median_angle_error(pred: &NormalMap, gt: &NormalMap) -> Result<f64> {
    let mut a = angles(pred, gt)?;
    a.sort_by(|x, y| x.partial_cmp(y).expect("angles are finite"));
    let n = a.len();
    Ok(if n % 2 == 1 {
        a[n / 2]
    } else {
        (a[n / 2 - 1] + a[n / 2]) / 2.0
    })
}

/// Percentage (0..=100) of pixels whose angle error is at most `delta`
/// radians.
pub fn threshold_pct(pred: &NormalMap, gt: &NormalMap, delta: f64) -> Result<f64> {
    let a = angles(pred, gt)?;
    let hits = a.iter().filter(|x| **x <= delta).count();
    Ok(100.0 * hits as f64 / a.len() as f64)
}

/// Mean of squared angle errors (radians squared).
pub fn mse_angle(pred: &NormalMap, gt: &NormalMap) -> Result<f64> {
    let a = angles(pred, gt)?;
    Ok(a.iter().map(|x| x * x).sum::<f64>() / a.len() as f64)
}

fn depth_pairs(pred: &DepthMap, gt: &DepthMap) -> Result<Vec<(f64, f64)>> {
    if pred.mask != gt.mask {
        return Err(Error::MaskMismatch);
    }
    let out: Vec<(f64, f64)> = pred
        .mask
        .iter()
        .enumerate()
        .filter(|(_, valid)| **valid)
        .map(|(i, _)| (pred.depths[i], gt.depths[i]))
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyValidation);
    }
    Ok(out)
}

/// Mean of |d - d*| / d*.
pub fn abs_rel(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    let p = depth_pairs(pred, gt)?;
    Ok(p.iter().map(|(d, g)| (d - g).abs() / g).sum::<f64>() / p.len() as f64)
}

/// Mean of (d - d*)^2 / d*.
pub fn sq_rel(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    let p = depth_pairs(pred, gt)?;
    Ok(p.iter().map(|(d, g)| (d - g) * (d - g) / g).sum::<f64>() / p.len() as f64)
}

pub fn rmse_linear(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    let p = depth_pairs(pred, gt)?;
    Ok((p.iter().map(|(d, g)| (d - g) * (d - g)).sum::<f64>() / p.len() as f64).sqrt())
}

pub fn rmse_log(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    let p = depth_pairs(pred, gt)?;
    Ok(
        (p.iter()
            .map(|(d, g)| (d.ln() - g.ln()) * (d.ln() - g.ln()))
            .sum::<f64>()
            / p.len() as f64)
            .sqrt(),
    )
}

/// Scale-invariant log RMSE: the mean log-ratio is subtracted from each
/// per-pixel log-ratio, so a global depth scaling gives exactly zero.
pub fn rmse_log_scale_invariant(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    let p = depth_pairs(pred, gt)?;
    let ratios: Vec<f64> = p.iter().map(|(d, g)| d.ln() - g.ln()).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(
        (ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / ratios.len() as f64)
            .sqrt(),
    )
}
