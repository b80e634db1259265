//! Render-preview output: container files for exact values plus portable
//! graymap/pixmap images for quick visual inspection.

use std::path::Path;

use crate::error::Result;
use crate::sample::{self, Sample, Task};

/// Binary PGM (P5) of the shaded image.
pub fn write_pgm(path: &Path, sample: &Sample) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", sample.width, sample.height).into_bytes();
    out.extend(
        sample
            .image
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    std::fs::write(path, out)?;
    Ok(())
}

/// Binary PPM (P6) false-coloring of the ground truth: normals map the
/// [-1, 1] components to RGB; depth maps to an inverted gray ramp.
pub fn write_gt_ppm(path: &Path, sample: &Sample) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", sample.width, sample.height).into_bytes();
    match sample.task {
        Task::Normals => {
            for i in 0..sample.pixels() {
                for c in 0..3 {
                    let v = sample.ground_truth[i * 3 + c];
                    out.push(((v * 0.5 + 0.5).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        Task::Depth => {
            let max = sample
                .ground_truth
                .iter()
                .cloned()
                .fold(f64::MIN, f64::max)
                .max(1e-9);
            for (i, d) in sample.ground_truth.iter().enumerate() {
                let v = if sample.mask[i] {
                    (1.0 - d / max).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let byte = (v * 255.0).round() as u8;
                out.extend_from_slice(&[byte, byte, byte]);
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write one preview set: NNN.sample (container), NNN_image.pgm,
/// NNN_gt.ppm.
pub fn write_preview(dir: &Path, index: usize, sample: &Sample) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    sample::write_sample(&dir.join(format!("{index:03}.sample")), sample)?;
    write_pgm(&dir.join(format!("{index:03}_image.pgm")), sample)?;
    write_gt_ppm(&dir.join(format!("{index:03}_gt.ppm")), sample)?;
    Ok(())
}
