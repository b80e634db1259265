//! The generator interface shared by the real raycasting pipeline and the
//! closed-form toy pipeline, plus dataset construction.

use std::sync::Arc;

use rayon::prelude::*;

use crate::csg::{self, DEFAULT_DEPTH_CAP};
use crate::decision::{BetaLayout, DecisionVector};
use crate::error::{Error, Result};
use crate::render::{self, MarchParams};
use crate::rng::SeedString;
use crate::sample::{Sample, Task};

/// A deterministic sample generator: same (beta, seed) in, bit-identical
/// sample out. That purity is what makes central differences around beta
/// meaningful and lets probes run on any thread.
pub trait Pipeline: Sync + Send {
    fn layout(&self) -> &Arc<BetaLayout>;
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn task(&self) -> Task;
    fn generate(&self, beta: &DecisionVector, seed: SeedString) -> Sample;

    /// Exact Jacobian of the flattened sample with respect to beta, when
    /// the pipeline has one (the toy pipeline does; the raycaster is a
    /// black box). Row-major (flat_len x beta_len).
    fn analytic_jacobian(&self, _beta: &DecisionVector, _seed: SeedString) -> Result<Vec<f64>> {
        Err(Error::NoAnalyticJacobian)
    }
}

/// Evaluate the generator at `n` seeds. Element `i` depends only on
/// (beta, seeds[i]); the parallel map preserves order.
pub fn generate_dataset(
    pipeline: &dyn Pipeline,
    beta: &DecisionVector,
    seeds: &[SeedString],
) -> Vec<Sample> {
    seeds
        .par_iter()
        .map(|s| pipeline.generate(beta, *s))
        .collect()
}

/// Grammar sampling + raycasting, per the shape/render decomposition:
/// the seed splits into independent shape and render streams so that a
/// structural change in the sampled tree cannot reshuffle camera draws.
pub struct CsgPipeline {
    layout: Arc<BetaLayout>,
    pub width: usize,
    pub height: usize,
    pub task: Task,
    pub depth_cap: usize,
    pub march: MarchParams,
}

const SHAPE_STREAM_TAG: u64 = 0x5348_4150; // "SHAP"
const RENDER_STREAM_TAG: u64 = 0x5245_4e44; // "REND"

impl CsgPipeline {
    pub fn new(width: usize, height: usize, task: Task) -> Self {
        CsgPipeline {
            layout: BetaLayout::csg(),
            width,
            height,
            task,
            depth_cap: DEFAULT_DEPTH_CAP,
            march: MarchParams::default(),
        }
    }

    pub fn with_render_blocks(mut self) -> Self {
        self.layout = BetaLayout::csg_with_render();
        self
    }
}

impl Pipeline for CsgPipeline {
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
        self.task
    }

    fn generate(&self, beta: &DecisionVector, seed: SeedString) -> Sample {
        let tree = csg::sample_shape(beta, seed.child(SHAPE_STREAM_TAG), self.depth_cap);
        let cfg = render::sample_render(beta, seed.child(RENDER_STREAM_TAG));
        render::render(&tree, &cfg, &self.march, self.width, self.height, self.task)
    }
}
