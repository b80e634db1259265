//! The decision vector `beta`: a flat array of reals with named blocks,
//! per-entry bounds, and a clipping rule. Every knob of the generation
//! pipeline lives here so the optimizers can treat it as one vector.

use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Bound { lo, hi }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: &'static str,
    pub start: usize,
    pub len: usize,
    pub bound: Bound,
}

/// Named block layout of a decision vector.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaLayout {
    pub name: &'static str,
    blocks: Vec<Block>,
    total: usize,
}

impl BetaLayout {
    fn from_blocks(name: &'static str, spec: &[(&'static str, usize, Bound)]) -> Self {
        let mut blocks = Vec::with_capacity(spec.len());
        let mut start = 0;
        for &(bname, len, bound) in spec {
            blocks.push(Block {
                name: bname,
                start,
                len,
                bound,
            });
            start += len;
        }
        BetaLayout {
            name,
            blocks,
            total: start,
        }
    }

    /// The 29-entry constructive-solid-geometry layout: rule probabilities
    /// followed by the distribution parameters of transforms and primitive
    /// sizes. Pair blocks are ordered (mean, variance); the translation and
    /// scaling blocks hold three means then three variances. Size and scale
    /// parameters are log-normal so sampled values stay positive; the box
    /// block is treated log-normally as well for the same reason.
    pub fn csg() -> Arc<Self> {
        const PROB: Bound = Bound { lo: 0.0, hi: 1.0 };
        const MEAN: Bound = Bound { lo: -5.0, hi: 5.0 };
        const VAR: Bound = Bound { lo: 1e-4, hi: 5.0 };
        const LOG_MEAN: Bound = Bound { lo: -3.0, hi: 2.0 };
        const LOG_VAR: Bound = Bound { lo: 1e-4, hi: 2.0 };
        Arc::new(Self::from_blocks(
            "csg29",
            &[
                ("primitive_probs", 4, PROB), // sphere, cube, cone, tetrahedron
                ("combine_probs", 2, PROB),   // union, subtract
                ("expand_prob", 1, PROB),
                ("translation_mean", 3, MEAN),
                ("translation_var", 3, VAR),
                ("scale_log_mean", 3, LOG_MEAN),
                ("scale_log_var", 3, LOG_VAR),
                ("sphere_radius", 2, LOG_MEAN),
                ("box_length", 2, LOG_MEAN),
                ("cone_radius", 2, LOG_MEAN),
                ("cone_height", 2, LOG_MEAN),
                ("tetra_length", 2, LOG_MEAN),
            ],
        ))
    }

    /// CSG layout extended with camera blocks: yaw and pitch each follow a
    /// three-component von Mises mixture (weights, means, concentrations).
    pub fn csg_with_render() -> Arc<Self> {
        const PROB: Bound = Bound { lo: 0.0, hi: 1.0 };
        const MEAN: Bound = Bound { lo: -5.0, hi: 5.0 };
        const VAR: Bound = Bound { lo: 1e-4, hi: 5.0 };
        const LOG_MEAN: Bound = Bound { lo: -3.0, hi: 2.0 };
        const ANGLE: Bound = Bound {
            lo: -std::f64::consts::PI,
            hi: std::f64::consts::PI,
        };
        const KAPPA: Bound = Bound { lo: 0.0, hi: 50.0 };
        Arc::new(Self::from_blocks(
            "csg_render",
            &[
                ("primitive_probs", 4, PROB),
                ("combine_probs", 2, PROB),
                ("expand_prob", 1, PROB),
                ("translation_mean", 3, MEAN),
                ("translation_var", 3, VAR),
                ("scale_log_mean", 3, LOG_MEAN),
                ("scale_log_var", 3, VAR),
                ("sphere_radius", 2, LOG_MEAN),
                ("box_length", 2, LOG_MEAN),
                ("cone_radius", 2, LOG_MEAN),
                ("cone_height", 2, LOG_MEAN),
                ("tetra_length", 2, LOG_MEAN),
                ("yaw_weights", 3, PROB),
                ("yaw_means", 3, ANGLE),
                ("yaw_kappas", 3, KAPPA),
                ("pitch_weights", 3, PROB),
                ("pitch_means", 3, ANGLE),
                ("pitch_kappas", 3, KAPPA),
            ],
        ))
    }

    /// Layout of the closed-form toy pipeline: blob center, width,
    /// amplitude, and the two tilt components of the normal field.
    pub fn toy() -> Arc<Self> {
        Arc::new(Self::from_blocks(
            "toy6",
            &[
                ("center_x", 1, Bound::new(-1.0, 1.0)),
                ("center_y", 1, Bound::new(-1.0, 1.0)),
                ("width", 1, Bound::new(0.05, 1.5)),
                ("amplitude", 1, Bound::new(0.1, 2.0)),
                ("tilt_x", 1, Bound::new(-1.5, 1.5)),
                ("tilt_y", 1, Bound::new(-1.5, 1.5)),
            ],
        ))
    }

    /// Unconstrained layout, handy for estimator tests on synthetic maps.
    pub fn free(dim: usize) -> Arc<Self> {
        let mut layout = Self::from_blocks("free", &[]);
        layout.blocks.push(Block {
            name: "values",
            start: 0,
            len: dim,
            bound: Bound::new(f64::NEG_INFINITY, f64::INFINITY),
        });
        layout.total = dim;
        Arc::new(layout)
    }

    pub fn by_name(name: &str) -> Option<Arc<Self>> {
        match name {
            "csg29" => Some(Self::csg()),
            "csg_render" => Some(Self::csg_with_render()),
            "toy6" => Some(Self::toy()),
            _ => None,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn has_block(&self, name: &str) -> bool {
        self.block(name).is_some()
    }

    fn bound_of(&self, index: usize) -> Bound {
        for b in &self.blocks {
            if index < b.start + b.len {
                return b.bound;
            }
        }
        unreachable!("index within total")
    }
}

/// The optimization variable: values plus the layout that names and
/// bounds them.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionVector {
    values: Vec<f64>,
    layout: Arc<BetaLayout>,
}

impl DecisionVector {
    pub fn new(layout: Arc<BetaLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::LayoutMismatch {
                layout: layout.name.to_string(),
                expected: layout.total(),
                got: values.len(),
            });
        }
        Ok(DecisionVector { values, layout })
    }

    pub fn layout(&self) -> &Arc<BetaLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entries of a named block; empty slice when the layout lacks it.
    pub fn block(&self, name: &str) -> &[f64] {
        match self.layout.block(name) {
            Some(b) => &self.values[b.start..b.start + b.len],
            None => &[],
        }
    }

    pub fn set_block(&mut self, name: &str, values: &[f64]) {
        let b = self
            .layout
            .block(name)
            .unwrap_or_else(|| panic!("layout {} has no block {name}", self.layout.name));
        assert_eq!(values.len(), b.len, "block {name} length");
        self.values[b.start..b.start + b.len].copy_from_slice(values);
    }

    /// Every entry clamped into its block's bound. Idempotent.
    pub fn clip_to_valid(&self) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.layout.bound_of(i).clamp(v))
            .collect();
        DecisionVector {
            values,
            layout: self.layout.clone(),
        }
    }

    /// Shifted copy; the caller decides whether to clip afterwards.
    pub fn shifted(&self, delta: &[f64]) -> Self {
        assert_eq!(delta.len(), self.values.len());
        let values = self
            .values
            .iter()
            .zip(delta)
            .map(|(v, d)| v + d)
            .collect();
        DecisionVector {
            values,
            layout: self.layout.clone(),
        }
    }
}
