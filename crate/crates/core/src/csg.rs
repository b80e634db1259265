//! Shape programs: trees of union/subtract combinators over transformed
//! primitives, sampled from a probabilistic grammar and evaluated as
//! signed distance functions.
//!
//! The grammar expands a node into combine(child, transform(child)) with
//! the probability stored in `beta`, or closes it with a primitive whose
//! size parameters follow log-normal distributions, also from `beta`.
//! Each tree position draws from its own sub-stream keyed by the path from
//! the root, so a perturbed `beta` changes only the decisions it actually
//! influences; probe pairs in the finite-difference estimator need that
//! alignment to see signal instead of reshuffled noise.

use rand::Rng;

use crate::decision::DecisionVector;
use crate::rng::{self, SeedString};
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrimitiveKind {
    Sphere { radius: f64 },
    Cube { side: f64 },
    /// Equal-radius truncated cone, i.e. a capped cylinder along the y axis.
    TruncatedCone { radius: f64, height: f64 },
    Tetrahedron { edge: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineOp {
    Union,
    Subtract,
}

/// Rigid transform plus per-axis scaling, applied to a node's local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeTransform {
    pub translation: Vec3,
    pub rotation_axis: Vec3,
    pub rotation_angle: f64,
    pub scale: Vec3,
}

impl NodeTransform {
    pub fn identity() -> Self {
        NodeTransform {
            translation: Vec3::ZERO,
            rotation_axis: Vec3::new(0.0, 0.0, 1.0),
            rotation_angle: 0.0,
            scale: Vec3::splat(1.0),
        }
    }

    /// World point mapped into the node's local frame.
    fn to_local(&self, p: Vec3) -> Vec3 {
        let shifted = p - self.translation;
        let rotated = shifted.rotated(self.rotation_axis, -self.rotation_angle);
        rotated.div(self.scale)
    }

    fn min_scale(&self) -> f64 {
        self.scale.min_component()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CsgNode {
    Combine {
        op: CombineOp,
        left: Box<CsgTree>,
        right: Box<CsgTree>,
    },
    Primitive(PrimitiveKind),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsgTree {
    pub transform: NodeTransform,
    pub node: CsgNode,
}

impl CsgTree {
    pub fn leaf_count(&self) -> usize {
        match &self.node {
            CsgNode::Primitive(_) => 1,
            CsgNode::Combine { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match &self.node {
            CsgNode::Primitive(_) => 0,
            CsgNode::Combine { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_kinds(&self, out: &mut Vec<PrimitiveKind>) {
        match &self.node {
            CsgNode::Primitive(k) => out.push(*k),
            CsgNode::Combine { left, right, .. } => {
                left.leaf_kinds(out);
                right.leaf_kinds(out);
            }
        }
    }
}

/// Signed distance from `point` to the tree's surface: negative inside,
/// union = min, subtract = max(d_left, -d_right). With non-uniform scaling
/// the value is a conservative lower bound on the true distance (scaled by
/// the smallest axis factor), which is what sphere tracing needs.
pub fn sdf_eval(tree: &CsgTree, point: Vec3) -> f64 {
    let local = tree.transform.to_local(point);
    let d = match &tree.node {
        CsgNode::Primitive(kind) => primitive_sdf(*kind, local),
        CsgNode::Combine { op, left, right } => {
            let dl = sdf_eval(left, local);
            let dr = sdf_eval(right, local);
            match op {
                CombineOp::Union => dl.min(dr),
                CombineOp::Subtract => dl.max(-dr),
            }
        }
    };
    d * tree.transform.min_scale()
}

pub fn primitive_sdf(kind: PrimitiveKind, p: Vec3) -> f64 {
    match kind {
        PrimitiveKind::Sphere { radius } => p.length() - radius,
        PrimitiveKind::Cube { side } => {
            let h = side / 2.0;
            let q = p.abs() - Vec3::splat(h);
            q.max_scalar(0.0).length() + q.max_component().min(0.0)
        }
        PrimitiveKind::TruncatedCone { radius, height } => {
            let radial = (p.x * p.x + p.z * p.z).sqrt() - radius;
            let axial = p.y.abs() - height / 2.0;
            let outside = (radial.max(0.0).powi(2) + axial.max(0.0).powi(2)).sqrt();
            let inside = radial.max(axial).min(0.0);
            outside + inside
        }
        PrimitiveKind::Tetrahedron { edge } => {
            // regular tetrahedron on alternating cube corners k*(1,1,1)...
            // with edge 2*sqrt(2)*k; max over the four face planes
            let k = edge / (2.0 * 2.0f64.sqrt());
            let m = ((p.x + p.y).abs() - p.z).max((p.x - p.y).abs() + p.z);
            (m - k) / 3.0f64.sqrt()
        }
    }
}

/// Depth cap for grammar expansion; at the cap the expansion probability
/// is forced to zero so sampling always terminates.
pub const DEFAULT_DEPTH_CAP: usize = 6;

/// Sample a shape tree from the grammar parameters in `beta` (which must
/// already be clipped). Deterministic in (`beta`, `seed`).
pub fn sample_shape(beta: &DecisionVector, seed: SeedString, depth_cap: usize) -> CsgTree {
    sample_node(beta, seed, 1, 0, depth_cap, true)
}

/// `path` encodes the position in the tree as a binary heap index so each
/// node owns an independent, stable random stream.
fn sample_node(
    beta: &DecisionVector,
    seed: SeedString,
    path: u64,
    depth: usize,
    depth_cap: usize,
    is_root: bool,
) -> CsgTree {
    let mut rng = seed.child(path).rng();
    let expand_prob = if depth >= depth_cap {
        0.0
    } else {
        beta.block("expand_prob")[0].clamp(0.0, 1.0)
    };
    let expand = rng.gen::<f64>() < expand_prob;

    // grammar rule: the second child carries a sampled transform, the
    // first keeps its parent's frame
    let node = if expand {
        let op = match rng::categorical(&mut rng, beta.block("combine_probs")) {
            0 => CombineOp::Union,
            _ => CombineOp::Subtract,
        };
        let left = sample_node(beta, seed, path * 2, depth + 1, depth_cap, true);
        let right = sample_node(beta, seed, path * 2 + 1, depth + 1, depth_cap, false);
        CsgNode::Combine {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    } else {
        CsgNode::Primitive(sample_primitive(beta, &mut rng))
    };

    let transform = if is_root {
        NodeTransform::identity()
    } else {
        sample_transform(beta, &mut rng)
    };

    CsgTree { transform, node }
}

fn sample_primitive(beta: &DecisionVector, rng: &mut impl Rng) -> PrimitiveKind {
    match rng::categorical(rng, beta.block("primitive_probs")) {
        0 => {
            let p = beta.block("sphere_radius");
            PrimitiveKind::Sphere {
                radius: rng::log_normal(rng, p[0], p[1]),
            }
        }
        1 => {
            let p = beta.block("box_length");
            PrimitiveKind::Cube {
                side: rng::log_normal(rng, p[0], p[1]),
            }
        }
        2 => {
            let r = beta.block("cone_radius");
            let h = beta.block("cone_height");
            PrimitiveKind::TruncatedCone {
                radius: rng::log_normal(rng, r[0], r[1]),
                height: rng::log_normal(rng, h[0], h[1]),
            }
        }
        _ => {
            let p = beta.block("tetra_length");
            PrimitiveKind::Tetrahedron {
                edge: rng::log_normal(rng, p[0], p[1]),
            }
        }
    }
}

fn sample_transform(beta: &DecisionVector, rng: &mut impl Rng) -> NodeTransform {
    let tm = beta.block("translation_mean");
    let tv = beta.block("translation_var");
    let translation = Vec3::new(
        rng::normal(rng, tm[0], tv[0]),
        rng::normal(rng, tm[1], tv[1]),
        rng::normal(rng, tm[2], tv[2]),
    );
    // rotation is uniform over axis and angle; the layout has no block for it
    let rotation_axis = rng::unit_vector(rng);
    let rotation_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let sm = beta.block("scale_log_mean");
    let sv = beta.block("scale_log_var");
    let scale = Vec3::new(
        rng::log_normal(rng, sm[0], sv[0]),
        rng::log_normal(rng, sm[1], sv[1]),
        rng::log_normal(rng, sm[2], sv[2]),
    );
    NodeTransform {
        translation,
        rotation_axis,
        rotation_angle,
        scale,
    }
}
