//! Meta-optimization of procedural 3D training-data generators.
//!
//! The pipeline under optimization maps a real decision vector `beta`
//! through a stochastic shape grammar and raycaster to training samples;
//! a small network is trained on those samples and scored on a held-out
//! validation set. The outer loop follows the validation loss back to
//! `beta` by chaining two gradients: an analytical one obtained by
//! backpropagating through the unrolled SGD steps, and a finite-difference
//! Jacobian of the black-box generator estimated along random Gaussian
//! directions. Black-box baselines (random search over `beta`, fixed
//! random `beta`) share the same trainer and generator for controlled
//! comparisons.

pub mod autodiff;
pub mod baselines;
pub mod csg;
pub mod decision;
pub mod error;
pub mod fd;
pub mod gradcheck;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod sample;
pub mod tensor;
pub mod toy;
pub mod train;
pub mod vec3;

pub use autodiff::{Bindings, EvalCache, Expr, Tape};
pub use decision::{BetaLayout, DecisionVector};
pub use error::{Error, Result};
pub use rng::SeedString;
pub use sample::Sample;
pub use tensor::Tensor;
