//! Deterministic seeding and the sampling distributions used by the
//! generator: every random draw in the crate flows through a `SeedString`
//! so that re-running with the same seeds is bit-identical, and so that
//! finite-difference probe pairs can share the exact same randomness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::vec3::Vec3;

/// A (stream, counter) pair identifying one deterministic random stream.
///
/// The pair is mixed into a ChaCha8 key, so streams with different ids or
/// counters are statistically independent while remaining reproducible
/// across platforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedString {
    pub stream: u64,
    pub counter: u64,
}

impl SeedString {
    pub fn new(stream: u64, counter: u64) -> Self {
        SeedString { stream, counter }
    }

    /// Derive a child stream; used to split one seed into independent
    /// sub-streams (e.g. shape draws vs. render draws of one sample).
    pub fn child(self, tag: u64) -> SeedString {
        SeedString {
            stream: mix64(self.stream ^ mix64(tag)),
            counter: self.counter,
        }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = mix64(self.stream) ^ mix64(self.counter.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for chunk in key.chunks_mut(8) {
            state = mix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

/// SplitMix64 finalizer; good bit diffusion for deriving sub-seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Normal draw parametrized by mean and *variance*.
pub fn normal(rng: &mut impl Rng, mean: f64, variance: f64) -> f64 {
    let std = variance.max(0.0).sqrt();
    mean + std * standard_normal(rng)
}

/// Log-normal draw parametrized by the mean and *variance* of the log.
pub fn log_normal(rng: &mut impl Rng, log_mean: f64, log_variance: f64) -> f64 {
    normal(rng, log_mean, log_variance).exp()
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// Categorical draw over unnormalized nonnegative weights. Weights are
/// renormalized here rather than stored normalized; an all-zero weight
/// vector falls back to uniform.
pub fn categorical(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let u: f64 = rng.gen();
    if total <= 0.0 {
        return ((u * weights.len() as f64) as usize).min(weights.len() - 1);
    }
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w.max(0.0) / total;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Von Mises draw with mean `mu` and concentration `kappa`, via the
/// Best–Fisher rejection scheme. Returns an angle in (mu - pi, mu + pi].
pub fn von_mises(rng: &mut impl Rng, mu: f64, kappa: f64) -> f64 {
    use std::f64::consts::PI;
    if kappa < 1e-9 {
        return wrap_angle(mu + rng.gen_range(-PI..PI));
    }
    let b = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (b - (2.0 * b).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.gen();
            let angle = if u3 > 0.5 { f.acos() } else { -f.acos() };
            return wrap_angle(mu + angle);
        }
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Mixture of von Mises components; parameters stored unnormalized like
/// every other probability block.
#[derive(Clone, Debug)]
pub struct VonMisesMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub kappas: Vec<f64>,
}

impl VonMisesMixture {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let k = categorical(rng, &self.weights);
        von_mises(rng, self.means[k], self.kappas[k].max(0.0))
    }
}

/// Uniform direction on the unit sphere.
pub fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            standard_normal(rng),
            standard_normal(rng),
            standard_normal(rng),
        );
        let len = v.length();
        if len > 1e-9 {
            return v * (1.0 / len);
        }
    }
}
