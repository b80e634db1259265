//! Finite-difference utilities for verifying gradients.
//!
//! These are the independent oracles the test suites compare analytic
//! gradients against; they deliberately share no code with `derive`.

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let plus = f(&probe);
        probe[i] = point[i] - step;
        let minus = f(&probe);
        probe[i] = point[i];
        grads.push((plus - minus) / (2.0 * step));
    }
    grads
}

/// Relative agreement check with an absolute floor: values below
/// `max(1, |a|, |b|)` in magnitude are compared absolutely at `tol`.
pub fn agree(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1.0f64.max(a.abs()).max(b.abs())
}

/// Worst-case disagreement between two gradient vectors, normalized the
/// same way as `agree`.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / 1.0f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

/// Cosine similarity of two flattened vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_on_known_function() {
        // f(x, y) = x^2 y + sin(y)
        let f = |v: &[f64]| v[0] * v[0] * v[1] + v[1].sin();
        let g = finite_diff_grad(f, &[1.5, 0.8], 1e-6);
        assert!(agree(g[0], 2.0 * 1.5 * 0.8, 1e-7));
        assert!(agree(g[1], 1.5 * 1.5 + 0.8f64.cos(), 1e-7));
    }

    #[test]
    fn cosine_of_parallel_vectors() {
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).abs() < 1e-12);
    }
}
