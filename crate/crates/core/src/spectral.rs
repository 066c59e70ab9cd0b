//! Dominant-eigenvalue estimation for propagation operators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::SparseOperator;

/// Power-iteration estimate of the spectral radius of `op`.
///
/// Starts from a seeded strictly positive vector, which converges to the
/// Perron vector for the nonnegative operators built by this crate. Stops
/// after `iters` steps or once the estimate is stable to 1e-14 relative.
/// A zero operator yields 0.
pub fn estimate_spectral_radius(op: &SparseOperator, iters: usize, seed: u64) -> f64 {
    let n = op.dim();
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    normalize(&mut x);
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let mut y = op.spmv(&x).expect("square operator");
        let norm = l2(&y);
        if norm == 0.0 || !norm.is_finite() {
            return if norm == 0.0 { 0.0 } else { f64::INFINITY };
        }
        y.iter_mut().for_each(|v| *v /= norm);
        let converged = (norm - estimate).abs() <= 1e-14 * norm;
        estimate = norm;
        x = y;
        if converged {
            break;
        }
    }
    estimate
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalize(x: &mut [f64]) {
    let n = l2(x);
    x.iter_mut().for_each(|v| *v /= n);
}
