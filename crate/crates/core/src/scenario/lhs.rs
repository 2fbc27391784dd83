use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ScenarioError;

/// Latin hypercube design: `n` points, each row of length `bounds.len()`.
pub fn lhs_sample(
    seed: u64,
    n: usize,
    bounds: &[[f64; 2]],
) -> Result<Vec<Vec<f64>>, ScenarioError> {
    for b in bounds {
        if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
            return Err(ScenarioError::Param(format!(
                "bounds {b:?} must be finite with lower < upper"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![Vec::with_capacity(bounds.len()); n];
    let mut strata: Vec<usize> = (0..n).collect();
    for b in bounds {
        strata.shuffle(&mut rng);
        for (p, &s) in points.iter_mut().zip(&strata) {
            let u: f64 = rng.gen();
            p.push(b[0] + (s as f64 + u) / n as f64 * (b[1] - b[0]));
        }
    }
    Ok(points)
}
