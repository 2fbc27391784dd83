use std::collections::BTreeMap;

use super::params::ParamStore;
use super::{Result, Tensor, TensorError};

/// `|analytic − numeric| / max(1e-8, |numeric|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

/// Compares analytic gradients with central differences.
///
/// `eval` returns the scalar value at a point together with its analytic
/// gradient keyed like the store. At most `max_per_tensor` evenly spaced
/// elements of every tensor are probed (`None` probes all of them). Returns
/// the largest relative error found.
pub fn grad_check<F>(
    eval: F,
    point: &ParamStore<f64>,
    epsilon: f64,
    max_per_tensor: Option<usize>,
) -> Result<f64>
where
    F: Fn(&ParamStore<f64>) -> Result<(f64, BTreeMap<String, Tensor<f64>>)>,
{
    let (_, analytic) = eval(point)?;
    let mut worst = 0.0f64;
    let mut probe = point.clone();
    let names: Vec<String> = point.names().map(str::to_string).collect();
    for name in names {
        let grad = analytic
            .get(&name)
            .ok_or_else(|| TensorError::Usage(format!("no analytic gradient for {name}")))?;
        let n = grad.len();
        let count = max_per_tensor.map_or(n, |m| m.min(n));
        for j in 0..count {
            let i = if count == n { j } else { j * n / count };
            let orig = probe.value(&name)?.data()[i];
            probe.value_mut(&name)?.data_mut()[i] = orig + epsilon;
            let (plus, _) = eval(&probe)?;
            probe.value_mut(&name)?.data_mut()[i] = orig - epsilon;
            let (minus, _) = eval(&probe)?;
            probe.value_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    #[test]
    fn linear_scalar_is_exact() {
        let mut point = ParamStore::new();
        point.insert("w", Tensor::scalar(1.7)).unwrap();
        let x = 2.5;
        let err = grad_check(
            |p| {
                let mut g = Graph::new();
                let w = g.param(p, "w")?;
                let y = g.scale(w, x);
                let grads = g.backward(y)?;
                Ok((g.value(y).item(), grads.for_store(p)))
            },
            &point,
            1e-5,
            None,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }
}
