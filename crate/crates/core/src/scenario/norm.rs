use serde::{Deserialize, Serialize};

/// Observed `[min, max]` of one feature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn empty() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    pub fn include(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut r = Self::empty();
        values.into_iter().for_each(|v| r.include(v));
        r
    }

    /// Maps `[min, max]` onto `[−1, 1]`; a degenerate range maps to 0.
    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        if self.max > self.min {
            2.0 * (x - self.min) / (self.max - self.min) - 1.0
        } else {
            0.0
        }
    }

    #[inline]
    pub fn denormalize(&self, y: f64) -> f64 {
        if self.max > self.min {
            self.min + (y + 1.0) * 0.5 * (self.max - self.min)
        } else {
            self.min
        }
    }
}

/// Per-feature ranges of every input and output group. Permeability enters
/// through its natural logarithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Pressure, water saturation.
    pub state: Vec<Range>,
    /// `ln k` per layer, then porosity per layer.
    pub static_fields: Vec<Range>,
    pub relperm: Vec<Range>,
    pub controls: Vec<Range>,
    pub responses: Vec<Range>,
}

impl NormStats {
    pub fn is_valid(&self) -> bool {
        [
            &self.state,
            &self.static_fields,
            &self.relperm,
            &self.controls,
            &self.responses,
        ]
        .iter()
        .all(|g| g.iter().all(|r| r.max >= r.min))
    }

    pub fn normalize_controls(&self, physical: &[f64]) -> Vec<f64> {
        physical
            .iter()
            .zip(&self.controls)
            .map(|(v, r)| r.normalize(*v))
            .collect()
    }

    pub fn denormalize_responses(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .zip(self.responses.iter().cycle())
            .map(|(v, r)| r.denormalize(*v))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn endpoints_and_midpoint() {
        let r = Range::new(-3.0, 5.0);
        assert_eq!(r.normalize(-3.0), -1.0);
        assert_eq!(r.normalize(5.0), 1.0);
        assert_eq!(r.normalize(1.0), 0.0);
        assert_eq!(Range::new(2.0, 2.0).normalize(7.0), 0.0);
    }

    #[test]
    fn round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let lo: f64 = rng.gen_range(-1e3..1e3);
            let r = Range::new(lo, lo + rng.gen_range(1e-3..1e3));
            let x: f64 = rng.gen_range(-2e3..2e3);
            assert!((r.denormalize(r.normalize(x)) - x).abs() < 1e-12 * x.abs().max(1.0));
        }
    }
}
