use serde::{Deserialize, Serialize};

use super::ScenarioError;

/// Modified Brooks–Corey curves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelPerm {
    pub krg0: f64,
    pub krw0: f64,
    pub sgr: f64,
    pub swc: f64,
    pub ng: f64,
    pub nw: f64,
}

impl Default for RelPerm {
    fn default() -> Self {
        Self {
            krg0: 0.7,
            krw0: 0.8,
            sgr: 0.1,
            swc: 0.2,
            ng: 2.0,
            nw: 2.5,
        }
    }
}

impl RelPerm {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.sgr >= 0.0 && self.swc >= 0.0 && self.sgr + self.swc < 1.0) {
            return Err(ScenarioError::Param(format!(
                "residual saturations Swc={} Sgr={} invalid",
                self.swc, self.sgr
            )));
        }
        if !unit(self.krg0) || !unit(self.krw0) {
            return Err(ScenarioError::Param(format!(
                "endpoints krg0={} krw0={} must lie in (0,1]",
                self.krg0, self.krw0
            )));
        }
        if !(self.ng >= 1.0 && self.nw >= 1.0) {
            return Err(ScenarioError::Param(format!(
                "exponents ng={} nw={} must be ≥ 1",
                self.ng, self.nw
            )));
        }
        Ok(())
    }

    /// Effective saturation clamped to `[0, 1]`.
    #[inline]
    pub fn effective(&self, sw: f64) -> f64 {
        ((sw - self.swc) / (1.0 - self.swc - self.sgr)).clamp(0.0, 1.0)
    }

    /// `(krw, krg)` at water saturation `sw`.
    #[inline]
    pub fn eval(&self, sw: f64) -> (f64, f64) {
        let se = self.effective(sw);
        (
            self.krw0 * se.powf(self.nw),
            self.krg0 * (1.0 - se).powf(self.ng),
        )
    }

    pub fn checked_eval(&self, sw: f64) -> Result<(f64, f64), ScenarioError> {
        self.validate()?;
        if !(0.0..=1.0).contains(&sw) {
            return Err(ScenarioError::Param(format!("Sw={sw} outside [0,1]")));
        }
        Ok(self.eval(sw))
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.krg0, self.krw0, self.sgr, self.swc, self.ng, self.nw]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            krg0: v[0],
            krw0: v[1],
            sgr: v[2],
            swc: v[3],
            ng: v[4],
            nw: v[5],
        }
    }

    /// Water fractional flow `λw / (λw + λg)`.
    #[inline]
    pub fn water_fractional_flow(&self, sw: f64, mu_w: f64, mu_g: f64) -> f64 {
        let (krw, krg) = self.eval(sw);
        let lw = krw / mu_w;
        let lt = lw + krg / mu_g;
        if lt > 0.0 {
            lw / lt
        } else {
            0.0
        }
    }
}
