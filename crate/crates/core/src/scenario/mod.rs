//! Aquifer realizations, control schedules, normalization and datasets.

mod dataset;
mod field;
mod lhs;
mod norm;
mod relperm;

pub use dataset::{
    generate_dataset, DataConfig, Dataset, EpisodeData, EpisodeRecord, Failure, FieldConfig,
    Layout, Manifest, Mode, RangeReport, RelPermRanges, Split,
};
pub use field::{gaussian_field, porosity_from_perm, sample_log_perm_field};
pub use lhs::lhs_sample;
pub use norm::{NormStats, Range};
pub use relperm::RelPerm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reservoir::{ControlBounds, Controls, GridSpec, SimError, WellLayout};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("invalid dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One aquifer realization. Fields are stored per cell as `[nz, ny, nx]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: GridSpec,
    /// mD
    pub permeability: Vec<f64>,
    pub porosity: Vec<f64>,
    pub relperm: RelPerm,
    pub wells: WellLayout,
    pub seed: u64,
}

impl Scenario {
    /// Homogeneous realization with the default well layout.
    pub fn homogeneous(grid: GridSpec, perm: f64, poro: f64, relperm: RelPerm) -> Self {
        let n = grid.cells();
        Self {
            grid,
            permeability: vec![perm; n],
            porosity: vec![poro; n],
            relperm,
            wells: WellLayout::center_and_corners(&grid),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.grid.validate()?;
        let n = self.grid.cells();
        if self.permeability.len() != n || self.porosity.len() != n {
            return Err(ScenarioError::Param(format!(
                "fields have {} / {} values for {n} cells",
                self.permeability.len(),
                self.porosity.len()
            )));
        }
        if let Some(k) = self
            .permeability
            .iter()
            .find(|k| !(**k > 0.0 && k.is_finite()))
        {
            return Err(ScenarioError::Param(format!(
                "permeability {k} must be positive"
            )));
        }
        if let Some(p) = self.porosity.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(ScenarioError::Param(format!(
                "porosity {p} must lie in (0,1)"
            )));
        }
        self.relperm.validate()?;
        for w in self.wells.injectors.iter().chain(&self.wells.producers) {
            if w.i >= self.grid.nx || w.j >= self.grid.ny {
                return Err(ScenarioError::Param(format!(
                    "well at ({}, {}) outside grid",
                    w.i, w.j
                )));
            }
        }
        Ok(())
    }
}

/// Controls for every step of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub steps: Vec<Controls>,
}

impl ControlSchedule {
    pub fn constant(controls: Controls, horizon: usize) -> Self {
        Self {
            steps: vec![controls; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Row-major `[H, N_a]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.steps.iter().flat_map(Controls::to_vec).collect()
    }

    pub fn from_flat(values: &[f64], n_inj: usize, n_actions: usize) -> Self {
        Self {
            steps: values
                .chunks(n_actions)
                .map(|c| Controls::from_slice(c, n_inj))
                .collect(),
        }
    }

    pub fn check(&self, bounds: &ControlBounds) -> Result<(), SimError> {
        self.steps.iter().try_for_each(|c| bounds.check(c))
    }
}
