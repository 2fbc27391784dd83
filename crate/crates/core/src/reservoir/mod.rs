//! Immiscible, incompressible two-phase (gas/brine) flow on an areal grid.
//!
//! Units: pressure in bar, time in days, volumes in m³, permeability in mD,
//! viscosity in cP.

mod banded;
mod sim;

pub use banded::BandedSpd;
pub use sim::{mass_balance_residual, well_index, Simulator, StepStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Converts `mD·m²/m · bar / cP` to `m³/day`.
pub const DARCY: f64 = 9.869233e-16 * 1e5 * 86400.0 / 1e-3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("solver error: {0}")]
    Solver(String),
    #[error("stability error: {substeps} saturation substeps exceed the cap of {cap}")]
    Stability { substeps: usize, cap: usize },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SimError>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub datum_depth: f64,
}

impl GridSpec {
    /// 24×24 single-layer grid with the full-scale lateral resolution and the
    /// full-scale total thickness.
    pub fn desk() -> Self {
        Self {
            nx: 24,
            ny: 24,
            nz: 1,
            dx: 60.0,
            dy: 60.0,
            dz: 21.0,
            datum_depth: 1411.7,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            nx: 60,
            ny: 60,
            nz: 3,
            dx: 60.0,
            dy: 60.0,
            dz: 7.0,
            datum_depth: 1411.7,
        }
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Cells of the areal (layer-collapsed) grid.
    pub fn columns(&self) -> usize {
        self.nx * self.ny
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(SimError::Geometry(format!(
                "grid sizes must be positive, got {}×{}×{}",
                self.nx, self.ny, self.nz
            )));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dz > 0.0) {
            return Err(SimError::Geometry("cell sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WellKind {
    Injector,
    Producer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellSpec {
    pub kind: WellKind,
    pub i: usize,
    pub j: usize,
    pub wellbore_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellLayout {
    pub injectors: Vec<WellSpec>,
    pub producers: Vec<WellSpec>,
}

impl WellLayout {
    /// One injector at the centre and four producers inset from the corners.
    pub fn center_and_corners(grid: &GridSpec) -> Self {
        let w = |kind, i, j| WellSpec {
            kind,
            i,
            j,
            wellbore_radius: 0.1,
        };
        let mx = (grid.nx / 8).min(grid.nx - 1);
        let my = (grid.ny / 8).min(grid.ny - 1);
        let (hx, hy) = (grid.nx - 1 - mx, grid.ny - 1 - my);
        Self {
            injectors: vec![w(WellKind::Injector, grid.nx / 2, grid.ny / 2)],
            producers: vec![
                w(WellKind::Producer, mx, my),
                w(WellKind::Producer, hx, my),
                w(WellKind::Producer, mx, hy),
                w(WellKind::Producer, hx, hy),
            ],
        }
    }

    pub fn num_controls(&self) -> usize {
        self.injectors.len() + self.producers.len()
    }
}

/// Controls for one step: injector surface rates then producer BHPs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub injector_rates: Vec<f64>,
    pub producer_bhps: Vec<f64>,
}

impl Controls {
    pub fn uniform(n_inj: usize, rate: f64, n_prod: usize, bhp: f64) -> Self {
        Self {
            injector_rates: vec![rate; n_inj],
            producer_bhps: vec![bhp; n_prod],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.injector_rates
            .iter()
            .chain(&self.producer_bhps)
            .copied()
            .collect()
    }

    pub fn from_slice(values: &[f64], n_inj: usize) -> Self {
        Self {
            injector_rates: values[..n_inj].to_vec(),
            producer_bhps: values[n_inj..].to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    /// Surface injection rate, m³/day.
    pub injector_rate: [f64; 2],
    /// Producer bottom-hole pressure, bar.
    pub producer_bhp: [f64; 2],
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self {
            injector_rate: [5.0e5, 1.5e6],
            producer_bhp: [150.0, 170.0],
        }
    }
}

impl ControlBounds {
    /// Per-action `[lo, hi]`, injectors first.
    pub fn per_action(&self, n_inj: usize, n_prod: usize) -> Vec<[f64; 2]> {
        let mut out = vec![self.injector_rate; n_inj];
        out.extend(std::iter::repeat(self.producer_bhp).take(n_prod));
        out
    }

    pub fn check(&self, c: &Controls) -> Result<(), SimError> {
        let inside = |v: f64, b: [f64; 2]| v >= b[0] && v <= b[1];
        if let Some(r) = c
            .injector_rates
            .iter()
            .find(|&&r| !inside(r, self.injector_rate))
        {
            return Err(SimError::Config(format!(
                "injection rate {r} outside {:?}",
                self.injector_rate
            )));
        }
        if let Some(p) = c
            .producer_bhps
            .iter()
            .find(|&&p| !inside(p, self.producer_bhp))
        {
            return Err(SimError::Config(format!(
                "BHP {p} outside {:?}",
                self.producer_bhp
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidProps {
    pub water_viscosity: f64,
    pub gas_viscosity: f64,
    /// Reservoir volume occupied per unit of injected surface volume.
    pub gas_fvf: f64,
}

impl Default for FluidProps {
    fn default() -> Self {
        Self {
            water_viscosity: 0.5,
            gas_viscosity: 0.06,
            gas_fvf: 5e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub fluid: FluidProps,
    pub initial_pressure: f64,
    pub cfl: f64,
    pub max_substeps: usize,
    /// Longest interval between pressure updates inside one step.
    pub max_pressure_step_days: f64,
    pub bounds: ControlBounds,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            fluid: FluidProps::default(),
            initial_pressure: 175.16,
            cfl: 0.5,
            max_substeps: 10_000,
            max_pressure_step_days: 36.5,
            bounds: ControlBounds::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Row-major `[ny, nx]`, bar.
    pub pressure: Vec<f64>,
    pub water_saturation: Vec<f64>,
    pub time: f64,
}

impl SimState {
    pub fn gas_saturation(&self) -> Vec<f64> {
        self.water_saturation.iter().map(|s| 1.0 - s).collect()
    }
}

/// Step-averaged well rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowResponse {
    /// Brine production per producer, m³/day.
    pub brine_rates: Vec<f64>,
    /// Gas production per producer, reservoir m³/day.
    pub gas_rates: Vec<f64>,
    /// Surface CO₂ injection per injector, m³/day.
    pub co2_injection_rates: Vec<f64>,
}

impl FlowResponse {
    pub fn total_brine(&self) -> f64 {
        self.brine_rates.iter().sum()
    }

    pub fn total_injection(&self) -> f64 {
        self.co2_injection_rates.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<SimState>,
    pub responses: Vec<FlowResponse>,
    pub dt_days: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.responses.len()
    }
}
