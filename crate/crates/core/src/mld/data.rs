use super::{MldArch, MldError, Result};
use crate::reservoir::SimState;
use crate::scenario::{Dataset, EpisodeData, NormStats, Scenario, Split};

/// Normalized inputs of one encoder evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    /// `[2, ny, nx]`: pressure, water saturation
    pub state: Vec<f64>,
    /// `[2·nz, ny, nx]`: `ln k` per layer, then porosity per layer
    pub static_fields: Vec<f64>,
    pub relperm: [f64; 6],
}

impl EncoderInput {
    pub(crate) fn check(&self, arch: &MldArch) -> Result<()> {
        if self.state.len() != arch.state_len() {
            return Err(MldError::Data(format!(
                "state has {} values, grid needs {}",
                self.state.len(),
                arch.state_len()
            )));
        }
        if arch.mask.static_fields && self.static_fields.len() != arch.static_len() {
            return Err(MldError::Data(format!(
                "static fields have {} values, grid needs {}",
                self.static_fields.len(),
                arch.static_len()
            )));
        }
        Ok(())
    }

    /// Normalizes a simulator state and the aquifer it lives in.
    pub fn from_scenario(scenario: &Scenario, state: &SimState, norm: &NormStats) -> Self {
        let cols = scenario.grid.columns();
        let norm_state = |k: usize, v: &[f64]| {
            v.iter()
                .map(|&x| norm.state[k].normalize(x))
                .collect::<Vec<_>>()
        };
        let mut s = norm_state(0, &state.pressure);
        s.extend(norm_state(1, &state.water_saturation));
        Self {
            state: s,
            static_fields: normalize_static(
                norm,
                scenario.grid.nz,
                cols,
                scenario.permeability.iter().copied(),
                scenario.porosity.iter().copied(),
            ),
            relperm: normalize_relperm(norm, scenario.relperm.to_array()),
        }
    }
}

fn normalize_static(
    norm: &NormStats,
    nz: usize,
    cols: usize,
    perm: impl Iterator<Item = f64>,
    poro: impl Iterator<Item = f64>,
) -> Vec<f64> {
    let mut out: Vec<f64> = perm
        .enumerate()
        .map(|(i, k)| norm.static_fields[i / cols].normalize(k.ln()))
        .collect();
    out.extend(
        poro.enumerate()
            .map(|(i, p)| norm.static_fields[nz + i / cols].normalize(p)),
    );
    out
}

fn normalize_relperm(norm: &NormStats, rp: [f64; 6]) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (o, (v, r)) in out.iter_mut().zip(rp.iter().zip(&norm.relperm)) {
        *o = r.normalize(*v);
    }
    out
}

/// One episode in network units.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedEpisode {
    pub static_fields: Vec<f64>,
    pub relperm: [f64; 6],
    /// `[H+1, 2, ny, nx]`
    pub states: Vec<f64>,
    /// `[H, N_a]`
    pub actions: Vec<f64>,
    /// `[H, N_d]`
    pub responses: Vec<f64>,
    /// `[H, N_d]` in m³/day
    pub physical_responses: Vec<f64>,
    pub horizon: usize,
}

impl PreparedEpisode {
    pub fn from_episode(e: &EpisodeData, norm: &NormStats, nz: usize, horizon: usize) -> Self {
        let cols = e.permeability.len() / nz.max(1);
        let n_a = norm.controls.len();
        let n_d = norm.responses.len();
        let states = e
            .states
            .chunks(cols)
            .enumerate()
            .flat_map(|(k, c)| {
                c.iter()
                    .map(move |&v| norm.state[k % 2].normalize(v as f64))
            })
            .collect();
        let rp = e.relperm.map(|v| v as f64);
        Self {
            static_fields: normalize_static(
                norm,
                nz,
                cols,
                e.permeability.iter().map(|&v| v as f64),
                e.porosity.iter().map(|&v| v as f64),
            ),
            relperm: normalize_relperm(norm, rp),
            states,
            actions: e
                .schedule
                .iter()
                .enumerate()
                .map(|(i, &v)| norm.controls[i % n_a].normalize(v as f64))
                .collect(),
            responses: e
                .responses
                .iter()
                .enumerate()
                .map(|(i, &v)| norm.responses[i % n_d].normalize(v as f64))
                .collect(),
            physical_responses: e.responses.iter().map(|&v| v as f64).collect(),
            horizon,
        }
    }

    pub fn state_at(&self, t: usize) -> &[f64] {
        let n = self.states.len() / (self.horizon + 1);
        &self.states[t * n..(t + 1) * n]
    }

    pub fn encoder_input(&self, t: usize) -> EncoderInput {
        EncoderInput {
            state: self.state_at(t).to_vec(),
            static_fields: self.static_fields.clone(),
            relperm: self.relperm,
        }
    }

    /// Normalized controls of every step, one row per step.
    pub fn action_rows(&self) -> Vec<Vec<f64>> {
        let n_a = self.actions.len() / self.horizon.max(1);
        self.actions
            .chunks(n_a.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }
}

/// Episodes of `split` normalized with the dataset's training statistics.
pub fn prepare_dataset(ds: &Dataset, split: Split) -> Result<Vec<PreparedEpisode>> {
    let norm = ds
        .norm_stats()
        .ok_or_else(|| MldError::Data("dataset has no training split to normalize with".into()))?;
    let cfg = ds.config();
    Ok(ds
        .split(split)
        .into_iter()
        .map(|e| PreparedEpisode::from_episode(e, norm, cfg.grid.nz, cfg.horizon))
        .collect())
}
