use super::{action_to_controls, reward, EconParams, MdpConfig, MsdrlError, Result};
use crate::mld::{EncoderInput, Mld};
use crate::reservoir::{Controls, SimConfig, SimState, Simulator};
use crate::scenario::Scenario;
use crate::Scalar;

/// A batch of episodes advanced in lockstep. Actions live in `[−1, 1]`.
pub trait ControlEnv {
    fn obs_dim(&self) -> usize;

    fn num_scenarios(&self) -> usize;

    /// Starts one episode per entry of `scenarios` and returns their
    /// observations, row-major.
    fn reset(&mut self, scenarios: &[usize]) -> Result<Vec<f64>>;

    /// Applies one action row per running episode and returns the next
    /// observations and the per-episode cash flow in USD.
    fn step(&mut self, actions: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Rolls episodes through a trained surrogate without touching the
/// simulator after the initial encoding.
pub struct LatentEnv<'a, S: Scalar> {
    mld: &'a Mld<S>,
    mdp: MdpConfig,
    econ: EconParams,
    initial: Vec<f64>,
    z: Vec<f64>,
}

impl<'a, S: Scalar> LatentEnv<'a, S> {
    /// Encodes the initial state of every scenario once.
    pub fn new(
        mld: &'a Mld<S>,
        scenarios: &[Scenario],
        sim: SimConfig,
        mdp: MdpConfig,
        econ: EconParams,
    ) -> Result<Self> {
        mdp.validate()?;
        econ.validate()?;
        if mdp.n_actions() != mld.arch.n_actions {
            return Err(MsdrlError::Config(format!(
                "surrogate takes {} controls, problem has {}",
                mld.arch.n_actions,
                mdp.n_actions()
            )));
        }
        let mut inputs = Vec::with_capacity(scenarios.len());
        for s in scenarios {
            let state = Simulator::new(s, sim)?.initial_state();
            inputs.push(EncoderInput::from_scenario(s, &state, &mld.norm));
        }
        let initial = mld.represent(&inputs)?;
        Ok(Self::from_latents(mld, initial, mdp, econ))
    }

    /// Uses precomputed initial latents, `[n, N_z]`.
    pub fn from_latents(
        mld: &'a Mld<S>,
        initial: Vec<f64>,
        mdp: MdpConfig,
        econ: EconParams,
    ) -> Self {
        Self {
            mld,
            mdp,
            econ,
            initial,
            z: Vec::new(),
        }
    }

    pub fn initial_latents(&self) -> &[f64] {
        &self.initial
    }
}

impl<S: Scalar> ControlEnv for LatentEnv<'_, S> {
    fn obs_dim(&self) -> usize {
        self.mld.arch.latent_dim
    }

    fn num_scenarios(&self) -> usize {
        self.initial.len() / self.mld.arch.latent_dim
    }

    fn reset(&mut self, scenarios: &[usize]) -> Result<Vec<f64>> {
        let nz = self.mld.arch.latent_dim;
        let n = self.num_scenarios();
        self.z.clear();
        for &i in scenarios {
            if i >= n {
                return Err(MsdrlError::Config(format!("scenario {i} out of {n}")));
            }
            self.z
                .extend_from_slice(&self.initial[i * nz..(i + 1) * nz]);
        }
        Ok(self.z.clone())
    }

    fn step(&mut self, actions: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let na = self.mdp.n_actions();
        let mut normalized = Vec::with_capacity(actions.len());
        let mut injection = Vec::new();
        for a in actions.chunks(na) {
            let physical = action_to_controls(a, &self.mdp.bounds);
            injection.push(self.mdp.injection(&physical));
            normalized.extend(self.mld.norm.normalize_controls(&physical));
        }
        let (d, z_next) = self.mld.step(&self.z, &normalized)?;
        let np = self.mld.arch.n_responses;
        let rates = self.mld.norm.denormalize_responses(&d);
        let rewards = rates
            .chunks(np)
            .zip(&injection)
            .map(|(q, &qc)| {
                reward(
                    qc,
                    q.iter().map(|v| v.max(0.0)).sum(),
                    &self.econ,
                    self.mdp.dt_days,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        self.z = z_next;
        Ok((self.z.clone(), rewards))
    }
}

/// The simulator behind the same interface. Observations are the raw
/// pressure and water-saturation maps.
pub struct SimulatorEnv {
    sims: Vec<Simulator>,
    mdp: MdpConfig,
    econ: EconParams,
    running: Vec<(usize, SimState)>,
}

impl SimulatorEnv {
    pub fn new(
        scenarios: &[Scenario],
        sim: SimConfig,
        mdp: MdpConfig,
        econ: EconParams,
    ) -> Result<Self> {
        mdp.validate()?;
        econ.validate()?;
        let sims = scenarios
            .iter()
            .map(|s| Simulator::new(s, sim))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            sims,
            mdp,
            econ,
            running: Vec::new(),
        })
    }

    fn observe(&self) -> Vec<f64> {
        self.running
            .iter()
            .flat_map(|(_, s)| s.pressure.iter().chain(&s.water_saturation).copied())
            .collect()
    }
}

impl ControlEnv for SimulatorEnv {
    fn obs_dim(&self) -> usize {
        self.sims
            .first()
            .map_or(0, |s| 2 * s.shape().0 * s.shape().1)
    }

    fn num_scenarios(&self) -> usize {
        self.sims.len()
    }

    fn reset(&mut self, scenarios: &[usize]) -> Result<Vec<f64>> {
        self.running.clear();
        for &i in scenarios {
            let sim = self.sims.get(i).ok_or_else(|| {
                MsdrlError::Config(format!("scenario {i} out of {}", self.sims.len()))
            })?;
            self.running.push((i, sim.initial_state()));
        }
        Ok(self.observe())
    }

    fn step(&mut self, actions: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let na = self.mdp.n_actions();
        let mut rewards = Vec::with_capacity(self.running.len());
        for ((i, state), a) in self.running.iter_mut().zip(actions.chunks(na)) {
            let physical = action_to_controls(a, &self.mdp.bounds);
            let controls = Controls::from_slice(&physical, self.mdp.n_injectors);
            let (next, resp, _) = self.sims[*i].step(state, &controls, self.mdp.dt_days)?;
            rewards.push(reward(
                self.mdp.injection(&physical),
                resp.total_brine(),
                &self.econ,
                self.mdp.dt_days,
            )?);
            *state = next;
        }
        Ok((self.observe(), rewards))
    }
}
