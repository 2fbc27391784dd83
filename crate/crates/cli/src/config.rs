use std::fs;
use std::path::{Path, PathBuf};

use latentflow::baselines::DeConfig;
use latentflow::mld::{ModalityMask, TrainConfig};
use latentflow::msdrl::{EconParams, MdpConfig, PolicyTrainConfig};
use latentflow::sac::SacConfig;
use latentflow::scenario::{DataConfig, Mode};
use latentflow::seed::{derive_seed, stream};
use serde::{Deserialize, Serialize};

use crate::error::{Failure, Result};

/// Everything a run needs. Seeds of the individual stages are derived from
/// `data.root_seed` when the config is resolved, so one number pins a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    /// Encoder inputs. Deterministic runs default to the state maps alone,
    /// generalizable runs to every modality.
    pub modality: Option<ModalityMask>,
    pub mld: TrainConfig,
    pub sac: SacConfig,
    pub policy: PolicyTrainConfig,
    pub econ: EconParams,
    pub de: DeConfig,
    /// Schedules drawn by the random baseline in deterministic mode.
    pub random_schedules: usize,
    /// Unseen aquifers used to score generalizable policies.
    pub held_out: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            modality: None,
            mld: TrainConfig::default(),
            sac: SacConfig::default(),
            policy: PolicyTrainConfig::default(),
            econ: EconParams::default(),
            de: DeConfig::default(),
            random_schedules: 20,
            held_out: 20,
            output_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn generalizable() -> Self {
        Self {
            data: DataConfig::generalizable(),
            policy: PolicyTrainConfig {
                iterations: 600,
                eval_every: 3,
                ..PolicyTrainConfig::default()
            },
            ..Self::default()
        }
    }

    /// Parses JSON; syntax and schema errors carry their line and column.
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Failure::config(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Applies a seed override, derives stage seeds and validates.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.data.root_seed = s;
        }
        let root = self.data.root_seed;
        self.mld.seed = derive_seed(root, stream::MLD);
        self.policy.seed = derive_seed(root, stream::AGENT);
        self.de.seed = derive_seed(root, stream::DE);
        self.modality = Some(self.mask());
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.mld.validate()?;
        self.sac.validate()?;
        self.policy.validate()?;
        self.econ.validate()?;
        self.de.validate()?;
        if self.random_schedules == 0 || self.held_out == 0 {
            return Err(Failure::config(
                "random_schedules and held_out must be positive",
            ));
        }
        Ok(())
    }

    pub fn mask(&self) -> ModalityMask {
        self.modality.unwrap_or(match self.data.mode {
            Mode::Deterministic => ModalityMask::state_only(),
            Mode::Generalizable => ModalityMask::all(),
        })
    }

    pub fn mdp(&self) -> MdpConfig {
        MdpConfig::from_data(&self.data)
    }

    pub fn random_seed(&self) -> u64 {
        derive_seed(self.data.root_seed, stream::RANDOM)
    }

    /// Writes the resolved config as `config.json` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
