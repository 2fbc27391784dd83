//! Multimodal latent dynamics: an encoder `R`, a latent transition `T` and a
//! response head `P`, all trained jointly.

mod data;
mod loss;
mod metrics;
mod train;

pub use data::{prepare_dataset, EncoderInput, PreparedEpisode};
pub use loss::{augmented_loss, LossGraph, LossValues};
pub use metrics::{case_r2, evaluate, percentile, r2_rmse, Evaluation};
pub use train::{train_mld, EpochLog, TrainConfig, TrainOutcome};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::scenario::{DataConfig, NormStats, ScenarioError};
use crate::tensor::{
    init_params, read_checkpoint, write_checkpoint, Binding, Graph, LayerSpec, Network, ParamStore,
    Tensor, TensorError, Var,
};

#[derive(Debug, Error)]
pub enum MldError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MldError> = std::result::Result<T, E>;

/// Encoder branches in use. Pressure and saturation are always encoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    /// Permeability and porosity.
    pub static_fields: bool,
    /// Relative-permeability parameters.
    pub relperm: bool,
}

impl ModalityMask {
    pub fn state_only() -> Self {
        Self {
            static_fields: false,
            relperm: false,
        }
    }

    pub fn all() -> Self {
        Self {
            static_fields: true,
            relperm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MldArch {
    pub ny: usize,
    pub nx: usize,
    pub nz: usize,
    pub n_actions: usize,
    pub n_responses: usize,
    pub latent_dim: usize,
    /// Filters of each stride-2 convolution in an image branch.
    pub conv_channels: Vec<usize>,
    /// Width of the dense layer closing each image branch.
    pub branch_features: usize,
    pub relperm_hidden: usize,
    /// Hidden width of the transition and prediction networks.
    pub hidden: usize,
    pub mask: ModalityMask,
}

impl MldArch {
    /// Desk-sized networks for a dataset configuration.
    pub fn for_data(cfg: &DataConfig, mask: ModalityMask) -> Self {
        Self {
            ny: cfg.grid.ny,
            nx: cfg.grid.nx,
            nz: cfg.grid.nz,
            n_actions: cfg.num_actions(),
            n_responses: cfg.wells().producers.len(),
            latent_dim: 64,
            conv_channels: vec![16, 32, 32],
            branch_features: 128,
            relperm_hidden: 64,
            hidden: 256,
            mask,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0
            || self.n_actions == 0
            || self.n_responses == 0
            || self.conv_channels.is_empty()
        {
            return Err(MldError::Config("network sizes must be positive".into()));
        }
        self.state_branch()
            .output_shape(&[1, 2, self.ny, self.nx])?;
        if self.mask.static_fields {
            self.static_branch()
                .output_shape(&[1, 2 * self.nz, self.ny, self.nx])?;
        }
        Ok(())
    }

    fn image_branch(&self, prefix: &str, in_channels: usize) -> Network {
        let mut layers = Vec::new();
        let (mut c, mut h, mut w) = (in_channels, self.ny, self.nx);
        for &out in &self.conv_channels {
            let l = LayerSpec::conv(c, out, h, w);
            let geom = l.geometry().unwrap();
            layers.push(l);
            layers.push(LayerSpec::ReLU);
            c = out;
            if !geom.is_valid() {
                // left for output_shape to report
                break;
            }
            h = geom.out_h();
            w = geom.out_w();
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::FullyConnected {
            inputs: c * h * w,
            outputs: self.branch_features,
        });
        layers.push(LayerSpec::ReLU);
        Network::new(prefix, layers)
    }

    pub fn state_branch(&self) -> Network {
        self.image_branch("rep.state", 2)
    }

    pub fn static_branch(&self) -> Network {
        self.image_branch("rep.static", 2 * self.nz)
    }

    pub fn relperm_branch(&self) -> Network {
        Network::mlp(
            "rep.relperm",
            &[6, self.relperm_hidden, self.relperm_hidden],
            Some(LayerSpec::ReLU),
        )
    }

    fn encoder_features(&self) -> usize {
        let mut f = self.branch_features;
        if self.mask.static_fields {
            f += self.branch_features;
        }
        if self.mask.relperm {
            f += self.relperm_hidden;
        }
        f
    }

    pub fn head(&self) -> Network {
        Network::mlp(
            "rep.head",
            &[self.encoder_features(), self.latent_dim],
            Some(LayerSpec::Tanh),
        )
    }

    pub fn transition(&self) -> Network {
        Network::mlp(
            "trans",
            &[
                self.latent_dim + self.n_actions,
                self.hidden,
                self.latent_dim,
            ],
            Some(LayerSpec::Tanh),
        )
    }

    pub fn prediction(&self) -> Network {
        Network::mlp(
            "pred",
            &[
                self.latent_dim + self.n_actions,
                self.hidden,
                self.n_responses,
            ],
            Some(LayerSpec::Tanh),
        )
    }

    pub fn networks(&self) -> Vec<Network> {
        let mut nets = vec![self.state_branch()];
        if self.mask.static_fields {
            nets.push(self.static_branch());
        }
        if self.mask.relperm {
            nets.push(self.relperm_branch());
        }
        nets.extend([self.head(), self.transition(), self.prediction()]);
        nets
    }

    pub fn init<S: Scalar>(&self, seed: u64) -> Result<ParamStore<S>> {
        self.validate()?;
        let mut store = ParamStore::new();
        for (i, net) in self.networks().iter().enumerate() {
            store.merge(init_params(net, seed.wrapping_add(i as u64))?)?;
        }
        Ok(store)
    }

    pub fn state_len(&self) -> usize {
        2 * self.ny * self.nx
    }

    pub fn static_len(&self) -> usize {
        2 * self.nz * self.ny * self.nx
    }

    /// Latent states for `rows` encoder evaluations. Image inputs hold one
    /// entry per row; static inputs hold one entry per episode and
    /// `episode_of[r]` selects the episode of row `r`.
    pub fn encode<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        states: Var,
        statics: Option<Var>,
        relperms: Option<Var>,
        episode_of: &[usize],
        binding: Binding,
    ) -> Result<Var> {
        let mut parts = vec![self.state_branch().forward(g, store, states, binding)?];
        if self.mask.static_fields {
            let s = statics
                .ok_or_else(|| MldError::Data("encoder needs permeability and porosity".into()))?;
            let f = self.static_branch().forward(g, store, s, binding)?;
            parts.push(g.gather_rows(f, episode_of)?);
        }
        if self.mask.relperm {
            let r = relperms
                .ok_or_else(|| MldError::Data("encoder needs relative permeability".into()))?;
            let f = self.relperm_branch().forward(g, store, r, binding)?;
            parts.push(g.gather_rows(f, episode_of)?);
        }
        let joined = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_cols(&parts)?
        };
        Ok(self.head().forward(g, store, joined, binding)?)
    }

    /// One latent step: `(P(z, a), T(z, a))`.
    pub fn step<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        z: Var,
        a: Var,
        binding: Binding,
    ) -> Result<(Var, Var)> {
        let za = g.concat_cols(&[z, a])?;
        let d = self.prediction().forward(g, store, za, binding)?;
        let z_next = self.transition().forward(g, store, za, binding)?;
        Ok((d, z_next))
    }
}

/// Latent trajectory produced from a single encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `H+1` latent states per episode, `[t][episode][N_z]` flattened by row.
    pub latents: Vec<Vec<f64>>,
    /// `H` normalized response rows, `[t][episode][N_d]`.
    pub responses: Vec<Vec<f64>>,
}

/// A trained model together with the statistics that normalize its inputs.
#[derive(Clone, Debug)]
pub struct Mld<S: Scalar> {
    pub arch: MldArch,
    pub params: ParamStore<S>,
    pub norm: NormStats,
}

#[derive(Serialize, Deserialize)]
struct MldMeta {
    kind: String,
    arch: MldArch,
    norm: NormStats,
}

impl<S: Scalar> Mld<S> {
    pub fn new(arch: MldArch, params: ParamStore<S>, norm: NormStats) -> Self {
        Self { arch, params, norm }
    }

    fn tensor(shape: &[usize], data: &[f64]) -> Result<Tensor<S>> {
        Ok(Tensor::from_f64(shape, data)?)
    }

    /// `R(s)` for a batch of encoder inputs, `[n, N_z]` row-major.
    pub fn represent(&self, inputs: &[EncoderInput]) -> Result<Vec<f64>> {
        let a = &self.arch;
        let n = inputs.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let mut st = Vec::with_capacity(n * a.state_len());
        let mut sf = Vec::new();
        let mut rp = Vec::new();
        for inp in inputs {
            inp.check(a)?;
            st.extend_from_slice(&inp.state);
            if a.mask.static_fields {
                sf.extend_from_slice(&inp.static_fields);
            }
            if a.mask.relperm {
                rp.extend_from_slice(&inp.relperm);
            }
        }
        let states = g.constant(Self::tensor(&[n, 2, a.ny, a.nx], &st)?);
        let statics = if a.mask.static_fields {
            Some(g.constant(Self::tensor(&[n, 2 * a.nz, a.ny, a.nx], &sf)?))
        } else {
            None
        };
        let relperms = if a.mask.relperm {
            Some(g.constant(Self::tensor(&[n, 6], &rp)?))
        } else {
            None
        };
        let rows: Vec<usize> = (0..n).collect();
        let z = a.encode(
            &mut g,
            &self.params,
            states,
            statics,
            relperms,
            &rows,
            Binding::Frozen,
        )?;
        Ok(g.value(z).to_f64_vec())
    }

    /// `(P(z, a), T(z, a))` for `n` rows.
    pub fn step(&self, z: &[f64], actions: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let a = &self.arch;
        let n = z.len() / a.latent_dim;
        if z.len() != n * a.latent_dim || actions.len() != n * a.n_actions {
            return Err(MldError::Data(format!(
                "step expects {} latent and {} action values per row",
                a.latent_dim, a.n_actions
            )));
        }
        let mut g = Graph::new();
        let zv = g.constant(Self::tensor(&[n, a.latent_dim], z)?);
        let av = g.constant(Self::tensor(&[n, a.n_actions], actions)?);
        let (d, zn) = a.step(&mut g, &self.params, zv, av, Binding::Frozen)?;
        Ok((g.value(d).to_f64_vec(), g.value(zn).to_f64_vec()))
    }

    /// Encodes the initial states once and rolls forward in latent space.
    /// `actions[t]` holds the normalized controls of every episode at step `t`.
    pub fn rollout(&self, initial: &[EncoderInput], actions: &[Vec<f64>]) -> Result<Rollout> {
        let mut z = self.represent(initial)?;
        let mut latents = vec![z.clone()];
        let mut responses = Vec::with_capacity(actions.len());
        for a in actions {
            let (d, zn) = self.step(&z, a)?;
            responses.push(d);
            latents.push(zn.clone());
            z = zn;
        }
        Ok(Rollout { latents, responses })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = MldMeta {
            kind: "mld".into(),
            arch: self.arch.clone(),
            norm: self.norm.clone(),
        };
        write_checkpoint(
            path,
            &self.params.values_only(),
            serde_json::to_value(meta)?,
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = read_checkpoint::<S>(path)?;
        let meta: MldMeta = serde_json::from_value(ck.metadata)?;
        if meta.kind != "mld" {
            return Err(MldError::Data(format!(
                "{} holds a {} checkpoint, not an mld one",
                path.display(),
                meta.kind
            )));
        }
        let expected = meta.arch.init::<S>(0)?;
        for (name, t) in expected.iter() {
            let got = ck.store.value(name)?;
            if got.shape() != t.shape() {
                return Err(MldError::Data(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self::new(meta.arch, ck.store, meta.norm))
    }
}
