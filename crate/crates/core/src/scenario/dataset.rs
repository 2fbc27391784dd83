//! Dataset generation and the `manifest.json` + `data.bin` file pair.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{porosity_from_perm, sample_log_perm_field};
use super::lhs::lhs_sample;
use super::norm::{NormStats, Range};
use super::{ControlSchedule, RelPerm, Scenario, ScenarioError};
use crate::reservoir::{GridSpec, SimConfig, Simulator, WellLayout};
use crate::seed::{derive_seed, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One fixed aquifer, varying schedules.
    Deterministic,
    /// Aquifer and schedule both vary per sample.
    Generalizable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub mean_log: f64,
    pub std_log: f64,
    pub correlation_cells: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            mean_log: 5.0,
            std_log: 1.0,
            correlation_cells: 8.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelPermRanges {
    pub krg0: [f64; 2],
    pub krw0: [f64; 2],
    pub sgr: [f64; 2],
    pub swc: [f64; 2],
    pub ng: [f64; 2],
    pub nw: [f64; 2],
}

impl Default for RelPermRanges {
    fn default() -> Self {
        Self {
            krg0: [0.4, 1.0],
            krw0: [0.4, 1.0],
            sgr: [0.05, 0.3],
            swc: [0.05, 0.3],
            ng: [1.5, 4.0],
            nw: [1.5, 4.0],
        }
    }
}

impl RelPermRanges {
    fn as_bounds(&self) -> [[f64; 2]; 6] {
        [self.krg0, self.krw0, self.sgr, self.swc, self.ng, self.nw]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub mode: Mode,
    pub count: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub grid: GridSpec,
    /// Defaults to one central injector and four corner producers.
    pub wells: Option<WellLayout>,
    pub horizon: usize,
    pub dt_days: f64,
    pub sim: SimConfig,
    pub field: FieldConfig,
    /// Curves of the fixed aquifer in deterministic mode.
    pub relperm: RelPerm,
    pub relperm_ranges: RelPermRanges,
    pub root_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Deterministic,
            count: 400,
            n_train: 300,
            n_test: 100,
            grid: GridSpec::desk(),
            wells: None,
            horizon: 10,
            dt_days: 365.0,
            sim: SimConfig::default(),
            field: FieldConfig::default(),
            relperm: RelPerm::default(),
            relperm_ranges: RelPermRanges::default(),
            root_seed: 2024,
        }
    }
}

impl DataConfig {
    pub fn generalizable() -> Self {
        Self {
            mode: Mode::Generalizable,
            count: 250,
            n_train: 200,
            n_test: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.grid.validate()?;
        if self.n_train + self.n_test != self.count {
            return Err(ScenarioError::Param(format!(
                "split {}+{} does not add up to count {}",
                self.n_train, self.n_test, self.count
            )));
        }
        if self.horizon == 0 || !(self.dt_days > 0.0) {
            return Err(ScenarioError::Param(
                "horizon and dt_days must be positive".into(),
            ));
        }
        let b = &self.sim.bounds;
        if !(b.injector_rate[0] < b.injector_rate[1] && b.producer_bhp[0] < b.producer_bhp[1]) {
            return Err(ScenarioError::Param(
                "control bounds need lower < upper".into(),
            ));
        }
        self.relperm.validate()?;
        Ok(())
    }

    pub fn wells(&self) -> WellLayout {
        self.wells
            .clone()
            .unwrap_or_else(|| WellLayout::center_and_corners(&self.grid))
    }

    pub fn num_actions(&self) -> usize {
        self.wells().num_controls()
    }

    pub fn action_bounds(&self) -> Vec<[f64; 2]> {
        let w = self.wells();
        self.sim
            .bounds
            .per_action(w.injectors.len(), w.producers.len())
    }

    fn scenario_from(&self, seed: u64, relperm: RelPerm) -> Result<Scenario, ScenarioError> {
        let f = &self.field;
        let permeability =
            sample_log_perm_field(seed, &self.grid, f.mean_log, f.std_log, f.correlation_cells)?;
        let porosity = porosity_from_perm(&permeability);
        let sc = Scenario {
            grid: self.grid,
            permeability,
            porosity,
            relperm,
            wells: self.wells(),
            seed,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// The fixed aquifer of deterministic mode.
    pub fn deterministic_scenario(&self) -> Result<Scenario, ScenarioError> {
        self.scenario_from(derive_seed(self.root_seed, stream::SCENARIO), self.relperm)
    }

    /// `n` independent aquifers from `root`; relative-permeability curves
    /// follow a Latin hypercube over the configured ranges.
    pub fn scenarios(&self, root: u64, n: usize) -> Result<Vec<Scenario>, ScenarioError> {
        let design = lhs_sample(
            derive_seed(root, stream::RELPERM),
            n,
            &self.relperm_ranges.as_bounds(),
        )?;
        design
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                self.scenario_from(
                    derive_seed(root, i as u64),
                    RelPerm::from_array([p[0], p[1], p[2], p[3], p[4], p[5]]),
                )
            })
            .collect()
    }

    /// Aquifers disjoint from the training data, for policy evaluation.
    pub fn held_out_scenarios(&self, n: usize) -> Result<Vec<Scenario>, ScenarioError> {
        self.scenarios(derive_seed(self.root_seed, stream::HELD_OUT), n)
    }

    /// Latin hypercube schedules over the flattened `H×N_a` box.
    pub fn schedules(&self, n: usize) -> Result<Vec<ControlSchedule>, ScenarioError> {
        let per_step = self.action_bounds();
        let bounds: Vec<[f64; 2]> = (0..self.horizon)
            .flat_map(|_| per_step.iter().copied())
            .collect();
        let n_inj = self.wells().injectors.len();
        Ok(
            lhs_sample(derive_seed(self.root_seed, stream::SCHEDULE), n, &bounds)?
                .into_iter()
                .map(|p| ControlSchedule::from_flat(&p, n_inj, per_step.len()))
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One simulated episode as stored on disk (physical units, f32).
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeData {
    pub index: usize,
    pub split: Split,
    /// `[nz, ny, nx]`, mD
    pub permeability: Vec<f32>,
    pub porosity: Vec<f32>,
    pub relperm: [f32; 6],
    /// `[H, N_a]`
    pub schedule: Vec<f32>,
    /// `[H+1, 2, ny, nx]`: pressure (bar), water saturation
    pub states: Vec<f32>,
    /// `[H, N_p]` brine rates, m³/day
    pub responses: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub description: String,
    pub cells: usize,
    pub columns: usize,
    pub horizon: usize,
    pub num_actions: usize,
    pub num_responses: usize,
    pub state_channels: usize,
    pub floats_per_episode: usize,
}

impl Layout {
    fn new(config: &DataConfig) -> Self {
        let cells = config.grid.cells();
        let columns = config.grid.columns();
        let num_actions = config.num_actions();
        let num_responses = config.wells().producers.len();
        let h = config.horizon;
        let floats = 2 * cells + 6 + h * num_actions + (h + 1) * 2 * columns + h * num_responses;
        Self {
            description: "little-endian f32 per episode: permeability [nz,ny,nx] mD | porosity [nz,ny,nx] | relperm [krg0,krw0,Sgr,Swc,ng,nw] | schedule [H,N_a] (injector rates m3/day, producer BHPs bar) | states [H+1,2,ny,nx] (pressure bar, water saturation) | responses [H,N_p] brine m3/day".into(),
            cells,
            columns,
            horizon: h,
            num_actions,
            num_responses,
            state_channels: 2,
            floats_per_episode: floats,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: usize,
    pub split: Split,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub index: usize,
    pub error: String,
}

/// Share of normalized test values outside `[−1, 1]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    pub state: f64,
    pub controls: f64,
    pub responses: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: DataConfig,
    pub layout: Layout,
    pub episodes: Vec<EpisodeRecord>,
    pub failures: Vec<Failure>,
    pub norm_stats: Option<NormStats>,
    pub test_out_of_range: RangeReport,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub episodes: Vec<EpisodeData>,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn simulate_episode(
    config: &DataConfig,
    scenario: &Scenario,
    schedule: &ControlSchedule,
    index: usize,
    split: Split,
) -> Result<EpisodeData, ScenarioError> {
    let sim = Simulator::new(scenario, config.sim)?;
    let traj = sim.run_episode(schedule, config.dt_days)?;
    let mut states = Vec::with_capacity((config.horizon + 1) * 2 * config.grid.columns());
    for s in &traj.states {
        states.extend(s.pressure.iter().map(|&v| v as f32));
        states.extend(s.water_saturation.iter().map(|&v| v as f32));
    }
    let rp = scenario.relperm.to_array();
    Ok(EpisodeData {
        index,
        split,
        permeability: to_f32(&scenario.permeability),
        porosity: to_f32(&scenario.porosity),
        relperm: rp.map(|v| v as f32),
        schedule: to_f32(&schedule.to_flat()),
        states,
        responses: traj
            .responses
            .iter()
            .flat_map(|r| r.brine_rates.iter().map(|&q| q as f32))
            .collect(),
    })
}

/// Runs the simulator over every sample. Failed samples are logged in the
/// manifest and skipped; the thread count only affects speed.
pub fn generate_dataset(config: &DataConfig, jobs: usize) -> Result<Dataset, ScenarioError> {
    config.validate()?;
    let schedules = config.schedules(config.count)?;
    let (shared, per_sample) = match config.mode {
        Mode::Deterministic => (Some(config.deterministic_scenario()?), Vec::new()),
        Mode::Generalizable => (None, config.scenarios(config.root_seed, config.count)?),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ScenarioError::Param(e.to_string()))?;
    let results: Vec<Result<EpisodeData, ScenarioError>> = pool.install(|| {
        (0..config.count)
            .into_par_iter()
            .map(|i| {
                let split = if i < config.n_train {
                    Split::Train
                } else {
                    Split::Test
                };
                let sc = shared.as_ref().unwrap_or_else(|| &per_sample[i]);
                simulate_episode(config, sc, &schedules[i], i, split)
            })
            .collect()
    });
    let mut episodes = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(ep) => {
                let seed = shared
                    .as_ref()
                    .map_or_else(|| per_sample[i].seed, |s| s.seed);
                records.push(EpisodeRecord {
                    index: i,
                    split: ep.split,
                    seed,
                });
                episodes.push(ep);
            }
            Err(e) => {
                warn!("sample {i} failed: {e}");
                failures.push(Failure {
                    index: i,
                    error: e.to_string(),
                });
            }
        }
    }
    info!(
        "generated {} episodes, {} failures",
        episodes.len(),
        failures.len()
    );
    let mut ds = Dataset {
        manifest: Manifest {
            format: "latentflow-dataset/1".into(),
            config: config.clone(),
            layout: Layout::new(config),
            episodes: records,
            failures,
            norm_stats: None,
            test_out_of_range: RangeReport::default(),
        },
        episodes,
    };
    ds.manifest.norm_stats = ds.compute_norm_stats();
    ds.manifest.test_out_of_range = ds.range_report();
    Ok(ds)
}

impl Dataset {
    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn config(&self) -> &DataConfig {
        &self.manifest.config
    }

    pub fn layout(&self) -> &Layout {
        &self.manifest.layout
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.manifest.norm_stats.as_ref()
    }

    pub fn split(&self, split: Split) -> Vec<&EpisodeData> {
        self.episodes.iter().filter(|e| e.split == split).collect()
    }

    /// Ranges over the training split only.
    fn compute_norm_stats(&self) -> Option<NormStats> {
        let train = self.split(Split::Train);
        if train.is_empty() {
            return None;
        }
        let l = self.layout();
        let nz = self.config().grid.nz;
        let cols = l.columns;
        let mut state = vec![Range::empty(); 2];
        let mut static_fields = vec![Range::empty(); 2 * nz];
        let mut relperm = vec![Range::empty(); 6];
        let mut controls = vec![Range::empty(); l.num_actions];
        let mut responses = vec![Range::empty(); l.num_responses];
        for e in train {
            for (k, chunk) in e.states.chunks(cols).enumerate() {
                let r = &mut state[k % 2];
                chunk.iter().for_each(|&v| r.include(v as f64));
            }
            for (layer, chunk) in e.permeability.chunks(cols).enumerate() {
                chunk
                    .iter()
                    .for_each(|&v| static_fields[layer].include((v as f64).ln()));
            }
            for (layer, chunk) in e.porosity.chunks(cols).enumerate() {
                chunk
                    .iter()
                    .for_each(|&v| static_fields[nz + layer].include(v as f64));
            }
            for (r, &v) in relperm.iter_mut().zip(&e.relperm) {
                r.include(v as f64);
            }
            for (i, &v) in e.schedule.iter().enumerate() {
                controls[i % l.num_actions].include(v as f64);
            }
            for (i, &v) in e.responses.iter().enumerate() {
                responses[i % l.num_responses].include(v as f64);
            }
        }
        Some(NormStats {
            state,
            static_fields,
            relperm,
            controls,
            responses,
        })
    }

    fn range_report(&self) -> RangeReport {
        let Some(stats) = self.norm_stats() else {
            return RangeReport::default();
        };
        let test = self.split(Split::Test);
        let l = self.layout();
        let frac = |values: &mut dyn Iterator<Item = f64>| {
            let (mut out, mut n) = (0usize, 0usize);
            for v in values {
                n += 1;
                if v.abs() > 1.0 + 1e-9 {
                    out += 1;
                }
            }
            if n == 0 {
                0.0
            } else {
                out as f64 / n as f64
            }
        };
        let cols = l.columns;
        RangeReport {
            state: frac(&mut test.iter().flat_map(|e| {
                e.states.chunks(cols).enumerate().flat_map(move |(k, c)| {
                    c.iter()
                        .map(move |&v| stats.state[k % 2].normalize(v as f64))
                })
            })),
            controls: frac(&mut test.iter().flat_map(|e| {
                e.schedule
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| stats.controls[i % l.num_actions].normalize(v as f64))
            })),
            responses: frac(&mut test.iter().flat_map(|e| {
                e.responses
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| stats.responses[i % l.num_responses].normalize(v as f64))
            })),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), ScenarioError> {
        fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(fs::File::create(dir.join("data.bin"))?);
        for e in &self.episodes {
            for part in [
                &e.permeability[..],
                &e.porosity[..],
                &e.relperm[..],
                &e.schedule[..],
                &e.states[..],
                &e.responses[..],
            ] {
                for v in part {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
        out.flush()?;
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&self.manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ScenarioError> {
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let bytes = fs::read(dir.join("data.bin"))?;
        let l = &manifest.layout;
        let expected = manifest.episodes.len() * l.floats_per_episode * 4;
        if bytes.len() != expected {
            return Err(ScenarioError::Format(format!(
                "data.bin has {} bytes, manifest implies {expected}",
                bytes.len()
            )));
        }
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let h = l.horizon;
        let mut episodes = Vec::with_capacity(manifest.episodes.len());
        for (rec, chunk) in manifest
            .episodes
            .iter()
            .zip(floats.chunks(l.floats_per_episode.max(1)))
        {
            let mut at = 0;
            let mut take = |n: usize| {
                let s = chunk[at..at + n].to_vec();
                at += n;
                s
            };
            let permeability = take(l.cells);
            let porosity = take(l.cells);
            let rp = take(6);
            let schedule = take(h * l.num_actions);
            let states = take((h + 1) * 2 * l.columns);
            let responses = take(h * l.num_responses);
            episodes.push(EpisodeData {
                index: rec.index,
                split: rec.split,
                permeability,
                porosity,
                relperm: [rp[0], rp[1], rp[2], rp[3], rp[4], rp[5]],
                schedule,
                states,
                responses,
            });
        }
        Ok(Self { manifest, episodes })
    }
}
