use super::banded::BandedSpd;
use super::{Controls, FlowResponse, SimConfig, SimError, SimState, Trajectory, WellSpec, DARCY};
use crate::scenario::{ControlSchedule, RelPerm, Scenario};

struct Face {
    a: usize,
    b: usize,
    trans: f64,
}

struct Well {
    cell: usize,
    index: f64,
}

/// Counters from one call to [`Simulator::step`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub pressure_solves: usize,
    pub substeps: usize,
}

/// Peaceman well index in `m³/day/bar` per unit mobility (1/cP).
pub fn well_index(perm_md: f64, dz: f64, dx: f64, dy: f64, rw: f64) -> Result<f64, SimError> {
    let re = 0.14 * (dx * dx + dy * dy).sqrt();
    if !(rw > 0.0 && rw < re) {
        return Err(SimError::Geometry(format!(
            "wellbore radius {rw} must lie in (0, {re:.4}) m"
        )));
    }
    Ok(DARCY * 2.0 * std::f64::consts::PI * perm_md * dz / (re / rw).ln())
}

/// A scenario prepared for repeated simulation: layer-collapsed fields,
/// transmissibilities and well indices.
pub struct Simulator {
    config: SimConfig,
    nx: usize,
    ny: usize,
    pore_volume: Vec<f64>,
    faces: Vec<Face>,
    injectors: Vec<Well>,
    producers: Vec<Well>,
    relperm: RelPerm,
    max_dfw: f64,
    // solver ordering and bandwidth
    order: Vec<usize>,
    bandwidth: usize,
}

impl Simulator {
    pub fn new(scenario: &Scenario, config: SimConfig) -> Result<Self, SimError> {
        scenario.validate().map_err(|e| match e {
            crate::scenario::ScenarioError::Sim(s) => s,
            other => SimError::Config(other.to_string()),
        })?;
        if !(config.cfl > 0.0 && config.max_pressure_step_days > 0.0 && config.max_substeps > 0) {
            return Err(SimError::Config(
                "cfl, pressure step and substep cap must be positive".into(),
            ));
        }
        let fl = config.fluid;
        if !(fl.water_viscosity > 0.0 && fl.gas_viscosity > 0.0 && fl.gas_fvf > 0.0) {
            return Err(SimError::Config("fluid properties must be positive".into()));
        }
        let g = scenario.grid;
        let (nx, ny, nz) = (g.nx, g.ny, g.nz);
        let n = nx * ny;
        let thickness = g.dz * nz as f64;
        // thickness-weighted layer averages (uniform layer thickness)
        let mut perm = vec![0.0; n];
        let mut poro = vec![0.0; n];
        for l in 0..nz {
            for c in 0..n {
                perm[c] += scenario.permeability[l * n + c] / nz as f64;
                poro[c] += scenario.porosity[l * n + c] / nz as f64;
            }
        }
        let cell_volume = g.dx * g.dy * thickness;
        let pore_volume = poro.iter().map(|p| p * cell_volume).collect();

        let harmonic = |a: f64, b: f64| 2.0 * a * b / (a + b);
        let mut faces = Vec::with_capacity(2 * n);
        for j in 0..ny {
            for i in 0..nx {
                let c = j * nx + i;
                if i + 1 < nx {
                    let t = DARCY * harmonic(perm[c], perm[c + 1]) * g.dy * thickness / g.dx;
                    faces.push(Face {
                        a: c,
                        b: c + 1,
                        trans: t,
                    });
                }
                if j + 1 < ny {
                    let t = DARCY * harmonic(perm[c], perm[c + nx]) * g.dx * thickness / g.dy;
                    faces.push(Face {
                        a: c,
                        b: c + nx,
                        trans: t,
                    });
                }
            }
        }
        let make_well = |w: &WellSpec| -> Result<Well, SimError> {
            let cell = w.j * nx + w.i;
            Ok(Well {
                cell,
                index: well_index(perm[cell], thickness, g.dx, g.dy, w.wellbore_radius)?,
            })
        };
        let injectors = scenario
            .wells
            .injectors
            .iter()
            .map(make_well)
            .collect::<Result<_, _>>()?;
        let producers = scenario
            .wells
            .producers
            .iter()
            .map(make_well)
            .collect::<Result<_, _>>()?;

        let (order, bandwidth) = if nx <= ny {
            ((0..n).collect(), nx)
        } else {
            ((0..n).map(|c| (c % nx) * ny + c / nx).collect(), ny)
        };

        let relperm = scenario.relperm;
        let samples = 4000;
        let mut max_dfw = 0.0f64;
        let mut prev = relperm.water_fractional_flow(0.0, fl.water_viscosity, fl.gas_viscosity);
        for s in 1..=samples {
            let sw = s as f64 / samples as f64;
            let f = relperm.water_fractional_flow(sw, fl.water_viscosity, fl.gas_viscosity);
            max_dfw = max_dfw.max((f - prev).abs() * samples as f64);
            prev = f;
        }
        Ok(Self {
            config,
            nx,
            ny,
            pore_volume,
            faces,
            injectors,
            producers,
            relperm,
            max_dfw: max_dfw * 1.05,
            order,
            bandwidth,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn num_injectors(&self) -> usize {
        self.injectors.len()
    }

    pub fn num_producers(&self) -> usize {
        self.producers.len()
    }

    pub fn pore_volume(&self) -> &[f64] {
        &self.pore_volume
    }

    /// Pore volume above connate water saturation.
    pub fn mobile_water_volume(&self, state: &SimState) -> f64 {
        self.pore_volume
            .iter()
            .zip(&state.water_saturation)
            .map(|(pv, sw)| pv * (sw - self.relperm.swc).max(0.0))
            .sum()
    }

    /// Uniform initial pressure, fully brine saturated.
    pub fn initial_state(&self) -> SimState {
        let n = self.num_cells();
        SimState {
            pressure: vec![self.config.initial_pressure; n],
            water_saturation: vec![1.0; n],
            time: 0.0,
        }
    }

    #[inline]
    fn mobilities(&self, sw: f64) -> (f64, f64) {
        let (krw, krg) = self.relperm.eval(sw);
        (
            krw / self.config.fluid.water_viscosity,
            krg / self.config.fluid.gas_viscosity,
        )
    }

    fn total_mobility(&self, sw: &[f64]) -> Vec<f64> {
        sw.iter()
            .map(|&s| {
                let (w, g) = self.mobilities(s);
                w + g
            })
            .collect()
    }

    /// Per-phase producer rates `(water, gas)` from the Peaceman model, zero
    /// when the cell pressure is below the BHP.
    pub fn well_rates(&self, state: &SimState, producer: usize, bhp: f64) -> (f64, f64) {
        let w = &self.producers[producer];
        let dp = (state.pressure[w.cell] - bhp).max(0.0);
        let (lw, lg) = self.mobilities(state.water_saturation[w.cell]);
        (w.index * lw * dp, w.index * lg * dp)
    }

    /// Solves for pressure; returns `(pressure, face fluxes, producer rates)`.
    /// Producers that would inject are shut and the system re-solved.
    fn solve_pressure(
        &self,
        controls: &Controls,
        lam: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), SimError> {
        let n = self.num_cells();
        let bhp = &controls.producer_bhps;
        let reference = bhp.iter().sum::<f64>() / bhp.len().max(1) as f64;
        let mut open = vec![true; self.producers.len()];
        loop {
            let mut a = BandedSpd::new(n, self.bandwidth);
            let mut rhs = vec![0.0; n];
            for f in &self.faces {
                let t = f.trans * 0.5 * (lam[f.a] + lam[f.b]);
                let (oa, ob) = (self.order[f.a], self.order[f.b]);
                a.add(oa, oa, t);
                a.add(ob, ob, t);
                a.add(oa, ob, -t);
            }
            for (k, w) in self.producers.iter().enumerate().filter(|(k, _)| open[*k]) {
                let t = w.index * lam[w.cell];
                let o = self.order[w.cell];
                a.add(o, o, t);
                rhs[o] += t * (bhp[k] - reference);
            }
            for (w, &rate) in self.injectors.iter().zip(&controls.injector_rates) {
                rhs[self.order[w.cell]] += rate * self.config.fluid.gas_fvf;
            }
            a.factor()?;
            a.solve(&mut rhs);
            let p: Vec<f64> = (0..n).map(|c| rhs[self.order[c]] + reference).collect();
            let rates: Vec<f64> = self
                .producers
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    if open[k] {
                        w.index * lam[w.cell] * (p[w.cell] - bhp[k])
                    } else {
                        0.0
                    }
                })
                .collect();
            let n_open = open.iter().filter(|o| **o).count();
            let negative: Vec<usize> = (0..rates.len())
                .filter(|&k| open[k] && rates[k] < 0.0)
                .collect();
            if negative.is_empty() || negative.len() == n_open {
                let flux = self
                    .faces
                    .iter()
                    .map(|f| f.trans * 0.5 * (lam[f.a] + lam[f.b]) * (p[f.a] - p[f.b]))
                    .collect();
                return Ok((p, flux, rates));
            }
            for k in negative {
                open[k] = false;
            }
        }
    }

    /// Advances the state by `dt` days under fixed controls.
    pub fn step(
        &self,
        state: &SimState,
        controls: &Controls,
        dt: f64,
    ) -> Result<(SimState, FlowResponse, StepStats), SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::Config(format!("time step {dt} must be positive")));
        }
        if controls.injector_rates.len() != self.injectors.len()
            || controls.producer_bhps.len() != self.producers.len()
        {
            return Err(SimError::Config(format!(
                "expected {} injector rates and {} BHPs",
                self.injectors.len(),
                self.producers.len()
            )));
        }
        let n = self.num_cells();
        if state.water_saturation.len() != n || state.pressure.len() != n {
            return Err(SimError::Config("state does not match the grid".into()));
        }
        let (mu_w, mu_g) = (
            self.config.fluid.water_viscosity,
            self.config.fluid.gas_viscosity,
        );
        let mut sw = state.water_saturation.clone();
        let mut pressure = state.pressure.clone();
        let mut water_out = vec![0.0; self.producers.len()];
        let mut gas_out = vec![0.0; self.producers.len()];
        let inj_res: Vec<(usize, f64)> = self
            .injectors
            .iter()
            .zip(&controls.injector_rates)
            .map(|(w, r)| (w.cell, r * self.config.fluid.gas_fvf))
            .collect();

        let intervals = (dt / self.config.max_pressure_step_days).ceil().max(1.0) as usize;
        let h = dt / intervals as f64;
        let mut stats = StepStats::default();
        let mut fw = vec![0.0; n];
        let mut delta = vec![0.0; n];
        let mut throughput = vec![0.0; n];
        for _ in 0..intervals {
            let lam = self.total_mobility(&sw);
            let (p, flux, rates) = self.solve_pressure(controls, &lam)?;
            stats.pressure_solves += 1;
            pressure = p;

            // CFL limit from the larger of in- and outflow per cell
            let mut inflow = vec![0.0; n];
            let mut outflow = vec![0.0; n];
            for (f, &q) in self.faces.iter().zip(&flux) {
                if q > 0.0 {
                    outflow[f.a] += q;
                    inflow[f.b] += q;
                } else {
                    outflow[f.b] -= q;
                    inflow[f.a] -= q;
                }
            }
            for (w, &q) in self.producers.iter().zip(&rates) {
                outflow[w.cell] += q.max(0.0);
            }
            for &(c, q) in &inj_res {
                inflow[c] += q;
            }
            let mut max_rate = 0.0f64;
            for c in 0..n {
                throughput[c] = inflow[c].max(outflow[c]);
                max_rate = max_rate.max(throughput[c] / self.pore_volume[c]);
            }
            let sub = if max_rate > 0.0 {
                let dt_cfl = self.config.cfl / (self.max_dfw * max_rate);
                (h / dt_cfl).ceil().max(1.0) as usize
            } else {
                1
            };
            stats.substeps += sub;
            if stats.substeps > self.config.max_substeps {
                return Err(SimError::Stability {
                    substeps: stats.substeps,
                    cap: self.config.max_substeps,
                });
            }
            let tau = h / sub as f64;
            for _ in 0..sub {
                for c in 0..n {
                    fw[c] = self.relperm.water_fractional_flow(sw[c], mu_w, mu_g);
                    delta[c] = 0.0;
                }
                for (f, &q) in self.faces.iter().zip(&flux) {
                    let w = if q > 0.0 { fw[f.a] * q } else { fw[f.b] * q };
                    delta[f.a] -= w;
                    delta[f.b] += w;
                }
                for (k, (w, &q)) in self.producers.iter().zip(&rates).enumerate() {
                    let qw = fw[w.cell] * q;
                    delta[w.cell] -= qw;
                    water_out[k] += qw * tau;
                    gas_out[k] += (q - qw) * tau;
                }
                for c in 0..n {
                    // flux divergence in fully brine-filled cells is zero up to rounding
                    sw[c] = (sw[c] + tau * delta[c] / self.pore_volume[c]).clamp(0.0, 1.0);
                }
            }
        }
        if sw.iter().any(|s| !s.is_finite()) || pressure.iter().any(|p| !p.is_finite()) {
            return Err(SimError::Solver("non-finite state".into()));
        }
        let response = FlowResponse {
            brine_rates: water_out.iter().map(|v| (v / dt).max(0.0)).collect(),
            gas_rates: gas_out.iter().map(|v| (v / dt).max(0.0)).collect(),
            co2_injection_rates: controls.injector_rates.clone(),
        };
        let next = SimState {
            pressure,
            water_saturation: sw,
            time: state.time + dt,
        };
        Ok((next, response, stats))
    }

    /// Runs a full schedule from the initial state.
    pub fn run_episode(&self, schedule: &ControlSchedule, dt: f64) -> Result<Trajectory, SimError> {
        for (step, c) in schedule.steps.iter().enumerate() {
            self.config.bounds.check(c).map_err(|e| SimError::Step {
                step,
                source: Box::new(e),
            })?;
        }
        self.run_unchecked(schedule, dt)
    }

    /// Like [`Simulator::run_episode`] without the control-bound check.
    pub fn run_unchecked(
        &self,
        schedule: &ControlSchedule,
        dt: f64,
    ) -> Result<Trajectory, SimError> {
        let mut traj = Trajectory {
            states: vec![self.initial_state()],
            responses: Vec::with_capacity(schedule.horizon()),
            dt_days: Vec::with_capacity(schedule.horizon()),
        };
        for (step, c) in schedule.steps.iter().enumerate() {
            let (next, resp, _) =
                self.step(traj.states.last().unwrap(), c, dt)
                    .map_err(|e| SimError::Step {
                        step,
                        source: Box::new(e),
                    })?;
            traj.states.push(next);
            traj.responses.push(resp);
            traj.dt_days.push(dt);
        }
        Ok(traj)
    }

    /// Reservoir-volume gas injection over a trajectory.
    pub fn injected_gas_volume(&self, traj: &Trajectory) -> f64 {
        traj.responses
            .iter()
            .zip(&traj.dt_days)
            .map(|(r, dt)| r.total_injection() * self.config.fluid.gas_fvf * dt)
            .sum()
    }
}

/// `[water, gas]` relative residual of `Δstored − (injected − produced)`.
pub fn mass_balance_residual(sim: &Simulator, traj: &Trajectory) -> [f64; 2] {
    const EPS: f64 = 1e-12;
    let (Some(first), Some(last)) = (traj.states.first(), traj.states.last()) else {
        return [0.0, 0.0];
    };
    let pv = sim.pore_volume();
    let dsw: f64 = pv
        .iter()
        .zip(first.water_saturation.iter().zip(&last.water_saturation))
        .map(|(v, (a, b))| v * (b - a))
        .sum();
    let mut water_out = 0.0;
    let mut gas_out = 0.0;
    for (r, dt) in traj.responses.iter().zip(&traj.dt_days) {
        water_out += r.brine_rates.iter().sum::<f64>() * dt;
        gas_out += r.gas_rates.iter().sum::<f64>() * dt;
    }
    let gas_in = sim.injected_gas_volume(traj);
    let water = (dsw + water_out).abs() / water_out.max(EPS);
    let gas = (-dsw - (gas_in - gas_out)).abs() / gas_in.max(gas_out).max(EPS);
    [water, gas]
}
