use latentflow::reservoir::{
    mass_balance_residual, well_index, Controls, FluidProps, GridSpec, SimConfig, Simulator,
};
use latentflow::scenario::{ControlSchedule, RelPerm, Scenario};

#[path = "support/physics.rs"]
mod physics;

fn desk_sim() -> Simulator {
    let sc = Scenario::homogeneous(GridSpec::desk(), 150.0, 0.2, RelPerm::default());
    Simulator::new(&sc, SimConfig::default()).unwrap()
}

fn heterogeneous_desk() -> (Scenario, Simulator) {
    let mut sc = Scenario::homogeneous(GridSpec::desk(), 150.0, 0.2, RelPerm::default());
    for (c, k) in sc.permeability.iter_mut().enumerate() {
        let (i, j) = ((c % 24) as f64, (c / 24) as f64);
        *k = 150.0 * (0.8 * (0.4 * i).sin() + 0.6 * (0.3 * j).cos()).exp();
    }
    for (p, k) in sc.porosity.iter_mut().zip(&sc.permeability) {
        *p = 0.05 * k.log10() + 0.1;
    }
    let sim = Simulator::new(&sc, SimConfig::default()).unwrap();
    (sc, sim)
}

#[test]
fn peaceman_rate_matches_hand_arithmetic() {
    // 2π·(100·9.869233e-16 m²)·7 m / ln(0.14·√7200 / 0.1) · 10 bar / 1 cP, in m³/day
    let expected = 78.50265075167846;
    let grid = GridSpec {
        dz: 7.0,
        ..GridSpec::desk()
    };
    let relperm = RelPerm {
        krw0: 1.0,
        ..RelPerm::default()
    };
    let sc = Scenario::homogeneous(grid, 100.0, 0.2, relperm);
    let cfg = SimConfig {
        fluid: FluidProps {
            water_viscosity: 1.0,
            ..FluidProps::default()
        },
        ..SimConfig::default()
    };
    let sim = Simulator::new(&sc, cfg).unwrap();
    let mut state = sim.initial_state();
    state.pressure.iter_mut().for_each(|p| *p = 170.0);
    let (qw, qg) = sim.well_rates(&state, 0, 160.0);
    assert!((qw - expected).abs() < 1e-9 * expected, "{qw}");
    assert_eq!(qg, 0.0);
    assert!((well_index(100.0, 7.0, 60.0, 60.0, 0.1).unwrap() * 10.0 - expected).abs() < 1e-9);

    assert_eq!(sim.well_rates(&state, 0, 170.0), (0.0, 0.0));
    assert_eq!(sim.well_rates(&state, 0, 171.0), (0.0, 0.0));
}

#[test]
fn buckley_leverett_front_position() {
    let f = physics::buckley_leverett_front();
    assert!(
        (f.simulated - f.welge).abs() < 0.05 * f.welge,
        "front at {:.1} m, Welge {:.1} m",
        f.simulated,
        f.welge
    );
}

#[test]
fn desk_mass_balance_is_tight() {
    let (_, sim) = heterogeneous_desk();
    let c = Controls::uniform(1, 1.0e6, 4, 160.0);
    let traj = sim
        .run_episode(&ControlSchedule::constant(c, 4), 36.5)
        .unwrap();
    let [w, g] = mass_balance_residual(&sim, &traj);
    assert!(w < 1e-8 && g < 1e-8, "water {w:e} gas {g:e}");
}

#[test]
fn corrupted_trajectory_is_detected() {
    let (_, sim) = heterogeneous_desk();
    let c = Controls::uniform(1, 1.0e6, 4, 160.0);
    let mut traj = sim
        .run_episode(&ControlSchedule::constant(c, 2), 365.0)
        .unwrap();
    traj.states.last_mut().unwrap().water_saturation[100] -= 0.01;
    let [w, g] = mass_balance_residual(&sim, &traj);
    assert!(w > 1e-6 && g > 1e-6);
}

#[test]
fn zero_flow_trajectory_has_zero_residual() {
    let sim = desk_sim();
    let c = Controls::uniform(1, 0.0, 4, 175.16);
    let traj = sim
        .run_unchecked(&ControlSchedule::constant(c, 3), 365.0)
        .unwrap();
    assert_eq!(mass_balance_residual(&sim, &traj), [0.0, 0.0]);
}

#[test]
fn empty_schedule_gives_initial_state_only() {
    let sim = desk_sim();
    let traj = sim
        .run_episode(&ControlSchedule { steps: vec![] }, 365.0)
        .unwrap();
    assert_eq!(traj.states, vec![sim.initial_state()]);
    assert!(traj.responses.is_empty());
}

#[test]
fn runs_are_bit_identical() {
    let (_, sim) = heterogeneous_desk();
    let sched = ControlSchedule {
        steps: (0..5)
            .map(|t| Controls {
                injector_rates: vec![5.0e5 + 2.0e5 * t as f64],
                producer_bhps: vec![150.0, 155.0 + t as f64, 160.0, 170.0 - t as f64],
            })
            .collect(),
    };
    let a = sim.run_episode(&sched, 365.0).unwrap();
    let b = sim.run_episode(&sched, 365.0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn max_injection_volumetrics() {
    let (_, sim) = heterogeneous_desk();
    let h = 10;
    let c = Controls::uniform(1, 1.5e6, 4, 150.0);
    let traj = sim
        .run_episode(&ControlSchedule::constant(c, h), 365.0)
        .unwrap();
    let injected: f64 = traj
        .responses
        .iter()
        .zip(&traj.dt_days)
        .map(|(r, dt)| r.total_injection() * dt)
        .sum();
    assert_eq!(injected, 1.5e6 * 365.0 * h as f64);
    let produced: f64 = traj
        .responses
        .iter()
        .zip(&traj.dt_days)
        .map(|(r, dt)| r.total_brine() * dt)
        .sum();
    assert!(produced <= sim.mobile_water_volume(&sim.initial_state()));
    assert!(produced > 0.0);
}

#[test]
fn saturation_stays_physical() {
    let (sc, sim) = heterogeneous_desk();
    let swc = sc.relperm.swc;
    let c = Controls::uniform(1, 1.5e6, 4, 150.0);
    let traj = sim
        .run_episode(&ControlSchedule::constant(c, 10), 365.0)
        .unwrap();
    for s in &traj.states {
        assert!(s
            .water_saturation
            .iter()
            .all(|&v| v >= swc - 1e-12 && v <= 1.0 + 1e-12));
    }
    // some cells have been swept towards residual water
    assert!(traj
        .states
        .last()
        .unwrap()
        .water_saturation
        .iter()
        .any(|&v| v < 1.0 - sc.relperm.sgr));
}

#[test]
fn pressure_shift_invariance() {
    let (sc, _) = heterogeneous_desk();
    let shift = 30.0;
    let base = Simulator::new(&sc, SimConfig::default()).unwrap();
    let mut cfg = SimConfig::default();
    cfg.initial_pressure += shift;
    cfg.bounds.producer_bhp = [180.0, 200.0];
    let shifted = Simulator::new(&sc, cfg).unwrap();
    let bhps = [152.0, 158.0, 165.0, 170.0];
    let c = |d: f64| Controls {
        injector_rates: vec![1.0e6],
        producer_bhps: bhps.iter().map(|b| b + d).collect(),
    };
    let a = base
        .run_episode(&ControlSchedule::constant(c(0.0), 3), 365.0)
        .unwrap();
    let b = shifted
        .run_episode(&ControlSchedule::constant(c(shift), 3), 365.0)
        .unwrap();
    for (sa, sb) in a.states.iter().zip(&b.states) {
        for (pa, pb) in sa.pressure.iter().zip(&sb.pressure) {
            assert!((pb - pa - shift).abs() < 1e-8);
        }
        for (wa, wb) in sa.water_saturation.iter().zip(&sb.water_saturation) {
            assert!((wa - wb).abs() < 1e-10);
        }
    }
    for (ra, rb) in a.responses.iter().zip(&b.responses) {
        for (qa, qb) in ra.brine_rates.iter().zip(&rb.brine_rates) {
            assert!((qa - qb).abs() < 1e-7 * qa.max(1.0));
        }
    }
}

#[test]
fn doubling_permeability_halves_drawdown() {
    // equal viscosities and linear curves make total mobility constant
    let relperm = RelPerm {
        krg0: 1.0,
        krw0: 1.0,
        sgr: 0.0,
        swc: 0.0,
        ng: 1.0,
        nw: 1.0,
    };
    let cfg = SimConfig {
        fluid: FluidProps {
            water_viscosity: 0.5,
            gas_viscosity: 0.5,
            gas_fvf: 5e-4,
        },
        ..SimConfig::default()
    };
    let mut sc = Scenario::homogeneous(GridSpec::desk(), 100.0, 0.2, relperm);
    for (c, k) in sc.permeability.iter_mut().enumerate() {
        *k *= 1.0 + 0.5 * ((c % 7) as f64 / 7.0);
    }
    let mut doubled = sc.clone();
    doubled.permeability.iter_mut().for_each(|k| *k *= 2.0);
    let bhps = vec![155.0; 4];
    let c = Controls {
        injector_rates: vec![1.0e6],
        producer_bhps: bhps.clone(),
    };
    let a = Simulator::new(&sc, cfg).unwrap();
    let b = Simulator::new(&doubled, cfg).unwrap();
    let (sa, ra, _) = a.step(&a.initial_state(), &c, 10.0).unwrap();
    let (sb, rb, _) = b.step(&b.initial_state(), &c, 10.0).unwrap();
    let reference = bhps[0];
    for (pa, pb) in sa.pressure.iter().zip(&sb.pressure) {
        assert!(
            ((pb - reference) - 0.5 * (pa - reference)).abs()
                < 1e-8 * (pa - reference).abs().max(1.0)
        );
    }
    let total = |r: &latentflow::reservoir::FlowResponse| -> Vec<f64> {
        r.brine_rates
            .iter()
            .zip(&r.gas_rates)
            .map(|(w, g)| w + g)
            .collect()
    };
    for (qa, qb) in total(&ra).iter().zip(&total(&rb)) {
        assert!((qa - qb).abs() < 1e-8 * qa);
    }
}
