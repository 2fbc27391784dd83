//! One-dimensional displacement against the semi-analytic fractional-flow
//! solution.

use latentflow::reservoir::{
    Controls, FluidProps, GridSpec, SimConfig, Simulator, WellKind, WellLayout, WellSpec,
};
use latentflow::scenario::{RelPerm, Scenario};

/// Front positions in metres after 0.3 pore volumes injected.
pub struct Front {
    pub simulated: f64,
    pub welge: f64,
}

/// Front speed from the Welge tangent through the initial state `Sg = 0`:
/// `x_f / L = PVI · max_S f_g(S)/S`.
fn welge_front(relperm: &RelPerm, fluid: &FluidProps, pvi: f64) -> f64 {
    let n = 200_000;
    (1..=n)
        .map(|i| {
            let sg = i as f64 / n as f64;
            let fg = 1.0
                - relperm.water_fractional_flow(
                    1.0 - sg,
                    fluid.water_viscosity,
                    fluid.gas_viscosity,
                );
            fg / sg
        })
        .fold(0.0, f64::max)
        * pvi
}

pub fn buckley_leverett_front() -> Front {
    let relperm = RelPerm {
        krg0: 0.7,
        krw0: 0.8,
        sgr: 0.1,
        swc: 0.2,
        ng: 2.0,
        nw: 2.0,
    };
    let grid = GridSpec {
        nx: 200,
        ny: 1,
        nz: 1,
        dx: 10.0,
        dy: 10.0,
        dz: 10.0,
        datum_depth: 0.0,
    };
    let mut sc = Scenario::homogeneous(grid, 100.0, 0.2, relperm);
    sc.wells = WellLayout {
        injectors: vec![WellSpec {
            kind: WellKind::Injector,
            i: 0,
            j: 0,
            wellbore_radius: 0.1,
        }],
        producers: vec![WellSpec {
            kind: WellKind::Producer,
            i: 199,
            j: 0,
            wellbore_radius: 0.1,
        }],
    };
    let fluid = FluidProps {
        gas_fvf: 1.0,
        ..FluidProps::default()
    };
    let sim = Simulator::new(
        &sc,
        SimConfig {
            fluid,
            ..SimConfig::default()
        },
    )
    .unwrap();
    let pore_volume: f64 = sim.pore_volume().iter().sum();
    let rate = 100.0;
    let pvi = 0.3;
    let c = Controls {
        injector_rates: vec![rate],
        producer_bhps: vec![100.0],
    };
    let (state, _, _) = sim
        .step(&sim.initial_state(), &c, pvi * pore_volume / rate)
        .unwrap();

    let length = 200.0 * grid.dx;
    let expected = welge_front(&relperm, &fluid, pvi) * length;
    // oracle front saturation is where the tangent touches f_g
    let slope = expected / (pvi * length);
    let n = 200_000;
    let s_front = (1..=n)
        .map(|i| i as f64 / n as f64)
        .find(|&s| {
            let fg = 1.0
                - relperm.water_fractional_flow(
                    1.0 - s,
                    fluid.water_viscosity,
                    fluid.gas_viscosity,
                );
            (fg / s - slope).abs() < 1e-6 * slope
        })
        .unwrap();
    let sg = state.gas_saturation();
    let half = 0.5 * s_front;
    let k = sg.iter().position(|&s| s < half).unwrap();
    let frac = (sg[k - 1] - half) / (sg[k - 1] - sg[k]);
    let position = (k as f64 - 1.0 + frac + 0.5) * grid.dx;
    Front {
        simulated: position,
        welge: expected,
    }
}
