#![allow(dead_code)]

use nalgebra::DMatrix;
use pfsc_core::sensitivity::{assemble_problem, solve_coefficients};
use pfsc_core::{
    build_admittance, parse_network, solve_load_flow, AdmittanceMatrix, Branch, Bus, BusKind,
    GridState, NetworkModel, SensitivityProblem, SensitivityResult,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Solved {
    pub net: NetworkModel,
    pub y: AdmittanceMatrix,
    pub state: GridState,
    pub problem: SensitivityProblem,
    pub solution: SensitivityResult,
}

pub fn solve(net: NetworkModel) -> Solved {
    let y = build_admittance(&net).unwrap();
    let state = solve_load_flow(&net, &y, None).unwrap();
    let problem = assemble_problem(&y, &state, net.slack_position()).unwrap();
    let solution = solve_coefficients(&problem).unwrap();
    Solved {
        net,
        y,
        state,
        problem,
        solution,
    }
}

pub fn ieee4() -> NetworkModel {
    parse_network(pfsc_core::network::IEEE4_BALANCED, "bundled").unwrap()
}

fn bus(index: u32, kind: BusKind, p: usize, load: (f64, f64)) -> Bus {
    Bus {
        index,
        kind,
        v_base_v: 1000.0,
        load_kw: vec![load.0; p],
        load_kvar: vec![load.1; p],
        gen_kw: vec![0.0; p],
        gen_kvar: vec![0.0; p],
    }
}

fn branch(from: u32, to: u32, r: DMatrix<f64>, x: DMatrix<f64>) -> Branch {
    let p = r.nrows();
    Branch {
        from,
        to,
        r_ohm: r,
        x_ohm: x,
        g_shunt_s: DMatrix::zeros(p, p),
        b_shunt_s: DMatrix::zeros(p, p),
        length: 1.0,
    }
}

const SLACK: BusKind = BusKind::Slack {
    v_pu: 1.0,
    angle_deg: 0.0,
};

/// Single-phase 2-bus network on a 1 MVA / 1 kV base (impedance base 1 ohm),
/// series impedance `r + jx` pu, demand `load` (kW, kvar) at bus 2.
pub fn two_bus(r: f64, x: f64, load: (f64, f64)) -> NetworkModel {
    NetworkModel {
        name: "two-bus".into(),
        phases: 1,
        s_base_va: 1e6,
        v_base_v: 1000.0,
        buses: vec![bus(1, SLACK, 1, (0.0, 0.0)), bus(2, BusKind::Pq, 1, load)],
        branches: vec![branch(
            1,
            2,
            DMatrix::from_element(1, 1, r),
            DMatrix::from_element(1, 1, x),
        )],
    }
}

/// Random radial single-phase network with `n` buses, 1 MVA / 1 kV base.
pub fn random_radial(seed: u64, n: usize) -> NetworkModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buses = vec![bus(1, SLACK, 1, (0.0, 0.0))];
    let mut branches = Vec::new();
    for k in 2..=n as u32 {
        let load = (rng.random_range(20.0..200.0), rng.random_range(0.0..100.0));
        buses.push(bus(k, BusKind::Pq, 1, load));
        let parent = rng.random_range(1..k);
        let r = rng.random_range(0.005..0.05);
        let x = rng.random_range(0.01..0.1);
        branches.push(branch(
            parent,
            k,
            DMatrix::from_element(1, 1, r),
            DMatrix::from_element(1, 1, x),
        ));
    }
    NetworkModel {
        name: format!("random-{seed}"),
        phases: 1,
        s_base_va: 1e6,
        v_base_v: 1000.0,
        buses,
        branches,
    }
}

/// The bundled feeder as a balanced three-phase model with transposed lines:
/// self impedance `z + zm`, mutual `zm = 0.3 z`, so the positive-sequence
/// impedance equals the single-phase one. Loads are split evenly.
pub fn ieee4_three_phase() -> NetworkModel {
    let single = ieee4();
    let p = 3;
    let block = |v: f64| {
        let m = 0.3 * v;
        DMatrix::from_fn(p, p, |i, j| if i == j { v + m } else { m })
    };
    let split = |v: &[f64]| vec![v[0] / 3.0; p];
    NetworkModel {
        name: "ieee4-three-phase".into(),
        phases: p,
        s_base_va: single.s_base_va,
        v_base_v: single.v_base_v,
        buses: single
            .buses
            .iter()
            .map(|b| Bus {
                index: b.index,
                kind: b.kind,
                v_base_v: b.v_base_v,
                load_kw: split(&b.load_kw),
                load_kvar: split(&b.load_kvar),
                gen_kw: split(&b.gen_kw),
                gen_kvar: split(&b.gen_kvar),
            })
            .collect(),
        branches: single
            .branches
            .iter()
            .map(|b| Branch {
                from: b.from,
                to: b.to,
                r_ohm: block(b.r_ohm[(0, 0)]),
                x_ohm: block(b.x_ohm[(0, 0)]),
                g_shunt_s: DMatrix::zeros(p, p),
                b_shunt_s: DMatrix::zeros(p, p),
                length: b.length,
            })
            .collect(),
    }
}

/// Relative difference against a reference, floored to avoid dividing by zero.
pub fn rel(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(1e-9)
}
