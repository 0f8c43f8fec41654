//! Network description and compound admittance matrix assembly.
//!
//! A [`NetworkModel`] keeps the data in the units of the description file
//! (kW, kVar, ohm, siemens). Per-unit quantities are derived on demand from
//! the power base and the voltage base of each bus, so a model written back
//! to disk reloads to an identical value.
//!
//! Flat node ordering is bus-major, phase-minor:
//! `(bus1, a), (bus1, b), (bus1, c), (bus2, a), ...`.

mod file;

use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub use file::{emit_network, load_network, parse_network, IEEE4_BALANCED};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BusKind {
    /// Voltage-independent bus with a fixed phasor (positive-sequence phase a).
    Slack { v_pu: f64, angle_deg: f64 },
    /// Bus with specified active and reactive injections.
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// Label used in files and reports.
    pub index: u32,
    pub kind: BusKind,
    /// Line-to-line voltage base of the bus voltage level.
    pub v_base_v: f64,
    /// Per-phase demand. For a single-phase equivalent model the single
    /// entry carries the three-phase total.
    pub load_kw: Vec<f64>,
    pub load_kvar: Vec<f64>,
    /// Per-phase generation (e.g. PV units), same convention as the load.
    pub gen_kw: Vec<f64>,
    pub gen_kvar: Vec<f64>,
}

impl Bus {
    pub fn is_slack(&self) -> bool {
        matches!(self.kind, BusKind::Slack { .. })
    }

    /// Net injection (generation minus demand) of one phase in kVA.
    pub fn injection_kva(&self, phase: usize) -> Complex64 {
        Complex64::new(
            self.gen_kw[phase] - self.load_kw[phase],
            self.gen_kvar[phase] - self.load_kvar[phase],
        )
    }
}

/// A series element between two buses, optionally with line charging.
///
/// Series and shunt parameters are per length unit; the element totals are
/// obtained by multiplying with `length`. Impedances are referred to the
/// voltage level of the `from` bus. The shunt admittance is split evenly
/// between both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r_ohm: DMatrix<f64>,
    pub x_ohm: DMatrix<f64>,
    pub g_shunt_s: DMatrix<f64>,
    pub b_shunt_s: DMatrix<f64>,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub name: String,
    /// 1 (balanced single-phase equivalent) or 3.
    pub phases: usize,
    /// Three-phase power base in VA.
    pub s_base_va: f64,
    /// Default line-to-line voltage base, used by buses without their own.
    pub v_base_v: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

/// Per-unit series admittance and half shunt of one branch, with bus positions.
#[derive(Debug, Clone)]
pub(crate) struct BranchAdmittance {
    pub from: usize,
    pub to: usize,
    pub series: DMatrix<Complex64>,
    pub shunt_half: DMatrix<Complex64>,
}

impl NetworkModel {
    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// Number of flat nodes, `p * N_b`.
    pub fn node_count(&self) -> usize {
        self.phases * self.buses.len()
    }

    pub fn flat_index(&self, bus_pos: usize, phase: usize) -> usize {
        bus_pos * self.phases + phase
    }

    /// Position of a bus label in the bus list.
    pub fn position(&self, label: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.index == label)
    }

    /// Position of the slack bus. Assumes the model has been validated.
    pub fn slack_position(&self) -> usize {
        self.buses
            .iter()
            .position(Bus::is_slack)
            .expect("validated network has a slack bus")
    }

    pub fn bus_labels(&self) -> Vec<u32> {
        self.buses.iter().map(|b| b.index).collect()
    }

    /// Per-phase power base. For `p = 1` this is the three-phase base.
    pub fn phase_power_base_va(&self) -> f64 {
        self.s_base_va / self.phases as f64
    }

    pub fn impedance_base_ohm(&self, bus_pos: usize) -> f64 {
        let v = self.buses[bus_pos].v_base_v;
        v * v / self.s_base_va
    }

    /// Specified complex injections per flat node in per-unit. Slack entries are zero.
    pub fn injections_pu(&self) -> DVector<Complex64> {
        let base_kva = self.phase_power_base_va() / 1e3;
        let mut s = DVector::zeros(self.node_count());
        for (pos, bus) in self.buses.iter().enumerate() {
            if bus.is_slack() {
                continue;
            }
            for ph in 0..self.phases {
                s[self.flat_index(pos, ph)] = bus.injection_kva(ph) / base_kva;
            }
        }
        s
    }

    /// Fixed phasors of the slack bus, one per phase. Phases b and c lag
    /// phase a by 120 and 240 degrees.
    pub fn slack_voltages(&self) -> Vec<Complex64> {
        let (v, angle) = match self.buses[self.slack_position()].kind {
            BusKind::Slack { v_pu, angle_deg } => (v_pu, angle_deg.to_radians()),
            BusKind::Pq => unreachable!(),
        };
        (0..self.phases)
            .map(|ph| Complex64::from_polar(v, angle - 2.0 * PI * ph as f64 / 3.0))
            .collect()
    }

    /// Check every structural invariant of the model.
    pub fn validate(&self) -> Result<()> {
        let p = self.phases;
        if p != 1 && p != 3 {
            return Err(Error::Validation(format!("phases must be 1 or 3, got {p}")));
        }
        if !(self.s_base_va > 0.0) || !(self.v_base_v > 0.0) {
            return Err(Error::Validation("bases must be positive".into()));
        }
        if self.buses.len() < 2 {
            return Err(Error::Validation("at least two buses are required".into()));
        }
        let mut seen = HashSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.index) {
                return Err(Error::Validation(format!("duplicate bus index {}", bus.index)));
            }
            if !(bus.v_base_v > 0.0) {
                return Err(Error::Validation(format!(
                    "bus {}: voltage base must be positive",
                    bus.index
                )));
            }
            for (name, v) in [
                ("load_kw", &bus.load_kw),
                ("load_kvar", &bus.load_kvar),
                ("gen_kw", &bus.gen_kw),
                ("gen_kvar", &bus.gen_kvar),
            ] {
                if v.len() != p {
                    return Err(Error::Dimension(format!(
                        "bus {}: {name} has {} entries, expected {p}",
                        bus.index,
                        v.len()
                    )));
                }
            }
            if let BusKind::Slack { v_pu, .. } = bus.kind {
                if !(v_pu > 0.0) {
                    return Err(Error::Validation(format!(
                        "slack bus {}: voltage must be positive",
                        bus.index
                    )));
                }
                if (0..p).any(|ph| bus.injection_kva(ph) != Complex64::new(0.0, 0.0)) {
                    return Err(Error::Validation(format!(
                        "slack bus {} must not carry a specified injection",
                        bus.index
                    )));
                }
            }
        }
        let slack_count = self.buses.iter().filter(|b| b.is_slack()).count();
        if slack_count != 1 {
            return Err(Error::Validation(format!(
                "exactly one slack bus required, found {slack_count}"
            )));
        }

        for br in &self.branches {
            if self.position(br.from).is_none() || self.position(br.to).is_none() {
                return Err(Error::Validation(format!(
                    "branch {}-{} references an unknown bus",
                    br.from, br.to
                )));
            }
            if br.from == br.to {
                return Err(Error::Validation(format!(
                    "branch connects bus {} to itself",
                    br.from
                )));
            }
            for (name, m) in [
                ("r_ohm", &br.r_ohm),
                ("x_ohm", &br.x_ohm),
                ("g_shunt_s", &br.g_shunt_s),
                ("b_shunt_s", &br.b_shunt_s),
            ] {
                if m.shape() != (p, p) {
                    return Err(Error::Dimension(format!(
                        "branch {}-{}: {name} is {}x{}, expected {p}x{p}",
                        br.from,
                        br.to,
                        m.nrows(),
                        m.ncols()
                    )));
                }
            }
            if !(br.length > 0.0) {
                return Err(Error::Validation(format!(
                    "branch {}-{}: length must be positive",
                    br.from, br.to
                )));
            }
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.buses.len();
        let pos: HashMap<u32, usize> = self
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.index, i))
            .collect();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            let (a, b) = (pos[&br.from], pos[&br.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut visited = vec![false; n];
        let start = self.slack_position();
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !visited[v] {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
        match visited.iter().position(|v| !v) {
            Some(i) => Err(Error::NotConnected(self.buses[i].index)),
            None => Ok(()),
        }
    }

    pub(crate) fn branch_admittances(&self) -> Result<Vec<BranchAdmittance>> {
        let p = self.phases;
        self.branches
            .iter()
            .map(|br| {
                let from = self.position(br.from).expect("validated");
                let to = self.position(br.to).expect("validated");
                let z_base = self.impedance_base_ohm(from);
                let z = DMatrix::from_fn(p, p, |r, c| {
                    Complex64::new(br.r_ohm[(r, c)], br.x_ohm[(r, c)]) * (br.length / z_base)
                });
                let series = invert_complex(z).ok_or(Error::DegenerateBranch {
                    from: br.from,
                    to: br.to,
                })?;
                let shunt_half = DMatrix::from_fn(p, p, |r, c| {
                    Complex64::new(br.g_shunt_s[(r, c)], br.b_shunt_s[(r, c)])
                        * (0.5 * br.length * z_base)
                });
                Ok(BranchAdmittance {
                    from,
                    to,
                    series,
                    shunt_half,
                })
            })
            .collect()
    }
}

fn invert_complex(z: DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let scale = z.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let inv = z.clone().try_inverse()?;
    // Reject numerically singular blocks, e.g. exactly repeated rows.
    let inv_scale = inv.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if !inv_scale.is_finite() || scale * inv_scale > 1e14 {
        return None;
    }
    Some(inv)
}

/// Dense compound admittance matrix in per-unit with its node index map.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    matrix: DMatrix<Complex64>,
    phases: usize,
    bus_labels: Vec<u32>,
}

impl AdmittanceMatrix {
    /// Wrap an explicit matrix. The dimension must equal `phases * bus_labels.len()`.
    pub fn from_matrix(
        matrix: DMatrix<Complex64>,
        phases: usize,
        bus_labels: Vec<u32>,
    ) -> Result<Self> {
        let n = phases * bus_labels.len();
        if matrix.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "admittance matrix is {}x{}, expected {n}x{n}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self {
            matrix,
            phases,
            bus_labels,
        })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn bus_labels(&self) -> &[u32] {
        &self.bus_labels
    }

    pub fn flat_index(&self, bus_pos: usize, phase: usize) -> usize {
        bus_pos * self.phases + phase
    }

    /// `(bus label, phase)` of a flat index.
    pub fn node(&self, flat: usize) -> (u32, usize) {
        (self.bus_labels[flat / self.phases], flat % self.phases)
    }

    /// Same index map, different entries.
    pub fn with_matrix(&self, matrix: DMatrix<Complex64>) -> Self {
        assert_eq!(matrix.shape(), self.matrix.shape());
        Self {
            matrix,
            phases: self.phases,
            bus_labels: self.bus_labels.clone(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for AdmittanceMatrix {
    type Output = Complex64;

    fn index(&self, idx: (usize, usize)) -> &Complex64 {
        &self.matrix[idx]
    }
}

/// Assemble the compound admittance matrix of a network in per-unit.
pub fn build_admittance(network: &NetworkModel) -> Result<AdmittanceMatrix> {
    network.validate()?;
    let branches = network.branch_admittances()?;
    let matrix = assemble(network.bus_count(), network.phases, &branches);
    AdmittanceMatrix::from_matrix(matrix, network.phases, network.bus_labels())
}

pub(crate) fn assemble(
    bus_count: usize,
    phases: usize,
    branches: &[BranchAdmittance],
) -> DMatrix<Complex64> {
    let n = bus_count * phases;
    let mut y = DMatrix::zeros(n, n);
    for br in branches {
        let (f, t) = (br.from * phases, br.to * phases);
        for r in 0..phases {
            for c in 0..phases {
                let ys = br.series[(r, c)];
                let sh = br.shunt_half[(r, c)];
                y[(f + r, f + c)] += ys + sh;
                y[(t + r, t + c)] += ys + sh;
                y[(f + r, t + c)] -= ys;
                y[(t + r, f + c)] -= ys;
            }
        }
    }
    y
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn two_bus(x_pu: f64) -> NetworkModel {
        let bus = |index, kind| Bus {
            index,
            kind,
            v_base_v: 1000.0,
            load_kw: vec![0.0],
            load_kvar: vec![0.0],
            gen_kw: vec![0.0],
            gen_kvar: vec![0.0],
        };
        // s_base = 1 MVA, v_base = 1 kV -> z_base = 1 ohm
        NetworkModel {
            name: "two-bus".into(),
            phases: 1,
            s_base_va: 1e6,
            v_base_v: 1000.0,
            buses: vec![
                bus(
                    1,
                    BusKind::Slack {
                        v_pu: 1.0,
                        angle_deg: 0.0,
                    },
                ),
                bus(2, BusKind::Pq),
            ],
            branches: vec![Branch {
                from: 1,
                to: 2,
                r_ohm: DMatrix::zeros(1, 1),
                x_ohm: DMatrix::from_element(1, 1, x_pu),
                g_shunt_s: DMatrix::zeros(1, 1),
                b_shunt_s: DMatrix::zeros(1, 1),
                length: 1.0,
            }],
        }
    }

    #[test]
    fn two_bus_single_branch() {
        let y = build_admittance(&two_bus(0.1)).unwrap();
        let j = Complex64::new(0.0, 1.0);
        assert_relative_eq!((y[(0, 0)] - (-10.0 * j)).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((y[(0, 1)] - 10.0 * j).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((y[(1, 0)] - 10.0 * j).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((y[(1, 1)] - (-10.0 * j)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn disconnected_network_is_rejected() {
        let mut net = two_bus(0.1);
        let mut island = net.buses[1].clone();
        island.index = 3;
        net.buses.push(island);
        match build_admittance(&net) {
            Err(Error::NotConnected(3)) => {}
            other => panic!("expected NotConnected, got {other:?}"),
        }
    }

    #[test]
    fn zero_impedance_branch_is_degenerate() {
        let net = two_bus(0.0);
        assert!(matches!(
            build_admittance(&net),
            Err(Error::DegenerateBranch { from: 1, to: 2 })
        ));
    }

    #[test]
    fn singular_three_phase_block_is_degenerate() {
        let mut net = two_bus(0.1);
        net.phases = 3;
        for bus in &mut net.buses {
            bus.load_kw = vec![0.0; 3];
            bus.load_kvar = vec![0.0; 3];
            bus.gen_kw = vec![0.0; 3];
            bus.gen_kvar = vec![0.0; 3];
        }
        let br = &mut net.branches[0];
        br.r_ohm = DMatrix::from_element(3, 3, 0.1);
        br.x_ohm = DMatrix::from_element(3, 3, 0.3);
        br.g_shunt_s = DMatrix::zeros(3, 3);
        br.b_shunt_s = DMatrix::zeros(3, 3);
        assert!(matches!(
            build_admittance(&net),
            Err(Error::DegenerateBranch { .. })
        ));
    }

    #[test]
    fn self_loop_and_double_slack_are_rejected() {
        let mut net = two_bus(0.1);
        net.branches[0].to = 1;
        assert!(matches!(net.validate(), Err(Error::Validation(_))));

        let mut net = two_bus(0.1);
        net.buses[1].kind = BusKind::Slack {
            v_pu: 1.0,
            angle_deg: 0.0,
        };
        assert!(matches!(net.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn shunts_enter_diagonal_only() {
        let mut net = two_bus(0.1);
        net.branches[0].b_shunt_s = DMatrix::from_element(1, 1, 0.02);
        let y = build_admittance(&net).unwrap();
        let m = y.matrix();
        // off-diagonal unaffected, each end receives half the shunt
        assert_relative_eq!(m[(0, 1)].im, 10.0, epsilon = 1e-12);
        assert_relative_eq!((m[(0, 0)] + m[(0, 1)]).im, 0.01, epsilon = 1e-12);
        assert_relative_eq!((m[(1, 1)] + m[(1, 0)]).im, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn slack_voltages_three_phase_are_balanced() {
        let mut net = two_bus(0.1);
        net.phases = 3;
        let v = net.slack_voltages();
        let sum: Complex64 = v.iter().sum();
        assert!(sum.norm() < 1e-12);
        assert_relative_eq!(v[1].arg().to_degrees(), -120.0, epsilon = 1e-9);
    }
}
