//! Voltage sensitivity coefficients from the linear system `z = H x`.
//!
//! Differentiating `conj(S_i) = conj(E_i) * sum_n Y_in E_n` with respect to an
//! injection gives, for every non-slack node `i`,
//!
//! ```text
//! d conj(S_i) = conj(dE_i) * I_i + conj(E_i) * sum_n Y_in dE_n,    I_i = sum_n Y_in E_n
//! ```
//!
//! with left-hand side `1` for `dP_i` and `-j` for `dQ_i` (zero for other
//! injections). Each complex equation is split into a real and an imaginary
//! row, each unknown `dE_n` into real and imaginary columns.
//!
//! Ordering is equation-major over non-slack nodes in flat order:
//! row/column `2k` is `Re`, `2k + 1` is `Im` of node `k`. Column `2k` of `z`
//! and `x` is the derivative with respect to `P` of node `k`, `2k + 1` with
//! respect to `Q`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::loadflow::{self, GridState, LoadFlowOptions};
use crate::network::{AdmittanceMatrix, NetworkModel};

/// Injection a coefficient is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Injection {
    P,
    Q,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Part {
    Re,
    Im,
}

/// A non-slack node of the flat ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Node {
    pub bus: u32,
    pub phase: usize,
    /// Index in the full (slack-inclusive) flat ordering.
    pub flat: usize,
}

/// Identifies one real coefficient: `Re` or `Im` of `dE(bus, phase) / d{P,Q}(wrt_bus, wrt_phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoefficientId {
    pub bus: u32,
    pub phase: usize,
    pub wrt_bus: u32,
    pub wrt_phase: usize,
    pub injection: Injection,
    pub part: Part,
}

impl CoefficientId {
    /// Single-phase shorthand, e.g. `CoefficientId::of(Part::Re, 3, 2, Injection::P)`.
    pub fn of(part: Part, bus: u32, wrt_bus: u32, injection: Injection) -> Self {
        Self {
            bus,
            phase: 0,
            wrt_bus,
            wrt_phase: 0,
            injection,
            part,
        }
    }

    /// The six coefficients of the reference comparison tables.
    pub fn reference_set() -> [CoefficientId; 6] {
        use Injection::P;
        [
            Self::of(Part::Re, 3, 2, P),
            Self::of(Part::Re, 3, 4, P),
            Self::of(Part::Re, 4, 4, P),
            Self::of(Part::Im, 3, 2, P),
            Self::of(Part::Im, 3, 3, P),
            Self::of(Part::Im, 4, 4, P),
        ]
    }
}

const PHASE_NAMES: [char; 3] = ['a', 'b', 'c'];

impl fmt::Display for CoefficientId {
    /// `Re(dE3/dP2)` for single-phase ids, `Re(dE3a/dP2b)` otherwise.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let part = match self.part {
            Part::Re => "Re",
            Part::Im => "Im",
        };
        let inj = match self.injection {
            Injection::P => "P",
            Injection::Q => "Q",
        };
        if self.phase == 0 && self.wrt_phase == 0 {
            write!(f, "{part}(dE{}/d{inj}{})", self.bus, self.wrt_bus)
        } else {
            write!(
                f,
                "{part}(dE{}{}/d{inj}{}{})",
                self.bus,
                PHASE_NAMES.get(self.phase).copied().unwrap_or('?'),
                self.wrt_bus,
                PHASE_NAMES.get(self.wrt_phase).copied().unwrap_or('?'),
            )
        }
    }
}

impl std::str::FromStr for CoefficientId {
    type Err = Error;

    /// Inverse of `Display`: `Re(dE3/dP2)` or `Im(dE3a/dQ2c)`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse coefficient '{s}', expected e.g. Re(dE3/dP2)"));
        let t = s.trim();
        let (part, rest) = match t.get(..3) {
            Some("Re(") => (Part::Re, &t[3..]),
            Some("Im(") => (Part::Im, &t[3..]),
            _ => return Err(bad()),
        };
        let inner = rest.strip_suffix(')').ok_or_else(bad)?;
        let (num, den) = inner.split_once('/').ok_or_else(bad)?;
        let node = |text: &str| -> Option<(u32, Option<usize>)> {
            let phase = text
                .chars()
                .last()
                .and_then(|c| PHASE_NAMES.iter().position(|p| *p == c));
            let digits = if phase.is_some() { &text[..text.len() - 1] } else { text };
            Some((digits.parse().ok()?, phase))
        };
        let (bus, phase) = node(num.strip_prefix("dE").ok_or_else(bad)?).ok_or_else(bad)?;
        let (injection, den) = if let Some(d) = den.strip_prefix("dP") {
            (Injection::P, d)
        } else if let Some(d) = den.strip_prefix("dQ") {
            (Injection::Q, d)
        } else {
            return Err(bad());
        };
        let (wrt_bus, wrt_phase) = node(den).ok_or_else(bad)?;
        if phase.is_some() != wrt_phase.is_some() {
            return Err(bad());
        }
        Ok(Self {
            bus,
            phase: phase.unwrap_or(0),
            wrt_bus,
            wrt_phase: wrt_phase.unwrap_or(0),
            injection,
            part,
        })
    }
}

/// The realified linear system for all voltage sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityProblem {
    pub h: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// Non-slack nodes in system order.
    pub nodes: Vec<Node>,
    /// Voltages of the non-slack nodes at the linearization point.
    pub voltages: Vec<Complex64>,
}

impl SensitivityProblem {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// System position of a non-slack node, or `None` for unknown or slack nodes.
    pub fn node_position(&self, bus: u32, phase: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.bus == bus && n.phase == phase)
    }

    /// Row and column of a coefficient in `x`.
    pub fn locate(&self, id: &CoefficientId) -> Option<(usize, usize)> {
        let row = self.node_position(id.bus, id.phase)?;
        let col = self.node_position(id.wrt_bus, id.wrt_phase)?;
        let r = 2 * row + matches!(id.part, Part::Im) as usize;
        let c = 2 * col + matches!(id.injection, Injection::Q) as usize;
        Some((r, c))
    }

    /// Inverse of [`locate`](Self::locate).
    pub fn coefficient_at(&self, row: usize, col: usize) -> CoefficientId {
        let (n, m) = (self.nodes[row / 2], self.nodes[col / 2]);
        CoefficientId {
            bus: n.bus,
            phase: n.phase,
            wrt_bus: m.bus,
            wrt_phase: m.phase,
            injection: if col.is_multiple_of(2) { Injection::P } else { Injection::Q },
            part: if row.is_multiple_of(2) { Part::Re } else { Part::Im },
        }
    }

    /// Every coefficient in column-major order of `x`.
    pub fn all_coefficients(&self) -> Vec<CoefficientId> {
        let n = self.dim();
        (0..n)
            .flat_map(|c| (0..n).map(move |r| (r, c)))
            .map(|(r, c)| self.coefficient_at(r, c))
            .collect()
    }
}

/// Build `H` and `z` at a converged operating point.
pub fn assemble_problem(
    y: &AdmittanceMatrix,
    state: &GridState,
    slack_bus: usize,
) -> Result<SensitivityProblem> {
    if !state.converged {
        return Err(Error::UnconvergedState);
    }
    assemble_from_voltages(y, &state.voltages, slack_bus)
}

/// Build `H` and `z` from arbitrary voltages, e.g. noisy measurements.
/// `slack_bus` is the position of the slack bus in the bus list.
pub fn assemble_from_voltages(
    y: &AdmittanceMatrix,
    voltages: &DVector<Complex64>,
    slack_bus: usize,
) -> Result<SensitivityProblem> {
    let n_all = y.dim();
    if voltages.len() != n_all {
        return Err(Error::Dimension(format!(
            "{} voltages for a {n_all}-node admittance matrix",
            voltages.len()
        )));
    }
    let p = y.phases();
    if slack_bus >= y.bus_labels().len() {
        return Err(Error::Dimension(format!(
            "slack position {slack_bus} outside {} buses",
            y.bus_labels().len()
        )));
    }
    let nodes: Vec<Node> = (0..n_all)
        .filter(|flat| flat / p != slack_bus)
        .map(|flat| {
            let (bus, phase) = y.node(flat);
            Node { bus, phase, flat }
        })
        .collect();
    let n = 2 * nodes.len();
    let ym = y.matrix();
    let currents = ym * voltages;

    let mut h = DMatrix::<f64>::zeros(n, n);
    for (r, node) in nodes.iter().enumerate() {
        let i = node.flat;
        let (re, im) = (2 * r, 2 * r + 1);
        // conj(dE_i) * I_i
        let cur = currents[i];
        h[(re, re)] += cur.re;
        h[(re, im)] += cur.im;
        h[(im, re)] += cur.im;
        h[(im, im)] -= cur.re;
        // conj(E_i) * Y_in * dE_n
        let ei = voltages[i].conj();
        for (c, other) in nodes.iter().enumerate() {
            let coef = ei * ym[(i, other.flat)];
            h[(re, 2 * c)] += coef.re;
            h[(re, 2 * c + 1)] -= coef.im;
            h[(im, 2 * c)] += coef.im;
            h[(im, 2 * c + 1)] += coef.re;
        }
    }

    let mut z = DMatrix::<f64>::zeros(n, n);
    for k in 0..nodes.len() {
        z[(2 * k, 2 * k)] = 1.0;
        z[(2 * k + 1, 2 * k + 1)] = -1.0;
    }

    Ok(SensitivityProblem {
        h,
        z,
        voltages: nodes.iter().map(|n| voltages[n.flat]).collect(),
        nodes,
    })
}

/// Solved coefficients together with the explicit inverse of `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityResult {
    pub x: DMatrix<f64>,
    pub h_inv: DMatrix<f64>,
    pub nodes: Vec<Node>,
    pub voltages: Vec<Complex64>,
    /// 1-norm condition number of `H`.
    pub condition: f64,
}

impl SensitivityResult {
    fn position(&self, bus: u32, phase: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.bus == bus && n.phase == phase)
    }

    /// `dE(bus, phase) / d{P,Q}(wrt_bus, wrt_phase)` as a complex number.
    pub fn voltage_sensitivity(
        &self,
        bus: u32,
        phase: usize,
        wrt_bus: u32,
        wrt_phase: usize,
        injection: Injection,
    ) -> Option<Complex64> {
        let r = self.position(bus, phase)?;
        let c = 2 * self.position(wrt_bus, wrt_phase)? + matches!(injection, Injection::Q) as usize;
        Some(Complex64::new(self.x[(2 * r, c)], self.x[(2 * r + 1, c)]))
    }

    /// `d|E(bus, phase)| / d{P,Q}(wrt_bus, wrt_phase)`.
    pub fn magnitude_sensitivity(
        &self,
        bus: u32,
        phase: usize,
        wrt_bus: u32,
        wrt_phase: usize,
        injection: Injection,
    ) -> Option<f64> {
        let d = self.voltage_sensitivity(bus, phase, wrt_bus, wrt_phase, injection)?;
        let e = self.voltages[self.position(bus, phase)?];
        Some((e.re * d.re + e.im * d.im) / e.norm())
    }

    pub fn get(&self, id: &CoefficientId) -> Option<f64> {
        let d = self.voltage_sensitivity(id.bus, id.phase, id.wrt_bus, id.wrt_phase, id.injection)?;
        Some(match id.part {
            Part::Re => d.re,
            Part::Im => d.im,
        })
    }
}

/// Reciprocal condition numbers below this are treated as singular.
pub const MIN_RCOND: f64 = 1e-13;

/// `x = H^-1 z` through an explicitly formed inverse.
pub fn solve_coefficients(problem: &SensitivityProblem) -> Result<SensitivityResult> {
    let (h_inv, condition) = linalg::invert_checked(&problem.h, MIN_RCOND)?;
    let x = &h_inv * &problem.z;

    let residual = linalg::norm_inf(&(&problem.h * &x - &problem.z));
    let bound = 1e-10 * linalg::norm_inf(&problem.z);
    if residual > bound {
        return Err(Error::Residual { residual, bound });
    }
    Ok(SensitivityResult {
        x,
        h_inv,
        nodes: problem.nodes.clone(),
        voltages: problem.voltages.clone(),
        condition,
    })
}

/// Central-difference derivative of the load-flow solution with respect to
/// one injection, `(E(s + h) - E(s - h)) / 2h`, for every non-slack node.
///
/// Independent of the `H` assembly: it only uses the load-flow solver.
pub fn finite_difference_oracle(
    network: &NetworkModel,
    y: &AdmittanceMatrix,
    bus: u32,
    phase: usize,
    which: Injection,
    h: f64,
) -> Result<Vec<Complex64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let pos = network
        .position(bus)
        .ok_or_else(|| Error::Config(format!("unknown bus {bus}")))?;
    if network.buses[pos].is_slack() || phase >= network.phases {
        return Err(Error::Config(format!(
            "bus {bus} phase {phase} is not a PQ node"
        )));
    }
    let flat = network.flat_index(pos, phase);
    let slack = loadflow::slack_nodes(network);
    let slack_v = network.slack_voltages();
    let base = network.injections_pu();
    let options = LoadFlowOptions {
        tolerance: 1e-13,
        max_iterations: 50,
    };
    let nominal = loadflow::solve_load_flow_with(network, y, None, options)?;
    let step = match which {
        Injection::P => Complex64::new(h, 0.0),
        Injection::Q => Complex64::new(0.0, h),
    };
    let solve = |sign: f64| {
        let mut s = base.clone();
        s[flat] += step * sign;
        loadflow::solve_with_injections(y, &slack, &slack_v, &s, Some(&nominal.voltages), options)
    };
    let plus = solve(1.0)?;
    let minus = solve(-1.0)?;
    Ok((0..y.dim())
        .filter(|k| !slack.contains(k))
        .map(|k| (plus.voltages[k] - minus.voltages[k]) / (2.0 * h))
        .collect())
}
