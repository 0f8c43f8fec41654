//! AC load flow by Newton-Raphson in rectangular coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{AdmittanceMatrix, NetworkModel};

/// Nodal voltage phasors of an operating point, per-unit, flat node order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub voltages: DVector<Complex64>,
    pub converged: bool,
    /// Specified minus computed injection per node (zero at the slack).
    pub mismatch: DVector<Complex64>,
    pub iterations: usize,
    /// Max-norm of the mismatch at the start of each iteration, including the last check.
    pub mismatch_history: Vec<f64>,
}

impl GridState {
    /// Wrap a voltage vector that is not the result of a load flow, e.g. a measurement.
    pub fn from_voltages(voltages: DVector<Complex64>) -> Self {
        let n = voltages.len();
        Self {
            voltages,
            converged: false,
            mismatch: DVector::zeros(n),
            iterations: 0,
            mismatch_history: Vec::new(),
        }
    }

    pub fn max_mismatch(&self) -> f64 {
        self.mismatch.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadFlowOptions {
    /// Convergence threshold on the max-norm of the complex power mismatch, pu.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LoadFlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50,
        }
    }
}

/// Complex power injected at every node: `S_i = E_i * conj(sum_n Y_in E_n)`.
pub fn nodal_power(
    voltages: &DVector<Complex64>,
    y: &AdmittanceMatrix,
) -> Result<DVector<Complex64>> {
    if voltages.len() != y.dim() {
        return Err(Error::Dimension(format!(
            "{} voltages for a {}-node admittance matrix",
            voltages.len(),
            y.dim()
        )));
    }
    let currents = y.matrix() * voltages;
    Ok(voltages.zip_map(&currents, |e, i| e * i.conj()))
}

/// Flat indices of the slack bus phases.
pub(crate) fn slack_nodes(network: &NetworkModel) -> Vec<usize> {
    let pos = network.slack_position();
    (0..network.phases)
        .map(|ph| network.flat_index(pos, ph))
        .collect()
}

/// Solve the network's load flow from a flat start (or `initial`) with default options.
pub fn solve_load_flow(
    network: &NetworkModel,
    y: &AdmittanceMatrix,
    initial: Option<&GridState>,
) -> Result<GridState> {
    solve_load_flow_with(network, y, initial, LoadFlowOptions::default())
}

pub fn solve_load_flow_with(
    network: &NetworkModel,
    y: &AdmittanceMatrix,
    initial: Option<&GridState>,
    options: LoadFlowOptions,
) -> Result<GridState> {
    solve_with_injections(
        y,
        &slack_nodes(network),
        &network.slack_voltages(),
        &network.injections_pu(),
        initial.map(|s| &s.voltages),
        options,
    )
}

/// Newton-Raphson on explicit injections.
///
/// `slack` lists the flat indices held at `slack_voltages`; every other node
/// is PQ with injection `injections[i]`. The flat start puts each phase of
/// every bus at the slack phasor of the same phase.
pub fn solve_with_injections(
    y: &AdmittanceMatrix,
    slack: &[usize],
    slack_voltages: &[Complex64],
    injections: &DVector<Complex64>,
    initial: Option<&DVector<Complex64>>,
    options: LoadFlowOptions,
) -> Result<GridState> {
    let n = y.dim();
    let p = y.phases();
    if injections.len() != n || slack.len() != slack_voltages.len() {
        return Err(Error::Dimension(format!(
            "{} injections / {} slack phasors for {n} nodes",
            injections.len(),
            slack_voltages.len()
        )));
    }
    let mut voltages = match initial {
        Some(v) if v.len() == n => v.clone(),
        Some(v) => {
            return Err(Error::Dimension(format!(
                "initial state has {} nodes, expected {n}",
                v.len()
            )))
        }
        None => DVector::from_fn(n, |i, _| slack_voltages[(i % p).min(slack_voltages.len() - 1)]),
    };
    for (&k, &v) in slack.iter().zip(slack_voltages) {
        voltages[k] = v;
    }
    let pq: Vec<usize> = (0..n).filter(|i| !slack.contains(i)).collect();
    let m = pq.len();
    let ym = y.matrix();

    let mut history = Vec::new();
    let mut iteration = 0;
    loop {
        let currents = ym * &voltages;
        let mut mismatch = DVector::zeros(n);
        for &i in &pq {
            mismatch[i] = injections[i] - voltages[i] * currents[i].conj();
        }
        let worst = mismatch.iter().map(|s: &Complex64| s.norm()).fold(0.0, f64::max);
        history.push(worst);
        if !worst.is_finite() {
            return Err(Error::NotConverged {
                iterations: iteration,
                mismatch: worst,
            });
        }
        if worst <= options.tolerance {
            return Ok(GridState {
                voltages,
                converged: true,
                mismatch,
                iterations: iteration,
                mismatch_history: history,
            });
        }
        if iteration == options.max_iterations {
            return Err(Error::NotConverged {
                iterations: iteration,
                mismatch: worst,
            });
        }

        // dS/dRe(E) = diag(conj I) + diag(E) conj(Y),  dS/dIm(E) = j (diag(conj I) - diag(E) conj(Y))
        let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pq.iter().enumerate() {
                let cross = voltages[i] * ym[(i, k)].conj();
                let diag = if i == k {
                    currents[i].conj()
                } else {
                    Complex64::new(0.0, 0.0)
                };
                let d_re = diag + cross;
                let d_im = Complex64::i() * (diag - cross);
                jac[(r, c)] = d_re.re;
                jac[(r, m + c)] = d_im.re;
                jac[(m + r, c)] = d_re.im;
                jac[(m + r, m + c)] = d_im.im;
            }
        }
        let rhs = DVector::from_fn(2 * m, |r, _| {
            if r < m {
                mismatch[pq[r]].re
            } else {
                mismatch[pq[r - m]].im
            }
        });
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularJacobian(iteration))?;
        for (r, &i) in pq.iter().enumerate() {
            voltages[i] += Complex64::new(step[r], step[m + r]);
        }
        iteration += 1;
    }
}
