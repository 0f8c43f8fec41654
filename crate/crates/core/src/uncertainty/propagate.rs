//! Variance of the entries of `H` from admittance and voltage uncertainty.
//!
//! Every entry of `H` is a bilinear form `sum_k c_k * y_k * e_k` where `y_k`
//! is the real or imaginary part of an admittance element, `e_k` the real or
//! imaginary part of a nodal voltage and `c_k` is `+1` or `-1`. With all
//! inputs independent, the product rule `var(ab) = a^2 var(b) + b^2 var(a)`
//! and the sum rule `var(a + b) = var(a) + var(b)` are applied after
//! collecting the coefficient of each distinct input, so an input that occurs
//! in several products of the same entry contributes its full derivative.
//! The optional second-order term adds `c^2 var(y) var(e)` per product, which
//! makes the result exact for a bilinear form.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::noise::CartesianNoiseSpec;
use crate::error::{Error, Result};
use crate::loadflow::GridState;
use crate::network::AdmittanceMatrix;
use crate::sensitivity::{Part, SensitivityProblem};

/// Per-element variances of the real and imaginary parts of `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceUncertainty {
    pub var_re: DMatrix<f64>,
    pub var_im: DMatrix<f64>,
    /// Relative level (fraction) when built by [`from_percent`](Self::from_percent).
    pub relative_level: Option<f64>,
}

impl AdmittanceUncertainty {
    /// Standard deviation of each part equal to `pct` percent of that part's magnitude.
    pub fn from_percent(y: &AdmittanceMatrix, pct: f64) -> Result<Self> {
        if !(pct >= 0.0) || !pct.is_finite() {
            return Err(Error::Noise(format!("admittance uncertainty {pct}% is invalid")));
        }
        let level = pct / 100.0;
        Ok(Self {
            var_re: y.matrix().map(|v| (level * v.re).powi(2)),
            var_im: y.matrix().map(|v| (level * v.im).powi(2)),
            relative_level: Some(level),
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            var_re: DMatrix::zeros(dim, dim),
            var_im: DMatrix::zeros(dim, dim),
            relative_level: Some(0.0),
        }
    }

    pub fn sigma_re(&self) -> DMatrix<f64> {
        self.var_re.map(f64::sqrt)
    }

    pub fn sigma_im(&self) -> DMatrix<f64> {
        self.var_im.map(f64::sqrt)
    }

    /// Scale every standard deviation by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            var_re: &self.var_re * (k * k),
            var_im: &self.var_im * (k * k),
            relative_level: self.relative_level.map(|l| l * k),
        }
    }
}

/// Per-entry variance of `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct HVariance {
    pub var: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PropagationOptions {
    /// Add the `var(a) var(b)` term of the product rule.
    pub second_order: bool,
}

/// Real or imaginary part of an admittance element `(row, col)` in flat indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct AdmittanceInput {
    pub row: usize,
    pub col: usize,
    pub part: Part,
}

/// Real or imaginary part of a nodal voltage (flat index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VoltageInput {
    pub node: usize,
    pub part: Part,
}

/// One product `coef * y * e` of an `H` entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub y: AdmittanceInput,
    pub e: VoltageInput,
}

fn yin(row: usize, col: usize, part: Part) -> AdmittanceInput {
    AdmittanceInput { row, col, part }
}

fn ein(node: usize, part: Part) -> VoltageInput {
    VoltageInput { node, part }
}

/// Products making up `Re(Y_in E_n)` summed over `n`, i.e. `Re(I_i)`, times `sign`.
fn current_re(i: usize, n_all: usize, sign: f64, out: &mut Vec<Term>) {
    use Part::{Im, Re};
    for n in 0..n_all {
        out.push(Term { coef: sign, y: yin(i, n, Re), e: ein(n, Re) });
        out.push(Term { coef: -sign, y: yin(i, n, Im), e: ein(n, Im) });
    }
}

/// `Im(I_i)` times `sign`.
fn current_im(i: usize, n_all: usize, sign: f64, out: &mut Vec<Term>) {
    use Part::{Im, Re};
    for n in 0..n_all {
        out.push(Term { coef: sign, y: yin(i, n, Re), e: ein(n, Im) });
        out.push(Term { coef: sign, y: yin(i, n, Im), e: ein(n, Re) });
    }
}

/// `Re(conj(E_i) Y_im)` times `sign`.
fn coupling_re(i: usize, m: usize, sign: f64, out: &mut Vec<Term>) {
    use Part::{Im, Re};
    out.push(Term { coef: sign, y: yin(i, m, Re), e: ein(i, Re) });
    out.push(Term { coef: sign, y: yin(i, m, Im), e: ein(i, Im) });
}

/// `Im(conj(E_i) Y_im)` times `sign`.
fn coupling_im(i: usize, m: usize, sign: f64, out: &mut Vec<Term>) {
    use Part::{Im, Re};
    out.push(Term { coef: sign, y: yin(i, m, Im), e: ein(i, Re) });
    out.push(Term { coef: -sign, y: yin(i, m, Re), e: ein(i, Im) });
}

/// Bilinear expansion of `H[row, col]`.
///
/// `flat` maps system node positions to flat indices and `n_all` is the
/// number of flat nodes including the slack.
pub fn entry_terms(flat: &[usize], n_all: usize, row: usize, col: usize) -> Vec<Term> {
    let i = flat[row / 2];
    let m = flat[col / 2];
    let row_im = row % 2 == 1;
    let col_im = col % 2 == 1;
    let mut terms = Vec::new();
    // conj(dE_i) * I_i acts on the unknowns of node i only
    if i == m {
        match (row_im, col_im) {
            (false, false) => current_re(i, n_all, 1.0, &mut terms),
            (false, true) => current_im(i, n_all, 1.0, &mut terms),
            (true, false) => current_im(i, n_all, 1.0, &mut terms),
            (true, true) => current_re(i, n_all, -1.0, &mut terms),
        }
    }
    // conj(E_i) * Y_im * dE_m
    match (row_im, col_im) {
        (false, false) => coupling_re(i, m, 1.0, &mut terms),
        (false, true) => coupling_im(i, m, -1.0, &mut terms),
        (true, false) => coupling_im(i, m, 1.0, &mut terms),
        (true, true) => coupling_re(i, m, 1.0, &mut terms),
    }
    terms
}

fn part_of(v: Complex64, part: Part) -> f64 {
    match part {
        Part::Re => v.re,
        Part::Im => v.im,
    }
}

/// Value of an expanded entry at `(Y, E)`.
pub fn evaluate_terms(terms: &[Term], y: &AdmittanceMatrix, voltages: &[Complex64]) -> f64 {
    terms
        .iter()
        .map(|t| {
            t.coef * part_of(y[(t.y.row, t.y.col)], t.y.part) * part_of(voltages[t.e.node], t.e.part)
        })
        .sum()
}

fn check_nonnegative(values: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    for v in values {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Noise(format!("{what} variance {v} is negative or not finite")));
        }
    }
    Ok(())
}

/// Propagate admittance and voltage variances to the entries of `H`.
pub fn propagate_to_h(
    problem: &SensitivityProblem,
    y: &AdmittanceMatrix,
    state: &GridState,
    yu: &AdmittanceUncertainty,
    en: &CartesianNoiseSpec,
    options: PropagationOptions,
) -> Result<HVariance> {
    let n_all = y.dim();
    if state.voltages.len() != n_all
        || yu.var_re.shape() != (n_all, n_all)
        || yu.var_im.shape() != (n_all, n_all)
        || en.len() != n_all
    {
        return Err(Error::Dimension(format!(
            "uncertainty inputs do not match a {n_all}-node network"
        )));
    }
    check_nonnegative(yu.var_re.iter().chain(yu.var_im.iter()).copied(), "admittance")?;
    check_nonnegative(en.var_re.iter().chain(en.var_im.iter()).copied(), "voltage")?;

    let flat: Vec<usize> = problem.nodes.iter().map(|n| n.flat).collect();
    let voltages: Vec<Complex64> = state.voltages.iter().copied().collect();
    let y_var = |inp: &AdmittanceInput| match inp.part {
        Part::Re => yu.var_re[(inp.row, inp.col)],
        Part::Im => yu.var_im[(inp.row, inp.col)],
    };
    let e_var = |inp: &VoltageInput| match inp.part {
        Part::Re => en.var_re[inp.node],
        Part::Im => en.var_im[inp.node],
    };

    let dim = problem.dim();
    let mut var = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        for row in 0..dim {
            let terms = entry_terms(&flat, n_all, row, col);
            // d H / d y_k = sum of c * e over products containing y_k, and vice versa
            let mut grad_y: BTreeMap<AdmittanceInput, f64> = BTreeMap::new();
            let mut grad_e: BTreeMap<VoltageInput, f64> = BTreeMap::new();
            for t in &terms {
                let yv = part_of(y[(t.y.row, t.y.col)], t.y.part);
                let ev = part_of(voltages[t.e.node], t.e.part);
                *grad_y.entry(t.y).or_default() += t.coef * ev;
                *grad_e.entry(t.e).or_default() += t.coef * yv;
            }
            let mut v: f64 = grad_y.iter().map(|(k, g)| g * g * y_var(k)).sum::<f64>()
                + grad_e.iter().map(|(k, g)| g * g * e_var(k)).sum::<f64>();
            if options.second_order {
                let mut pairs: BTreeMap<(AdmittanceInput, VoltageInput), f64> = BTreeMap::new();
                for t in &terms {
                    *pairs.entry((t.y, t.e)).or_default() += t.coef;
                }
                v += pairs
                    .iter()
                    .map(|((yk, ek), c)| c * c * y_var(yk) * e_var(ek))
                    .sum::<f64>();
            }
            var[(row, col)] = v;
        }
    }
    Ok(HVariance { var })
}
