//! Monte-Carlo oracle for the coefficient uncertainty.
//!
//! Each trial measures every nodal voltage with polar noise, perturbs the
//! admittance matrix, rebuilds `H x = z` from the perturbed data and solves
//! it. Trial `k` draws from a ChaCha8 stream seeded with `seed` and selected
//! by `set_stream(k)`, so results do not depend on how trials are scheduled
//! across threads.

pub mod qq;
pub mod stats;

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loadflow::GridState;
use crate::network::{assemble, AdmittanceMatrix, NetworkModel};
use crate::sensitivity::{assemble_from_voltages, solve_coefficients, CoefficientId};
use crate::uncertainty::{AdmittanceUncertainty, Metadata, Method, PolarNoiseSpec, UncertaintyResult};

pub use qq::{qq_normality_check, QqReport};
pub use stats::{covariance, estimate_stats, SampleStats};

/// How admittance errors are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SymmetryMode {
    /// Every element, including `Y[l, m]` and `Y[m, l]`, independently.
    #[default]
    IndependentElements,
    /// One draw per unordered pair, applied to both `Y[l, m]` and `Y[m, l]`.
    SymmetricPairs,
    /// Relative errors on the branch admittances, reassembled into `Y`.
    BranchParameter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCConfig {
    pub n_mc: usize,
    pub seed: u64,
    pub polar: PolarNoiseSpec,
    pub yu: AdmittanceUncertainty,
    pub symmetry_mode: SymmetryMode,
    /// Keep every trial's coefficients in the result.
    pub keep_trials: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCResult {
    /// Sample mean, laid out like `x`.
    pub mean: DMatrix<f64>,
    /// Unbiased sample standard deviation, laid out like `x`.
    pub std: DMatrix<f64>,
    /// Coefficient of each row of the trial store (column-major order of `x`).
    pub coefficients: Vec<CoefficientId>,
    /// One column per successful trial, when requested.
    pub trials: Option<DMatrix<f64>>,
    pub trials_used: usize,
    pub trials_failed: usize,
    pub runtime: Duration,
}

impl MCResult {
    pub fn to_uncertainty(&self) -> UncertaintyResult {
        UncertaintyResult {
            variance: self.std.map(|s| s * s),
            method: Method::MonteCarlo,
            metadata: Metadata {
                description: format!("{} failed trials", self.trials_failed),
                runtime: self.runtime,
                created: std::time::SystemTime::now(),
            },
        }
    }

    /// Trial store as CSV: one row per coefficient, one column per trial.
    pub fn write_trials_csv<W: Write>(&self, out: W) -> Result<()> {
        let trials = self
            .trials
            .as_ref()
            .ok_or_else(|| Error::Output("trial store was not kept".into()))?;
        let err = |e: csv::Error| Error::Output(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["coefficient".to_string()];
        header.extend((0..trials.ncols()).map(|k| format!("trial_{k}")));
        w.write_record(&header).map_err(err)?;
        for (id, row) in self.coefficients.iter().zip(trials.row_iter()) {
            let mut rec = vec![id.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Output(e.to_string()))
    }
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

/// One noisy measurement of every voltage: `(rho + d_rho) e^{j (theta + d_theta)}`.
/// Draws magnitude then phase noise for each node in order.
pub fn noisy_voltages(
    voltages: &DVector<Complex64>,
    polar: &PolarNoiseSpec,
    rng: &mut ChaCha8Rng,
) -> DVector<Complex64> {
    DVector::from_iterator(
        voltages.len(),
        voltages.iter().enumerate().map(|(k, e)| {
            let (rho, theta) = e.to_polar();
            let d_rho = normal(rng, polar.magnitude_std(k, rho));
            let d_theta = normal(rng, polar.sigma_theta[k]);
            if rho > 0.0 {
                // same phasor as the polar form, but exact when both draws are zero
                e.scale((rho + d_rho) / rho) * Complex64::from_polar(1.0, d_theta)
            } else {
                Complex64::from_polar(d_rho, theta + d_theta)
            }
        }),
    )
}

/// The generator used for trial `k`.
pub fn trial_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Real and imaginary parts of `n` noisy measurements of node `node`, drawn
/// exactly as the trials draw them.
pub fn voltage_samples(
    voltages: &DVector<Complex64>,
    polar: &PolarNoiseSpec,
    seed: u64,
    n: usize,
    node: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    polar.validate()?;
    if node >= voltages.len() || polar.len() != voltages.len() {
        return Err(Error::IndexOutOfRange {
            index: node,
            dim: voltages.len(),
        });
    }
    let draws: Vec<Complex64> = (0..n)
        .into_par_iter()
        .map(|k| noisy_voltages(voltages, polar, &mut trial_rng(seed, k))[node])
        .collect();
    Ok(draws.iter().map(|e| (e.re, e.im)).unzip())
}

fn perturbed_admittance(
    network: &NetworkModel,
    y: &AdmittanceMatrix,
    yu: &AdmittanceUncertainty,
    mode: SymmetryMode,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<Complex64>> {
    let n = y.dim();
    let mut m = y.matrix().clone();
    match mode {
        SymmetryMode::IndependentElements => {
            for l in 0..n {
                for k in 0..n {
                    let re = normal(rng, yu.var_re[(l, k)].sqrt());
                    let im = normal(rng, yu.var_im[(l, k)].sqrt());
                    m[(l, k)] += Complex64::new(re, im);
                }
            }
        }
        SymmetryMode::SymmetricPairs => {
            for l in 0..n {
                for k in l..n {
                    let re = normal(rng, yu.var_re[(l, k)].sqrt());
                    let im = normal(rng, yu.var_im[(l, k)].sqrt());
                    m[(l, k)] += Complex64::new(re, im);
                    if k != l {
                        m[(k, l)] += Complex64::new(re, im);
                    }
                }
            }
        }
        SymmetryMode::BranchParameter => {
            let level = yu.relative_level.ok_or_else(|| {
                Error::Config("branch-parameter mode needs a relative admittance level".into())
            })?;
            let mut branches = network.branch_admittances()?;
            for b in &mut branches {
                for block in [&mut b.series, &mut b.shunt_half] {
                    for v in block.iter_mut() {
                        let re = 1.0 + normal(rng, level);
                        let im = 1.0 + normal(rng, level);
                        *v = Complex64::new(v.re * re, v.im * im);
                    }
                }
            }
            m = assemble(network.bus_count(), network.phases, &branches);
        }
    }
    Ok(m)
}

fn run_trial(
    network: &NetworkModel,
    y: &AdmittanceMatrix,
    state: &GridState,
    cfg: &MCConfig,
    k: usize,
) -> Result<Option<DMatrix<f64>>> {
    let mut rng = trial_rng(cfg.seed, k);
    let e = noisy_voltages(&state.voltages, &cfg.polar, &mut rng);
    let ym = perturbed_admittance(network, y, &cfg.yu, cfg.symmetry_mode, &mut rng)?;
    let problem = assemble_from_voltages(&y.with_matrix(ym), &e, network.slack_position())?;
    match solve_coefficients(&problem) {
        Ok(sol) => Ok(Some(sol.x)),
        Err(e) if e.is_numerical() => Ok(None),
        Err(e) => Err(e),
    }
}

/// Estimate the coefficient standard deviations by sampling.
pub fn run_monte_carlo(
    network: &NetworkModel,
    y: &AdmittanceMatrix,
    state: &GridState,
    cfg: &MCConfig,
) -> Result<MCResult> {
    if cfg.n_mc == 0 {
        return Err(Error::Config("the number of Monte-Carlo trials must be at least 1".into()));
    }
    if !state.converged {
        return Err(Error::UnconvergedState);
    }
    cfg.polar.validate()?;
    let n_all = y.dim();
    if cfg.polar.len() != n_all || cfg.yu.var_re.shape() != (n_all, n_all) || cfg.yu.var_im.shape() != (n_all, n_all) {
        return Err(Error::Dimension(format!("noise inputs do not match a {n_all}-node network")));
    }
    let start = Instant::now();
    let outcomes: Vec<Option<DMatrix<f64>>> = (0..cfg.n_mc)
        .into_par_iter()
        .map(|k| run_trial(network, y, state, cfg, k))
        .collect::<Result<_>>()?;

    let ok: Vec<&DMatrix<f64>> = outcomes.iter().flatten().collect();
    let trials_failed = cfg.n_mc - ok.len();
    if ok.is_empty() {
        return Err(Error::AllTrialsFailed(cfg.n_mc));
    }
    if trials_failed > 0 {
        log::warn!("{trials_failed} of {} trials had a singular H and were excluded", cfg.n_mc);
    }
    let dim = ok[0].nrows();
    let store = DMatrix::from_fn(dim * dim, ok.len(), |r, k| ok[k][(r % dim, r / dim)]);
    let (mean, std) = if ok.len() >= 2 {
        let s = estimate_stats(&store)?;
        (s.mean, s.std)
    } else {
        (store.column(0).into_owned(), DVector::zeros(dim * dim))
    };
    let runtime = start.elapsed();

    let problem = assemble_from_voltages(y, &state.voltages, network.slack_position())?;
    Ok(MCResult {
        mean: DMatrix::from_column_slice(dim, dim, mean.as_slice()),
        std: DMatrix::from_column_slice(dim, dim, std.as_slice()),
        coefficients: problem.all_coefficients(),
        trials: cfg.keep_trials.then_some(store),
        trials_used: ok.len(),
        trials_failed,
        runtime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loadflow::solve_load_flow;
    use crate::network::{build_admittance, parse_network, IEEE4_BALANCED};
    use crate::sensitivity::assemble_problem;
    use crate::uncertainty::{MagnitudeScale, NoiseLevel};

    fn setup() -> (NetworkModel, AdmittanceMatrix, GridState) {
        let net = parse_network(IEEE4_BALANCED, "t").unwrap();
        let y = build_admittance(&net).unwrap();
        let state = solve_load_flow(&net, &y, None).unwrap();
        (net, y, state)
    }

    fn config(n_mc: usize, level: NoiseLevel, pct: f64, y: &AdmittanceMatrix) -> MCConfig {
        MCConfig {
            n_mc,
            seed: 42,
            polar: PolarNoiseSpec::uniform(level, MagnitudeScale::Relative, y.dim()).unwrap(),
            yu: AdmittanceUncertainty::from_percent(y, pct).unwrap(),
            symmetry_mode: SymmetryMode::IndependentElements,
            keep_trials: true,
        }
    }

    #[test]
    fn zero_noise_reproduces_nominal() {
        let (net, y, state) = setup();
        let r = run_monte_carlo(&net, &y, &state, &config(20, NoiseLevel::ZERO, 0.0, &y)).unwrap();
        let nominal = solve_coefficients(&assemble_problem(&y, &state, 0).unwrap()).unwrap();
        assert!(r.std.iter().all(|s| *s == 0.0));
        assert_eq!(r.mean, nominal.x);
        assert_eq!(r.trials_failed, 0);
    }

    #[test]
    fn same_seed_same_result() {
        let (net, y, state) = setup();
        let cfg = config(50, NoiseLevel::from_limits(0.005, 0.006), 1.0, &y);
        let a = run_monte_carlo(&net, &y, &state, &cfg).unwrap();
        let b = run_monte_carlo(&net, &y, &state, &cfg).unwrap();
        assert_eq!(a.std, b.std);
        assert_eq!(a.trials, b.trials);
    }

    #[test]
    fn zero_trials_is_a_config_error() {
        let (net, y, state) = setup();
        let cfg = config(0, NoiseLevel::ZERO, 0.0, &y);
        assert!(matches!(run_monte_carlo(&net, &y, &state, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn symmetric_and_branch_modes_run() {
        let (net, y, state) = setup();
        for mode in [SymmetryMode::SymmetricPairs, SymmetryMode::BranchParameter] {
            let mut cfg = config(30, NoiseLevel::from_limits(0.005, 0.006), 1.0, &y);
            cfg.symmetry_mode = mode;
            let r = run_monte_carlo(&net, &y, &state, &cfg).unwrap();
            assert!(r.std.iter().all(|s| s.is_finite() && *s > 0.0));
        }
    }

    #[test]
    fn trial_store_csv_shape() {
        let (net, y, state) = setup();
        let r = run_monte_carlo(&net, &y, &state, &config(3, NoiseLevel::ZERO, 1.0, &y)).unwrap();
        let mut buf = Vec::new();
        r.write_trials_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "coefficient,trial_0,trial_1,trial_2");
        assert_eq!(lines.count(), 36);
    }
}
