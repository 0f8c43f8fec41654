//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero when any fails.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::time::{Duration, Instant};

use common::{ieee4, random_radial, rel, solve, Solved};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use pfsc_core::montecarlo::{noisy_voltages, qq_normality_check, trial_rng, voltage_samples};
use pfsc_core::report::{prepare, run_prepared};
use pfsc_core::sensitivity::finite_difference_oracle;
use pfsc_core::uncertainty::{
    analytical, coefficient_variance, general_variance, inverse_cross_covariance,
    inverse_self_variance, inverse_self_variance_reference, it_class_to_polar, project_polar_noise,
    AdmittanceUncertainty, CartesianNoiseSpec, HVariance, ItClass, NoiseConfig, PolarNoiseSpec,
    ProjectionForm, PropagationOptions,
};
use pfsc_core::{
    emit_report, run_monte_carlo, run_pipeline, CoefficientId, ComparisonReport, Format, Injection,
    MCConfig, Mode, RunConfig, SymmetryMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 42;

struct Outcome {
    failed: Vec<String>,
}

impl Outcome {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id.to_string());
        }
    }
}

fn class(label: &str) -> ItClass {
    label.parse().unwrap()
}

fn polar_for(label: &str, nodes: usize) -> PolarNoiseSpec {
    let cfg = NoiseConfig::default();
    let level = it_class_to_polar(&class(label), &cfg).unwrap();
    PolarNoiseSpec::uniform(level, cfg.magnitude_scale, nodes).unwrap()
}

fn report(it: &str, sigma: &[f64], n_mc: &[usize], only: Option<Vec<CoefficientId>>) -> ComparisonReport {
    let cfg = RunConfig {
        mode: Mode::Both,
        n_mc: n_mc.to_vec(),
        sigma_y_pct: sigma.to_vec(),
        it_class: class(it),
        seed: SEED,
        coefficients: only,
        ..RunConfig::default()
    };
    run_pipeline(&cfg).unwrap()
}

fn worst_fd_error(s: &Solved) -> f64 {
    let mut worst = 0.0f64;
    for node in &s.problem.nodes {
        for (k, which) in [Injection::P, Injection::Q].into_iter().enumerate() {
            let fd = finite_difference_oracle(&s.net, &s.y, node.bus, node.phase, which, 1e-5).unwrap();
            let col = 2 * s.problem.node_position(node.bus, node.phase).unwrap() + k;
            for (r, d) in fd.iter().enumerate() {
                worst = worst
                    .max(rel(s.solution.x[(2 * r, col)], d.re))
                    .max(rel(s.solution.x[(2 * r + 1, col)], d.im));
            }
        }
    }
    worst
}

fn oracle_equivalence(out: &mut Outcome) {
    let start = Instant::now();
    let feeder = worst_fd_error(&solve(ieee4()));
    let random = (0..5).map(|s| worst_fd_error(&solve(random_radial(s, 3)))).fold(0.0, f64::max);
    let t = start.elapsed();
    out.check(
        "1",
        feeder <= 1e-3 && random <= 1e-3 && t < Duration::from_secs(5),
        format!("worst relative error feeder {feeder:.2e}, random 3-bus {random:.2e} (tol 1e-3), {t:.2?} (< 5 s)"),
    );
}

fn std_agreement(out: &mut Outcome) {
    let start = Instant::now();
    let r = report("0.5", &[1.0], &[10_000], None);
    let t = start.elapsed();
    let (mut worst, mut at) = (0.0f64, String::new());
    for row in &r.rows {
        let (a, m) = (row.std_analytical.unwrap(), row.std_mc[0].unwrap());
        if rel(a, m) > worst {
            worst = rel(a, m);
            at = row.coefficient.to_string();
        }
    }
    out.check(
        "2 std",
        worst <= 0.20 && t < Duration::from_secs(600),
        format!("{} coefficients, worst analytical vs MC gap {:.1}% at {at} (tol 20%), {t:.2?}", r.rows.len(), worst * 100.0),
    );
    let reference = [0.0071, 0.0152, 0.0239, 0.0077, 0.0176, 0.0288];
    let s = solve(ieee4());
    let nominal: Vec<f64> = CoefficientId::reference_set().iter().map(|id| s.solution.get(id).unwrap()).collect();
    let worst = nominal.iter().zip(reference).map(|(v, p)| rel(*v, p)).fold(0.0, f64::max);
    out.check(
        "2 nominal",
        worst <= 0.15,
        format!("nominal {nominal:.4?} vs reference, worst {:.2}% (tol 15%)", worst * 100.0),
    );
}

fn admittance_sweep(out: &mut Outcome) {
    let start = Instant::now();
    let ids = CoefficientId::reference_set().to_vec();
    let r = report("1.0", &[0.5, 1.0, 2.0], &[1000], Some(ids.clone()));
    let t = start.elapsed();
    let row = |level: f64, id: &CoefficientId| {
        r.rows.iter().find(|w| w.sigma_y_pct == level && &w.coefficient == id).unwrap()
    };
    let (mut ra, mut rm, mut trend, mut pct) = (vec![], vec![], vec![], vec![]);
    for id in &ids {
        let (lo, mid, hi) = (row(0.5, id), row(1.0, id), row(2.0, id));
        let a = |w: &pfsc_core::report::ReportRow| w.std_analytical.unwrap();
        let m = |w: &pfsc_core::report::ReportRow| w.std_mc[0].unwrap();
        ra.push(a(mid) / a(lo));
        rm.push(m(mid) / m(lo));
        trend.push((rel(a(lo), m(lo)), rel(a(hi), m(hi))));
        pct.push((a(hi) / hi.nominal.abs() * 100.0, m(hi) / hi.nominal.abs() * 100.0));
    }
    let in_band = |v: &f64| (1.8..=2.2).contains(v);
    out.check(
        "3a",
        ra.iter().all(in_band) && rm.iter().all(in_band) && t < Duration::from_secs(900),
        format!("1%/0.5% ratios analytical {ra:.2?}, MC {rm:.2?} (band [1.8, 2.2]), {t:.2?}"),
    );
    out.check(
        "3b",
        trend.iter().all(|(lo, hi)| hi > lo),
        format!(
            "gap at 0.5% vs 2%: {:?}",
            trend.iter().map(|(l, h)| format!("{:.1}%<{:.1}%", l * 100.0, h * 100.0)).collect::<Vec<_>>()
        ),
    );
    // the largest relative std must reach the band, for each method
    let peak_a = pct.iter().map(|p| p.0).fold(0.0, f64::max);
    let peak_m = pct.iter().map(|p| p.1).fold(0.0, f64::max);
    out.check(
        "3c",
        (15.0..=22.0).contains(&peak_a) && (15.0..=22.0).contains(&peak_m),
        format!("std at 2% in % of nominal (analytical, MC): {pct:.1?}, peak {peak_a:.1} / {peak_m:.1} (band [15, 22])"),
    );
}

fn convergence(out: &mut Outcome) {
    let r = report("0.5", &[1.0], &[100, 10_000], Some(CoefficientId::reference_set().to_vec()));
    let gaps: Vec<(String, f64)> = r
        .rows
        .iter()
        .map(|w| (w.coefficient.to_string(), rel(w.std_mc[0].unwrap(), w.std_mc[1].unwrap())))
        .collect();
    let worst = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
    out.check(
        "4",
        worst <= 0.10,
        format!(
            "N=100 vs N=10000: {:?} (tol 10%)",
            gaps.iter().map(|(c, g)| format!("{c} {:.1}%", g * 100.0)).collect::<Vec<_>>()
        ),
    );
}

fn speed(out: &mut Outcome) {
    let s = solve(ieee4());
    let polar = polar_for("0.5", 4);
    let en = project_polar_noise(&s.state.voltages, &polar, ProjectionForm::SignCorrected).unwrap();
    let yu = AdmittanceUncertainty::from_percent(&s.y, 1.0).unwrap();
    let best = |f: &mut dyn FnMut()| (0..5).map(|_| {
        let t = Instant::now();
        f();
        t.elapsed()
    }).min().unwrap();
    let ta = best(&mut || {
        analytical(&s.problem, &s.solution, &s.y, &s.state, &yu, &en, PropagationOptions::default()).unwrap();
    });
    let cfg = MCConfig {
        n_mc: 100,
        seed: SEED,
        polar: polar.clone(),
        yu: yu.clone(),
        symmetry_mode: SymmetryMode::IndependentElements,
        keep_trials: false,
    };
    let tm = best(&mut || {
        run_monte_carlo(&s.net, &s.y, &s.state, &cfg).unwrap();
    });
    let ratio = tm.as_secs_f64() / ta.as_secs_f64();
    out.check("5", ratio >= 10.0, format!("analytical {ta:.2?}, MC N=100 {tm:.2?}, ratio {ratio:.0} (>= 10)"));
}

fn projection(out: &mut Outcome) {
    let polar = polar_for("0.5", 1);
    for form in [ProjectionForm::SignCorrected, ProjectionForm::Literal] {
        let mut worst = 0.0f64;
        for theta in [0.0, PI / 6.0, PI / 3.0] {
            let e = DVector::from_element(1, Complex64::from_polar(1.0, theta));
            let c = project_polar_noise(&e, &polar, form).unwrap();
            let draws = 1_000_000;
            let (mut sre, mut sim) = (0.0, 0.0);
            for k in 0..draws {
                let d = noisy_voltages(&e, &polar, &mut trial_rng(SEED, k))[0] - e[0];
                sre += d.re * d.re;
                sim += d.im * d.im;
            }
            let (sre, sim) = ((sre / draws as f64).sqrt(), (sim / draws as f64).sqrt());
            worst = worst.max(rel(c.var_re[0].sqrt(), sre)).max(rel(c.var_im[0].sqrt(), sim));
        }
        let required = form == ProjectionForm::default();
        let detail = format!("{form:?} form worst error {:.2}% over theta 0, pi/6, pi/3 (tol 2%)", worst * 100.0);
        if required {
            out.check("6", worst <= 0.02, detail);
        } else {
            println!("INFO criterion 6 (not required): {detail}");
        }
    }
}

fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, HVariance) {
    let h = DMatrix::from_fn(n, n, |i, j| rng.random_range(-1.0..1.0) + if i == j { n as f64 } else { 0.0 });
    let var = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1e-4));
    (h, HVariance { var })
}

fn properties(out: &mut Outcome) {
    let s = solve(ieee4());
    let zero = analytical(
        &s.problem,
        &s.solution,
        &s.y,
        &s.state,
        &AdmittanceUncertainty::zero(4),
        &CartesianNoiseSpec::zero(4),
        PropagationOptions { second_order: true },
    )
    .unwrap();
    let mc = run_monte_carlo(
        &s.net,
        &s.y,
        &s.state,
        &MCConfig {
            n_mc: 200,
            seed: SEED,
            polar: PolarNoiseSpec::zero(4),
            yu: AdmittanceUncertainty::zero(4),
            symmetry_mode: SymmetryMode::IndependentElements,
            keep_trials: false,
        },
    )
    .unwrap();
    let zero_ok = zero.result.std().iter().all(|v| *v == 0.0) && mc.std.iter().all(|v| *v == 0.0);
    out.check("7 zero noise", zero_ok, "analytical and MC stds exactly zero".into());

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut bitwise, mut cov_ok, mut worst) = (true, true, 0.0f64);
    for _ in 0..20 {
        let (h, hv) = random_pair(&mut rng, 10);
        let h_inv = h.try_inverse().unwrap();
        let fast = inverse_self_variance(&h_inv, &hv).unwrap();
        let slow = inverse_self_variance_reference(&h_inv, &hv).unwrap();
        worst = fast.var.iter().zip(slow.var.iter()).map(|(a, b)| rel(*a, *b)).fold(worst, f64::max);
        let z = DMatrix::from_fn(10, 10, |i, j| if i != j { 0.0 } else if i % 2 == 0 { 1.0 } else { -1.0 });
        let a = coefficient_variance(&h_inv, &fast, &z).unwrap().variance;
        let b = general_variance(&h_inv, &fast, &z, &DMatrix::zeros(10, 10)).unwrap().variance;
        bitwise &= a == b;
        for m in 0..10 {
            for n in 0..10 {
                cov_ok &= inverse_cross_covariance(&h_inv, &hv, (m, n), (m, n)).unwrap() == slow.var[(m, n)];
            }
        }
    }
    out.check("7 rhs forms", bitwise, "constant-rhs and general forms bitwise equal with zero rhs variance".into());
    out.check("7 covariance", cov_ok, "cov(A, A) equals var(A) for every entry".into());
    out.check("7 loop vs matrix", worst <= 1e-12, format!("worst relative difference {worst:.1e} on 20 random 10x10 (tol 1e-12)"));

    let cfg = RunConfig {
        mode: Mode::Both,
        n_mc: vec![200],
        sigma_y_pct: vec![1.0],
        seed: SEED,
        ..RunConfig::default()
    };
    let noise = NoiseConfig::default();
    let pre = prepare(&cfg.network).unwrap();
    let bytes = |d: &tempfile::TempDir| {
        let r = run_prepared(&cfg, &noise, &pre).unwrap();
        emit_report(&r, Format::Csv, d.path()).unwrap();
        fs::read(d.path().join("report.csv")).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    out.check("7 reproducible", bytes(&a) == bytes(&b), "seeded report.csv byte-identical across two runs".into());

    let polar = polar_for("1.0", 4);
    let mut lowest = 1.0f64;
    for node in 1..4 {
        let (re, im) = voltage_samples(&s.state.voltages, &polar, SEED, 10_000, node).unwrap();
        lowest = lowest
            .min(qq_normality_check(&re).unwrap().correlation)
            .min(qq_normality_check(&im).unwrap().correlation);
    }
    out.check("7 QQ", lowest >= 0.999, format!("lowest QQ correlation {lowest:.5} over Re/Im of non-slack nodes (>= 0.999)"));
}

fn main() {
    let mut out = Outcome { failed: Vec::new() };
    oracle_equivalence(&mut out);
    std_agreement(&mut out);
    admittance_sweep(&mut out);
    convergence(&mut out);
    speed(&mut out);
    projection(&mut out);
    properties(&mut out);
    if out.failed.is_empty() {
        println!("all criteria pass");
    } else {
        println!("failed: {}", out.failed.join(", "));
        std::process::exit(1);
    }
}
