//! `pfsc-uq`: voltage sensitivity coefficients and their uncertainty.
//!
//! Exit codes: 0 on success, 1 for usage or input errors, 2 when the
//! numerics fail (non-convergence, singular Jacobian, all trials failed).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pfsc_core::montecarlo::{qq_normality_check, run_monte_carlo, voltage_samples, MCConfig};
use pfsc_core::report::{prepare, run_prepared, Cell, Prepared, Table};
use pfsc_core::uncertainty::{
    it_class_to_polar, ItClass, NoiseConfig, PolarNoiseSpec, ProjectionForm, PropagationOptions,
};
use pfsc_core::{
    AdmittanceUncertainty, CoefficientId, Format, Injection, Mode, Part, RunConfig, SymmetryMode,
};

const CONFIG_DIR_ENV: &str = "PFSC_CONFIG_DIR";

#[derive(Parser, Debug)]
#[command(name = "pfsc-uq", version, about = "Voltage sensitivity coefficients with uncertainty quantification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the load flow and print the nodal voltages.
    Solve(Common),
    /// Compute every voltage sensitivity coefficient.
    Pfsc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Select,
    },
    /// Analytical standard deviations of the coefficients.
    Propagate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        noise: Noise,
        #[command(flatten)]
        select: Select,
        /// Include the second-order term of the product rule.
        #[arg(long)]
        second_order: bool,
    },
    /// Monte-Carlo standard deviations of the coefficients.
    Mc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        noise: Noise,
        #[command(flatten)]
        select: Select,
        #[command(flatten)]
        sampling: Sampling,
        /// Write the trials of the first run to trials.csv (needs --out).
        #[arg(long)]
        dump_trials: bool,
        /// Write QQ data of the noisy voltage at the last node to qq_re.csv and qq_im.csv (needs --out).
        #[arg(long)]
        qq: bool,
    },
    /// Full comparison of analytical and Monte-Carlo results.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        noise: Noise,
        #[command(flatten)]
        select: Select,
        #[command(flatten)]
        sampling: Sampling,
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Network file, or `ieee4-balanced` for the bundled feeder.
    #[arg(long, default_value = "ieee4-balanced")]
    network: PathBuf,
    /// Output directory; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct Noise {
    /// Noise configuration file. Defaults to noise.toml in $PFSC_CONFIG_DIR, then the bundled one.
    #[arg(long)]
    noise_config: Option<PathBuf>,
    /// Accuracy class label from the noise configuration, or `custom:MAG,PHASE_RAD`.
    #[arg(long, default_value = "0.5")]
    it_class: ItClass,
    /// Admittance standard deviation in percent; comma-separated for a sweep.
    #[arg(long, value_delimiter = ',')]
    sigma_y_pct: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ProjectionArg::SignCorrected)]
    projection: ProjectionArg,
}

#[derive(Args, Debug)]
struct Sampling {
    /// Trial counts, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    nmc: Vec<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SymmetryArg::Independent)]
    symmetry: SymmetryArg,
}

#[derive(Args, Debug)]
struct Select {
    /// Coefficients to report, e.g. `Re(dE3/dP2),Im(dE4/dP4)`, or `reference`. All by default.
    #[arg(long, value_delimiter = ',')]
    coefficients: Vec<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Csv,
    Json,
    Pretty,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Analytical,
    Mc,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ProjectionArg {
    SignCorrected,
    Literal,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SymmetryArg {
    Independent,
    SymmetricPairs,
    Branch,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
            FormatArg::Pretty => Format::Pretty,
        }
    }
}

impl From<SymmetryArg> for SymmetryMode {
    fn from(s: SymmetryArg) -> Self {
        match s {
            SymmetryArg::Independent => SymmetryMode::IndependentElements,
            SymmetryArg::SymmetricPairs => SymmetryMode::SymmetricPairs,
            SymmetryArg::Branch => SymmetryMode::BranchParameter,
        }
    }
}

impl Select {
    fn ids(&self) -> Result<Option<Vec<CoefficientId>>> {
        if self.coefficients.is_empty() {
            return Ok(None);
        }
        let mut ids = Vec::new();
        for c in &self.coefficients {
            if c == "reference" {
                ids.extend(CoefficientId::reference_set());
            } else {
                ids.push(c.parse()?);
            }
        }
        Ok(Some(ids))
    }
}

impl Noise {
    fn config_path(&self) -> Option<PathBuf> {
        if let Some(p) = &self.noise_config {
            return Some(p.clone());
        }
        let dir = std::env::var_os(CONFIG_DIR_ENV)?;
        let candidate = Path::new(&dir).join("noise.toml");
        candidate.exists().then_some(candidate)
    }

    fn load(&self) -> Result<NoiseConfig> {
        match self.config_path() {
            Some(p) => Ok(NoiseConfig::load(&p)?),
            None => Ok(NoiseConfig::default()),
        }
    }

    fn projection(&self) -> ProjectionForm {
        match self.projection {
            ProjectionArg::SignCorrected => ProjectionForm::SignCorrected,
            ProjectionArg::Literal => ProjectionForm::Literal,
        }
    }
}

/// Write `text` to `<out>/<name>.<ext>` or stdout.
fn emit(out: Option<&Path>, name: &str, format: Format, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("{name}.{}", format.extension()));
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            log::info!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn solve(common: &Common) -> Result<()> {
    let pre = prepare(&common.network)?;
    log::info!(
        "load flow converged in {} iterations, mismatch {:.2e} pu",
        pre.state.iterations,
        pre.state.max_mismatch()
    );
    let rows = pre
        .state
        .voltages
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let (bus, phase) = pre.y.node(k);
            vec![
                Cell::Int(Some(bus.into())),
                Cell::Int(Some(phase as u64)),
                Cell::Num(Some(e.re)),
                Cell::Num(Some(e.im)),
                Cell::Num(Some(e.norm())),
                Cell::Num(Some(e.arg().to_degrees())),
            ]
        })
        .collect();
    let table = Table {
        columns: ["bus", "phase", "re_pu", "im_pu", "magnitude_pu", "angle_deg"].map(String::from).into(),
        rows,
    };
    let format = common.format.into();
    emit(common.out.as_deref(), "voltages", format, &table.render(format)?)
}

fn pfsc(common: &Common, select: &Select) -> Result<()> {
    let pre = prepare(&common.network)?;
    let ids = select.ids()?.unwrap_or_else(|| pre.problem.all_coefficients());
    let mut rows = Vec::new();
    for id in ids {
        let value = pre
            .solution
            .get(&id)
            .with_context(|| format!("coefficient {id} is not in this network"))?;
        rows.push(vec![
            Cell::Text(id.to_string()),
            Cell::Int(Some(id.bus.into())),
            Cell::Int(Some(id.phase as u64)),
            Cell::Int(Some(id.wrt_bus.into())),
            Cell::Int(Some(id.wrt_phase as u64)),
            Cell::Text(match id.injection {
                Injection::P => "P".into(),
                Injection::Q => "Q".into(),
            }),
            Cell::Text(match id.part {
                Part::Re => "Re".into(),
                Part::Im => "Im".into(),
            }),
            Cell::Num(Some(value)),
        ]);
    }
    let table = Table {
        columns: ["coefficient", "bus", "phase", "wrt_bus", "wrt_phase", "injection", "part", "value_pu"]
            .map(String::from)
            .into(),
        rows,
    };
    let format = common.format.into();
    emit(common.out.as_deref(), "pfsc", format, &table.render(format)?)
}

fn run_config(
    common: &Common,
    noise: &Noise,
    select: &Select,
    mode: Mode,
    sampling: Option<&Sampling>,
    second_order: bool,
) -> Result<RunConfig> {
    let mut cfg = RunConfig {
        network: common.network.clone(),
        noise_config: noise.config_path(),
        mode,
        sigma_y_pct: noise.sigma_y_pct.clone(),
        it_class: noise.it_class.clone(),
        coefficients: select.ids()?,
        projection: noise.projection(),
        propagation: PropagationOptions { second_order },
        ..RunConfig::default()
    };
    if let Some(s) = sampling {
        cfg.n_mc = s.nmc.clone();
        cfg.seed = s.seed;
        cfg.symmetry_mode = s.symmetry.into();
    }
    Ok(cfg)
}

fn comparison(common: &Common, noise: &Noise, cfg: &RunConfig) -> Result<(Prepared, NoiseConfig)> {
    cfg.validate()?;
    let noise_cfg = noise.load()?;
    let pre = prepare(&common.network)?;
    let report = run_prepared(cfg, &noise_cfg, &pre)?;
    if report.trials_failed > 0 {
        log::warn!("{} Monte-Carlo trials were excluded (singular H)", report.trials_failed);
    }
    let format = common.format.into();
    emit(common.out.as_deref(), "report", format, &report.render(format)?)?;
    if let Some(dir) = &common.out {
        write_file(dir, "timings.csv", &report.timings_table().to_csv()?)?;
    }
    Ok((pre, noise_cfg))
}

#[allow(clippy::too_many_arguments)]
fn mc_extras(
    common: &Common,
    noise: &Noise,
    sampling: &Sampling,
    cfg: &RunConfig,
    pre: &Prepared,
    noise_cfg: &NoiseConfig,
    dump_trials: bool,
    qq: bool,
) -> Result<()> {
    if !dump_trials && !qq {
        return Ok(());
    }
    let dir = common
        .out
        .as_deref()
        .context("--dump-trials and --qq need --out")?;
    let level = it_class_to_polar(&noise.it_class, noise_cfg)?;
    let polar = PolarNoiseSpec::uniform(level, noise_cfg.magnitude_scale, pre.y.dim())?;
    let n = sampling.nmc[0];
    if dump_trials {
        let pct = cfg.sigma_y_pct.first().copied().unwrap_or(noise_cfg.sigma_y_pct);
        let mc_cfg = MCConfig {
            n_mc: n,
            seed: sampling.seed,
            polar: polar.clone(),
            yu: AdmittanceUncertainty::from_percent(&pre.y, pct)?,
            symmetry_mode: sampling.symmetry.into(),
            keep_trials: true,
        };
        let r = run_monte_carlo(&pre.network, &pre.y, &pre.state, &mc_cfg)?;
        let mut buf = Vec::new();
        r.write_trials_csv(&mut buf)?;
        write_file(dir, "trials.csv", &String::from_utf8(buf)?)?;
    }
    if qq {
        let node = pre.y.dim() - 1;
        let (re, im) = voltage_samples(&pre.state.voltages, &polar, sampling.seed, n, node)?;
        for (name, samples) in [("qq_re.csv", re), ("qq_im.csv", im)] {
            let report = qq_normality_check(&samples)?;
            log::info!("{name}: QQ correlation {:.6}", report.correlation);
            if !report.normal {
                log::warn!("{name}: QQ correlation {:.6} is below the normality threshold", report.correlation);
            }
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            write_file(dir, name, &String::from_utf8(buf)?)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Solve(common) => solve(common),
        Command::Pfsc { common, select } => pfsc(common, select),
        Command::Propagate {
            common,
            noise,
            select,
            second_order,
        } => {
            let cfg = run_config(common, noise, select, Mode::Analytical, None, *second_order)?;
            comparison(common, noise, &cfg).map(|_| ())
        }
        Command::Mc {
            common,
            noise,
            select,
            sampling,
            dump_trials,
            qq,
        } => {
            let cfg = run_config(common, noise, select, Mode::MonteCarlo, Some(sampling), false)?;
            let (pre, noise_cfg) = comparison(common, noise, &cfg)?;
            mc_extras(common, noise, sampling, &cfg, &pre, &noise_cfg, *dump_trials, *qq)
        }
        Command::Report {
            common,
            noise,
            select,
            sampling,
            mode,
        } => {
            let mode = match mode {
                ModeArg::Analytical => Mode::Analytical,
                ModeArg::Mc => Mode::MonteCarlo,
                ModeArg::Both => Mode::Both,
            };
            let cfg = run_config(common, noise, select, mode, Some(sampling), false)?;
            comparison(common, noise, &cfg).map(|_| ())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<pfsc_core::Error>())
        .any(pfsc_core::Error::is_numerical);
    if numerical {
        2
    } else {
        1
    }
}

/// The error chain, skipping causes whose text a previous message already contains.
fn message(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
