//! End-to-end pipeline and comparison reports.
//!
//! `report.csv` and `report.json` hold only values that are a deterministic
//! function of the configuration, so repeated runs are byte-identical.
//! Wall-clock timings go to a separate `timings.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde_json::{Map, Value};

use crate::error::{Context, Error, Result};
use crate::loadflow::{solve_load_flow, GridState};
use crate::montecarlo::{run_monte_carlo, MCConfig, SymmetryMode};
use crate::network::{build_admittance, load_network, AdmittanceMatrix, NetworkModel};
use crate::sensitivity::{assemble_problem, solve_coefficients, CoefficientId, SensitivityProblem, SensitivityResult};
use crate::uncertainty::{
    analytical, it_class_to_polar, project_polar_noise, AdmittanceUncertainty, ItClass,
    NoiseConfig, PolarNoiseSpec, ProjectionForm, PropagationOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Analytical,
    MonteCarlo,
    #[default]
    Both,
}

impl Mode {
    pub fn analytical(self) -> bool {
        matches!(self, Mode::Analytical | Mode::Both)
    }

    pub fn monte_carlo(self) -> bool {
        matches!(self, Mode::MonteCarlo | Mode::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
    Pretty,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Pretty => "txt",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "pretty" | "text" => Ok(Format::Pretty),
            _ => Err(Error::Config(format!("unknown format '{s}' (csv, json, pretty)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Network file, or the name of a bundled network.
    pub network: PathBuf,
    /// Noise configuration file; the bundled one when `None`.
    pub noise_config: Option<PathBuf>,
    pub mode: Mode,
    pub n_mc: Vec<usize>,
    /// Admittance uncertainty levels; the noise configuration's level when empty.
    pub sigma_y_pct: Vec<f64>,
    pub it_class: ItClass,
    pub seed: u64,
    /// Coefficients to report; all when `None`.
    pub coefficients: Option<Vec<CoefficientId>>,
    pub symmetry_mode: SymmetryMode,
    pub projection: ProjectionForm,
    pub propagation: PropagationOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: PathBuf::from("ieee4-balanced"),
            noise_config: None,
            mode: Mode::Both,
            n_mc: vec![1000],
            sigma_y_pct: Vec::new(),
            it_class: ItClass::Label("0.5".into()),
            seed: 42,
            coefficients: None,
            symmetry_mode: SymmetryMode::IndependentElements,
            projection: ProjectionForm::SignCorrected,
            propagation: PropagationOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode.monte_carlo() && (self.n_mc.is_empty() || self.n_mc.contains(&0)) {
            return Err(Error::Config("Monte-Carlo mode needs trial counts of at least 1".into()));
        }
        if self.sigma_y_pct.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("admittance uncertainty levels must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn load_noise_config(&self) -> Result<NoiseConfig> {
        match &self.noise_config {
            Some(p) => NoiseConfig::load(p),
            None => Ok(NoiseConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub sigma_y_pct: f64,
    pub coefficient: CoefficientId,
    pub nominal: f64,
    pub std_analytical: Option<f64>,
    /// Aligned with [`ComparisonReport::n_mc`].
    pub std_mc: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub stage: String,
    pub sigma_y_pct: Option<f64>,
    pub n_mc: Option<usize>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub it_class: String,
    pub seed: u64,
    pub analytical: bool,
    pub n_mc: Vec<usize>,
    pub rows: Vec<ReportRow>,
    pub timings: Vec<Timing>,
    pub trials_failed: usize,
}

fn percent(std: Option<f64>, nominal: f64) -> Option<f64> {
    std.map(|s| 100.0 * s / nominal.abs()).filter(|p| p.is_finite())
}

/// Everything the subcommands share: network, admittance, state and coefficients.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub network: NetworkModel,
    pub y: AdmittanceMatrix,
    pub state: GridState,
    pub problem: SensitivityProblem,
    pub solution: SensitivityResult,
    pub timings: Vec<Timing>,
}

fn timed<T>(timings: &mut Vec<Timing>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().stage(stage)?;
    timings.push(Timing {
        stage: stage.into(),
        sigma_y_pct: None,
        n_mc: None,
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok(out)
}

/// Load the network, solve the load flow and the coefficients.
pub fn prepare(network: &Path) -> Result<Prepared> {
    let mut timings = Vec::new();
    let network = load_network(network).stage("load network")?;
    let y = build_admittance(&network).stage("admittance")?;
    let state = timed(&mut timings, "load_flow", || solve_load_flow(&network, &y, None))?;
    let (problem, solution) = timed(&mut timings, "pfsc", || {
        let problem = assemble_problem(&y, &state, network.slack_position())?;
        let solution = solve_coefficients(&problem)?;
        Ok((problem, solution))
    })?;
    Ok(Prepared {
        network,
        y,
        state,
        problem,
        solution,
        timings,
    })
}

/// Run every configured stage and collect the comparison.
pub fn run_pipeline(cfg: &RunConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let noise = cfg.load_noise_config().stage("noise config")?;
    let prepared = prepare(&cfg.network)?;
    run_prepared(cfg, &noise, &prepared)
}

pub fn run_prepared(cfg: &RunConfig, noise: &NoiseConfig, pre: &Prepared) -> Result<ComparisonReport> {
    cfg.validate()?;
    let level = it_class_to_polar(&cfg.it_class, noise).stage("noise")?;
    let polar = PolarNoiseSpec::uniform(level, noise.magnitude_scale, pre.y.dim()).stage("noise")?;
    let en = project_polar_noise(&pre.state.voltages, &polar, cfg.projection).stage("noise")?;

    let ids: Vec<CoefficientId> = match &cfg.coefficients {
        Some(ids) => ids.clone(),
        None => pre.problem.all_coefficients(),
    };
    let cells: Vec<(usize, usize)> = ids
        .iter()
        .map(|id| {
            pre.problem
                .locate(id)
                .ok_or_else(|| Error::Config(format!("coefficient {id} is not in this network")))
        })
        .collect::<Result<_>>()?;

    let levels = if cfg.sigma_y_pct.is_empty() {
        vec![noise.sigma_y_pct]
    } else {
        cfg.sigma_y_pct.clone()
    };
    let n_mc = if cfg.mode.monte_carlo() { cfg.n_mc.clone() } else { Vec::new() };

    let mut timings = pre.timings.clone();
    let mut rows = Vec::new();
    let mut trials_failed = 0;
    for &pct in &levels {
        let yu = AdmittanceUncertainty::from_percent(&pre.y, pct).stage("admittance uncertainty")?;
        let analytic = if cfg.mode.analytical() {
            let out = analytical(&pre.problem, &pre.solution, &pre.y, &pre.state, &yu, &en, cfg.propagation)
                .stage("analytical propagation")?;
            timings.push(Timing {
                stage: "analytical".into(),
                sigma_y_pct: Some(pct),
                n_mc: None,
                seconds: out.result.metadata.runtime.as_secs_f64(),
            });
            Some(out.result.std())
        } else {
            None
        };
        let mut mc = Vec::new();
        for &n in &n_mc {
            let mc_cfg = MCConfig {
                n_mc: n,
                seed: cfg.seed,
                polar: polar.clone(),
                yu: yu.clone(),
                symmetry_mode: cfg.symmetry_mode,
                keep_trials: false,
            };
            let r = run_monte_carlo(&pre.network, &pre.y, &pre.state, &mc_cfg).stage("monte carlo")?;
            timings.push(Timing {
                stage: "monte_carlo".into(),
                sigma_y_pct: Some(pct),
                n_mc: Some(n),
                seconds: r.runtime.as_secs_f64(),
            });
            trials_failed += r.trials_failed;
            mc.push(r.std);
        }
        for (id, &(r, c)) in ids.iter().zip(&cells) {
            rows.push(ReportRow {
                sigma_y_pct: pct,
                coefficient: *id,
                nominal: pre.solution.x[(r, c)],
                std_analytical: analytic.as_ref().map(|s| s[(r, c)]),
                std_mc: mc.iter().map(|s| Some(s[(r, c)])).collect(),
            });
        }
    }
    Ok(ComparisonReport {
        it_class: cfg.it_class.to_string(),
        seed: cfg.seed,
        analytical: cfg.mode.analytical(),
        n_mc,
        rows,
        timings,
        trials_failed,
    })
}

/// A cell of a flat table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(Option<u64>),
    Num(Option<f64>),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(Some(v)) => v.to_string(),
            Cell::Num(Some(v)) => v.to_string(),
            Cell::Int(None) | Cell::Num(None) => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(Some(v)) => Value::from(*v),
            Cell::Int(None) => Value::Null,
            Cell::Num(Some(v)) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Num(None) => Value::Null,
        }
    }

    fn pretty(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(Some(v)) => v.to_string(),
            Cell::Num(Some(v)) => format!("{v:.4}"),
            Cell::Int(None) | Cell::Num(None) => "-".into(),
        }
    }
}

/// Column names and rows, rendered to any [`Format`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let err = |e: csv::Error| Error::Output(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).map_err(err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Output(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Output(e.to_string()))
    }

    /// Array of objects keyed by column name.
    pub fn to_json_value(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .columns
                        .iter()
                        .cloned()
                        .zip(row.iter().map(Cell::json))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    pub fn to_pretty(&self) -> String {
        let text: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::pretty).collect()).collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|c| {
                text.iter()
                    .map(|r| r[c].len())
                    .chain([self.columns[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |cells: &[String], out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}"))
                .collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(&self.columns, &mut out);
        for r in &text {
            line(r, &mut out);
        }
        out
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => serde_json::to_string_pretty(&self.to_json_value())
                .map(|s| s + "\n")
                .map_err(|e| Error::Output(e.to_string())),
            Format::Pretty => Ok(self.to_pretty()),
        }
    }
}

impl ComparisonReport {
    /// Flat table: one row per (level, coefficient).
    pub fn table(&self) -> Table {
        let mut columns: Vec<String> = ["sigma_y_pct", "coefficient", "nominal_pu"].map(String::from).into();
        if self.analytical {
            columns.push("std_analytical".into());
        }
        columns.extend(self.n_mc.iter().map(|n| format!("std_mc_{n}")));
        if self.analytical {
            columns.push("pct_analytical".into());
        }
        columns.extend(self.n_mc.iter().map(|n| format!("pct_mc_{n}")));

        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    Cell::Num(Some(r.sigma_y_pct)),
                    Cell::Text(r.coefficient.to_string()),
                    Cell::Num(Some(r.nominal)),
                ];
                if self.analytical {
                    row.push(Cell::Num(r.std_analytical));
                }
                row.extend(r.std_mc.iter().map(|s| Cell::Num(*s)));
                if self.analytical {
                    row.push(Cell::Num(percent(r.std_analytical, r.nominal)));
                }
                row.extend(r.std_mc.iter().map(|s| Cell::Num(percent(*s, r.nominal))));
                row
            })
            .collect();
        Table { columns, rows }
    }

    pub fn timings_table(&self) -> Table {
        Table {
            columns: ["stage", "sigma_y_pct", "n_mc", "seconds"].map(String::from).into(),
            rows: self
                .timings
                .iter()
                .map(|t| {
                    vec![
                        Cell::Text(t.stage.clone()),
                        Cell::Num(t.sigma_y_pct),
                        Cell::Int(t.n_mc.map(|n| n as u64)),
                        Cell::Num(Some(t.seconds)),
                    ]
                })
                .collect(),
        }
    }

    /// Paper-style layout: one block per admittance level, coefficients as
    /// columns, four decimals.
    pub fn to_pretty(&self) -> String {
        let mut levels: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !levels.contains(&r.sigma_y_pct) {
                levels.push(r.sigma_y_pct);
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "{}, seed {}", self.it_class, self.seed);
        for pct in levels {
            let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.sigma_y_pct == pct).collect();
            let mut columns = vec![format!("sigma_Y = {pct}%")];
            columns.extend(rows.iter().map(|r| r.coefficient.to_string()));
            let mut table = Table {
                columns,
                rows: Vec::new(),
            };
            let text_row = |label: String, values: Vec<String>| {
                let mut row = vec![Cell::Text(label)];
                row.extend(values.into_iter().map(Cell::Text));
                row
            };
            let fmt = |s: Option<f64>, nominal: f64| match (s, percent(s, nominal)) {
                (Some(s), Some(p)) => format!("{s:.4} ({p:.1}%)"),
                (Some(s), None) => format!("{s:.4}"),
                _ => "-".into(),
            };
            table.rows.push(text_row(
                "Nominal value (pu)".into(),
                rows.iter().map(|r| format!("{:.4}", r.nominal)).collect(),
            ));
            if self.analytical {
                table.rows.push(text_row(
                    "Std. deviation (analytical)".into(),
                    rows.iter().map(|r| fmt(r.std_analytical, r.nominal)).collect(),
                ));
            }
            for (k, n) in self.n_mc.iter().enumerate() {
                table.rows.push(text_row(
                    format!("Std. deviation (MC, N = {n})"),
                    rows.iter().map(|r| fmt(r.std_mc[k], r.nominal)).collect(),
                ));
            }
            out.push('\n');
            out.push_str(&table.to_pretty());
        }
        let _ = writeln!(out, "\nComputation time (s)");
        out.push_str(&self.timings_table().to_pretty());
        out
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Pretty => Ok(self.to_pretty()),
            _ => self.table().render(format),
        }
    }
}

/// Write `report.<ext>` and `timings.csv` into `dir`; returns the paths written.
pub fn emit_report(report: &ComparisonReport, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::Output(format!("{}: {e}", dir.display())))?;
    let main = dir.join(format!("report.{}", format.extension()));
    let timings = dir.join("timings.csv");
    for (path, text) in [(&main, report.render(format)?), (&timings, report.timings_table().to_csv()?)] {
        fs::write(path, text).map_err(|e| Error::Output(format!("{}: {e}", path.display())))?;
    }
    Ok(vec![main, timings])
}
