//! Voltage sensitivity coefficients of polyphase distribution networks and
//! their uncertainty.
//!
//! The coefficients `dE/dP` and `dE/dQ` for every non-slack node come from a
//! single real linear system `H x = z` built at a load-flow operating point.
//! Their standard deviations under admittance and measurement errors are
//! propagated analytically through `H^-1`, and checked against a seeded
//! Monte-Carlo oracle.
//!
//! ```no_run
//! use pfsc_core::{build_admittance, load_network, solve_load_flow};
//! use pfsc_core::sensitivity::{assemble_problem, solve_coefficients};
//!
//! let net = load_network("ieee4-balanced")?;
//! let y = build_admittance(&net)?;
//! let state = solve_load_flow(&net, &y, None)?;
//! let problem = assemble_problem(&y, &state, net.slack_position())?;
//! let x = solve_coefficients(&problem)?;
//! println!("condition {:.1}", x.condition);
//! # Ok::<(), pfsc_core::Error>(())
//! ```

// Validation uses negated comparisons on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod loadflow;
pub mod montecarlo;
pub mod network;
pub mod report;
pub mod sensitivity;
pub mod uncertainty;

pub use error::{Error, Result};
pub use loadflow::{nodal_power, solve_load_flow, GridState, LoadFlowOptions};
pub use montecarlo::{run_monte_carlo, MCConfig, MCResult, SymmetryMode};
pub use network::{
    build_admittance, emit_network, load_network, parse_network, AdmittanceMatrix, Branch, Bus,
    BusKind, NetworkModel,
};
pub use report::{emit_report, run_pipeline, ComparisonReport, Format, Mode, RunConfig};
pub use sensitivity::{
    CoefficientId, Injection, Part, SensitivityProblem, SensitivityResult,
};
pub use uncertainty::{
    AdmittanceUncertainty, CartesianNoiseSpec, HVariance, InverseVariance, PolarNoiseSpec,
    UncertaintyResult,
};
