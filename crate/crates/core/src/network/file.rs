//! TOML network description files.
//!
//! ```toml
//! name = "example"
//! phases = 1                 # 1 or 3
//!
//! [bases]
//! s_base_va = 10000000.0     # three-phase power base
//! v_base_v = 24900.0         # default line-to-line voltage base
//!
//! [[buses]]
//! index = 1
//! kind = "slack"             # "slack" or "pq"
//! v_pu = 1.0                 # slack only, default 1.0
//! angle_deg = 0.0            # slack only, default 0.0
//!
//! [[buses]]
//! index = 2
//! kind = "pq"
//! v_base_v = 4160.0          # optional per-bus voltage level
//! load_kw = 300.0            # scalar, or one value per phase
//! load_kvar = 150.0
//! gen_kw = 0.0
//! gen_kvar = 0.0
//!
//! [[branches]]
//! from = 1
//! to = 2
//! r_ohm = 0.2                # scalar when phases = 1, else a p x p array
//! x_ohm = 0.4
//! g_shunt_s = 0.0            # optional, default zero
//! b_shunt_s = 0.0            # optional, default zero
//! length = 1.0               # optional, default 1.0
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Branch, Bus, BusKind, NetworkModel};
use crate::error::{Error, Result};

/// The bundled balanced IEEE 4-node feeder.
pub const IEEE4_BALANCED: &str = include_str!("../../data/ieee4-balanced.toml");

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default)]
    name: String,
    phases: usize,
    bases: Bases,
    buses: Vec<BusRecord>,
    #[serde(default)]
    branches: Vec<BranchRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Bases {
    s_base_va: f64,
    v_base_v: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum KindRecord {
    Slack,
    Pq,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusRecord {
    index: u32,
    kind: KindRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_base_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    angle_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    load_kw: Option<PhaseValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    load_kvar: Option<PhaseValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gen_kw: Option<PhaseValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gen_kvar: Option<PhaseValues>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PhaseValues {
    Scalar(f64),
    PerPhase(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum Block {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchRecord {
    from: u32,
    to: u32,
    r_ohm: Block,
    x_ohm: Block,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    g_shunt_s: Option<Block>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b_shunt_s: Option<Block>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length: Option<f64>,
}

impl PhaseValues {
    fn expand(&self, phases: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            PhaseValues::Scalar(v) => Ok(vec![*v; phases]),
            PhaseValues::PerPhase(v) if v.len() == phases => Ok(v.clone()),
            PhaseValues::PerPhase(v) => Err(Error::Dimension(format!(
                "{what} has {} entries, expected {phases}",
                v.len()
            ))),
        }
    }

    fn compress(v: &[f64]) -> Option<Self> {
        if v.iter().all(|x| *x == 0.0) {
            None
        } else if v.len() == 1 {
            Some(PhaseValues::Scalar(v[0]))
        } else {
            Some(PhaseValues::PerPhase(v.to_vec()))
        }
    }
}

impl Block {
    fn expand(&self, phases: usize, what: &str) -> Result<DMatrix<f64>> {
        match self {
            Block::Scalar(v) if phases == 1 => Ok(DMatrix::from_element(1, 1, *v)),
            Block::Scalar(_) => Err(Error::Dimension(format!(
                "{what} is a scalar, expected a {phases}x{phases} matrix"
            ))),
            Block::Matrix(rows) => {
                if rows.len() != phases || rows.iter().any(|r| r.len() != phases) {
                    let cols = rows.first().map_or(0, Vec::len);
                    return Err(Error::Dimension(format!(
                        "{what} is {}x{cols}, expected {phases}x{phases}",
                        rows.len()
                    )));
                }
                Ok(DMatrix::from_fn(phases, phases, |r, c| rows[r][c]))
            }
        }
    }

    fn compress(m: &DMatrix<f64>) -> Self {
        if m.shape() == (1, 1) {
            Block::Scalar(m[(0, 0)])
        } else {
            Block::Matrix(
                (0..m.nrows())
                    .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
                    .collect(),
            )
        }
    }
}

fn into_model(file: NetworkFile) -> Result<NetworkModel> {
    let p = file.phases;
    let zeros = vec![0.0; p];
    let phase_values = |v: &Option<PhaseValues>, what: String| match v {
        Some(v) => v.expand(p, &what),
        None => Ok(zeros.clone()),
    };

    let mut buses = Vec::with_capacity(file.buses.len());
    for rec in &file.buses {
        let kind = match rec.kind {
            KindRecord::Slack => BusKind::Slack {
                v_pu: rec.v_pu.unwrap_or(1.0),
                angle_deg: rec.angle_deg.unwrap_or(0.0),
            },
            KindRecord::Pq => {
                if rec.v_pu.is_some() || rec.angle_deg.is_some() {
                    return Err(Error::Validation(format!(
                        "bus {}: v_pu/angle_deg are only allowed on the slack bus",
                        rec.index
                    )));
                }
                BusKind::Pq
            }
        };
        let label = |f: &str| format!("bus {} {f}", rec.index);
        buses.push(Bus {
            index: rec.index,
            kind,
            v_base_v: rec.v_base_v.unwrap_or(file.bases.v_base_v),
            load_kw: phase_values(&rec.load_kw, label("load_kw"))?,
            load_kvar: phase_values(&rec.load_kvar, label("load_kvar"))?,
            gen_kw: phase_values(&rec.gen_kw, label("gen_kw"))?,
            gen_kvar: phase_values(&rec.gen_kvar, label("gen_kvar"))?,
        });
    }

    let mut branches = Vec::with_capacity(file.branches.len());
    for rec in &file.branches {
        let label = |f: &str| format!("branch {}-{} {f}", rec.from, rec.to);
        let optional = |b: &Option<Block>, f: &str| match b {
            Some(b) => b.expand(p, &label(f)),
            None => Ok(DMatrix::zeros(p, p)),
        };
        branches.push(Branch {
            from: rec.from,
            to: rec.to,
            r_ohm: rec.r_ohm.expand(p, &label("r_ohm"))?,
            x_ohm: rec.x_ohm.expand(p, &label("x_ohm"))?,
            g_shunt_s: optional(&rec.g_shunt_s, "g_shunt_s")?,
            b_shunt_s: optional(&rec.b_shunt_s, "b_shunt_s")?,
            length: rec.length.unwrap_or(1.0),
        });
    }

    let model = NetworkModel {
        name: file.name,
        phases: p,
        s_base_va: file.bases.s_base_va,
        v_base_v: file.bases.v_base_v,
        buses,
        branches,
    };
    model.validate()?;
    Ok(model)
}

fn from_model(model: &NetworkModel) -> NetworkFile {
    let buses = model
        .buses
        .iter()
        .map(|b| {
            let (kind, v_pu, angle_deg) = match b.kind {
                BusKind::Slack { v_pu, angle_deg } => {
                    (KindRecord::Slack, Some(v_pu), Some(angle_deg))
                }
                BusKind::Pq => (KindRecord::Pq, None, None),
            };
            BusRecord {
                index: b.index,
                kind,
                v_base_v: (b.v_base_v != model.v_base_v).then_some(b.v_base_v),
                v_pu,
                angle_deg,
                load_kw: PhaseValues::compress(&b.load_kw),
                load_kvar: PhaseValues::compress(&b.load_kvar),
                gen_kw: PhaseValues::compress(&b.gen_kw),
                gen_kvar: PhaseValues::compress(&b.gen_kvar),
            }
        })
        .collect();
    let branches = model
        .branches
        .iter()
        .map(|br| {
            let nonzero = |m: &DMatrix<f64>| m.iter().any(|v| *v != 0.0);
            BranchRecord {
                from: br.from,
                to: br.to,
                r_ohm: Block::compress(&br.r_ohm),
                x_ohm: Block::compress(&br.x_ohm),
                g_shunt_s: nonzero(&br.g_shunt_s).then(|| Block::compress(&br.g_shunt_s)),
                b_shunt_s: nonzero(&br.b_shunt_s).then(|| Block::compress(&br.b_shunt_s)),
                length: Some(br.length),
            }
        })
        .collect();
    NetworkFile {
        name: model.name.clone(),
        phases: model.phases,
        bases: Bases {
            s_base_va: model.s_base_va,
            v_base_v: model.v_base_v,
        },
        buses,
        branches,
    }
}

/// Parse and validate a network description. `origin` names the source in errors.
pub fn parse_network(text: &str, origin: &str) -> Result<NetworkModel> {
    let file: NetworkFile = toml::from_str(text).map_err(|e| Error::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })?;
    into_model(file)
}

/// Load a network description file. The name `ieee4-balanced` resolves to the
/// bundled feeder when no file of that name exists.
pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    if !path.exists() && path.as_os_str() == "ieee4-balanced" {
        return parse_network(IEEE4_BALANCED, "ieee4-balanced");
    }
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_network(&text, &path.display().to_string())
}

/// Serialize a model to the description format.
pub fn emit_network(model: &NetworkModel) -> Result<String> {
    toml::to_string(&from_model(model)).map_err(|e| Error::Output(e.to_string()))
}
