//! JSON problem definitions and certificate files.
//!
//! Matrices are row-major nested arrays. Modes are 1-indexed in every file.
//!
//! ```json
//! {
//!   "system": { "A": [[[0, 1], [1.6, -0.3]], ...], "B": [[[0], [1]], ...] },
//!   "chain": { "P": [[0.7, 0.3], [0.3, 0.7]], "r0": 1 },
//!   "observation": { "kind": "geometric", "theta": 0.3 },
//!   "options": { "tau_bar": 5 }
//! }
//! ```
//!
//! Observation kinds: `explicit` (`"probs": {"1": 0.5, "3": 0.5}`),
//! `uniform` (`lo`, `hi`), `geometric` (`theta`), `periodic` (`period`).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::ModeChain;
use crate::modeseq::DEFAULT_SEQUENCE_CAP;
use crate::renewal::{DistributionKind, IntervalDistribution, DEFAULT_TAIL_TOL};
use crate::stability::{SwitchedSystem, ZetaCertificate, DEFAULT_PSD_TOL};
use crate::synthesis::{gains_from, GainSet};

pub const SCHEMA_VERSION: u32 = 1;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSystem {
    #[serde(rename = "A")]
    pub a: Vec<Rows>,
    #[serde(rename = "B")]
    pub b: Vec<Rows>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawChain {
    #[serde(rename = "P")]
    pub p: Rows,
    pub r0: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RawObservation {
    Explicit { probs: BTreeMap<String, f64> },
    Uniform { lo: usize, hi: usize },
    Geometric { theta: f64 },
    Periodic { period: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemOptions {
    pub psd_tol: f64,
    pub tail_tol: f64,
    /// Gap bound for the bounded-gap conditions.
    pub tau_bar: Option<usize>,
    pub sequence_cap: usize,
    pub x0: Option<Vec<f64>>,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self {
            psd_tol: DEFAULT_PSD_TOL,
            tail_tol: DEFAULT_TAIL_TOL,
            tau_bar: None,
            sequence_cap: DEFAULT_SEQUENCE_CAP,
            x0: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawProblem {
    pub system: RawSystem,
    pub chain: RawChain,
    pub observation: RawObservation,
    #[serde(default)]
    pub options: ProblemOptions,
}

#[derive(Debug, Clone)]
pub struct ProblemDefinition {
    pub system: SwitchedSystem,
    pub chain: ModeChain,
    pub observation: IntervalDistribution,
    pub options: ProblemOptions,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Validation { field: field.into(), message: message.into() }
}

pub fn matrix_from_rows(rows: &Rows, field: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(invalid(field, "matrix is empty"));
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(invalid(format!("{field}[{}]", r + 1), format!("row has {} entries, expected {ncols}", row.len())));
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("{field}[{}][{}]", r + 1, c + 1), "entry is not finite"));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn parse_json<T: DeserializeOwned>(text: &str, file: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            file: file.to_string(),
            message: format!("{inner} (field `{path}`, line {}, column {})", inner.line(), inner.column()),
        }
    })
}

fn read_file(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

impl RawObservation {
    pub fn build(&self, tail_tol: f64) -> Result<IntervalDistribution> {
        let wrap = |e: Error| invalid("observation", e.to_string());
        match self {
            RawObservation::Explicit { probs } => {
                let mut map = BTreeMap::new();
                for (k, &v) in probs {
                    let tau: usize = k
                        .trim()
                        .parse()
                        .map_err(|_| invalid(format!("observation.probs.{k}"), "key is not a positive integer"))?;
                    map.insert(tau, v);
                }
                IntervalDistribution::explicit(&map).map_err(wrap)
            }
            RawObservation::Uniform { lo, hi } => IntervalDistribution::uniform(*lo, *hi).map_err(wrap),
            RawObservation::Geometric { theta } => IntervalDistribution::geometric(*theta, tail_tol).map_err(wrap),
            RawObservation::Periodic { period } => IntervalDistribution::periodic(*period).map_err(wrap),
        }
    }

    /// Descriptor for a distribution; explicit laws list their masses.
    pub fn describe(dist: &IntervalDistribution) -> Self {
        match dist.kind() {
            DistributionKind::Periodic { period } => RawObservation::Periodic { period },
            DistributionKind::Uniform { lo, hi } => RawObservation::Uniform { lo, hi },
            DistributionKind::Geometric { theta } => RawObservation::Geometric { theta },
            DistributionKind::Explicit => RawObservation::Explicit {
                probs: dist.support().map(|(t, p)| (t.to_string(), p)).collect(),
            },
        }
    }
}

impl RawProblem {
    pub fn build(&self) -> Result<ProblemDefinition> {
        let a = self
            .system
            .a
            .iter()
            .enumerate()
            .map(|(i, m)| matrix_from_rows(m, &format!("system.A[{}]", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let b = self
            .system
            .b
            .iter()
            .enumerate()
            .map(|(i, m)| matrix_from_rows(m, &format!("system.B[{}]", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let system = SwitchedSystem::new(a, b).map_err(|e| invalid("system", e.to_string()))?;

        let p = matrix_from_rows(&self.chain.p, "chain.P")?;
        if self.chain.r0 == 0 || self.chain.r0 > p.nrows() {
            return Err(invalid("chain.r0", format!("must lie in 1..={}", p.nrows())));
        }
        let chain = ModeChain::new(p, self.chain.r0 - 1).map_err(|e| match e {
            Error::NotStochastic { row, .. } => invalid(format!("chain.P[{}]", row + 1), e.to_string()),
            other => invalid("chain.P", other.to_string()),
        })?;
        if chain.modes() != system.modes() {
            return Err(invalid(
                "chain.P",
                format!("{} modes, but the system has {}", chain.modes(), system.modes()),
            ));
        }
        let observation = self.observation.build(self.options.tail_tol)?;
        if let Some(x0) = &self.options.x0 {
            if x0.len() != system.state_dim() {
                return Err(invalid("options.x0", format!("expected {} entries", system.state_dim())));
            }
        }
        Ok(ProblemDefinition { system, chain, observation, options: self.options.clone() })
    }
}

impl ProblemDefinition {
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        parse_json::<RawProblem>(text, file)?.build()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?, &path.display().to_string())
    }

    pub fn to_raw(&self) -> RawProblem {
        RawProblem {
            system: RawSystem {
                a: self.system.a.iter().map(matrix_to_rows).collect(),
                b: self.system.b.iter().map(matrix_to_rows).collect(),
            },
            chain: RawChain {
                p: matrix_to_rows(self.chain.transition_matrix()),
                r0: self.chain.initial_mode() + 1,
            },
            observation: RawObservation::describe(&self.observation),
            options: self.options.clone(),
        }
    }
}

/// Certificate and gain file. `check` needs `R_tilde`, `L` and `zeta`;
/// simulation needs `K` or `R_tilde` with `L`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    pub schema_version: u32,
    #[serde(rename = "R_tilde", default, skip_serializing_if = "Option::is_none")]
    pub r_tilde: Option<Rows>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Vec<Rows>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<Rows>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<Rows>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condzeta_lhs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
}

impl CertificateFile {
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let c: Self = parse_json(text, file)?;
        if c.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("expected {SCHEMA_VERSION}, found {}", c.schema_version)));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?, &path.display().to_string())
    }

    pub fn from_certificate(cert: &ZetaCertificate, gains: Option<&GainSet>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            r_tilde: Some(matrix_to_rows(&cert.r_tilde)),
            l: Some(cert.l.iter().map(matrix_to_rows).collect()),
            zeta: Some(matrix_to_rows(&cert.zeta)),
            k: gains.map(|g| g.gains.iter().map(matrix_to_rows).collect()),
            condzeta_lhs: None,
            rate: None,
        }
    }

    pub fn certificate(&self) -> Result<ZetaCertificate> {
        let r_tilde = matrix_from_rows(self.r_tilde.as_ref().ok_or_else(|| invalid("R_tilde", "missing"))?, "R_tilde")?;
        let l = self
            .l
            .as_ref()
            .ok_or_else(|| invalid("L", "missing"))?
            .iter()
            .enumerate()
            .map(|(i, m)| matrix_from_rows(m, &format!("L[{}]", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let zeta = matrix_from_rows(self.zeta.as_ref().ok_or_else(|| invalid("zeta", "missing"))?, "zeta")?;
        Ok(ZetaCertificate { zeta, r_tilde, l })
    }

    /// Gains from `K` when present, otherwise `K_i = L_i R_tilde^{-1}`.
    pub fn gains(&self) -> Result<GainSet> {
        if let Some(k) = &self.k {
            let gains = k
                .iter()
                .enumerate()
                .map(|(i, m)| matrix_from_rows(m, &format!("K[{}]", i + 1)))
                .collect::<Result<Vec<_>>>()?;
            let provenance = self.certificate().ok();
            return Ok(GainSet { gains, provenance });
        }
        let cert = self.certificate()?;
        let mut g = gains_from(&cert.r_tilde, &cert.l)?;
        g.provenance = Some(cert);
        Ok(g)
    }
}
