//! Evaluators for the almost-sure stabilization conditions.
//!
//! A certificate is a triple `(R_tilde, L, zeta)`. The matrix condition asks
//! that every closed-loop pair `(subsystem i, gain j)` grows the Lyapunov-like
//! function `V(x) = x' R_tilde^{-1} x` by at most `zeta[i][j]` per step; it is
//! checked through the Schur-complement block
//!
//! ```text
//! [ zeta_ij R_tilde    A_hat_ij' ]
//! [ A_hat_ij           R_tilde   ]  >= 0,     A_hat_ij = A_i R_tilde + B_i L_j
//! ```
//!
//! The scalar condition asks that the averaged log-growth
//!
//! ```text
//! sum_tau mu_tau sum_{l=1..tau} sum_{i,j} pi_i p_ij^(l-1) ln zeta_ji
//! ```
//!
//! be negative. It is evaluated after swapping the `tau` and `l` sums, which
//! turns `mu` into its survival function `S_l = P[tau >= l]`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::markov::ModeChain;
use crate::renewal::{DistributionKind, IntervalDistribution};

/// PSD slack on normalized Schur blocks.
pub const DEFAULT_PSD_TOL: f64 = 1e-8;
/// Smallest admissible `zeta` entry.
pub const ZETA_FLOOR: f64 = 1e-12;
const IMAG_TOL: f64 = 1e-10;
const MONOTONE_TOL: f64 = 1e-12;

/// Subsystem matrices `(A_i, B_i)` of `x(k+1) = A_r x + B_r u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedSystem {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

impl SwitchedSystem {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} state matrices, {} input matrices",
                a.len(),
                b.len()
            )));
        }
        let n = a[0].nrows();
        let m = b[0].ncols();
        for (i, (ai, bi)) in a.iter().zip(&b).enumerate() {
            if ai.nrows() != n || ai.ncols() != n {
                return Err(Error::DimensionMismatch(format!("A[{}] is not {n}x{n}", i + 1)));
            }
            if bi.nrows() != n || bi.ncols() != m {
                return Err(Error::DimensionMismatch(format!("B[{}] is not {n}x{m}", i + 1)));
            }
            if ai.iter().chain(bi.iter()).any(|v| !v.is_finite()) {
                return Err(Error::DimensionMismatch(format!("non-finite entry in mode {}", i + 1)));
            }
        }
        Ok(Self { a, b })
    }

    pub fn modes(&self) -> usize {
        self.a.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b[0].ncols()
    }

    /// `A_i + B_i K`.
    pub fn closed_loop(&self, i: usize, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a[i] + &self.b[i] * k
    }
}

/// `(R_tilde, L_1..L_M, zeta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZetaCertificate {
    pub zeta: DMatrix<f64>,
    pub r_tilde: DMatrix<f64>,
    pub l: Vec<DMatrix<f64>>,
}

impl ZetaCertificate {
    /// Checks shapes against `sys` and positivity of `zeta`.
    pub fn validate(&self, sys: &SwitchedSystem) -> Result<()> {
        let (n, m, modes) = (sys.state_dim(), sys.input_dim(), sys.modes());
        if self.r_tilde.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!("R_tilde is not {n}x{n}")));
        }
        if self.l.len() != modes || self.l.iter().any(|l| l.shape() != (m, n)) {
            return Err(Error::DimensionMismatch(format!("expected {modes} gain factors of {m}x{n}")));
        }
        if self.zeta.shape() != (modes, modes) {
            return Err(Error::DimensionMismatch(format!("zeta is not {modes}x{modes}")));
        }
        validate_zeta(&self.zeta)
    }
}

pub fn validate_zeta(zeta: &DMatrix<f64>) -> Result<()> {
    for i in 0..zeta.nrows() {
        for j in 0..zeta.ncols() {
            let value = zeta[(i, j)];
            if !(value >= ZETA_FLOOR) || !value.is_finite() {
                return Err(Error::NonPositiveZeta { i: i + 1, j: j + 1, value });
            }
        }
    }
    Ok(())
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Schur block for pair `(i, j)`.
pub fn condp_block(sys: &SwitchedSystem, cert: &ZetaCertificate, i: usize, j: usize) -> DMatrix<f64> {
    let n = sys.state_dim();
    let r = symmetrize(&cert.r_tilde);
    let a_hat = &sys.a[i] * &r + &sys.b[i] * &cert.l[j];
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(&r * cert.zeta[(i, j)]));
    block.view_mut((0, n), (n, n)).copy_from(&a_hat.transpose());
    block.view_mut((n, 0), (n, n)).copy_from(&a_hat);
    block.view_mut((n, n), (n, n)).copy_from(&r);
    block
}

#[derive(Debug, Clone, Serialize)]
pub struct PairResidual {
    /// Subsystem, 1-indexed.
    pub i: usize,
    /// Gain, 1-indexed.
    pub j: usize,
    /// Minimum eigenvalue of the block scaled by its largest absolute entry.
    pub min_eig: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CondpReport {
    pub pass: bool,
    pub r_tilde_min_eig: f64,
    pub residuals: Vec<PairResidual>,
}

/// Checks every Schur block for PSD within `tol` after normalization, and
/// `R_tilde` for positive definiteness.
pub fn check_condp(sys: &SwitchedSystem, cert: &ZetaCertificate, tol: f64) -> Result<CondpReport> {
    cert.validate(sys)?;
    let m = sys.modes();
    let mut residuals = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let block = condp_block(sys, cert, i, j);
            let scale = block.amax();
            let min_eig = if scale > 0.0 { min_sym_eigenvalue(&(block / scale)) } else { 0.0 };
            residuals.push(PairResidual { i: i + 1, j: j + 1, min_eig, pass: min_eig >= -tol });
        }
    }
    let r_tilde_min_eig = min_sym_eigenvalue(&cert.r_tilde);
    let pass = r_tilde_min_eig > 0.0 && residuals.iter().all(|r| r.pass);
    Ok(CondpReport { pass, r_tilde_min_eig, residuals })
}

/// `W[(j, i)] = pi_i * sum_l survival[l-1] * p_ij^(l-1)`, the coefficient of
/// `ln zeta[(j, i)]` in the averaged log-growth.
pub fn condzeta_weights(chain: &ModeChain, survival: &[f64]) -> Result<DMatrix<f64>> {
    let pi = chain.invariant_distribution()?;
    let m = chain.modes();
    let mut acc = DMatrix::<f64>::zeros(m, m);
    let mut power = DMatrix::<f64>::identity(m, m);
    for &s in survival {
        acc += &power * s;
        power = &power * chain.transition_matrix();
    }
    Ok(DMatrix::from_fn(m, m, |j, i| pi[i] * acc[(i, j)]))
}

fn weighted_log_sum(weights: &DMatrix<f64>, zeta: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..zeta.nrows() {
        for j in 0..zeta.ncols() {
            total += weights[(j, i)] * zeta[(j, i)].ln();
        }
    }
    total
}

fn check_zeta_shape(chain: &ModeChain, zeta: &DMatrix<f64>) -> Result<()> {
    let m = chain.modes();
    if zeta.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!("zeta is not {m}x{m}")));
    }
    validate_zeta(zeta)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CondzetaValue {
    pub lhs: f64,
    /// Bound on the error caused by truncating the interval law.
    pub truncation_bound: f64,
}

/// Averaged log-growth over the retained support of `dist`.
pub fn condzeta_lhs_general(
    chain: &ModeChain,
    dist: &IntervalDistribution,
    zeta: &DMatrix<f64>,
) -> Result<CondzetaValue> {
    check_zeta_shape(chain, zeta)?;
    let w = condzeta_weights(chain, &dist.survival())?;
    let lhs = weighted_log_sum(&w, zeta);
    let max_log = zeta.iter().map(|z| z.ln().abs()).fold(0.0, f64::max);
    let tail = dist.tail_mass();
    let truncation_bound = if tail > 0.0 {
        max_log * (dist.tail_first_moment() + dist.mean() * tail / (1.0 - tail))
    } else {
        0.0
    };
    Ok(CondzetaValue { lhs, truncation_bound })
}

/// Closed form for the missing-sample law: `sum_ij pi_i ln zeta_ji z_ij` with
/// `Z = (I - (1 - theta) P)^{-1}`.
pub fn condzeta_lhs_geometric(chain: &ModeChain, theta: f64, zeta: &DMatrix<f64>) -> Result<f64> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::BadTheta(theta));
    }
    check_zeta_shape(chain, zeta)?;
    let m = chain.modes();
    let pi = chain.invariant_distribution()?;
    let resolvent = DMatrix::<f64>::identity(m, m) - chain.transition_matrix() * (1.0 - theta);
    let z = resolvent.try_inverse().ok_or(Error::SingularResolvent)?;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            total += pi[i] * zeta[(j, i)].ln() * z[(i, j)];
        }
    }
    Ok(total)
}

/// Observation every `period` steps: `sum_{l=1..T} sum_ij pi_i p_ij^(l-1) ln zeta_ji`.
pub fn condzeta_lhs_periodic(chain: &ModeChain, period: usize, zeta: &DMatrix<f64>) -> Result<f64> {
    if period == 0 {
        return Err(Error::BadBounds { lo: 0, hi: 0 });
    }
    check_zeta_shape(chain, zeta)?;
    let w = condzeta_weights(chain, &vec![1.0; period])?;
    Ok(weighted_log_sum(&w, zeta))
}

/// Uniform gaps on `{lo..hi}`, summed per interval length without reordering.
pub fn condzeta_lhs_uniform(chain: &ModeChain, lo: usize, hi: usize, zeta: &DMatrix<f64>) -> Result<f64> {
    if lo == 0 || lo > hi {
        return Err(Error::BadBounds { lo, hi });
    }
    check_zeta_shape(chain, zeta)?;
    let pi = chain.invariant_distribution()?;
    let m = chain.modes();
    let powers = chain.powers(hi);
    let per_l: Vec<f64> = powers
        .iter()
        .map(|p| {
            let mut s = 0.0;
            for i in 0..m {
                for j in 0..m {
                    s += pi[i] * p[(i, j)] * zeta[(j, i)].ln();
                }
            }
            s
        })
        .collect();
    let total: f64 = (lo..=hi).map(|tau| per_l[..tau].iter().sum::<f64>()).sum();
    Ok(total / (hi - lo + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CondzetaMethod {
    General,
    Geometric,
    Periodic,
    Uniform,
}

impl fmt::Display for CondzetaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::General => "general",
            Self::Geometric => "geometric",
            Self::Periodic => "periodic",
            Self::Uniform => "uniform",
        };
        f.write_str(s)
    }
}

/// Picks the evaluator matching how `dist` was built.
pub fn condzeta_lhs_auto(
    chain: &ModeChain,
    dist: &IntervalDistribution,
    zeta: &DMatrix<f64>,
    force_general: bool,
) -> Result<(CondzetaMethod, CondzetaValue)> {
    let exact = |lhs| CondzetaValue { lhs, truncation_bound: 0.0 };
    if force_general {
        return Ok((CondzetaMethod::General, condzeta_lhs_general(chain, dist, zeta)?));
    }
    Ok(match dist.kind() {
        DistributionKind::Geometric { theta } => {
            (CondzetaMethod::Geometric, exact(condzeta_lhs_geometric(chain, theta, zeta)?))
        }
        DistributionKind::Periodic { period } => {
            (CondzetaMethod::Periodic, exact(condzeta_lhs_periodic(chain, period, zeta)?))
        }
        DistributionKind::Uniform { lo, hi } => {
            (CondzetaMethod::Uniform, exact(condzeta_lhs_uniform(chain, lo, hi, zeta)?))
        }
        DistributionKind::Explicit => {
            (CondzetaMethod::General, condzeta_lhs_general(chain, dist, zeta)?)
        }
    })
}

/// Almost-sure exponential rate of `prod zeta_{r(n), sigma(n)}`: the averaged
/// log-growth divided by the mean gap.
pub fn ergodic_rate(chain: &ModeChain, dist: &IntervalDistribution, zeta: &DMatrix<f64>) -> Result<f64> {
    let (_, v) = condzeta_lhs_auto(chain, dist, zeta, false)?;
    Ok(v.lhs / dist.mean())
}

/// Right-hand side of the bounded-gap comparison:
/// `(mean gap / tau_bar) * tau_bar-sum`.
pub fn theorem2_bound(dist: &IntervalDistribution, tau_bar: usize, tau_sum: f64) -> f64 {
    dist.mean() / tau_bar as f64 * tau_sum
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem2Report {
    pub pass: bool,
    /// `(re, im)` eigenvalues of `P`.
    pub eigenvalues: Vec<(f64, f64)>,
    pub positive_real_spectrum: bool,
    pub zeta_ordering: bool,
    pub tau_bar: usize,
    pub tau_sum: f64,
    /// First condition that failed, if any.
    pub failure: Option<String>,
}

pub fn transition_eigenvalues(chain: &ModeChain) -> Vec<(f64, f64)> {
    let mut ev: Vec<(f64, f64)> = chain
        .transition_matrix()
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect();
    ev.sort_by(|a, b| b.0.total_cmp(&a.0));
    ev
}

/// Bounded-gap conditions: positive real spectrum of `P`,
/// `zeta[j][i] >= zeta[i][i]`, and a negative `tau_bar`-sum.
pub fn check_theorem2(chain: &ModeChain, tau_bar: usize, zeta: &DMatrix<f64>) -> Result<Theorem2Report> {
    if tau_bar == 0 {
        return Err(Error::BadBounds { lo: 1, hi: 0 });
    }
    check_zeta_shape(chain, zeta)?;
    let eigenvalues = transition_eigenvalues(chain);
    let positive_real_spectrum = eigenvalues.iter().all(|&(re, im)| {
        let modulus = (re * re + im * im).sqrt();
        im.abs() <= IMAG_TOL * modulus.max(1.0) && re > 0.0
    });
    let m = chain.modes();
    let mut ordering_violation = None;
    'outer: for i in 0..m {
        for j in 0..m {
            if zeta[(j, i)] < zeta[(i, i)] {
                ordering_violation = Some((i, j));
                break 'outer;
            }
        }
    }
    let tau_sum = condzeta_lhs_periodic(chain, tau_bar, zeta)?;
    let failure = if !positive_real_spectrum {
        Some("transition matrix has an eigenvalue that is not positive real".to_string())
    } else if let Some((i, j)) = ordering_violation {
        Some(format!(
            "zeta[{}][{}] = {} < zeta[{}][{}] = {}",
            j + 1,
            i + 1,
            zeta[(j, i)],
            i + 1,
            i + 1,
            zeta[(i, i)]
        ))
    } else if tau_sum >= 0.0 {
        Some(format!("tau_bar-sum = {tau_sum} is not negative"))
    } else {
        None
    };
    Ok(Theorem2Report {
        pass: failure.is_none(),
        eigenvalues,
        positive_real_spectrum,
        zeta_ordering: ordering_violation.is_none(),
        tau_bar,
        tau_sum,
        failure,
    })
}

/// Rejects interval laws that can exceed `tau_bar`.
pub fn check_theorem2_support(dist: &IntervalDistribution, tau_bar: usize) -> Result<()> {
    if dist.max_support() > tau_bar || dist.tail_mass() > 0.0 {
        return Err(Error::Validation {
            field: "observation".into(),
            message: format!(
                "gap law reaches length {} (tail mass {:e}) beyond tau_bar = {tau_bar}",
                dist.max_support(),
                dist.tail_mass()
            ),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub pass: bool,
    /// `(l, i, j)` of the first violation, 1-indexed modes.
    pub first_violation: Option<(usize, usize, usize)>,
}

/// `p_ii^(l+1) <= p_ii^(l)` and `p_ij^(l+1) >= p_ij^(l)` for `l < l_max`.
pub fn monotonicity_check(chain: &ModeChain, l_max: usize) -> MonotonicityReport {
    let m = chain.modes();
    let mut cur = DMatrix::<f64>::identity(m, m);
    for l in 0..l_max {
        let next = &cur * chain.transition_matrix();
        for i in 0..m {
            for j in 0..m {
                let ok = if i == j {
                    next[(i, j)] <= cur[(i, j)] + MONOTONE_TOL
                } else {
                    next[(i, j)] >= cur[(i, j)] - MONOTONE_TOL
                };
                if !ok {
                    return MonotonicityReport { pass: false, first_violation: Some((l, i + 1, j + 1)) };
                }
            }
        }
        cur = next;
    }
    MonotonicityReport { pass: true, first_violation: None }
}

/// `V(x) = x' R_tilde^{-1} x`.
pub fn lyapunov_value(r_inv: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * r_inv * x)[(0, 0)]
}
