//! Gain synthesis and fixed-gain certification.
//!
//! At fixed `zeta` the Schur blocks are linear in `(R_tilde, L)`, so each
//! candidate `zeta` is one LMI feasibility problem. `R_tilde` is parameterized
//! with trace `n`; the blocks are homogeneous, so this only removes scale.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::lmi::{LmiBlock, LmiOutcome, LmiProblem, SolverOptions};
use crate::markov::ModeChain;
use crate::renewal::IntervalDistribution;
use crate::rng::rng_from;
use crate::stability::{
    check_condp, check_theorem2, check_theorem2_support, condzeta_lhs_auto, condzeta_weights,
    symmetrize, validate_zeta, SwitchedSystem, ZetaCertificate, DEFAULT_PSD_TOL,
};

#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    /// Candidate diagonal entries `zeta_ii`, each in (0, 1).
    pub diag_grid: Vec<f64>,
    /// Off-diagonal entries are placed where the averaged log-growth equals
    /// `-boundary_margin`.
    pub boundary_margin: f64,
    /// Slack demanded of a feasible LMI point.
    pub solver_tol: f64,
    pub max_iters: usize,
    /// Box on every LMI decision variable.
    pub box_bound: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            diag_grid: log_space(0.05, 0.95, 8),
            boundary_margin: 0.01,
            solver_tol: 1e-9,
            max_iters: 200,
            box_bound: 1e4,
        }
    }
}

impl SynthesisConfig {
    fn solver(&self) -> SolverOptions {
        SolverOptions { margin: self.solver_tol, max_iters: self.max_iters }
    }
}

pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp()).collect()
}

/// Which averaged log-growth the search targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Weights from the full interval law.
    Distribution,
    /// Bounded gaps: unit weights up to `tau_bar` and `zeta_ji >= zeta_ii`.
    BoundedGap { tau_bar: usize },
}

/// Feedback gains with the certificate they came from.
#[derive(Debug, Clone)]
pub struct GainSet {
    pub gains: Vec<DMatrix<f64>>,
    pub provenance: Option<ZetaCertificate>,
}

/// `K_i = L_i R_tilde^{-1}`.
pub fn gains_from(r_tilde: &DMatrix<f64>, l: &[DMatrix<f64>]) -> Result<GainSet> {
    let n = r_tilde.nrows();
    if !r_tilde.is_square() || l.iter().any(|li| li.ncols() != n) {
        return Err(Error::DimensionMismatch("gain factors do not match R_tilde".into()));
    }
    let scale = r_tilde.amax();
    let lu = r_tilde.clone().lu();
    if scale == 0.0 || lu.determinant().abs() <= (1e-13 * scale).powi(n as i32) {
        return Err(Error::SingularRtilde);
    }
    let gains = l
        .iter()
        .map(|li| {
            // K R = L  <=>  R' K' = L'
            let kt = r_tilde.transpose().lu().solve(&li.transpose()).ok_or(Error::SingularRtilde)?;
            Ok(kt.transpose())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GainSet { gains, provenance: None })
}

impl GainSet {
    pub fn from_certificate(cert: &ZetaCertificate) -> Result<Self> {
        let mut g = gains_from(&cert.r_tilde, &cert.l)?;
        g.provenance = Some(cert.clone());
        Ok(g)
    }
}

/// Symmetric basis for trace-`n` matrices: returns the constant part and one
/// direction per free entry, plus the start coordinates of the identity.
fn trace_normalized_basis(n: usize) -> (DMatrix<f64>, Vec<DMatrix<f64>>, Vec<f64>) {
    let mut constant = DMatrix::zeros(n, n);
    constant[(n - 1, n - 1)] = n as f64;
    let mut dirs = Vec::new();
    let mut start = Vec::new();
    for a in 0..n {
        for b in a..n {
            if a == n - 1 && b == n - 1 {
                continue;
            }
            let mut e = DMatrix::zeros(n, n);
            if a == b {
                e[(a, a)] = 1.0;
                e[(n - 1, n - 1)] = -1.0;
                start.push(1.0);
            } else {
                e[(a, b)] = 1.0;
                e[(b, a)] = 1.0;
                start.push(0.0);
            }
            dirs.push(e);
        }
    }
    (constant, dirs, start)
}

fn schur_block(zeta: f64, r: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.nrows();
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(r * zeta));
    block.view_mut((0, n), (n, n)).copy_from(&a_hat.transpose());
    block.view_mut((n, 0), (n, n)).copy_from(a_hat);
    block.view_mut((n, n), (n, n)).copy_from(r);
    block
}

/// LMI over `(R_tilde, L)`, or over `R_tilde` alone when gains are fixed
/// (`L_j = K_j R_tilde`).
struct CondpLmi<'a> {
    sys: &'a SwitchedSystem,
    fixed_gains: Option<&'a [DMatrix<f64>]>,
    r_constant: DMatrix<f64>,
    r_dirs: Vec<DMatrix<f64>>,
    r_start: Vec<f64>,
}

impl<'a> CondpLmi<'a> {
    fn new(sys: &'a SwitchedSystem, fixed_gains: Option<&'a [DMatrix<f64>]>) -> Self {
        let (r_constant, r_dirs, r_start) = trace_normalized_basis(sys.state_dim());
        Self { sys, fixed_gains, r_constant, r_dirs, r_start }
    }

    fn l_vars(&self) -> usize {
        match self.fixed_gains {
            Some(_) => 0,
            None => self.sys.modes() * self.sys.input_dim() * self.sys.state_dim(),
        }
    }

    fn problem(&self, zeta: &DMatrix<f64>, box_bound: f64) -> LmiProblem {
        let (n, m, modes) = (self.sys.state_dim(), self.sys.input_dim(), self.sys.modes());
        let nr = self.r_dirs.len();
        let nvars = nr + self.l_vars();
        let mut blocks = Vec::with_capacity(modes * modes);
        for i in 0..modes {
            for j in 0..modes {
                let z = zeta[(i, j)];
                let map = |r: &DMatrix<f64>| -> DMatrix<f64> {
                    let a_hat = match self.fixed_gains {
                        Some(k) => self.sys.closed_loop(i, &k[j]) * r,
                        None => &self.sys.a[i] * r,
                    };
                    schur_block(z, r, &a_hat)
                };
                let constant = map(&self.r_constant);
                let mut coeffs: Vec<DMatrix<f64>> = self.r_dirs.iter().map(map).collect();
                if self.fixed_gains.is_none() {
                    for g in 0..modes {
                        for c in 0..m {
                            for d in 0..n {
                                if g != j {
                                    coeffs.push(DMatrix::zeros(2 * n, 2 * n));
                                    continue;
                                }
                                let mut e = DMatrix::zeros(m, n);
                                e[(c, d)] = 1.0;
                                let a_hat = &self.sys.b[i] * e;
                                coeffs.push(schur_block(0.0, &DMatrix::zeros(n, n), &a_hat));
                            }
                        }
                    }
                }
                blocks.push(LmiBlock { constant, coeffs });
            }
        }
        let mut start = DVector::zeros(nvars);
        for (k, &v) in self.r_start.iter().enumerate() {
            start[k] = v;
        }
        LmiProblem { blocks, nvars, start, box_bound }
    }

    fn decode(&self, y: &DVector<f64>) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let (n, m, modes) = (self.sys.state_dim(), self.sys.input_dim(), self.sys.modes());
        let mut r = self.r_constant.clone();
        for (k, d) in self.r_dirs.iter().enumerate() {
            r += d * y[k];
        }
        let r = symmetrize(&r);
        let l = match self.fixed_gains {
            Some(k) => k.iter().map(|kj| kj * &r).collect(),
            None => {
                let base = self.r_dirs.len();
                (0..modes)
                    .map(|g| DMatrix::from_fn(m, n, |c, d| y[base + g * m * n + c * n + d]))
                    .collect()
            }
        };
        (r, l)
    }
}

fn check_dims(sys: &SwitchedSystem, zeta: &DMatrix<f64>) -> Result<()> {
    let modes = sys.modes();
    if zeta.shape() != (modes, modes) {
        return Err(Error::DimensionMismatch(format!("zeta is not {modes}x{modes}")));
    }
    validate_zeta(zeta)
}

/// Solves the Schur-block LMI at fixed `zeta`. `Ok(None)` means the solver
/// certified that no strictly feasible `(R_tilde, L)` exists.
pub fn lmi_feasible(
    sys: &SwitchedSystem,
    zeta: &DMatrix<f64>,
    cfg: &SynthesisConfig,
) -> Result<Option<ZetaCertificate>> {
    check_dims(sys, zeta)?;
    let lmi = CondpLmi::new(sys, None);
    match lmi.problem(zeta, cfg.box_bound).solve(&cfg.solver())? {
        LmiOutcome::Feasible { y, .. } => {
            let (r_tilde, l) = lmi.decode(&y);
            Ok(Some(ZetaCertificate { zeta: zeta.clone(), r_tilde, l }))
        }
        LmiOutcome::Infeasible { .. } => Ok(None),
    }
}

/// Same LMI with `L_j = K_j R_tilde` for given gains.
pub fn lmi_feasible_fixed_gains(
    sys: &SwitchedSystem,
    gains: &[DMatrix<f64>],
    zeta: &DMatrix<f64>,
    cfg: &SynthesisConfig,
) -> Result<Option<ZetaCertificate>> {
    check_dims(sys, zeta)?;
    check_gain_dims(sys, gains)?;
    let lmi = CondpLmi::new(sys, Some(gains));
    match lmi.problem(zeta, cfg.box_bound).solve(&cfg.solver())? {
        LmiOutcome::Feasible { y, .. } => {
            let (r_tilde, l) = lmi.decode(&y);
            Ok(Some(ZetaCertificate { zeta: zeta.clone(), r_tilde, l }))
        }
        LmiOutcome::Infeasible { .. } => Ok(None),
    }
}

fn check_gain_dims(sys: &SwitchedSystem, gains: &[DMatrix<f64>]) -> Result<()> {
    let (n, m) = (sys.state_dim(), sys.input_dim());
    if gains.len() != sys.modes() || gains.iter().any(|k| k.shape() != (m, n)) {
        return Err(Error::DimensionMismatch(format!(
            "expected {} gains of shape {m}x{n}",
            sys.modes()
        )));
    }
    Ok(())
}

fn search_weights(
    chain: &ModeChain,
    dist: &IntervalDistribution,
    mode: SearchMode,
) -> Result<DMatrix<f64>> {
    match mode {
        SearchMode::Distribution => condzeta_weights(chain, &dist.survival()),
        SearchMode::BoundedGap { tau_bar } => {
            check_theorem2_support(dist, tau_bar)?;
            condzeta_weights(chain, &vec![1.0; tau_bar])
        }
    }
}

/// Candidate `zeta` matrices: every combination of diagonal grid values, with
/// a common off-diagonal value solving `sum W ln zeta = -margin`. Sorted by
/// largest entry; ties keep grid order.
fn zeta_candidates(weights: &DMatrix<f64>, cfg: &SynthesisConfig, mode: SearchMode) -> Vec<DMatrix<f64>> {
    let m = weights.nrows();
    let grid = &cfg.diag_grid;
    let total = grid.len().pow(m as u32);
    let off_weight: f64 = weights.sum() - weights.trace();
    let mut out = Vec::new();
    for code in 0..total {
        let mut c = code;
        let diag: Vec<f64> = (0..m)
            .map(|_| {
                let v = grid[c % grid.len()];
                c /= grid.len();
                v
            })
            .collect();
        let diag_part: f64 = (0..m).map(|i| weights[(i, i)] * diag[i].ln()).sum();
        let off = if off_weight > 0.0 {
            ((-cfg.boundary_margin - diag_part) / off_weight).exp()
        } else if diag_part <= -cfg.boundary_margin {
            1.0
        } else {
            continue;
        };
        let max_diag = diag.iter().cloned().fold(0.0, f64::max);
        if matches!(mode, SearchMode::BoundedGap { .. }) && off < max_diag {
            continue;
        }
        out.push(DMatrix::from_fn(m, m, |i, j| if i == j { diag[i] } else { off }));
    }
    out.sort_by(|a, b| a.max().total_cmp(&b.max()));
    out
}

/// Grid search over `zeta` near the boundary of the averaged log-growth
/// condition; the first candidate with a feasible LMI wins.
pub fn synthesize(
    sys: &SwitchedSystem,
    chain: &ModeChain,
    dist: &IntervalDistribution,
    cfg: &SynthesisConfig,
    mode: SearchMode,
) -> Result<GainSet> {
    if sys.modes() != chain.modes() {
        return Err(Error::DimensionMismatch("system and chain disagree on mode count".into()));
    }
    let weights = search_weights(chain, dist, mode)?;
    for zeta in zeta_candidates(&weights, cfg, mode) {
        let cert = match lmi_feasible(sys, &zeta, cfg) {
            Ok(Some(cert)) => cert,
            Ok(None) | Err(Error::SolverStall { .. }) => continue,
            Err(e) => return Err(e),
        };
        if !check_condp(sys, &cert, DEFAULT_PSD_TOL)?.pass {
            continue;
        }
        if let SearchMode::BoundedGap { tau_bar } = mode {
            if !check_theorem2(chain, tau_bar, &cert.zeta)?.pass {
                continue;
            }
        }
        return GainSet::from_certificate(&cert);
    }
    Err(Error::NoFeasiblePoint)
}

#[derive(Debug, Clone)]
pub struct FixedGainVerdict {
    pub pass: bool,
    /// Averaged log-growth of the best certificate found (auto-selected evaluator,
    /// or the `tau_bar`-sum in bounded-gap mode).
    pub condzeta_lhs: f64,
    pub certificate: Option<ZetaCertificate>,
}

/// Tightest `zeta_ij` for Lyapunov matrix `R = C C'`: `||C' M_ij C^{-T}||_2^2`.
fn tight_zeta(closed: &[Vec<DMatrix<f64>>], c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let c_inv = c.clone().try_inverse()?;
    let modes = closed.len();
    let mut z = DMatrix::zeros(modes, modes);
    for i in 0..modes {
        for j in 0..modes {
            let nmat = c.transpose() * &closed[i][j] * c_inv.transpose();
            z[(i, j)] = (nmat.transpose() * &nmat).symmetric_eigenvalues().max().max(1e-300);
        }
    }
    Some(z)
}

fn raise_for_ordering(z: &mut DMatrix<f64>) {
    for i in 0..z.nrows() {
        for j in 0..z.nrows() {
            if z[(j, i)] < z[(i, i)] {
                z[(j, i)] = z[(i, i)];
            }
        }
    }
}

/// Lower-triangular factor with unit `(0,0)` entry and exp-parameterized diagonal.
fn factor_from_params(n: usize, p: &[f64]) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(n, n);
    c[(0, 0)] = 1.0;
    let mut k = 0;
    for a in 0..n {
        for b in 0..=a {
            if a == 0 && b == 0 {
                continue;
            }
            c[(a, b)] = if a == b { p[k].exp() } else { p[k] };
            k += 1;
        }
    }
    c
}

fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, start: &[f64], step: f64, iters: usize) -> (Vec<f64>, f64) {
    let d = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((start.to_vec(), f(start)));
    for k in 0..d {
        let mut x = start.to_vec();
        x[k] += step;
        let v = f(&x);
        simplex.push((x, v));
    }
    for _ in 0..iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[d].1);
        if (worst - best).abs() <= 1e-13 * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|s| s.0[k]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..d).map(|k| centroid[k] + t * (simplex[d].0[k] - centroid[k])).collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let xc = if fr < worst { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            if fc < worst.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    for k in 0..d {
                        s.0[k] = x0[k] + 0.5 * (s.0[k] - x0[k]);
                    }
                    s.1 = f(&s.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// Searches for `(R_tilde, zeta)` certifying the given gains.
///
/// For a fixed Lyapunov matrix the smallest admissible `zeta_ij` are
/// generalized eigenvalues, so the search runs over `R` alone (multi-start
/// Nelder-Mead on a Cholesky parameterization). The best point is then handed
/// to the fixed-gain LMI, alternating `R_tilde` solves with tightening `zeta`
/// for at most 20 rounds; the final certificate is checked independently.
pub fn fixed_gain_feasibility(
    sys: &SwitchedSystem,
    chain: &ModeChain,
    gains: &[DMatrix<f64>],
    dist: &IntervalDistribution,
    mode: SearchMode,
    cfg: &SynthesisConfig,
) -> Result<FixedGainVerdict> {
    check_gain_dims(sys, gains)?;
    let n = sys.state_dim();
    let modes = sys.modes();
    let weights = search_weights(chain, dist, mode)?;
    let closed: Vec<Vec<DMatrix<f64>>> = (0..modes)
        .map(|i| (0..modes).map(|j| sys.closed_loop(i, &gains[j])).collect())
        .collect();
    let bounded = matches!(mode, SearchMode::BoundedGap { .. });
    let score = |z: &DMatrix<f64>| -> f64 {
        let mut z = z.clone();
        if bounded {
            raise_for_ordering(&mut z);
        }
        let mut s = 0.0;
        for i in 0..modes {
            for j in 0..modes {
                s += weights[(j, i)] * z[(j, i)].ln();
            }
        }
        s
    };
    let objective = |p: &[f64]| -> f64 {
        if p.iter().any(|v| v.abs() > 30.0) {
            return f64::INFINITY;
        }
        tight_zeta(&closed, &factor_from_params(n, p)).map_or(f64::INFINITY, |z| score(&z))
    };

    let dim = n * (n + 1) / 2 - 1;
    let mut rng = rng_from(0x5EED);
    let mut starts = vec![vec![0.0; dim]];
    for _ in 0..24 {
        starts.push((0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect());
    }
    let (best_p, _) = starts
        .iter()
        .map(|s| {
            if dim == 0 {
                (Vec::new(), objective(&[]))
            } else {
                let (x, _) = nelder_mead(&objective, s, 0.5, 1500);
                nelder_mead(&objective, &x, 0.05, 1500)
            }
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one start");

    let c = factor_from_params(n, &best_p);
    let mut zeta = match tight_zeta(&closed, &c) {
        Some(z) => z,
        None => return Ok(FixedGainVerdict { pass: false, condzeta_lhs: f64::INFINITY, certificate: None }),
    };
    let inflate = |z: &mut DMatrix<f64>| {
        z.iter_mut().for_each(|v| *v = (*v * (1.0 + 1e-6)).max(1e-11));
        if bounded {
            raise_for_ordering(z);
        }
    };
    inflate(&mut zeta);

    let evaluate = |z: &DMatrix<f64>| -> Result<f64> {
        Ok(match mode {
            SearchMode::Distribution => condzeta_lhs_auto(chain, dist, z, false)?.1.lhs,
            SearchMode::BoundedGap { tau_bar } => check_theorem2(chain, tau_bar, z)?.tau_sum,
        })
    };

    let mut best: Option<(f64, ZetaCertificate)> = None;
    for _ in 0..20 {
        let cert = match lmi_feasible_fixed_gains(sys, gains, &zeta, cfg) {
            Ok(Some(cert)) => cert,
            Ok(None) | Err(Error::SolverStall { .. }) => break,
            Err(e) => return Err(e),
        };
        if !check_condp(sys, &cert, DEFAULT_PSD_TOL)?.pass {
            break;
        }
        let lhs = evaluate(&cert.zeta)?;
        let improved = best.as_ref().is_none_or(|(b, _)| lhs < *b - 1e-12);
        if !improved {
            break;
        }
        // tighten zeta around the new R_tilde
        let r = cert.r_tilde.clone().try_inverse().map(|r| symmetrize(&r));
        best = Some((lhs, cert));
        let next = r.and_then(|r| r.cholesky()).and_then(|ch| tight_zeta(&closed, &ch.l()));
        match next {
            Some(mut z) => {
                inflate(&mut z);
                zeta = z;
            }
            None => break,
        }
    }

    let mut verdict = match best {
        Some((lhs, cert)) => FixedGainVerdict { pass: lhs < 0.0, condzeta_lhs: lhs, certificate: Some(cert) },
        None => FixedGainVerdict { pass: false, condzeta_lhs: evaluate(&zeta)?, certificate: None },
    };
    if let (SearchMode::BoundedGap { tau_bar }, Some(cert)) = (mode, verdict.certificate.as_ref()) {
        verdict.pass = verdict.pass && check_theorem2(chain, tau_bar, &cert.zeta)?.pass;
    }
    Ok(verdict)
}
