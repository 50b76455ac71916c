//! Finite-state Markov chain driving the active mode.
//!
//! Modes are 0-indexed inside the library. JSON, CSV, the CLI and the Python
//! bindings present them 1-indexed.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Tolerance on row sums of a transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Residual bound on `pi P = pi`.
pub const STATIONARY_TOL: f64 = 1e-10;

/// An irreducible, aperiodic mode chain with a deterministic initial mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeChain {
    p: DMatrix<f64>,
    r0: usize,
}

/// A realized mode signal `r(0), r(1), ...` (0-indexed modes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModePath {
    pub values: Vec<usize>,
}

impl ModeChain {
    /// Validates `p` and builds a chain starting at `r0` (0-indexed).
    pub fn new(p: DMatrix<f64>, r0: usize) -> Result<Self> {
        if !p.is_square() || p.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "transition matrix is {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        let m = p.nrows();
        for (row, r) in p.row_iter().enumerate() {
            let sum: f64 = r.iter().sum();
            let min = r.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !sum.is_finite() || min < 0.0 || max > 1.0 || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotStochastic { row, sum, min });
            }
        }
        if r0 >= m {
            return Err(Error::BadInitialMode { mode: r0 + 1, modes: m });
        }
        check_irreducible(&p)?;
        let period = period(&p);
        if period != 1 {
            return Err(Error::NotAperiodic { period });
        }
        Ok(Self { p, r0 })
    }

    /// Builds from nested rows, as found in problem files.
    pub fn from_rows(rows: &[Vec<f64>], r0: usize) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch("transition matrix rows are ragged".into()));
        }
        let p = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
        Self::new(p, r0)
    }

    pub fn modes(&self) -> usize {
        self.p.nrows()
    }

    pub fn transition_matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.p[(i, j)]
    }

    pub fn initial_mode(&self) -> usize {
        self.r0
    }

    /// Stationary distribution, the normalized left null vector of `P - I`.
    pub fn invariant_distribution(&self) -> Result<DVector<f64>> {
        let m = self.modes();
        // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
        let mut a = self.p.transpose() - DMatrix::identity(m, m);
        let mut b = DVector::zeros(m);
        for j in 0..m {
            a[(m - 1, j)] = 1.0;
        }
        b[m - 1] = 1.0;
        let mut pi = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::NumericalFailure("stationary system is singular".into()))?;
        let total = pi.sum();
        pi /= total;
        let residual = (self.p.transpose() * &pi - &pi).amax();
        if residual > STATIONARY_TOL || pi.iter().any(|&v| v <= 0.0) {
            return Err(Error::NumericalFailure(format!(
                "stationary residual {residual:e}"
            )));
        }
        Ok(pi)
    }

    /// `P^l`; `l = 0` gives the identity.
    pub fn l_step(&self, l: usize) -> DMatrix<f64> {
        let m = self.modes();
        let mut result = DMatrix::identity(m, m);
        let mut base = self.p.clone();
        let mut e = l;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        result
    }

    /// Powers `P^0, P^1, ..., P^(count-1)`.
    pub fn powers(&self, count: usize) -> Vec<DMatrix<f64>> {
        let m = self.modes();
        let mut out = Vec::with_capacity(count);
        let mut cur = DMatrix::identity(m, m);
        for _ in 0..count {
            let next = &cur * &self.p;
            out.push(cur);
            cur = next;
        }
        out
    }

    /// Draws the next mode from row `from`.
    pub(crate) fn step<R: Rng>(&self, from: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let m = self.modes();
        for j in 0..m {
            acc += self.p[(from, j)];
            if u < acc {
                return j;
            }
        }
        // u landed in the rounding gap above the row sum
        (0..m).rev().find(|&j| self.p[(from, j)] > 0.0).unwrap_or(m - 1)
    }

    /// Samples `r(0..horizon)` starting at the initial mode.
    pub fn sample_path(&self, horizon: usize, seed: u64) -> ModePath {
        let mut rng = rng_from(seed);
        let mut values = Vec::with_capacity(horizon);
        if horizon == 0 {
            return ModePath { values };
        }
        let mut cur = self.r0;
        values.push(cur);
        for _ in 1..horizon {
            cur = self.step(cur, &mut rng);
            values.push(cur);
        }
        ModePath { values }
    }
}

impl ModePath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn reachable_from(p: &DMatrix<f64>, start: usize) -> Vec<bool> {
    let m = p.nrows();
    let mut seen = vec![false; m];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..m {
            if p[(u, v)] > 0.0 && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

fn check_irreducible(p: &DMatrix<f64>) -> Result<()> {
    for from in 0..p.nrows() {
        if let Some(to) = reachable_from(p, from).iter().position(|r| !r) {
            return Err(Error::NotIrreducible { from: from + 1, to: to + 1 });
        }
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of an irreducible transition graph: gcd of `level(u) + 1 - level(v)`
/// over all edges, with BFS levels from mode 0.
fn period(p: &DMatrix<f64>) -> usize {
    let m = p.nrows();
    let mut level = vec![usize::MAX; m];
    level[0] = 0;
    let mut queue = VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        for v in 0..m {
            if p[(u, v)] > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0;
    for u in 0..m {
        for v in 0..m {
            if p[(u, v)] > 0.0 {
                let diff = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
                g = gcd(g, diff);
            }
        }
    }
    g
}
