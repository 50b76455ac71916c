//! Discrete-time renewal process for the mode-observation instants.
//!
//! Gaps between observations are i.i.d. with law `mu` on the positive integers.
//! Infinite supports are cut where the residual tail falls below a tolerance and
//! the kept mass is renormalized; the removed mass is kept in `tail_mass`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from;

pub const DEFAULT_TAIL_TOL: f64 = 1e-12;
const NORMALIZATION_TOL: f64 = 1e-12;

/// Which constructor produced a distribution; selects closed-form evaluators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistributionKind {
    Explicit,
    Periodic { period: usize },
    Uniform { lo: usize, hi: usize },
    Geometric { theta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalDistribution {
    /// `mass[t - 1]` is the probability of a gap of length `t`.
    mass: Vec<f64>,
    tail_mass: f64,
    /// Upper bound on `sum_{t beyond support} t * mu_t` of the discarded tail.
    tail_first_moment: f64,
    mean: f64,
    kind: DistributionKind,
}

/// Observation instants `t_0 = 0 < t_1 < ...`, with one sentinel at or past the horizon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationTimes {
    pub times: Vec<usize>,
}

impl IntervalDistribution {
    fn from_dense(mut mass: Vec<f64>, kind: DistributionKind) -> Result<Self> {
        while mass.last() == Some(&0.0) {
            mass.pop();
        }
        if mass.is_empty() {
            return Err(Error::ZeroTotalMass);
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::ZeroTotalMass);
        }
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            mass.iter_mut().for_each(|m| *m /= total);
        }
        let mean = mass.iter().enumerate().map(|(i, m)| (i + 1) as f64 * m).sum();
        Ok(Self { mass, tail_mass: 0.0, tail_first_moment: 0.0, mean, kind })
    }

    /// Arbitrary finite-support law; renormalized to unit mass.
    pub fn explicit(probs: &BTreeMap<usize, f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptySupport);
        }
        for (&tau, &prob) in probs {
            if tau == 0 {
                return Err(Error::Validation {
                    field: "probs".into(),
                    message: "interval lengths start at 1".into(),
                });
            }
            if prob < 0.0 || !prob.is_finite() {
                return Err(Error::NegativeProbability { tau, prob });
            }
        }
        let max = *probs.keys().next_back().unwrap();
        let mut mass = vec![0.0; max];
        for (&tau, &prob) in probs {
            mass[tau - 1] = prob;
        }
        Self::from_dense(mass, DistributionKind::Explicit)
    }

    /// Observation every `period` steps.
    pub fn periodic(period: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::BadBounds { lo: 0, hi: 0 });
        }
        let mut mass = vec![0.0; period];
        mass[period - 1] = 1.0;
        Self::from_dense(mass, DistributionKind::Periodic { period })
    }

    /// Uniform on `{lo, ..., hi}`.
    pub fn uniform(lo: usize, hi: usize) -> Result<Self> {
        if lo == 0 || lo > hi {
            return Err(Error::BadBounds { lo, hi });
        }
        let w = 1.0 / (hi - lo + 1) as f64;
        let mass = (1..=hi).map(|t| if t >= lo { w } else { 0.0 }).collect();
        Self::from_dense(mass, DistributionKind::Uniform { lo, hi })
    }

    /// Missing-sample law `mu_t = (1 - theta)^(t-1) theta`, truncated at the first
    /// `t_max` whose tail `(1 - theta)^t_max` drops below `tail_tol`.
    pub fn geometric(theta: f64, tail_tol: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::BadTheta(theta));
        }
        if !(tail_tol > 0.0 && tail_tol < 1.0) {
            return Err(Error::Validation {
                field: "tail_tol".into(),
                message: format!("{tail_tol} must lie in (0, 1)"),
            });
        }
        let q = 1.0 - theta;
        let mut mass = Vec::new();
        let mut tail = 1.0;
        while tail >= tail_tol {
            mass.push(tail * theta);
            tail *= q;
        }
        let t_max = mass.len() as f64;
        let mut d = Self::from_dense(mass, DistributionKind::Geometric { theta })?;
        d.tail_mass = tail;
        d.tail_first_moment = tail * (t_max + 1.0 / theta);
        Ok(d)
    }

    /// Geometric law for `theta` in (0, 1), extended to `theta = 1` by its limit
    /// (every step observed, the period-1 law).
    pub fn geometric_or_limit(theta: f64, tail_tol: f64) -> Result<Self> {
        if theta == 1.0 {
            Self::periodic(1)
        } else {
            Self::geometric(theta, tail_tol)
        }
    }

    /// Cuts the support at `max_len` and renormalizes, folding the removed
    /// mass into `tail_mass`. The result is an explicit law.
    pub fn truncate_support(&self, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::EmptySupport);
        }
        if max_len >= self.max_support() {
            return Ok(self.clone());
        }
        let kept = 1.0 - self.tail_mass;
        let removed: f64 = self.mass[max_len..].iter().sum();
        let removed_moment: f64 = self.mass[max_len..]
            .iter()
            .enumerate()
            .map(|(i, m)| (max_len + i + 1) as f64 * m)
            .sum();
        let mut d = Self::from_dense(self.mass[..max_len].to_vec(), DistributionKind::Explicit)?;
        d.tail_mass = self.tail_mass + removed * kept;
        d.tail_first_moment = self.tail_first_moment + removed_moment * kept;
        Ok(d)
    }

    pub fn prob(&self, tau: usize) -> f64 {
        if tau == 0 {
            0.0
        } else {
            self.mass.get(tau - 1).copied().unwrap_or(0.0)
        }
    }

    /// Probabilities indexed by `tau - 1`.
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// `(tau, mu_tau)` over the retained support with nonzero mass.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.mass
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(i, &m)| (i + 1, m))
    }

    pub fn max_support(&self) -> usize {
        self.mass.len()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn tail_first_moment(&self) -> f64 {
        self.tail_first_moment
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    /// Survival weights `S_l = sum_{tau >= l} mu_tau` for `l = 1..=max_support`.
    pub fn survival(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.mass.len()];
        let mut acc = 0.0;
        for (i, m) in self.mass.iter().enumerate().rev() {
            acc += m;
            out[i] = acc;
        }
        out
    }

    pub(crate) fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, m) in self.mass.iter().enumerate() {
            acc += m;
            if u < acc {
                return i + 1;
            }
        }
        self.mass.iter().rposition(|&m| m > 0.0).unwrap() + 1
    }

    /// Observation instants covering `[0, horizon]`; gaps are drawn until the
    /// last instant reaches or passes `horizon`.
    pub fn sample_observation_times(&self, horizon: usize, seed: u64) -> ObservationTimes {
        let mut rng = rng_from(seed);
        let mut times = vec![0usize];
        let mut last = 0;
        while last < horizon {
            last += self.draw(&mut rng);
            times.push(last);
        }
        ObservationTimes { times }
    }
}

impl ObservationTimes {
    /// Last instant covered (the sentinel).
    pub fn horizon(&self) -> usize {
        *self.times.last().unwrap()
    }

    /// `N(k)`: number of instants `t_i <= k` with `i >= 1`.
    pub fn counting_process(&self, k: usize) -> Result<usize> {
        if k > self.horizon() {
            return Err(Error::OutOfHorizon { k, horizon: self.horizon() });
        }
        Ok(self.times.partition_point(|&t| t <= k) - 1)
    }

    pub fn contains(&self, k: usize) -> bool {
        self.times.binary_search(&k).is_ok()
    }
}
