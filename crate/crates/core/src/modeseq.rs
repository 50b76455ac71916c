//! The sequence-valued chain `s(i)`: the tuple of modes visited between
//! consecutive observations.
//!
//! The state space is countable in general. It is materialized here only over
//! the retained support of the interval law, for diagnostics and for checking
//! the closed-form invariant law numerically. Stability evaluators never
//! enumerate it.

use std::fmt;

use crate::error::{Error, Result};
use crate::markov::{ModeChain, ModePath};
use crate::renewal::{IntervalDistribution, ObservationTimes};

pub const DEFAULT_SEQUENCE_CAP: usize = 1_000_000;

/// Modes `r(t_i), ..., r(t_{i+1} - 1)`, 0-indexed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeSequence {
    pub elems: Vec<usize>,
}

impl ModeSequence {
    pub fn new(elems: Vec<usize>) -> Self {
        Self { elems }
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn first(&self) -> usize {
        self.elems[0]
    }

    pub fn last(&self) -> usize {
        *self.elems.last().unwrap()
    }

    /// Product of consecutive transition probabilities inside the sequence.
    pub fn path_probability(&self, chain: &ModeChain) -> f64 {
        self.elems.windows(2).map(|w| chain.prob(w[0], w[1])).product()
    }
}

impl fmt::Display for ModeSequence {
    /// 1-indexed, dash separated: `1-2-1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.elems.iter().map(|e| (e + 1).to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

/// `mu_|q| * prod p`, the weight shared by the initial law, the transition
/// rows and the invariant law.
fn entry_weight(chain: &ModeChain, dist: &IntervalDistribution, q: &ModeSequence) -> f64 {
    dist.prob(q.len()) * q.path_probability(chain)
}

/// `rho_{q, qbar} = p_{q_last, qbar_1} mu_|qbar| prod p_{qbar_n, qbar_n+1}`.
pub fn transition_probability(
    chain: &ModeChain,
    dist: &IntervalDistribution,
    q: &ModeSequence,
    qbar: &ModeSequence,
) -> f64 {
    chain.prob(q.last(), qbar.first()) * entry_weight(chain, dist, qbar)
}

/// Number of admissible sequences per length `1..=max_len` (index `len - 1`).
fn count_by_length(chain: &ModeChain, max_len: usize) -> Vec<u128> {
    let m = chain.modes();
    let mut ending = vec![1u128; m];
    let mut out = Vec::with_capacity(max_len);
    for len in 1..=max_len {
        if len > 1 {
            let mut next = vec![0u128; m];
            for (j, slot) in next.iter_mut().enumerate() {
                for (i, &e) in ending.iter().enumerate() {
                    if chain.prob(i, j) > 0.0 {
                        *slot = slot.saturating_add(e);
                    }
                }
            }
            ending = next;
        }
        out.push(ending.iter().fold(0u128, |a, &b| a.saturating_add(b)));
    }
    out
}

/// Every sequence whose length lies in the support of `dist` and whose
/// consecutive transitions have positive probability. Ordered by length, then
/// lexicographically.
pub fn enumerate_sequences(
    chain: &ModeChain,
    dist: &IntervalDistribution,
    max_len: usize,
    cap: usize,
) -> Result<Vec<ModeSequence>> {
    if dist.max_support() > max_len {
        return Err(Error::SupportExceedsMaxLen { support: dist.max_support(), max_len });
    }
    let counts = count_by_length(chain, dist.max_support());
    let total = dist
        .support()
        .fold(0u128, |acc, (tau, _)| acc.saturating_add(counts[tau - 1]));
    if total > cap as u128 {
        return Err(Error::ExplosionGuard { count: total, cap });
    }
    let mut out = Vec::with_capacity(total as usize);
    let m = chain.modes();
    for (tau, _) in dist.support() {
        let mut stack: Vec<Vec<usize>> = (0..m).rev().map(|i| vec![i]).collect();
        while let Some(seq) = stack.pop() {
            if seq.len() == tau {
                out.push(ModeSequence::new(seq));
                continue;
            }
            let last = *seq.last().unwrap();
            for j in (0..m).rev() {
                if chain.prob(last, j) > 0.0 {
                    let mut next = seq.clone();
                    next.push(j);
                    stack.push(next);
                }
            }
        }
    }
    Ok(out)
}

/// A finite slice of the sequence space with its initial law, transition
/// kernel and invariant law.
///
/// `rho` depends on the source sequence only through its last mode, so it is
/// stored as one row per mode; `rho(a, b)` reads row `last(a)`.
#[derive(Debug, Clone)]
pub struct TruncatedSequenceSpace {
    pub sequences: Vec<ModeSequence>,
    pub lambda: Vec<f64>,
    pub phi: Vec<f64>,
    /// `rows[c][b]` is the probability of moving to sequence `b` from any
    /// sequence ending in mode `c`.
    rows: Vec<Vec<f64>>,
    pub truncation_bound: f64,
}

impl TruncatedSequenceSpace {
    pub fn build(
        chain: &ModeChain,
        dist: &IntervalDistribution,
        max_len: usize,
        cap: usize,
    ) -> Result<Self> {
        let sequences = enumerate_sequences(chain, dist, max_len, cap)?;
        let pi = chain.invariant_distribution()?;
        let lambda = initial_distribution(chain, dist, &sequences);
        let phi = invariant_distribution_phi(chain, dist, &pi, &sequences);
        let rows = (0..chain.modes())
            .map(|c| {
                let from = ModeSequence::new(vec![c]);
                sequences
                    .iter()
                    .map(|qbar| transition_probability(chain, dist, &from, qbar))
                    .collect()
            })
            .collect();
        Ok(Self { sequences, lambda, phi, rows, truncation_bound: dist.tail_mass() })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn rho(&self, from: usize, to: usize) -> f64 {
        self.rows[self.sequences[from].last()][to]
    }

    pub fn rho_row(&self, from: usize) -> &[f64] {
        &self.rows[self.sequences[from].last()]
    }

    /// `max_q |sum_b rho_{q,b} - 1|`.
    pub fn max_row_defect(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `(phi^T rho)` evaluated class by class.
    pub fn phi_rho(&self) -> Vec<f64> {
        let mut by_last = vec![0.0; self.rows.len()];
        for (q, &w) in self.sequences.iter().zip(&self.phi) {
            by_last[q.last()] += w;
        }
        (0..self.len())
            .map(|b| by_last.iter().zip(&self.rows).map(|(w, r)| w * r[b]).sum())
            .collect()
    }

    /// `||phi^T rho - phi^T||_inf`.
    pub fn stationarity_residual(&self) -> f64 {
        self.phi_rho()
            .iter()
            .zip(&self.phi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `sum_{|q| = tau} phi_q` for every length present.
    pub fn phi_mass_by_length(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for (q, &w) in self.sequences.iter().zip(&self.phi) {
            match out.last_mut() {
                Some((len, acc)) if *len == q.len() => *acc += w,
                _ => out.push((q.len(), w)),
            }
        }
        out
    }

    /// Whether every enumerated sequence reaches every other under `rho`.
    pub fn is_irreducible(&self) -> bool {
        if self.is_empty() {
            return false;
        }
        let m = self.rows.len();
        // Successors depend only on the last mode, so expand each mode class once.
        let mut seen = vec![false; self.len()];
        let mut class_done = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(q) = stack.pop() {
            let c = self.sequences[q].last();
            if class_done[c] {
                continue;
            }
            class_done[c] = true;
            for (b, &p) in self.rows[c].iter().enumerate() {
                if p > 0.0 && !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        // Every sequence must also lead back to sequence 0; that depends only
        // on its last mode.
        seen.iter().all(|&s| s)
            && self.sequences.iter().all(|q| self.class_reaches_zero(q.last()))
    }

    fn class_reaches_zero(&self, start: usize) -> bool {
        let m = self.rows.len();
        let mut seen = vec![false; m];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(c) = stack.pop() {
            if self.rows[c][0] > 0.0 {
                return true;
            }
            for (b, &p) in self.rows[c].iter().enumerate() {
                let next = self.sequences[b].last();
                if p > 0.0 && !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        false
    }

    pub fn index_of(&self, q: &ModeSequence) -> Option<usize> {
        self.sequences
            .binary_search_by(|probe| probe.len().cmp(&q.len()).then_with(|| probe.elems.cmp(&q.elems)))
            .ok()
    }
}

/// `lambda_q = mu_|q| prod p` when `q_1 = r0`, else 0.
pub fn initial_distribution(
    chain: &ModeChain,
    dist: &IntervalDistribution,
    sequences: &[ModeSequence],
) -> Vec<f64> {
    sequences
        .iter()
        .map(|q| {
            if q.first() == chain.initial_mode() {
                entry_weight(chain, dist, q)
            } else {
                0.0
            }
        })
        .collect()
}

/// `phi_q = pi_{q_1} mu_|q| prod p`.
pub fn invariant_distribution_phi(
    chain: &ModeChain,
    dist: &IntervalDistribution,
    pi: &nalgebra::DVector<f64>,
    sequences: &[ModeSequence],
) -> Vec<f64> {
    sequences
        .iter()
        .map(|q| pi[q.first()] * entry_weight(chain, dist, q))
        .collect()
}

/// Splits a mode path at observation instants: `s(i) = r(t_i .. t_{i+1})`.
/// Only complete segments are returned.
pub fn segment_path(path: &ModePath, times: &ObservationTimes) -> Result<Vec<ModeSequence>> {
    let needed = times.horizon();
    if path.len() < needed {
        return Err(Error::PathTooShort { len: path.len(), needed });
    }
    Ok(times
        .times
        .windows(2)
        .map(|w| ModeSequence::new(path.values[w[0]..w[1]].to_vec()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, HashMap};

    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    use crate::rng::{sub_seed, MODE_STREAM, RENEWAL_STREAM};

    fn ex1() -> ModeChain {
        ModeChain::from_rows(&[vec![0.7, 0.3], vec![0.3, 0.7]], 0).unwrap()
    }

    fn seq(v: &[usize]) -> ModeSequence {
        ModeSequence::new(v.iter().map(|x| x - 1).collect())
    }

    #[test]
    fn enumeration_matches_definition() {
        let c = ex1();
        let per2 = IntervalDistribution::periodic(2).unwrap();
        let s = enumerate_sequences(&c, &per2, 2, DEFAULT_SEQUENCE_CAP).unwrap();
        let shown: Vec<String> = s.iter().map(|q| q.to_string()).collect();
        assert_eq!(shown, ["1-1", "1-2", "2-1", "2-2"]);

        let d12 = IntervalDistribution::explicit(&BTreeMap::from([(1, 0.5), (2, 0.5)])).unwrap();
        let s = enumerate_sequences(&c, &d12, 2, DEFAULT_SEQUENCE_CAP).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s[0], seq(&[1]));
        assert_eq!(s[1], seq(&[2]));

        // p_{1,2} = 0 prunes (1,2)
        let c0 = ModeChain::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]], 1);
        assert!(c0.is_err()); // reducible, so build the pruning case on a 3-chain
        let c3 = ModeChain::from_rows(
            &[vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5]],
            0,
        )
        .unwrap();
        let s = enumerate_sequences(&c3, &per2, 2, DEFAULT_SEQUENCE_CAP).unwrap();
        assert!(!s.contains(&seq(&[1, 2])));
        assert_eq!(s.len(), 6);
    }

    #[test]
    fn enumeration_errors() {
        let c = ex1();
        let d = IntervalDistribution::uniform(2, 5).unwrap();
        assert!(matches!(
            enumerate_sequences(&c, &d, 4, DEFAULT_SEQUENCE_CAP),
            Err(Error::SupportExceedsMaxLen { support: 5, max_len: 4 })
        ));
        let d = IntervalDistribution::periodic(25).unwrap();
        assert!(matches!(
            enumerate_sequences(&c, &d, 25, DEFAULT_SEQUENCE_CAP),
            Err(Error::ExplosionGuard { .. })
        ));
    }

    #[test]
    fn example_one_laws() {
        let c = ex1();
        let per2 = IntervalDistribution::periodic(2).unwrap();
        let sp = TruncatedSequenceSpace::build(&c, &per2, 2, DEFAULT_SEQUENCE_CAP).unwrap();
        let lam = |v: &[usize]| sp.lambda[sp.index_of(&seq(v)).unwrap()];
        assert_abs_diff_eq!(lam(&[1, 1]), 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(lam(&[1, 2]), 0.3, epsilon = 1e-15);
        assert_eq!(lam(&[2, 1]), 0.0);
        assert_eq!(lam(&[2, 2]), 0.0);
        assert_abs_diff_eq!(sp.lambda.iter().sum::<f64>(), 1.0, epsilon = 1e-14);

        let i11 = sp.index_of(&seq(&[1, 1])).unwrap();
        let i12 = sp.index_of(&seq(&[1, 2])).unwrap();
        assert_abs_diff_eq!(sp.rho(i11, i12), 0.21, epsilon = 1e-15);
        assert_abs_diff_eq!(
            transition_probability(&c, &per2, &seq(&[1, 1]), &seq(&[1, 2])),
            0.21,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(sp.phi[i12], 0.15, epsilon = 1e-15);
        // rows of sequences sharing a last element coincide
        let i21 = sp.index_of(&seq(&[2, 1])).unwrap();
        assert_eq!(sp.rho_row(i11), sp.rho_row(i21));
        assert!(sp.max_row_defect() < 1e-12);
        assert!(sp.is_irreducible());
    }

    /// Dense `rho` straight from the formula, as an independent check of the
    /// class-row storage and of the stationarity identity.
    #[test]
    fn stationarity_against_dense_kernel() {
        let c = ex1();
        let d = IntervalDistribution::explicit(&BTreeMap::from([(1, 0.2), (2, 0.5), (3, 0.3)])).unwrap();
        let sp = TruncatedSequenceSpace::build(&c, &d, 3, DEFAULT_SEQUENCE_CAP).unwrap();
        let n = sp.len();
        assert_eq!(n, 2 + 4 + 8);
        let dense = DMatrix::from_fn(n, n, |a, b| {
            transition_probability(&c, &d, &sp.sequences[a], &sp.sequences[b])
        });
        let phi = nalgebra::DVector::from_vec(sp.phi.clone());
        let resid = (dense.transpose() * &phi - &phi).amax();
        assert!(resid < 1e-10, "{resid}");
        assert!(sp.stationarity_residual() < 1e-10);
        for (tau, mass) in sp.phi_mass_by_length() {
            assert_abs_diff_eq!(mass, d.prob(tau), epsilon = 1e-12);
        }
        for r in dense.row_iter() {
            assert_abs_diff_eq!(r.sum(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn segmentation_of_sample_path() {
        // r = 1,2 | 2,1,2 | 2 | 2,1 with observations at 0, 2, 5, 6, 8
        let path = ModePath { values: vec![0, 1, 1, 0, 1, 1, 1, 0] };
        let times = ObservationTimes { times: vec![0, 2, 5, 6, 8] };
        let segs = segment_path(&path, &times).unwrap();
        assert_eq!(segs, vec![seq(&[1, 2]), seq(&[2, 1, 2]), seq(&[2]), seq(&[2, 1])]);
        let joined: Vec<usize> = segs.iter().flat_map(|s| s.elems.clone()).collect();
        assert_eq!(joined, path.values);
        let short = ModePath { values: vec![0, 1, 1] };
        assert!(matches!(segment_path(&short, &times), Err(Error::PathTooShort { .. })));
    }

    #[test]
    fn every_step_observed_gives_unit_segments() {
        let c = ex1();
        let d = IntervalDistribution::periodic(1).unwrap();
        let path = c.sample_path(50, 2);
        let times = d.sample_observation_times(50, 3);
        let segs = segment_path(&path, &times).unwrap();
        assert!(segs.iter().all(|s| s.len() == 1));
    }

    #[test]
    fn empirical_frequencies_and_ergodic_average() {
        let c = ex1();
        let d = IntervalDistribution::explicit(&BTreeMap::from([(1, 0.4), (2, 0.6)])).unwrap();
        let sp = TruncatedSequenceSpace::build(&c, &d, 2, DEFAULT_SEQUENCE_CAP).unwrap();
        let horizon = 170_000;
        let path = c.sample_path(horizon + 1, sub_seed(21, MODE_STREAM, 0));
        let times = d.sample_observation_times(horizon, sub_seed(21, RENEWAL_STREAM, 0));
        let segs = segment_path(&path, &times).unwrap();
        assert!(segs.len() >= 100_000);
        let segs = &segs[..100_000];
        let mut counts: HashMap<&ModeSequence, usize> = HashMap::new();
        for s in segs {
            *counts.entry(s).or_default() += 1;
        }
        for (q, &phi) in sp.sequences.iter().zip(&sp.phi) {
            let f = *counts.get(q).unwrap_or(&0) as f64 / segs.len() as f64;
            assert!((f - phi).abs() < 0.02, "{q}: {f} vs {phi}");
        }
        // bounded score per sequence
        let xi = |q: &ModeSequence| q.elems.iter().map(|&e| if e == q.first() { -0.5 } else { 0.8 }).sum::<f64>() + 1.0;
        let expected: f64 = sp.sequences.iter().zip(&sp.phi).map(|(q, p)| p * xi(q)).sum();
        let avg = segs.iter().map(xi).sum::<f64>() / segs.len() as f64;
        assert!(((avg - expected) / expected).abs() < 0.02, "{avg} vs {expected}");
    }
}
