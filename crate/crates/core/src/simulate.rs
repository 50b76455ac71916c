//! Closed-loop simulation under sampled-mode feedback `u(k) = K_{sigma(k)} x(k)`,
//! where `sigma(k)` holds the mode seen at the latest observation instant.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::markov::ModeChain;
use crate::modeseq::ModeSequence;
use crate::renewal::{IntervalDistribution, ObservationTimes};
use crate::rng::{sub_seed, MODE_STREAM, RENEWAL_STREAM, TRIAL_STREAM};
use crate::stability::{lyapunov_value, validate_zeta, SwitchedSystem, ZetaCertificate};
use crate::synthesis::GainSet;

/// States with norm above this are treated as divergent and the run stops.
pub const DIVERGENCE_CLAMP: f64 = 1e12;
/// Floor applied to `||x||` before taking logarithms.
pub const NORM_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// The state exceeded [`DIVERGENCE_CLAMP`] (or overflowed) at `step`;
    /// `x` and `u` stop there.
    NonFiniteState { step: usize },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `x(0..=horizon)`, shorter when the run diverged.
    pub x: Vec<DVector<f64>>,
    /// `u(k)` for every stored `x(k)`.
    pub u: Vec<DVector<f64>>,
    /// `r(0..=horizon)`.
    pub r: Vec<usize>,
    /// `sigma(0..=horizon)`.
    pub sigma: Vec<usize>,
    pub obs_times: ObservationTimes,
    /// `eta_log[k] = sum_{n<k} ln zeta_{r(n), sigma(n)}` when a certificate was supplied.
    pub eta_log: Option<Vec<f64>>,
    pub status: RunStatus,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.r.len() - 1
    }

    pub fn final_norm(&self) -> f64 {
        self.x.last().map_or(0.0, |x| x.norm())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub trials: usize,
    pub converged_fraction: f64,
    pub mean_final_log_norm: f64,
    pub empirical_rate: f64,
    pub diverged: usize,
}

/// `sigma(k) = r(t_{N(k)})` for `k = 0..r.len()`.
pub fn sampled_modes(r: &[usize], times: &ObservationTimes) -> Vec<usize> {
    let mut sigma = Vec::with_capacity(r.len());
    let mut next = 1;
    let mut held = r[0];
    for (k, &mode) in r.iter().enumerate() {
        while next < times.times.len() && times.times[next] <= k {
            if times.times[next] == k {
                held = mode;
            }
            next += 1;
        }
        sigma.push(held);
    }
    sigma
}

/// Mode path and observation instants for one realization, each from its own
/// sub-stream of `seed`.
fn draw_signals(chain: &ModeChain, dist: &IntervalDistribution, horizon: usize, seed: u64) -> (Vec<usize>, ObservationTimes) {
    let r = chain.sample_path(horizon + 1, sub_seed(seed, MODE_STREAM, 0)).values;
    let times = dist.sample_observation_times(horizon, sub_seed(seed, RENEWAL_STREAM, 0));
    (r, times)
}

fn check_run_inputs(
    sys: &SwitchedSystem,
    chain: &ModeChain,
    gains: &GainSet,
    x0: &DVector<f64>,
    cert: Option<&ZetaCertificate>,
) -> Result<()> {
    let (n, m, modes) = (sys.state_dim(), sys.input_dim(), sys.modes());
    if chain.modes() != modes {
        return Err(Error::DimensionMismatch("system and chain disagree on mode count".into()));
    }
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("x0 has length {}, expected {n}", x0.len())));
    }
    if gains.gains.len() != modes || gains.gains.iter().any(|k| k.shape() != (m, n)) {
        return Err(Error::DimensionMismatch(format!("expected {modes} gains of shape {m}x{n}")));
    }
    if let Some(c) = cert {
        c.validate(sys)?;
    }
    Ok(())
}

pub fn closed_loop_run(
    sys: &SwitchedSystem,
    chain: &ModeChain,
    dist: &IntervalDistribution,
    gains: &GainSet,
    x0: &DVector<f64>,
    horizon: usize,
    seed: u64,
    cert: Option<&ZetaCertificate>,
) -> Result<Trajectory> {
    check_run_inputs(sys, chain, gains, x0, cert)?;
    if horizon == 0 {
        return Err(Error::Validation { field: "horizon".into(), message: "must be at least 1".into() });
    }
    let (r, obs_times) = draw_signals(chain, dist, horizon, seed);
    let sigma = sampled_modes(&r, &obs_times);

    let mut x = Vec::with_capacity(horizon + 1);
    let mut u = Vec::with_capacity(horizon + 1);
    let mut status = RunStatus::Completed;
    let mut cur = x0.clone();
    for k in 0..=horizon {
        let uk = &gains.gains[sigma[k]] * &cur;
        let next = if k < horizon { Some(&sys.a[r[k]] * &cur + &sys.b[r[k]] * &uk) } else { None };
        x.push(cur);
        u.push(uk);
        match next {
            Some(nx) => {
                let norm = nx.norm();
                if !norm.is_finite() || norm > DIVERGENCE_CLAMP {
                    status = RunStatus::NonFiniteState { step: k + 1 };
                    break;
                }
                cur = nx;
            }
            None => break,
        }
    }

    let eta_log = cert.map(|c| {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(horizon + 1);
        out.push(0.0);
        for k in 0..horizon {
            acc += c.zeta[(r[k], sigma[k])].ln();
            out.push(acc);
        }
        out
    });

    Ok(Trajectory { x, u, r, sigma, obs_times, eta_log, status })
}

/// First step `k` at which `V(x(k+1)) > zeta_{r(k),sigma(k)} V(x(k)) + 1e-9 (1 + V(x(k)))`.
pub fn lyapunov_bound_violation(traj: &Trajectory, cert: &ZetaCertificate) -> Result<Option<usize>> {
    let r_inv = cert.r_tilde.clone().try_inverse().ok_or(Error::SingularRtilde)?;
    let mut v = traj.x.first().map(|x| lyapunov_value(&r_inv, x));
    for k in 0..traj.x.len().saturating_sub(1) {
        let vk = v.unwrap();
        let vn = lyapunov_value(&r_inv, &traj.x[k + 1]);
        if vn > cert.zeta[(traj.r[k], traj.sigma[k])] * vk + 1e-9 * (1.0 + vk) {
            return Ok(Some(k));
        }
        v = Some(vn);
    }
    Ok(None)
}

/// Least-squares slope of `ln ||x(k)||` over the tail half of the run.
fn tail_slope(traj: &Trajectory) -> f64 {
    let last = traj.x.len() - 1;
    let logs = |k: usize| traj.x[k].norm().max(NORM_FLOOR).ln();
    let start = traj.horizon() / 2;
    if last < start + 1 {
        return if last == 0 { 0.0 } else { (logs(last) - logs(0)) / last as f64 };
    }
    let pts = (start..=last).map(|k| (k as f64, logs(k)));
    let count = (last - start + 1) as f64;
    let (sk, sl, skk, skl) = pts.fold((0.0, 0.0, 0.0, 0.0), |(a, b, c, d), (k, l)| (a + k, b + l, c + k * k, d + k * l));
    (count * skl - sk * sl) / (count * skk - sk * sk)
}

pub fn monte_carlo(
    sys: &SwitchedSystem,
    chain: &ModeChain,
    dist: &IntervalDistribution,
    gains: &GainSet,
    x0: &DVector<f64>,
    horizon: usize,
    trials: usize,
    seed: u64,
    threshold: f64,
) -> Result<MonteCarloReport> {
    if trials == 0 {
        return Err(Error::Validation { field: "trials".into(), message: "must be at least 1".into() });
    }
    check_run_inputs(sys, chain, gains, x0, None)?;
    let run = |t: usize| -> Result<(bool, f64, f64, bool)> {
        let traj = closed_loop_run(sys, chain, dist, gains, x0, horizon, sub_seed(seed, TRIAL_STREAM, t as u64), None)?;
        let diverged = traj.status != RunStatus::Completed;
        let norm = traj.final_norm();
        Ok((!diverged && norm < threshold, norm.max(NORM_FLOOR).ln(), tail_slope(&traj), diverged))
    };

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(trials);
    let outcomes: Vec<Result<(bool, f64, f64, bool)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| scope.spawn(move || (w..trials).step_by(workers).map(run).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("trial worker panicked")).collect()
    });

    let (mut converged, mut log_sum, mut rate_sum, mut diverged) = (0usize, 0.0, 0.0, 0usize);
    for o in outcomes {
        let (c, l, s, d) = o?;
        converged += c as usize;
        diverged += d as usize;
        log_sum += l;
        rate_sum += s;
    }
    let n = trials as f64;
    Ok(MonteCarloReport {
        trials,
        converged_fraction: converged as f64 / n,
        mean_final_log_norm: log_sum / n,
        empirical_rate: rate_sum / n,
        diverged,
    })
}

/// `(1/horizon) sum_{n=0}^{horizon} ln zeta_{r(n), sigma(n)}` for one realization,
/// drawn from the same sub-streams as [`closed_loop_run`] with this seed.
pub fn eta_exponent(
    chain: &ModeChain,
    dist: &IntervalDistribution,
    zeta: &DMatrix<f64>,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    validate_zeta(zeta)?;
    if zeta.nrows() != chain.modes() {
        return Err(Error::DimensionMismatch("zeta does not match the chain".into()));
    }
    if horizon == 0 {
        return Err(Error::Validation { field: "horizon".into(), message: "must be at least 1".into() });
    }
    let (r, times) = draw_signals(chain, dist, horizon, seed);
    let sigma = sampled_modes(&r, &times);
    let sum: f64 = r.iter().zip(&sigma).map(|(&a, &b)| zeta[(a, b)].ln()).sum();
    Ok(sum / horizon as f64)
}

/// `xi_q = sum_n ln zeta_{q_n, q_1}`.
pub fn xi_score(q: &ModeSequence, zeta: &DMatrix<f64>) -> f64 {
    q.elems.iter().map(|&m| zeta[(m, q.first())].ln()).sum()
}

/// CSV with columns `k, x_1..x_n, u_1..u_m, r, sigma, observed`; modes are
/// 1-indexed and floats use shortest round-trip formatting.
pub fn export_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = traj.x.first().map_or(0, |x| x.len());
    let m = traj.u.first().map_or(0, |u| u.len());
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.extend(["r", "sigma", "observed"].map(String::from));
    w.write_record(&header)?;
    for k in 0..traj.x.len() {
        let mut row = vec![k.to_string()];
        row.extend(traj.x[k].iter().map(|v| format!("{v:?}")));
        row.extend(traj.u[k].iter().map(|v| format!("{v:?}")));
        row.push((traj.r[k] + 1).to_string());
        row.push((traj.sigma[k] + 1).to_string());
        row.push(u8::from(traj.obs_times.contains(k)).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    use approx::assert_abs_diff_eq;

    use crate::builtin;
    use crate::modeseq::segment_path;
    use crate::markov::ModePath;
    use crate::stability::ergodic_rate;

    fn ex1_gains() -> (builtin::BuiltinExample, GainSet) {
        let ex = builtin::example1();
        let g = GainSet { gains: ex.reference_gains.clone(), provenance: None };
        (ex, g)
    }

    #[test]
    fn origin_stays_at_origin() {
        let (ex, g) = ex1_gains();
        let t = closed_loop_run(&ex.system, &ex.chain, &ex.observation, &g, &DVector::zeros(2), 50, 3, None).unwrap();
        assert!(t.x.iter().all(|x| x.norm() == 0.0));
        let rep = monte_carlo(&ex.system, &ex.chain, &ex.observation, &g, &DVector::zeros(2), 50, 5, 3, 1e-4).unwrap();
        assert_eq!(rep.converged_fraction, 1.0);
    }

    #[test]
    fn sampled_mode_holds_between_observations() {
        let (ex, g) = ex1_gains();
        let t = closed_loop_run(&ex.system, &ex.chain, &ex.observation, &g, &ex.x0, 300, 11, None).unwrap();
        assert_eq!(t.r.len(), 301);
        for k in 0..=300 {
            let n = t.obs_times.counting_process(k).unwrap();
            assert_eq!(t.sigma[k], t.r[t.obs_times.times[n]]);
            if t.obs_times.contains(k) {
                assert_eq!(t.sigma[k], t.r[k]);
            } else {
                assert_eq!(t.sigma[k], t.sigma[k - 1]);
            }
        }
    }

    #[test]
    fn dynamics_follow_the_control_law() {
        let (ex, g) = ex1_gains();
        let t = closed_loop_run(&ex.system, &ex.chain, &ex.observation, &g, &ex.x0, 40, 5, None).unwrap();
        for k in 0..40 {
            let next = ex.system.closed_loop(t.r[k], &g.gains[t.sigma[k]]) * &t.x[k];
            assert!((next - &t.x[k + 1]).amax() <= 1e-12 * (1.0 + t.x[k].amax()));
        }
    }

    #[test]
    fn perfect_information_tracks_mode() {
        let (ex, g) = ex1_gains();
        let every = IntervalDistribution::periodic(1).unwrap();
        let t = closed_loop_run(&ex.system, &ex.chain, &every, &g, &ex.x0, 100, 2, None).unwrap();
        assert_eq!(t.sigma, t.r);
    }

    #[test]
    fn deterministic_per_seed() {
        let (ex, g) = ex1_gains();
        let run = |s| closed_loop_run(&ex.system, &ex.chain, &ex.observation, &g, &ex.x0, 100, s, None).unwrap();
        let (a, b, c) = (run(9), run(9), run(10));
        assert_eq!(a.x, b.x);
        assert_eq!(a.r, b.r);
        assert_ne!(a.r, c.r);
    }

    #[test]
    fn uncontrolled_expanding_system_never_converges() {
        let sys = SwitchedSystem::new(
            vec![DMatrix::identity(2, 2) * 1.5, DMatrix::identity(2, 2) * 2.0],
            vec![DMatrix::zeros(2, 1); 2],
        )
        .unwrap();
        let ex = builtin::example1();
        let g = GainSet { gains: vec![DMatrix::zeros(1, 2); 2], provenance: None };
        let rep = monte_carlo(&sys, &ex.chain, &ex.observation, &g, &ex.x0, 200, 10, 1, 1e-4).unwrap();
        assert_eq!(rep.converged_fraction, 0.0);
        assert_eq!(rep.diverged, 10);
        assert!(rep.empirical_rate > 0.0);
    }

    #[test]
    fn divergence_is_reported_not_fatal() {
        let sys = SwitchedSystem::new(vec![DMatrix::identity(1, 1) * 10.0], vec![DMatrix::zeros(1, 1)]).unwrap();
        let chain = ModeChain::new(DMatrix::from_element(1, 1, 1.0), 0).unwrap();
        let g = GainSet { gains: vec![DMatrix::zeros(1, 1)], provenance: None };
        let dist = IntervalDistribution::periodic(1).unwrap();
        let t = closed_loop_run(&sys, &chain, &dist, &g, &DVector::from_element(1, 1.0), 100, 0, None).unwrap();
        assert_eq!(t.status, RunStatus::NonFiniteState { step: 13 });
        assert_eq!(t.x.len(), 13);
    }

    #[test]
    fn eta_exponent_trivial_and_diagonal() {
        let ex = builtin::example1();
        assert_eq!(eta_exponent(&ex.chain, &ex.observation, &DMatrix::from_element(2, 2, 1.0), 1000, 4).unwrap(), 0.0);
        // every step observed: only the diagonal is visited
        let every = IntervalDistribution::periodic(1).unwrap();
        let zeta = DMatrix::from_row_slice(2, 2, &[0.5, 9.0, 9.0, 0.8]);
        let e = eta_exponent(&ex.chain, &every, &zeta, 100_000, 4).unwrap();
        let expected = 0.5 * 0.5f64.ln() + 0.5 * 0.8f64.ln();
        assert!(((e - expected) / expected).abs() < 0.02);
    }

    #[test]
    fn eta_exponent_tracks_ergodic_rate_on_average() {
        let ex = builtin::example1();
        let zeta = &ex.certificate.zeta;
        let rate = ergodic_rate(&ex.chain, &ex.observation, zeta).unwrap();
        let mean: f64 = (0..20).map(|s| eta_exponent(&ex.chain, &ex.observation, zeta, 20_000, s).unwrap()).sum::<f64>() / 20.0;
        assert!(((mean - rate) / rate).abs() < 0.1, "mean {mean} rate {rate}");
    }

    #[test]
    fn segment_scores_add_up_to_eta() {
        let ex = builtin::example1();
        let gaps = IntervalDistribution::explicit(&BTreeMap::from([(1, 0.2), (3, 0.5), (4, 0.3)])).unwrap();
        let g = GainSet { gains: ex.reference_gains.clone(), provenance: None };
        let horizon = 500;
        let t = closed_loop_run(&ex.system, &ex.chain, &gaps, &g, &ex.x0, horizon, 8, Some(&ex.certificate)).unwrap();
        let eta = t.eta_log.as_ref().unwrap();
        // complete segments inside [0, horizon)
        let last_obs = t.obs_times.times[t.obs_times.counting_process(horizon - 1).unwrap()];
        let path = ModePath { values: t.r[..last_obs].to_vec() };
        let within: Vec<usize> = t.obs_times.times.iter().cloned().filter(|&x| x <= last_obs).collect();
        let segs = segment_path(&path, &ObservationTimes { times: within }).unwrap();
        let segs_sum: f64 = segs.iter().map(|q| xi_score(q, &ex.certificate.zeta)).sum();
        let partial: f64 = (last_obs..horizon).map(|n| ex.certificate.zeta[(t.r[n], t.sigma[n])].ln()).sum();
        assert_abs_diff_eq!(segs_sum + partial, eta[horizon], epsilon = 1e-9);
    }

    #[test]
    fn certified_runs_respect_lyapunov_bound() {
        let ex = builtin::example1();
        let g = GainSet::from_certificate(&ex.certificate).unwrap();
        for s in 0..5 {
            let t = closed_loop_run(&ex.system, &ex.chain, &ex.observation, &g, &ex.x0, 200, s, Some(&ex.certificate)).unwrap();
            assert_eq!(lyapunov_bound_violation(&t, &ex.certificate).unwrap(), None);
        }
    }

    #[test]
    fn export_round_trip() {
        let (ex, g) = ex1_gains();
        let t = closed_loop_run(&ex.system, &ex.chain, &ex.observation, &g, &ex.x0, 3, 1, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.csv");
        export_trajectory(&t, &p).unwrap();
        let mut rd = csv::Reader::from_path(&p).unwrap();
        let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, ["k", "x_1", "x_2", "u_1", "r", "sigma", "observed"]);
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 4);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row[1].parse::<f64>().unwrap().to_bits(), t.x[k][0].to_bits());
            assert_eq!(row[2].parse::<f64>().unwrap().to_bits(), t.x[k][1].to_bits());
            assert_eq!(&row[6] == "1", t.obs_times.contains(k));
        }
    }
}
