//! End-to-end checks of the built-in examples against their reference values.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::builtin::{self, BuiltinExample};
use crate::error::{Error, Result};
use crate::renewal::{IntervalDistribution, DEFAULT_TAIL_TOL};
use crate::simulate::{closed_loop_run, eta_exponent, lyapunov_bound_violation, monte_carlo};
use crate::stability::{
    check_condp, check_theorem2, check_theorem2_support, condzeta_lhs_geometric, ergodic_rate,
    monotonicity_check, transition_eigenvalues, DEFAULT_PSD_TOL,
};
use crate::synthesis::{fixed_gain_feasibility, gains_from, GainSet, SearchMode, SynthesisConfig};

/// Agreement required between recomputed and printed gains.
pub const GAIN_TOL: f64 = 5e-4;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.to_string(), pass, detail }
    }
}

fn fmt_row(m: &DMatrix<f64>) -> String {
    let v: Vec<String> = m.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", v.join(", "))
}

fn gain_check(ex: &BuiltinExample) -> Result<Check> {
    let g = gains_from(&ex.certificate.r_tilde, &ex.certificate.l)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, (k, r)) in g.gains.iter().zip(&ex.reference_gains).enumerate() {
        let err = (k - r).amax();
        pass &= err <= GAIN_TOL;
        parts.push(format!("K{} = {} (max error {err:.1e})", i + 1, fmt_row(k)));
    }
    Ok(Check::new("gains from reference R_tilde and L", pass, parts.join("; ")))
}

/// First grid value of `theta` from which every larger grid value is certified.
fn certified_from(rows: &[(f64, bool)]) -> Option<f64> {
    let mut from = None;
    for &(theta, ok) in rows.iter().rev() {
        if !ok {
            break;
        }
        from = Some(theta);
    }
    from
}

/// Fixed-gain verdicts on the grid `theta = 0.05, 0.10, ..., 1.00`.
pub fn theta_sweep(ex: &BuiltinExample, gains: &[DMatrix<f64>]) -> Result<Vec<(f64, bool, f64)>> {
    let cfg = SynthesisConfig::default();
    (1..=20)
        .map(|s| {
            let theta = s as f64 * 0.05;
            let dist = IntervalDistribution::geometric_or_limit(theta, DEFAULT_TAIL_TOL)?;
            let v = fixed_gain_feasibility(&ex.system, &ex.chain, gains, &dist, SearchMode::Distribution, &cfg)?;
            Ok((theta, v.pass, v.condzeta_lhs))
        })
        .collect()
}

pub fn example1_checks(seed: u64) -> Result<Vec<Check>> {
    let ex = builtin::example1();
    let mut out = vec![gain_check(&ex)?];

    let condp = check_condp(&ex.system, &ex.certificate, DEFAULT_PSD_TOL)?;
    let lhs = condzeta_lhs_geometric(&ex.chain, 0.3, &ex.certificate.zeta)?;
    let worst = condp.residuals.iter().map(|r| r.min_eig).fold(f64::INFINITY, f64::min);
    out.push(Check::new(
        "reference certificate at theta = 0.3",
        condp.pass && lhs < 0.0,
        format!("smallest normalized block eigenvalue {worst:.4e}; condzeta LHS {lhs:.6}"),
    ));

    let sweep = theta_sweep(&ex, &ex.reference_gains)?;
    let flags: Vec<(f64, bool)> = sweep.iter().map(|&(t, ok, _)| (t, ok)).collect();
    let above = flags.iter().filter(|(t, _)| *t >= 0.2 - 1e-9).all(|(_, ok)| *ok);
    let below = flags.iter().filter(|(t, _)| *t <= 0.15 + 1e-9).all(|(_, ok)| !*ok);
    out.push(Check::new(
        "theta sweep certifies exactly theta >= 0.20",
        above && below,
        format!(
            "certified from theta = {}",
            certified_from(&flags).map_or("none".into(), |t| format!("{t:.2}"))
        ),
    ));

    let gains = GainSet { gains: ex.reference_gains.clone(), provenance: None };
    let mc = monte_carlo(&ex.system, &ex.chain, &ex.observation, &gains, &ex.x0, 200, 100, seed, 1e-4)?;
    out.push(Check::new(
        "Monte Carlo: all 100 trials reach ||x(200)|| < 1e-4",
        mc.converged_fraction == 1.0,
        format!(
            "converged fraction {:.2}; mean ln||x(200)|| {:.2}; empirical rate {:.4}",
            mc.converged_fraction, mc.mean_final_log_norm, mc.empirical_rate
        ),
    ));

    let rate = ergodic_rate(&ex.chain, &ex.observation, &ex.certificate.zeta)?;
    let eta = eta_exponent(&ex.chain, &ex.observation, &ex.certificate.zeta, 100_000, seed)?;
    let rel = ((eta - rate) / rate).abs();
    out.push(Check::new(
        "eta exponent within 5% of the ergodic rate",
        rel < 0.05,
        format!("eta exponent {eta:.6}, ergodic rate {rate:.6}, relative gap {rel:.3}"),
    ));

    let cert_gains = GainSet::from_certificate(&ex.certificate)?;
    let mut violations = 0;
    for t in 0..20 {
        let traj = closed_loop_run(
            &ex.system,
            &ex.chain,
            &ex.observation,
            &cert_gains,
            &ex.x0,
            200,
            crate::rng::sub_seed(seed, crate::rng::TRIAL_STREAM, t),
            Some(&ex.certificate),
        )?;
        violations += lyapunov_bound_violation(&traj, &ex.certificate)?.is_some() as usize;
    }
    out.push(Check::new(
        "pathwise Lyapunov bound on 20 runs",
        violations == 0,
        format!("{violations} runs with a violating step"),
    ));
    Ok(out)
}

pub fn example2_checks() -> Result<Vec<Check>> {
    let ex = builtin::example2();
    let tau_bar = ex.tau_bar.unwrap_or(5);
    let eig = transition_eigenvalues(&ex.chain);
    let expected = [1.0, 0.4, 0.4];
    let eig_ok = eig.len() == 3
        && eig.iter().zip(expected).all(|(&(re, im), e)| (re - e).abs() <= 1e-10 && im.abs() <= 1e-10);
    let shown: Vec<String> = eig.iter().map(|(re, im)| format!("{re:.6}{im:+.1e}i")).collect();
    let mut out = vec![Check::new("eigenvalues of P are {1, 0.4, 0.4}", eig_ok, shown.join(", "))];

    let t2 = check_theorem2(&ex.chain, tau_bar, &ex.certificate.zeta)?;
    let support_ok = check_theorem2_support(&ex.observation, tau_bar).is_ok();
    out.push(Check::new(
        "bounded-gap conditions with reference zeta",
        t2.pass && support_ok,
        format!("tau_bar-sum {:.6}; {}", t2.tau_sum, t2.failure.clone().unwrap_or_else(|| "all hold".into())),
    ));

    let condp = check_condp(&ex.system, &ex.certificate, DEFAULT_PSD_TOL)?;
    let worst = condp.residuals.iter().map(|r| r.min_eig).fold(f64::INFINITY, f64::min);
    out.push(Check::new(
        "reference certificate blocks",
        condp.pass,
        format!("smallest normalized block eigenvalue {worst:.4e}"),
    ));
    out.push(gain_check(&ex)?);

    let mono = monotonicity_check(&ex.chain, 50);
    out.push(Check::new(
        "monotone l-step probabilities for l < 50",
        mono.pass,
        format!("{:?}", mono.first_violation),
    ));
    Ok(out)
}

pub fn run(example_id: u32, seed: u64) -> Result<Vec<Check>> {
    match example_id {
        1 => example1_checks(seed),
        2 => example2_checks(),
        other => Err(Error::UnknownExample(other)),
    }
}
