//! Command-line front-end. Exit codes: 0 pass, 1 condition failed, 2 input error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{CertificateFile, ProblemDefinition, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::modeseq::TruncatedSequenceSpace;
use crate::renewal::{DistributionKind, IntervalDistribution};
use crate::simulate::{closed_loop_run, export_trajectory, monte_carlo, MonteCarloReport};
use crate::stability::{
    check_condp, check_theorem2, check_theorem2_support, condzeta_lhs_auto, CondpReport,
    CondzetaMethod, Theorem2Report,
};
use crate::synthesis::{fixed_gain_feasibility, log_space, synthesize, SearchMode, SynthesisConfig};
use crate::{reproduce, rng};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "switchstab", version, about = "Stabilization certificates for switched systems with randomly observed modes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a certificate against a problem definition.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        certificate: PathBuf,
        /// Use the bounded-gap conditions instead of the averaged log-growth condition.
        #[arg(long)]
        theorem2: bool,
        /// Gap bound; defaults to `options.tau_bar` from the config.
        #[arg(long)]
        tau_bar: Option<usize>,
        /// Evaluate the averaged log-growth by truncated summation even when a closed form exists.
        #[arg(long)]
        force_general: bool,
    },
    /// Search for a certificate and gains.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        theorem2: bool,
        #[arg(long)]
        tau_bar: Option<usize>,
        /// Number of diagonal grid points per mode.
        #[arg(long, default_value_t = 8)]
        grid_points: usize,
        #[arg(long, default_value_t = 0.01)]
        margin: f64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        /// Write the certificate here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo closed-loop simulation.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        gains: PathBuf,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        /// Directory for one trajectory CSV per trial.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fixed-gain verdicts over a parameter grid (CSV on stdout).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        gains: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long)]
        step: f64,
        /// Also report the empirical converged fraction per grid point.
        #[arg(long)]
        simulate: bool,
        #[arg(long, default_value_t = 200)]
        horizon: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
    },
    /// List the mode-sequence space with initial and invariant probabilities (CSV on stdout).
    Enumerate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        max_len: usize,
    },
    /// Run the checks for a built-in example.
    Reproduce {
        example: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Theta,
    Period,
    TauBar,
}

#[derive(Debug, Serialize)]
struct CondzetaVerdict {
    method: CondzetaMethod,
    lhs: f64,
    truncation_bound: f64,
    pass: bool,
    verdict: String,
}

#[derive(Debug, Serialize)]
struct CheckVerdict {
    schema_version: u32,
    pass: bool,
    condp: CondpReport,
    condzeta: CondzetaVerdict,
    rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    theorem2: Option<Theorem2Report>,
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    schema_version: u32,
    #[serde(flatten)]
    report: MonteCarloReport,
}

fn lhs_verdict(lhs: f64) -> String {
    if lhs == 0.0 {
        "LHS = 0, not < 0".to_string()
    } else if lhs < 0.0 {
        format!("LHS = {lhs} < 0")
    } else {
        format!("LHS = {lhs}, not < 0")
    }
}

fn tau_bar_for(flag: Option<usize>, problem: &ProblemDefinition) -> Result<usize> {
    flag.or(problem.options.tau_bar).ok_or_else(|| Error::Validation {
        field: "options.tau_bar".into(),
        message: "bounded-gap mode needs a gap bound (--tau-bar or options.tau_bar)".into(),
    })
}

fn x0_for(problem: &ProblemDefinition) -> Result<DVector<f64>> {
    problem.options.x0.as_ref().map(|v| DVector::from_column_slice(v)).ok_or_else(|| Error::Validation {
        field: "options.x0".into(),
        message: "simulation needs an initial state".into(),
    })
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::NumericalFailure(e.to_string()))?;
    writeln!(out, "{text}")?;
    Ok(())
}

fn cmd_check(
    out: &mut dyn Write,
    config: &Path,
    certificate: &Path,
    theorem2: bool,
    tau_bar: Option<usize>,
    force_general: bool,
) -> Result<i32> {
    let problem = ProblemDefinition::load(config)?;
    let cert = CertificateFile::load(certificate)?.certificate()?;
    let condp = check_condp(&problem.system, &cert, problem.options.psd_tol)?;
    let (method, value) = condzeta_lhs_auto(&problem.chain, &problem.observation, &cert.zeta, force_general)?;
    let t2 = if theorem2 {
        let tb = tau_bar_for(tau_bar, &problem)?;
        check_theorem2_support(&problem.observation, tb)?;
        Some(check_theorem2(&problem.chain, tb, &cert.zeta)?)
    } else {
        None
    };
    let zeta_pass = value.lhs < 0.0;
    let pass = condp.pass && t2.as_ref().map_or(zeta_pass, |r| r.pass);
    let verdict = CheckVerdict {
        schema_version: SCHEMA_VERSION,
        pass,
        condp,
        condzeta: CondzetaVerdict {
            method,
            lhs: value.lhs,
            truncation_bound: value.truncation_bound,
            pass: zeta_pass,
            verdict: lhs_verdict(value.lhs),
        },
        rate: value.lhs / problem.observation.mean(),
        theorem2: t2,
    };
    print_json(out, &verdict)?;
    Ok(if pass { EXIT_PASS } else { EXIT_FAIL })
}

#[allow(clippy::too_many_arguments)]
fn cmd_synthesize(
    out: &mut dyn Write,
    config: &Path,
    theorem2: bool,
    tau_bar: Option<usize>,
    grid_points: usize,
    margin: f64,
    max_iters: usize,
    dest: &Option<PathBuf>,
) -> Result<i32> {
    let problem = ProblemDefinition::load(config)?;
    if grid_points == 0 || !(margin > 0.0) {
        return Err(Error::Validation {
            field: "grid_points/margin".into(),
            message: "need at least one grid point and a positive margin".into(),
        });
    }
    let mode = if theorem2 {
        SearchMode::BoundedGap { tau_bar: tau_bar_for(tau_bar, &problem)? }
    } else {
        SearchMode::Distribution
    };
    let cfg = SynthesisConfig {
        diag_grid: log_space(0.05, 0.95, grid_points),
        boundary_margin: margin,
        max_iters,
        ..SynthesisConfig::default()
    };
    let gains = match synthesize(&problem.system, &problem.chain, &problem.observation, &cfg, mode) {
        Ok(g) => g,
        Err(Error::NoFeasiblePoint) => {
            eprintln!("no feasible point on the zeta grid");
            return Ok(EXIT_FAIL);
        }
        Err(e) => return Err(e),
    };
    let cert = gains.provenance.as_ref().expect("synthesized gains carry a certificate");
    let mut file = CertificateFile::from_certificate(cert, Some(&gains));
    let (_, value) = condzeta_lhs_auto(&problem.chain, &problem.observation, &cert.zeta, false)?;
    file.condzeta_lhs = Some(match mode {
        SearchMode::BoundedGap { tau_bar } => check_theorem2(&problem.chain, tau_bar, &cert.zeta)?.tau_sum,
        SearchMode::Distribution => value.lhs,
    });
    file.rate = Some(value.lhs / problem.observation.mean());
    match dest {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            print_json(&mut f, &file)?;
        }
        None => print_json(out, &file)?,
    }
    Ok(EXIT_PASS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    out: &mut dyn Write,
    config: &Path,
    gains: &Path,
    horizon: usize,
    trials: usize,
    seed: u64,
    threshold: f64,
    dir: &Option<PathBuf>,
) -> Result<i32> {
    let problem = ProblemDefinition::load(config)?;
    let gains = CertificateFile::load(gains)?.gains()?;
    let x0 = x0_for(&problem)?;
    let report = monte_carlo(&problem.system, &problem.chain, &problem.observation, &gains, &x0, horizon, trials, seed, threshold)?;
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        for t in 0..trials {
            let traj = closed_loop_run(
                &problem.system,
                &problem.chain,
                &problem.observation,
                &gains,
                &x0,
                horizon,
                rng::sub_seed(seed, rng::TRIAL_STREAM, t as u64),
                gains.provenance.as_ref(),
            )?;
            export_trajectory(&traj, &dir.join(format!("trial_{t:04}.csv")))?;
        }
    }
    print_json(out, &SimulateReport { schema_version: SCHEMA_VERSION, report })?;
    Ok(EXIT_PASS)
}

/// Grid `from, from + step, ..., <= to`; empty or malformed ranges are rejected.
pub fn sweep_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !from.is_finite() || !to.is_finite() || from > to {
        return Err(Error::UnsupportedParameter(format!("empty range {from}..{to} step {step}")));
    }
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| from + k as f64 * step).collect())
}

fn as_integer(v: f64) -> Result<usize> {
    if v >= 1.0 && (v - v.round()).abs() < 1e-9 {
        Ok(v.round() as usize)
    } else {
        Err(Error::UnsupportedParameter(format!("{v} is not a positive integer")))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    out: &mut dyn Write,
    config: &Path,
    gains: &Path,
    param: SweepParam,
    grid: Vec<f64>,
    sim: Option<(usize, usize, u64, f64)>,
) -> Result<i32> {
    let problem = ProblemDefinition::load(config)?;
    let gains = CertificateFile::load(gains)?.gains()?;
    let kind = problem.observation.kind();
    match (param, kind) {
        (SweepParam::Theta, DistributionKind::Geometric { .. })
        | (SweepParam::Period, DistributionKind::Periodic { .. })
        | (SweepParam::TauBar, _) => {}
        _ => {
            return Err(Error::UnsupportedParameter(format!(
                "cannot sweep {param:?} for a {kind:?} observation law"
            )))
        }
    }
    let x0 = if sim.is_some() { Some(x0_for(&problem)?) } else { None };
    let cfg = SynthesisConfig::default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "feasible", "condzeta_lhs", "converged_fraction"])?;
    for value in grid {
        let (dist, mode) = match param {
            SweepParam::Theta => (IntervalDistribution::geometric_or_limit(value, problem.options.tail_tol)?, SearchMode::Distribution),
            SweepParam::Period => (IntervalDistribution::periodic(as_integer(value)?)?, SearchMode::Distribution),
            SweepParam::TauBar => (problem.observation.clone(), SearchMode::BoundedGap { tau_bar: as_integer(value)? }),
        };
        let (feasible, lhs) = match fixed_gain_feasibility(&problem.system, &problem.chain, &gains.gains, &dist, mode, &cfg) {
            Ok(v) => (v.pass, format!("{:?}", v.condzeta_lhs)),
            // the gap law reaches beyond this tau_bar
            Err(Error::Validation { .. }) if param == SweepParam::TauBar => (false, String::new()),
            Err(e) => return Err(e),
        };
        let converged = match (sim, &x0) {
            (Some((horizon, trials, seed, threshold)), Some(x0)) => {
                let r = monte_carlo(&problem.system, &problem.chain, &dist, &gains, x0, horizon, trials, seed, threshold)?;
                format!("{:?}", r.converged_fraction)
            }
            _ => String::new(),
        };
        w.write_record([format!("{value:?}"), feasible.to_string(), lhs, converged])?;
    }
    w.flush()?;
    Ok(EXIT_PASS)
}

fn cmd_enumerate(out: &mut dyn Write, config: &Path, max_len: usize) -> Result<i32> {
    let problem = ProblemDefinition::load(config)?;
    let dist = if problem.observation.max_support() > max_len && problem.observation.tail_mass() > 0.0 {
        problem.observation.truncate_support(max_len)?
    } else {
        problem.observation.clone()
    };
    let space = TruncatedSequenceSpace::build(&problem.chain, &dist, max_len, problem.options.sequence_cap)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sequence", "length", "lambda", "phi"])?;
    for (k, q) in space.sequences.iter().enumerate() {
        w.write_record([q.to_string(), q.len().to_string(), format!("{:?}", space.lambda[k]), format!("{:?}", space.phi[k])])?;
    }
    w.flush()?;
    eprintln!(
        "{} sequences; excluded mass {:e}; irreducible on the truncated space: {}",
        space.len(),
        space.truncation_bound,
        space.is_irreducible()
    );
    Ok(EXIT_PASS)
}

fn cmd_reproduce(out: &mut dyn Write, example: u32, seed: u64) -> Result<i32> {
    let checks = reproduce::run(example, seed)?;
    let mut all = true;
    for c in &checks {
        all &= c.pass;
        writeln!(out, "{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    Ok(if all { EXIT_PASS } else { EXIT_FAIL })
}

/// Runs one parsed command, writing results to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Check { config, certificate, theorem2, tau_bar, force_general } => {
            cmd_check(out, config, certificate, *theorem2, *tau_bar, *force_general)
        }
        Command::Synthesize { config, theorem2, tau_bar, grid_points, margin, max_iters, out: dest } => {
            cmd_synthesize(out, config, *theorem2, *tau_bar, *grid_points, *margin, *max_iters, dest)
        }
        Command::Simulate { config, gains, horizon, trials, seed, threshold, out: dir } => {
            cmd_simulate(out, config, gains, *horizon, *trials, *seed, *threshold, dir)
        }
        Command::Sweep { config, gains, param, from, to, step, simulate, horizon, trials, seed, threshold } => {
            let grid = sweep_grid(*from, *to, *step)?;
            let sim = simulate.then_some((*horizon, *trials, *seed, *threshold));
            cmd_sweep(out, config, gains, *param, grid, sim)
        }
        Command::Enumerate { config, max_len } => cmd_enumerate(out, config, *max_len),
        Command::Reproduce { example, seed } => cmd_reproduce(out, *example, *seed),
    }
}

/// Exit code for an error: a missing certificate point is a failed
/// condition, everything else is an input problem.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NoFeasiblePoint => EXIT_FAIL,
        _ => EXIT_INPUT,
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_PASS };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
