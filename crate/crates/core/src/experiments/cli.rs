//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 3 on
//! numerical failures, including violated trend checks.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Matrix3;

use crate::cooperation::{efim_subset, efim_time, efim_with_self_error};
use crate::detection::{calibrate_threshold, detect, detection_probability};
use crate::error::{Error, Result};
use crate::estimation::{ml_single_path, noisy_snapshots, estimate_ris_position, position_from_measurements, GridSpec};
use crate::fisher::{efim_position, PositionFim};
use crate::geometry::Vec3;
use crate::scenario::Scenario;

use super::config::{canonical, ScenarioFile};
use super::output::{Metadata, SweepResult};
use super::runners;

pub const THREADS_ENV: &str = "RISHM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "rishm", version, about = "RIS-aided structural health monitoring bounds, detection and estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Fig4,
    Fig5,
    Fig6,
    Deploy,
    Selferr,
    Detect9,
    Detect10,
    Rmse7,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Fig4 => "fig4",
            Experiment::Fig5 => "fig5",
            Experiment::Fig6 => "fig6",
            Experiment::Deploy => "deploy",
            Experiment::Selferr => "selferr",
            Experiment::Detect9 => "detect9",
            Experiment::Detect10 => "detect10",
            Experiment::Rmse7 => "rmse7",
        }
    }

    fn stochastic(self) -> bool {
        matches!(self, Experiment::Selferr | Experiment::Detect9 | Experiment::Detect10 | Experiment::Rmse7)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-receiver and network position error bounds.
    Peb {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Information ellipsoid of each receiver.
    Ellipsoid {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Network PEB as receivers join in file order.
    Cooperate {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection and false-alarm probability for the `[detection]` table.
    Detect {
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Signal-level delay and angle estimates from simulated snapshots.
    Estimate {
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a canonical experiment sweep.
    Sweep {
        experiment: Experiment,
        /// Scenario file overriding the built-in canonical one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report failed trend checks as warnings instead of failing.
        #[arg(long)]
        warn_trends: bool,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io(_) | Error::InvalidInput(_) | Error::DimensionMismatch { .. } => 2,
        _ => 3,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be a positive integer")));
    }
    // A pool built earlier in the same process stays in place.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn emit(result: &SweepResult, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => result.write(p),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&result.to_csv()?)?;
            Ok(())
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Peb { scenario, out } => emit(&peb_table(&ScenarioFile::load(&scenario)?)?, out.as_deref()),
        Command::Ellipsoid { scenario, out } => emit(&ellipsoid_table(&ScenarioFile::load(&scenario)?)?, out.as_deref()),
        Command::Cooperate { scenario, out } => emit(&cooperate_table(&ScenarioFile::load(&scenario)?)?, out.as_deref()),
        Command::Detect { scenario, seed, out } => emit(&detect_table(&ScenarioFile::load(&scenario)?, seed)?, out.as_deref()),
        Command::Estimate { scenario, seed, trials, out } => {
            emit(&estimate_table(&ScenarioFile::load(&scenario)?, seed, trials)?, out.as_deref())
        }
        Command::Sweep { experiment, config, seed, out, warn_trends } => {
            let file = match &config {
                Some(p) => ScenarioFile::load(p)?,
                None => ScenarioFile::parse(canonical(experiment.name()).unwrap_or_default())?,
            };
            let seed = match (experiment.stochastic(), seed) {
                (true, None) => {
                    return Err(Error::Config(format!("sweep {} is stochastic and needs --seed", experiment.name())))
                }
                (_, s) => s.unwrap_or(0),
            };
            let result = match experiment {
                Experiment::Fig4 => runners::run_fig4(&file)?,
                Experiment::Fig5 => runners::run_fig5(&file)?,
                Experiment::Fig6 => runners::run_fig6(&file)?,
                Experiment::Deploy => runners::run_deployment(&file)?,
                Experiment::Selferr => runners::run_self_error(&file, seed)?,
                Experiment::Detect9 => runners::run_detect9(&file, seed)?,
                Experiment::Detect10 => runners::run_detect10(&file, seed)?,
                Experiment::Rmse7 => runners::run_rmse7(&file, seed)?,
            };
            emit(&result, out.as_deref())?;
            if result.violations.is_empty() {
                return Ok(());
            }
            for v in &result.violations {
                eprintln!("trend check: {v}");
            }
            if warn_trends {
                Ok(())
            } else {
                Err(Error::TrendCheck(format!("{} of the {} checks failed", result.violations.len(), experiment.name())))
            }
        }
    }
}

fn crlb_or_inf(f: &PositionFim) -> f64 {
    f.crlb().map_or(f64::INFINITY, f64::sqrt)
}

fn peb_table(file: &ScenarioFile) -> Result<SweepResult> {
    let s = file.to_scenario()?;
    let mut out = SweepResult::new(
        Metadata::new("peb", file, None)?,
        &["receiver", "peb", "peb_with_error", "rii", "aii_az", "aii_el"],
    );
    for k in 0..s.receivers.len() {
        let e = efim_position(&s, k)?;
        let anchor = efim_time(&s, k, s.instants)?;
        let degraded = efim_with_self_error(&s, k)?;
        out.push(vec![k as f64, crlb_or_inf(&anchor), crlb_or_inf(&degraded), e.rii, e.aii_az, e.aii_el])?;
    }
    let all: Vec<usize> = (0..s.receivers.len()).collect();
    out.summary.insert("network_peb".into(), crlb_or_inf(&efim_subset(&s, &all)?));
    Ok(out)
}

fn ellipsoid_table(file: &ScenarioFile) -> Result<SweepResult> {
    let s = file.to_scenario()?;
    let mut out = SweepResult::new(
        Metadata::new("ellipsoid", file, None)?,
        &[
            "receiver", "u_tau_x", "u_tau_y", "u_tau_z", "u_az_x", "u_az_y", "u_az_z", "u_el_x", "u_el_y", "u_el_z", "rii",
            "lambda_az", "lambda_el", "chi_azel", "chi_elaz", "aii_az", "aii_el",
        ],
    );
    for k in 0..s.receivers.len() {
        let e = efim_position(&s, k)?;
        let mut row = vec![k as f64];
        for u in [e.u_tau, e.u_az, e.u_el] {
            row.extend(u.iter());
        }
        row.extend([e.rii, e.lambda_az, e.lambda_el, e.chi_azel, e.chi_elaz, e.aii_az, e.aii_el]);
        out.push(row)?;
    }
    Ok(out)
}

fn cooperate_table(file: &ScenarioFile) -> Result<SweepResult> {
    let s = file.to_scenario()?;
    let mut out = SweepResult::new(
        Metadata::new("cooperate", file, None)?,
        &["k", "peb_anchor", "peb", "crlb_x", "crlb_y", "crlb_z"],
    );
    let mut anchor = PositionFim::zeros();
    let mut degraded = PositionFim::zeros();
    for k in 0..s.receivers.len() {
        anchor = anchor + efim_time(&s, k, s.instants)?;
        degraded = degraded + efim_with_self_error(&s, k)?;
        let diag = degraded.inverse().map_or(Vec3::repeat(f64::INFINITY), |m: Matrix3<f64>| m.diagonal().map(f64::sqrt));
        out.push(vec![(k + 1) as f64, crlb_or_inf(&anchor), crlb_or_inf(&degraded), diag.x, diag.y, diag.z])?;
    }
    Ok(out)
}

fn detect_table(file: &ScenarioFile, seed: u64) -> Result<SweepResult> {
    let s = file.to_scenario()?;
    let config = file.detection_config()?;
    let threshold = calibrate_threshold(&config, &s, seed)?;
    let hit = detection_probability(&s, &config.deformation, &config, threshold, seed)?;
    let fa = detection_probability(&s, &Vec3::zeros(), &config, threshold, seed)?;
    let nominal = detect(&s, &(s.ris.design_pose.position + config.deformation), &config, threshold)?;
    let mut out = SweepResult::new(
        Metadata::new("detect", &(file, &config), Some(seed))?,
        &[
            "deformation_m", "threshold", "p_detect", "p_lo", "p_hi", "p_false_alarm", "fa_lo", "fa_hi", "wald_nominal",
            "posterior_u", "posterior_d",
        ],
    );
    out.push(vec![
        config.deformation.norm(),
        threshold,
        hit.p,
        hit.lo,
        hit.hi,
        fa.p,
        fa.lo,
        fa.hi,
        nominal.wald,
        nominal.posterior_u,
        nominal.posterior_d,
    ])?;
    Ok(out)
}

fn estimate_table(file: &ScenarioFile, seed: u64, trials: usize) -> Result<SweepResult> {
    if trials == 0 {
        return Err(Error::Config("--trials must be >= 1".into()));
    }
    let s: Scenario = file.to_scenario()?;
    let grid = GridSpec::default();
    let mut out = SweepResult::new(
        Metadata::new("estimate", file, Some(seed))?,
        &[
            "trial", "receiver", "tau_hat", "az_hat", "el_hat", "tau_true", "az_true", "el_true", "converged", "x_hat", "y_hat",
            "z_hat", "fused_x", "fused_y", "fused_z",
        ],
    );
    for t in 0..trials as u64 {
        let fused = estimate_ris_position(&s, seed, t)?;
        for k in 0..s.receivers.len() {
            let est = ml_single_path(&noisy_snapshots(&s, k, seed, t)?, &s, k, &grid)?;
            let truth = s.path(k)?;
            let r = position_from_measurements(est.tau_hat, est.az_hat, est.el_hat, &s.receivers[k].position, truth.tau_tr)?;
            out.push(vec![
                t as f64,
                k as f64,
                est.tau_hat,
                est.az_hat,
                est.el_hat,
                truth.tau_r,
                truth.rx_aoa_az,
                truth.rx_aoa_el,
                if est.converged { 1.0 } else { 0.0 },
                r.x,
                r.y,
                r.z,
                fused.x,
                fused.y,
                fused.z,
            ])?;
        }
    }
    Ok(out)
}
