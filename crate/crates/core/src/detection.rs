//! Deformation detection: Wald statistic, CFAR threshold, state posterior and
//! Monte-Carlo detection probability.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::rng_stream;
use crate::cooperation::efim_network;
use crate::error::{Error, Result};
use crate::fisher::PositionFim;
use crate::geometry::Vec3;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructureState {
    /// Unchanged.
    U,
    /// Damaged.
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `1 - p_fa` quantile of the chi-square law with three degrees of freedom.
    Chi2Analytic,
    /// Empirical `1 - p_fa` quantile of the statistic under no deformation.
    MonteCarlo,
    /// Fixed displacement threshold in meters on `|r_hat - r0|`.
    Displacement(f64),
}

/// How the position estimate of each trial is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    /// `r_hat ~ N(r_true, F^-1)`, the efficient-estimator idealization.
    Bound,
    /// Estimate from noisy snapshots with the signal-level estimator.
    Signal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub p_fa: f64,
    pub threshold_mode: ThresholdMode,
    pub trials: usize,
    /// Displacement of the RIS from its initial position (m).
    pub deformation: Vec3,
    pub prior_u: f64,
    pub prior_d: f64,
    pub estimate_mode: EstimateMode,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            p_fa: 1e-2,
            threshold_mode: ThresholdMode::Chi2Analytic,
            trials: 1000,
            deformation: Vec3::new(0.0, 0.0, -1e-3),
            prior_u: 0.5,
            prior_d: 0.5,
            estimate_mode: EstimateMode::Bound,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return Err(Error::invalid(format!("p_fa must lie in (0, 1), got {}", self.p_fa)));
        }
        if self.prior_u < 0.0 || self.prior_d < 0.0 || ((self.prior_u + self.prior_d) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("priors must be non-negative and sum to 1"));
        }
        if let ThresholdMode::Displacement(k) = self.threshold_mode {
            if !(k > 0.0) {
                return Err(Error::invalid("displacement threshold must be > 0"));
            }
        }
        Ok(())
    }
}

/// Binomial proportion with its 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
    pub hits: usize,
    pub trials: usize,
}

pub fn wilson_interval(hits: usize, trials: usize) -> ProbabilityEstimate {
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = if trials == 0 { 0.0 } else { hits as f64 / n };
    if trials == 0 {
        return ProbabilityEstimate { p, lo: 0.0, hi: 1.0, hits, trials };
    }
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ProbabilityEstimate { p, lo: (center - half).max(0.0), hi: (center + half).min(1.0), hits, trials }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub wald: f64,
    pub threshold: f64,
    pub decision: StructureState,
    pub posterior_u: f64,
    pub posterior_d: f64,
    /// Set when both likelihoods underflowed and the priors were returned.
    pub posterior_underflow: bool,
    pub p_detect: Option<ProbabilityEstimate>,
}

/// `(r_hat - r0)^T F (r_hat - r0)`.
pub fn wald_statistic(r_hat: &Vec3, r0: &Vec3, fim_at_hat: &PositionFim) -> f64 {
    let d = r_hat - r0;
    (d.transpose() * fim_at_hat.matrix * d)[(0, 0)].max(0.0)
}

/// Network EFIM with the RIS moved to `r` and every design quantity frozen.
pub fn efim_at(scenario: &Scenario, r: &Vec3) -> Result<PositionFim> {
    let mut s = scenario.clone();
    s.ris.pose.position = *r;
    efim_network(&s)
}

/// `1 - p_fa` quantile of the chi-square law with three degrees of freedom.
pub fn chi2_threshold(p_fa: f64) -> Result<f64> {
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(Error::invalid(format!("p_fa must lie in (0, 1), got {p_fa}")));
    }
    let chi = ChiSquared::new(3.0).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(chi.inverse_cdf(1.0 - p_fa))
}

/// Smallest sample value whose empirical CDF reaches `q`.
pub fn empirical_quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    let i = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    values[i]
}

/// Draws `N(mean, cov)` through the symmetric square root of `cov`.
fn gaussian_draw<R: Rng + ?Sized>(mean: &Vec3, root: &Matrix3<f64>, rng: &mut R) -> Vec3 {
    let z = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
    mean + root * z
}

/// Test statistic of one trial and the value it is compared against.
fn trial_statistic(scenario: &Scenario, config: &DetectionConfig, r0: &Vec3, r_hat: &Vec3) -> Result<f64> {
    match config.threshold_mode {
        ThresholdMode::Displacement(_) => Ok((r_hat - r0).norm()),
        _ => Ok(wald_statistic(r_hat, r0, &efim_at(scenario, r_hat)?)),
    }
}

/// Position estimates for `trials` independent trials with the RIS at `r_true`.
///
/// Trial `t` always consumes stream `t` of `seed`, so sweeps over
/// deformation, SNR or array size share common random numbers.
pub fn draw_estimates(scenario: &Scenario, config: &DetectionConfig, r_true: &Vec3, seed: u64) -> Result<Vec<Vec3>> {
    match config.estimate_mode {
        EstimateMode::Bound => {
            let cov = efim_at(scenario, r_true)?.inverse()?;
            let root = crate::linalg::sym_sqrt3(&cov);
            Ok((0..config.trials)
                .map(|t| gaussian_draw(r_true, &root, &mut rng_stream(seed, t as u64, 0, 0)))
                .collect())
        }
        EstimateMode::Signal => {
            let mut s = scenario.clone();
            s.ris.pose.position = *r_true;
            (0..config.trials)
                .into_par_iter()
                .map(|t| crate::estimation::estimate_ris_position(&s, seed, t as u64))
                .collect()
        }
    }
}

/// CFAR threshold for `config` on `scenario`.
pub fn calibrate_threshold(config: &DetectionConfig, scenario: &Scenario, seed: u64) -> Result<f64> {
    config.validate()?;
    match config.threshold_mode {
        ThresholdMode::Chi2Analytic => chi2_threshold(config.p_fa),
        ThresholdMode::Displacement(k) => Ok(k),
        ThresholdMode::MonteCarlo => {
            let tail = config.p_fa.min(1.0 - config.p_fa);
            if (config.trials as f64) * tail < 10.0 {
                return Err(Error::invalid(format!(
                    "{} trials cannot resolve the {} quantile; need at least {}",
                    config.trials,
                    1.0 - config.p_fa,
                    (10.0 / tail).ceil()
                )));
            }
            let r0 = scenario.ris.design_pose.position;
            let est = draw_estimates(scenario, config, &r0, seed)?;
            let mut w: Vec<f64> = est
                .par_iter()
                .map(|r| trial_statistic(scenario, config, &r0, r))
                .collect::<Result<_>>()?;
            Ok(empirical_quantile(&mut w, 1.0 - config.p_fa))
        }
    }
}

fn gaussian_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

/// Posterior `(P(U | d), P(D | d), underflow)`.
///
/// `f(d | U) = N(d; 0, peb_r0^2)` and `f(d | D) = N(d; d, peb_hat^2)`: the
/// damaged-state likelihood is centred on the observed statistic itself, so it
/// always evaluates at its peak.
pub fn posterior(d: f64, config: &DetectionConfig, peb_r0: f64, peb_hat: f64) -> Result<(f64, f64, bool)> {
    if !(peb_r0 > 0.0 && peb_hat > 0.0) {
        return Err(Error::invalid("PEBs must be > 0"));
    }
    let lu = gaussian_pdf(d, 0.0, peb_r0) * config.prior_u;
    let ld = gaussian_pdf(d, d, peb_hat) * config.prior_d;
    let total = lu + ld;
    if !(total > 0.0) || !total.is_finite() {
        return Ok((config.prior_u, config.prior_d, true));
    }
    Ok((lu / total, ld / total, false))
}

/// Decision and posterior for one position estimate.
pub fn detect(scenario: &Scenario, r_hat: &Vec3, config: &DetectionConfig, threshold: f64) -> Result<DetectionOutcome> {
    let r0 = scenario.ris.design_pose.position;
    let f_hat = efim_at(scenario, r_hat)?;
    let wald = wald_statistic(r_hat, &r0, &f_hat);
    let stat = match config.threshold_mode {
        ThresholdMode::Displacement(_) => (r_hat - r0).norm(),
        _ => wald,
    };
    let peb_r0 = efim_at(scenario, &r0)?.crlb()?.sqrt();
    let peb_hat = f_hat.crlb()?.sqrt();
    let (pu, pd, underflow) = posterior(wald, config, peb_r0, peb_hat)?;
    Ok(DetectionOutcome {
        wald,
        threshold,
        decision: if stat > threshold { StructureState::D } else { StructureState::U },
        posterior_u: pu,
        posterior_d: pd,
        posterior_underflow: underflow,
        p_detect: None,
    })
}

/// Fraction of trials declaring damage with the RIS displaced by `deformation`.
pub fn detection_probability(
    scenario: &Scenario,
    deformation: &Vec3,
    config: &DetectionConfig,
    threshold: f64,
    seed: u64,
) -> Result<ProbabilityEstimate> {
    config.validate()?;
    if config.trials < 100 {
        return Err(Error::invalid(format!("need at least 100 trials, got {}", config.trials)));
    }
    let r0 = scenario.ris.design_pose.position;
    let r_true = r0 + deformation;
    let est = draw_estimates(scenario, config, &r_true, seed)?;
    let stats: Vec<f64> = est
        .par_iter()
        .map(|r| trial_statistic(scenario, config, &r0, r))
        .collect::<Result<_>>()?;
    let hits = stats.iter().filter(|&&w| w > threshold).count();
    Ok(wilson_interval(hits, stats.len()))
}
