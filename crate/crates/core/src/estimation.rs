//! Single-path maximum-likelihood estimation of delay and receive angles from
//! differential snapshots: a coarse grid search followed by Newton refinement.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::{rng_stream, WaveformMode};
use crate::cooperation::efim_time;
use crate::error::{Error, Result};
use crate::fisher::{fim_channel_closed_form, wave_vector_derivatives};
use crate::geometry::{direction, steering_vector, wave_vector, wrap_angle, Vec3, SPEED_OF_LIGHT};
use crate::linalg::sym_inverse3;
use crate::scenario::{differential_signal, Scenario, SnrSpec};
use crate::channel::DifferentialSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Delay grid size; `None` spaces the grid at a quarter of `1 / B`.
    pub tau_points: Option<usize>,
    pub az_points: usize,
    pub el_points: usize,
    pub refinement_iters: usize,
    /// Relative step tolerance of the refinement.
    pub convergence_tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { tau_points: None, az_points: 181, el_points: 91, refinement_iters: 20, convergence_tol: 1e-10 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tau_points.is_some_and(|n| n < 2) || self.az_points < 2 || self.el_points < 2 {
            return Err(Error::invalid("grid counts must be at least 2"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::invalid("convergence tolerance must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub tau_hat: f64,
    pub az_hat: f64,
    pub el_hat: f64,
    /// Least-squares gain of the first snapshot.
    pub gain_hat: Complex64,
    pub residual_energy: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Concentrated log-likelihood `S = sum_i |m^H y_i|^2` and its derivatives
/// with respect to `(tau, az, el)`.
struct Objective<'a> {
    snaps: &'a [DifferentialSnapshot],
    offsets: &'a [Vec3],
    rates: Vec<f64>,
    amps: Vec<f64>,
    wavelength: f64,
}

struct Eval {
    value: f64,
    grad: Vector3<f64>,
    hess: Matrix3<f64>,
    /// `m^H y_i` per snapshot.
    proj: Vec<Complex64>,
}

impl Objective<'_> {
    fn n_rx(&self) -> usize {
        self.offsets.len()
    }

    /// `conj(d_k(tau))` for every bin.
    fn delay_weights(&self, tau: f64) -> Vec<Complex64> {
        self.rates
            .iter()
            .zip(&self.amps)
            .map(|(w, a)| Complex64::from_polar(*a, -w * tau))
            .collect()
    }

    /// Per-antenna delay-matched sums `sum_k w_k^p conj(d_k) y_kn` for p = 0, 1, 2.
    fn antenna_sums(&self, y: &[Complex64], tau: f64) -> [Vec<Complex64>; 3] {
        let n = self.n_rx();
        let e = self.delay_weights(tau);
        let mut q = [vec![Complex64::new(0.0, 0.0); n], vec![Complex64::new(0.0, 0.0); n], vec![Complex64::new(0.0, 0.0); n]];
        for (k, (ek, w)) in e.iter().zip(&self.rates).enumerate() {
            let row = &y[k * n..(k + 1) * n];
            for (i, yk) in row.iter().enumerate() {
                let t = ek * yk;
                q[0][i] += t;
                q[1][i] += t * w;
                q[2][i] += t * (w * w);
            }
        }
        q
    }

    fn eval(&self, th: &Vector3<f64>) -> Result<Eval> {
        let (tau, az, el) = (th[0], th[1], th[2]);
        let k = wave_vector(az, el, self.wavelength)?;
        let (k_az, k_el) = wave_vector_derivatives(az, el, self.wavelength);
        let s = 2.0 * PI / self.wavelength;
        let (sa, ca) = az.sin_cos();
        let (se, ce) = el.sin_cos();
        let k_azaz = Vec3::new(-ca * ce, -sa * ce, 0.0) * s;
        let k_azel = Vec3::new(sa * se, -ca * se, 0.0) * s;
        let k_elel = -k;
        let j = Complex64::i();
        let mut out = Eval { value: 0.0, grad: Vector3::zeros(), hess: Matrix3::zeros(), proj: Vec::with_capacity(self.snaps.len()) };
        for snap in self.snaps {
            let q = self.antenna_sums(&snap.samples, tau);
            let mut u = Complex64::new(0.0, 0.0);
            let mut du = [Complex64::new(0.0, 0.0); 3];
            let mut ddu = [[Complex64::new(0.0, 0.0); 3]; 3];
            for (n, p) in self.offsets.iter().enumerate() {
                let a_conj = Complex64::from_polar(1.0, p.dot(&k));
                let (q0, q1, q2) = (a_conj * q[0][n], a_conj * q[1][n], a_conj * q[2][n]);
                let (pa, pe) = (p.dot(&k_az), p.dot(&k_el));
                u += q0;
                du[0] += -j * q1;
                du[1] += j * pa * q0;
                du[2] += j * pe * q0;
                ddu[0][0] += -q2;
                ddu[0][1] += pa * q1;
                ddu[0][2] += pe * q1;
                ddu[1][1] += (j * p.dot(&k_azaz) - pa * pa) * q0;
                ddu[1][2] += (j * p.dot(&k_azel) - pa * pe) * q0;
                ddu[2][2] += (j * p.dot(&k_elel) - pe * pe) * q0;
            }
            ddu[1][0] = ddu[0][1];
            ddu[2][0] = ddu[0][2];
            ddu[2][1] = ddu[1][2];
            out.value += u.norm_sqr();
            for a in 0..3 {
                out.grad[a] += 2.0 * (u.conj() * du[a]).re;
                for b in 0..3 {
                    out.hess[(a, b)] += 2.0 * (du[b].conj() * du[a] + u.conj() * ddu[a][b]).re;
                }
            }
            out.proj.push(u);
        }
        Ok(out)
    }

    fn value(&self, th: &Vector3<f64>) -> Result<f64> {
        let (tau, az, el) = (th[0], th[1], th[2]);
        let a = steering_vector_from(self.offsets, az, el, self.wavelength)?;
        let mut v = 0.0;
        for snap in self.snaps {
            let q = self.antenna_sums(&snap.samples, tau);
            let u: Complex64 = a.iter().zip(&q[0]).map(|(x, y)| x.conj() * y).sum();
            v += u.norm_sqr();
        }
        Ok(v)
    }
}

fn steering_vector_from(offsets: &[Vec3], az: f64, el: f64, wavelength: f64) -> Result<Vec<Complex64>> {
    let k = wave_vector(az, el, wavelength)?;
    Ok(offsets.iter().map(|p| Complex64::from_polar(1.0, -p.dot(&k))).collect())
}

/// Azimuth interval in front of a y-z planar array that contains `nominal_az`.
/// The array cannot tell `az` from `pi - az`, so the search stays in one half space.
pub fn azimuth_window(nominal_az: f64) -> (f64, f64) {
    if nominal_az.cos() >= 0.0 {
        (-FRAC_PI_2, FRAC_PI_2)
    } else {
        (FRAC_PI_2, 3.0 * FRAC_PI_2)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Single-path ML estimate of `(tau, az, el)` for receiver `k` of `scenario`.
///
/// `snapshots` are differential snapshots of the same path; each carries its
/// own complex gain. Only OFDM snapshots resolve the delay.
pub fn ml_single_path(snapshots: &[DifferentialSnapshot], scenario: &Scenario, k: usize, grid: &GridSpec) -> Result<EstimationResult> {
    grid.validate()?;
    let wf = &scenario.waveform;
    if wf.mode != WaveformMode::Ofdm {
        return Err(Error::invalid("delay estimation needs an OFDM waveform"));
    }
    let rx = &scenario
        .receivers
        .get(k)
        .ok_or_else(|| Error::invalid(format!("receiver index {k} out of range")))?
        .array;
    if snapshots.is_empty() {
        return Err(Error::invalid("no snapshots"));
    }
    for s in snapshots {
        if s.samples.len() != rx.len() * wf.bins() {
            return Err(Error::DimensionMismatch { expected: rx.len() * wf.bins(), got: s.samples.len() });
        }
    }
    let obj = Objective {
        snaps: snapshots,
        offsets: rx.offsets(),
        rates: wf.delay_rates(),
        amps: vec![(1.0 / wf.n_subcarriers as f64).sqrt(); wf.n_subcarriers],
        wavelength: wf.wavelength(),
    };

    // Coarse delay by noncoherent energy over antennas.
    let tau_max = 2.0 * scenario.diameter() / SPEED_OF_LIGHT;
    let tau_grid = match grid.tau_points {
        Some(n) => linspace(0.0, tau_max, n),
        None => {
            let step = 1.0 / (4.0 * wf.bandwidth());
            let n = (tau_max / step).ceil() as usize + 1;
            linspace(0.0, step * (n - 1) as f64, n.max(2))
        }
    };
    let mut best_tau = (f64::NEG_INFINITY, 0.0);
    for &tau in &tau_grid {
        let e: f64 = snapshots
            .iter()
            .map(|s| obj.antenna_sums(&s.samples, tau)[0].iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum();
        if e > best_tau.0 {
            best_tau = (e, tau);
        }
    }
    let tau0 = best_tau.1;

    // Coarse angles at the coarse delay.
    let z: Vec<Vec<Complex64>> = snapshots.iter().map(|s| obj.antenna_sums(&s.samples, tau0)[0].clone()).collect();
    let nominal = scenario.design_path(k)?;
    let (az_lo, az_hi) = azimuth_window(nominal.rx_aoa_az);
    let az_grid = linspace(az_lo, az_hi, grid.az_points);
    let el_grid = linspace(-FRAC_PI_2, FRAC_PI_2, grid.el_points);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for &el in &el_grid {
        for &az in &az_grid {
            let a = steering_vector(rx, az, el, obj.wavelength)?;
            let v: f64 = z
                .iter()
                .map(|zi| a.iter().zip(zi).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm_sqr())
                .sum();
            if v > best.0 {
                best = (v, az, el);
            }
        }
    }
    let start = Vector3::new(tau0, best.1, best.2);

    let scale = Vector3::new(1.0 / wf.bandwidth(), 1.0, 1.0);
    let (theta, converged, iterations) = refine(&obj, start, grid, &scale, (az_lo, az_hi))?;
    let theta = if converged { theta } else { start };
    let fin = obj.eval(&theta)?;
    let n_r = rx.len() as f64;
    let energy: f64 = snapshots.iter().flat_map(|s| s.samples.iter()).map(|z| z.norm_sqr()).sum();
    Ok(EstimationResult {
        tau_hat: theta[0],
        az_hat: wrap_angle(theta[1]),
        el_hat: theta[2],
        gain_hat: fin.proj[0] / n_r,
        residual_energy: (energy - fin.value / n_r).max(0.0),
        converged,
        iterations,
    })
}

/// Damped Newton ascent with backtracking; the objective never decreases.
fn refine(
    obj: &Objective<'_>,
    start: Vector3<f64>,
    grid: &GridSpec,
    scale: &Vector3<f64>,
    az_range: (f64, f64),
) -> Result<(Vector3<f64>, bool, usize)> {
    let mut th = start;
    let mut cur = obj.eval(&th)?;
    let feasible = |t: &Vector3<f64>| t[2].abs() < FRAC_PI_2 && t[1] > az_range.0 - 0.5 && t[1] < az_range.1 + 0.5;
    for it in 1..=grid.refinement_iters {
        // Newton in scaled coordinates x = theta / scale.
        let d = Matrix3::from_diagonal(scale);
        let g = d * cur.grad;
        let h = d * cur.hess * d;
        let mut mu = 0.0;
        let mut accepted = None;
        for _ in 0..40 {
            let shifted = h - Matrix3::identity() * (mu * h.diagonal().abs().max());
            let step = match (-shifted).cholesky() {
                Some(ch) => ch.solve(&g),
                None => {
                    mu = if mu == 0.0 { 1e-6 } else { mu * 10.0 };
                    continue;
                }
            };
            let mut alpha = 1.0;
            while alpha > 1e-12 {
                let cand = th + d * step * alpha;
                if feasible(&cand) {
                    let v = obj.value(&cand)?;
                    if v >= cur.value {
                        accepted = Some((cand, d * step * alpha));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            break;
        }
        let Some((cand, delta)) = accepted else {
            // No ascent direction improves the objective at working precision.
            return Ok((th, true, it));
        };
        th = cand;
        cur = obj.eval(&th)?;
        let tol = grid.convergence_tol;
        let small = delta[0].abs() <= tol * th[0].abs().max(scale[0])
            && delta[1].abs() <= tol * th[1].abs().max(1.0)
            && delta[2].abs() <= tol * th[2].abs().max(1.0);
        if small {
            return Ok((th, true, it));
        }
    }
    Ok((th, false, grid.refinement_iters))
}

/// `b_R + c (tau_hat - tau_tr) [cos az cos el, sin az cos el, sin el]`.
pub fn position_from_measurements(tau_hat: f64, az_hat: f64, el_hat: f64, rx: &Vec3, tau_tr: f64) -> Result<Vec3> {
    if !(tau_hat > tau_tr) {
        return Err(Error::invalid(format!("delay {tau_hat} s does not exceed the Tx-RIS delay {tau_tr} s")));
    }
    Ok(rx + direction(az_hat, el_hat) * (SPEED_OF_LIGHT * (tau_hat - tau_tr)))
}

/// Noisy differential snapshots of receiver `k`, one per adjacent instant pair.
pub fn noisy_snapshots(scenario: &Scenario, k: usize, seed: u64, trial: u64) -> Result<Vec<DifferentialSnapshot>> {
    let p = scenario.profiles(k)?;
    p.windows(2)
        .enumerate()
        .map(|(i, w)| differential_signal(scenario, k, &w[0], &w[1], Some(&mut rng_stream(seed, trial, k as u64, i as u64))))
        .collect()
}

/// Signal-level RIS position estimate fused over all receivers.
///
/// Each receiver's `(tau, az, el)` estimate is mapped to a position with the
/// true Tx-RIS delay; the per-receiver positions are combined with weights
/// given by their nominal EFIMs.
pub fn estimate_ris_position(scenario: &Scenario, seed: u64, trial: u64) -> Result<Vec3> {
    let grid = GridSpec::default();
    let mut info = Matrix3::zeros();
    let mut acc = Vec3::zeros();
    for k in 0..scenario.receivers.len() {
        let snaps = noisy_snapshots(scenario, k, seed, trial)?;
        let est = ml_single_path(&snaps, scenario, k, &grid)?;
        let tau_tr = scenario.path(k)?.tau_tr;
        let r_k = position_from_measurements(est.tau_hat, est.az_hat, est.el_hat, &scenario.receivers[k].position, tau_tr)?;
        let mut nominal = scenario.clone();
        nominal.ris.pose = nominal.ris.design_pose;
        let f = efim_time(&nominal, k, scenario.instants)?.matrix;
        info += f;
        acc += f * r_k;
    }
    Ok(sym_inverse3(&info)? * acc)
}

/// One row of an RMSE sweep. Angles in radians, delays in seconds; the CRLB
/// columns are standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub snr_db: f64,
    pub rmse_tau: f64,
    pub rmse_az: f64,
    pub rmse_el: f64,
    pub crlb_tau: f64,
    pub crlb_az: f64,
    pub crlb_el: f64,
    pub bias_tau: f64,
    pub bias_az: f64,
    pub bias_el: f64,
    /// 95% interval of each mean squared error, `(lo, hi)`.
    pub mse_ci_tau: (f64, f64),
    pub mse_ci_az: (f64, f64),
    pub mse_ci_el: (f64, f64),
    pub converged_fraction: f64,
    pub trials: usize,
}

/// Square roots of the diagonal of the inverse delay / receive-angle block of
/// the closed-form channel FIM over all instant pairs.
pub fn crlb_receive_parameters(scenario: &Scenario, k: usize) -> Result<Vector3<f64>> {
    let deltas = scenario.pair_deltas(k)?;
    let mut f = Matrix3::zeros();
    for d in &deltas {
        f += fim_channel_closed_form(scenario, k, d)?.block_a();
    }
    Ok(sym_inverse3(&f)?.diagonal().map(f64::sqrt))
}

fn mse_interval(mse: f64, n: usize) -> Result<(f64, f64)> {
    let chi = ChiSquared::new(n as f64).map_err(|e| Error::invalid(e.to_string()))?;
    let nf = n as f64;
    Ok((mse * nf / chi.inverse_cdf(0.975), mse * nf / chi.inverse_cdf(0.025)))
}

/// RMSE of receiver 0's estimates versus per-antenna SNR, with the CRLB.
///
/// Trial `t` uses the same noise streams at every SNR.
pub fn rmse_sweep(scenario: &Scenario, snr_db: &[f64], trials: usize, seed: u64, grid: &GridSpec) -> Result<Vec<RmseRow>> {
    if trials < 2 {
        return Err(Error::invalid("need at least two trials"));
    }
    let mut rows = Vec::with_capacity(snr_db.len());
    for &snr in snr_db {
        let mut s = scenario.clone();
        s.snr = SnrSpec::PerAntennaDb(snr);
        let truth = s.path(0)?;
        let crlb = crlb_receive_parameters(&s, 0)?;
        let results: Vec<EstimationResult> = (0..trials)
            .into_par_iter()
            .map(|t| ml_single_path(&noisy_snapshots(&s, 0, seed, t as u64)?, &s, 0, grid))
            .collect::<Result<_>>()?;
        let n = trials as f64;
        let errs: Vec<[f64; 3]> = results
            .iter()
            .map(|r| [r.tau_hat - truth.tau_r, wrap_angle(r.az_hat - truth.rx_aoa_az), r.el_hat - truth.rx_aoa_el])
            .collect();
        let mse = |i: usize| errs.iter().map(|e| e[i] * e[i]).sum::<f64>() / n;
        let bias = |i: usize| errs.iter().map(|e| e[i]).sum::<f64>() / n;
        rows.push(RmseRow {
            snr_db: snr,
            rmse_tau: mse(0).sqrt(),
            rmse_az: mse(1).sqrt(),
            rmse_el: mse(2).sqrt(),
            crlb_tau: crlb[0],
            crlb_az: crlb[1],
            crlb_el: crlb[2],
            bias_tau: bias(0),
            bias_az: bias(1),
            bias_el: bias(2),
            mse_ci_tau: mse_interval(mse(0), trials)?,
            mse_ci_az: mse_interval(mse(1), trials)?,
            mse_ci_el: mse_interval(mse(2), trials)?,
            converged_fraction: results.iter().filter(|r| r.converged).count() as f64 / n,
            trials,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Waveform;
    use crate::geometry::{solve_path_geometry, ArrayLayout, Pose, UpaGeometry};
    use crate::scenario::{ReceiverNode, Ris, Transmitter};
    use approx::assert_relative_eq;

    fn scenario(snr: f64) -> Scenario {
        let wf = Waveform::ofdm(28e9, 64, 120e3 * 4.0);
        let l = wf.wavelength();
        let rx = UpaGeometry::half_wavelength(4, 4, l, ArrayLayout::Centered).unwrap();
        let ris = UpaGeometry::half_wavelength(8, 8, l, ArrayLayout::Corner).unwrap();
        let tx = UpaGeometry::half_wavelength(2, 2, l, ArrayLayout::Corner).unwrap();
        let mut s = Scenario::new(
            Transmitter { position: Vec3::new(20.0, 0.0, 0.0), array: tx },
            Ris::new(Pose::at(Vec3::new(15.0, 12.0, 12.0)), ris),
            vec![ReceiverNode::anchor(Vec3::zeros(), rx)],
            wf,
            SnrSpec::PerAntennaDb(snr),
        );
        s.gain_phase = 0.4;
        s
    }

    fn coarse_grid() -> GridSpec {
        GridSpec { az_points: 61, el_points: 31, ..Default::default() }
    }

    #[test]
    fn noiseless_recovers_truth() {
        let s = scenario(20.0);
        let (m, p) = s.optimal_pair(0).unwrap();
        let y = differential_signal::<rand_chacha::ChaCha8Rng>(&s, 0, &m, &p, None).unwrap();
        let r = ml_single_path(&[y], &s, 0, &coarse_grid()).unwrap();
        let t = s.path(0).unwrap();
        assert!(r.converged);
        assert!((r.tau_hat - t.tau_r).abs() < 1e-15, "{} vs {}", r.tau_hat, t.tau_r);
        assert!((r.az_hat - t.rx_aoa_az).abs() < 1e-9);
        assert!((r.el_hat - t.rx_aoa_el).abs() < 1e-9);
        assert!(r.residual_energy < 1e-9 * s.snr_for_delta(0, &s.pair_deltas(0).unwrap()[0]).unwrap());
    }

    #[test]
    fn objective_derivatives_match_finite_differences() {
        let s = scenario(10.0);
        let snaps = noisy_snapshots(&s, 0, 5, 0).unwrap();
        let rx = &s.receivers[0].array;
        let wf = &s.waveform;
        let obj = Objective {
            snaps: &snaps,
            offsets: rx.offsets(),
            rates: wf.delay_rates(),
            amps: vec![(1.0 / wf.n_subcarriers as f64).sqrt(); wf.n_subcarriers],
            wavelength: wf.wavelength(),
        };
        let t = s.path(0).unwrap();
        let th = Vector3::new(t.tau_r + 1e-9, t.rx_aoa_az + 0.01, t.rx_aoa_el - 0.02);
        let e = obj.eval(&th).unwrap();
        assert_relative_eq!(e.value, obj.value(&th).unwrap(), max_relative = 1e-12);
        let h = [1e-12, 1e-6, 1e-6];
        for a in 0..3 {
            let mut p = th;
            let mut m = th;
            p[a] += h[a];
            m[a] -= h[a];
            let fd = (obj.value(&p).unwrap() - obj.value(&m).unwrap()) / (2.0 * h[a]);
            let scale = (e.hess[(a, a)].abs() * e.value).sqrt();
            assert!((fd - e.grad[a]).abs() < 1e-4 * scale, "grad {a}: {fd} vs {}", e.grad[a]);
            let (ep, em) = (obj.eval(&p).unwrap(), obj.eval(&m).unwrap());
            for b in 0..3 {
                let fd2 = (ep.grad[b] - em.grad[b]) / (2.0 * h[a]);
                let scale = (e.hess[(a, a)] * e.hess[(b, b)]).abs().sqrt();
                assert!((fd2 - e.hess[(a, b)]).abs() < 1e-4 * scale, "hess ({a},{b}): {fd2} vs {}", e.hess[(a, b)]);
            }
        }
    }

    #[test]
    fn refinement_never_decreases_objective() {
        let s = scenario(0.0);
        let snaps = noisy_snapshots(&s, 0, 11, 3).unwrap();
        let rx = &s.receivers[0].array;
        let wf = &s.waveform;
        let obj = Objective {
            snaps: &snaps,
            offsets: rx.offsets(),
            rates: wf.delay_rates(),
            amps: vec![(1.0 / wf.n_subcarriers as f64).sqrt(); wf.n_subcarriers],
            wavelength: wf.wavelength(),
        };
        let t = s.path(0).unwrap();
        let start = Vector3::new(t.tau_r + 2e-9, t.rx_aoa_az + 0.03, t.rx_aoa_el + 0.02);
        let v0 = obj.value(&start).unwrap();
        let mut prev = v0;
        for iters in 1..6 {
            let g = GridSpec { refinement_iters: iters, ..Default::default() };
            let (th, _, _) = refine(&obj, start, &g, &Vector3::new(1.0 / wf.bandwidth(), 1.0, 1.0), (-FRAC_PI_2, FRAC_PI_2)).unwrap();
            let v = obj.value(&th).unwrap();
            assert!(v >= prev * (1.0 - 1e-12));
            prev = v;
        }
        assert!(prev > v0);
    }

    #[test]
    fn carrier_mode_rejected() {
        let mut s = scenario(10.0);
        s.waveform = Waveform::carrier(28e9);
        let (m, p) = s.optimal_pair(0).unwrap();
        let y = differential_signal::<rand_chacha::ChaCha8Rng>(&s, 0, &m, &p, None).unwrap();
        assert!(ml_single_path(&[y], &s, 0, &GridSpec::default()).is_err());
    }

    #[test]
    fn position_inverse_of_geometry() {
        let rx = Vec3::new(1.0, -2.0, 0.5);
        let tx = Vec3::new(20.0, 0.0, 0.0);
        let r = Vec3::new(15.0, 12.0, 12.0);
        let p = solve_path_geometry(&tx, &rx, &Pose::at(r), SPEED_OF_LIGHT).unwrap();
        let got = position_from_measurements(p.tau_r, p.rx_aoa_az, p.rx_aoa_el, &rx, p.tau_tr).unwrap();
        assert!((got - r).norm() < 1e-9);
        let dt = 1e-10;
        let moved = position_from_measurements(p.tau_r + dt, p.rx_aoa_az, p.rx_aoa_el, &rx, p.tau_tr).unwrap();
        let u = direction(p.rx_aoa_az, p.rx_aoa_el);
        assert!((moved - got - u * SPEED_OF_LIGHT * dt).norm() < 1e-9);
        assert!(position_from_measurements(p.tau_tr, 0.0, 0.0, &rx, p.tau_tr).is_err());
    }

    #[test]
    fn azimuth_window_half_spaces() {
        assert_eq!(azimuth_window(0.3), (-FRAC_PI_2, FRAC_PI_2));
        assert_eq!(azimuth_window(3.0), (FRAC_PI_2, 3.0 * FRAC_PI_2));
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec { az_points: 1, ..Default::default() }.validate().is_err());
        assert!(GridSpec { tau_points: Some(1), ..Default::default() }.validate().is_err());
        assert!(GridSpec { convergence_tol: 0.0, ..Default::default() }.validate().is_err());
    }
}
