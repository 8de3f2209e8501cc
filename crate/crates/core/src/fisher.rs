//! Channel-parameter Fisher information, the position information ellipsoid
//! and the position error bound.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, WaveformMode, N_PARAMS};
use crate::error::{Error, Result};
use crate::geometry::{position_jacobian, steering_vector, PathGeometry, UpaGeometry, Vec3};
use crate::linalg::{sym_inverse3, trace_inverse3};
use crate::scenario::Scenario;

/// Indices into the channel parameter vector.
pub mod idx {
    pub const TAU: usize = 0;
    pub const RX_AZ: usize = 1;
    pub const RX_EL: usize = 2;
    pub const RIS_AOD_AZ: usize = 3;
    pub const RIS_AOD_EL: usize = 4;
    pub const RIS_AOA_AZ: usize = 5;
    pub const RIS_AOA_EL: usize = 6;
    pub const TX_AZ: usize = 7;
    pub const TX_EL: usize = 8;
    pub const GAIN_RE: usize = 9;
    pub const GAIN_IM: usize = 10;
}

/// 11 x 11 Fisher information of the channel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFim {
    pub matrix: DMatrix<f64>,
}

impl ChannelFim {
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.matrix[(u, v)]
    }

    /// The delay / receive-angle block.
    pub fn block_a(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.matrix[(i, j)])
    }
}

/// 3 x 3 Fisher information of the RIS position (per m^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionFim {
    pub matrix: Matrix3<f64>,
}

impl PositionFim {
    pub fn zeros() -> Self {
        Self { matrix: Matrix3::zeros() }
    }

    pub fn crlb(&self) -> Result<f64> {
        trace_inverse3(&self.matrix)
    }

    pub fn inverse(&self) -> Result<Matrix3<f64>> {
        sym_inverse3(&self.matrix)
    }
}

impl std::ops::Add for PositionFim {
    type Output = PositionFim;
    fn add(self, rhs: Self) -> Self {
        PositionFim { matrix: self.matrix + rhs.matrix }
    }
}

impl std::ops::Mul<f64> for PositionFim {
    type Output = PositionFim;
    fn mul(self, s: f64) -> Self {
        PositionFim { matrix: self.matrix * s }
    }
}

/// Position EFIM written as three orthogonal directions and their intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoEllipsoid {
    pub u_tau: Vec3,
    pub u_az: Vec3,
    pub u_el: Vec3,
    /// Range information intensity.
    pub rii: f64,
    pub lambda_az: f64,
    pub lambda_el: f64,
    pub chi_azel: f64,
    pub chi_elaz: f64,
    /// `lambda_az - chi_azel`.
    pub aii_az: f64,
    /// `lambda_el - chi_elaz`.
    pub aii_el: f64,
}

impl InfoEllipsoid {
    pub fn directions(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.u_tau, self.u_az, self.u_el])
    }

    pub fn intensities(&self) -> Vec3 {
        Vec3::new(self.rii, self.aii_az, self.aii_el)
    }

    /// `U diag(rii, aii_az, aii_el) U^T`.
    pub fn matrix(&self) -> Matrix3<f64> {
        let u = self.directions();
        u * Matrix3::from_diagonal(&self.intensities()) * u.transpose()
    }

    pub fn fim(&self) -> PositionFim {
        PositionFim { matrix: self.matrix() }
    }

    fn check(&self) -> Result<()> {
        for (v, name) in [(self.rii, "range"), (self.aii_az, "azimuth"), (self.aii_el, "elevation")] {
            if !(v > 0.0) {
                return Err(Error::SingularMatrix { direction: name.to_string() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peb {
    pub value: f64,
}

/// Finite-difference steps for the numerical FIM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSteps {
    pub tau: f64,
    pub angle: f64,
    pub gain: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self { tau: 1e-12, angle: 1e-7, gain: 1e-6 }
    }
}

impl FdSteps {
    pub fn halved(&self) -> Self {
        Self { tau: self.tau / 2.0, angle: self.angle / 2.0, gain: self.gain / 2.0 }
    }

    fn step(&self, param: usize) -> f64 {
        match param {
            idx::TAU => self.tau,
            idx::GAIN_RE | idx::GAIN_IM => self.gain,
            _ => self.angle,
        }
    }
}

/// Derivatives of the wave vector with respect to azimuth and elevation.
pub fn wave_vector_derivatives(az: f64, el: f64, wavelength: f64) -> (Vec3, Vec3) {
    let s = 2.0 * PI / wavelength;
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    (
        Vec3::new(-sa * ce, ca * ce, 0.0) * s,
        Vec3::new(-ca * se, -sa * se, ce) * s,
    )
}

/// Exact receive-angle information `(F_azaz, F_elel, F_azel)` of a planar
/// array in the y-z plane, from the second moments of its element offsets.
pub fn angle_fim_from_moments(array: &UpaGeometry, az: f64, el: f64, wavelength: f64, snr: f64) -> (f64, f64, f64) {
    let m = array.moments();
    let s2 = (2.0 * PI / wavelength).powi(2);
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    let f_aa = 2.0 * snr * s2 * ca * ca * ce * ce * m.syy;
    let f_ee = 2.0 * snr * s2 * (sa * sa * se * se * m.syy - 2.0 * sa * se * ce * m.syz + ce * ce * m.szz);
    let f_ae = 2.0 * snr * s2 * ca * ce * (-sa * se * m.syy + ce * m.syz);
    (f_aa, f_ee, f_ae)
}

/// `F_azaz F_elel - F_azel^2`, evaluated without cancellation.
pub fn angle_fim_determinant(array: &UpaGeometry, az: f64, el: f64, wavelength: f64, snr: f64) -> f64 {
    let s2 = (2.0 * PI / wavelength).powi(2);
    let (ca, ce) = (az.cos(), el.cos());
    (2.0 * snr).powi(2) * s2 * s2 * ca * ca * ce.powi(4) * array.moment_determinant()
}

/// Effective-aperture approximation of the receive-angle information.
///
/// Intended for trend inspection only; the exact moment sums are the
/// reference values everywhere else.
pub fn angle_fim_aperture_approx(array: &UpaGeometry, az: f64, el: f64, wavelength: f64, snr: f64) -> (f64, f64, f64) {
    let n_r = array.len() as f64;
    let d = array.spacing;
    let (n_az, n_el) = (array.n_az as f64, array.n_el as f64);
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    let g_aa = (n_az * d * ca * ce).powi(2);
    let g_ee = (n_az * d * sa * se).powi(2) + (n_el * d * ce).powi(2) - 1.5 * n_r * d * d * sa * se * ce;
    let g_ae = 0.75 * n_r * d * d * ca * ce * ce - ca * ce * sa * se * (n_az * d).powi(2);
    let k = 8.0 * PI * PI / (3.0 * wavelength * wavelength) * n_r * snr;
    (k * g_aa, k * g_ee, k * g_ae)
}

/// Delay information `F_tau_tau`.
///
/// Carrier mode: `8 pi^2 f^2 N_R SNR`. OFDM: `(2 pi^2 / 3) B^2 N_R SNR`, the
/// large-`N_c` form; the exact subcarrier sum is smaller by `(N_c^2 - 1) / N_c^2`.
pub fn delay_fim(scenario: &Scenario, n_rx: usize, snr: f64) -> f64 {
    let w = &scenario.waveform;
    match w.mode {
        WaveformMode::CarrierPhase => 8.0 * PI * PI * w.carrier_hz.powi(2) * n_rx as f64 * snr,
        WaveformMode::Ofdm => 2.0 * PI * PI / 3.0 * w.bandwidth().powi(2) * n_rx as f64 * snr,
    }
}

/// Gradients of the cascade scalar `c = g b t sqrt(P_T)` with respect to the
/// RIS angles, the transmit angles and the gain (parameters 3 through 10).
fn cascade_gradients(scenario: &Scenario, k: usize, p: &ChannelParams, delta: &[Complex64]) -> Result<[Complex64; 8]> {
    let l = scenario.wavelength();
    let ris = &scenario.ris.array;
    let tx = &scenario.tx.array;
    let f = scenario.beamformer(k)?;
    let a_out = steering_vector(ris, p.ris_aod_az, p.ris_aod_el, l)?;
    let a_in = steering_vector(ris, p.ris_aoa_az, p.ris_aoa_el, l)?;
    let a_tx = steering_vector(tx, p.tx_aod_az, p.tx_aod_el, l)?;
    let (ko_az, ko_el) = wave_vector_derivatives(p.ris_aod_az, p.ris_aod_el, l);
    let (ki_az, ki_el) = wave_vector_derivatives(p.ris_aoa_az, p.ris_aoa_el, l);
    let (kt_az, kt_el) = wave_vector_derivatives(p.tx_aod_az, p.tx_aod_el, l);
    let j = Complex64::i();
    let mut b = Complex64::new(0.0, 0.0);
    let mut db = [Complex64::new(0.0, 0.0); 4];
    for (m, pm) in ris.offsets().iter().enumerate() {
        let term = a_out[m].conj() * delta[m] * a_in[m];
        b += term;
        db[0] += j * pm.dot(&ko_az) * term;
        db[1] += j * pm.dot(&ko_el) * term;
        db[2] -= j * pm.dot(&ki_az) * term;
        db[3] -= j * pm.dot(&ki_el) * term;
    }
    let mut t = Complex64::new(0.0, 0.0);
    let mut dt = [Complex64::new(0.0, 0.0); 2];
    for (n, pn) in tx.offsets().iter().enumerate() {
        let term = a_tx[n].conj() * f[n];
        t += term;
        dt[0] += j * pn.dot(&kt_az) * term;
        dt[1] += j * pn.dot(&kt_el) * term;
    }
    let g = p.gain();
    let root_p = scenario.waveform.tx_power.sqrt();
    Ok([
        g * db[0] * t * root_p,
        g * db[1] * t * root_p,
        g * db[2] * t * root_p,
        g * db[3] * t * root_p,
        g * b * dt[0] * root_p,
        g * b * dt[1] * root_p,
        b * t * root_p,
        j * b * t * root_p,
    ])
}

/// Closed-form channel FIM of receiver `k` for the differential profile `delta`.
///
/// The delay / receive-angle block uses the exact array moment sums; the
/// cross terms between that block and the rest are zero by the block-diagonal
/// approximation. The remaining block is built from analytic derivatives of
/// the cascade scalar.
pub fn fim_channel_closed_form(scenario: &Scenario, k: usize, delta: &[Complex64]) -> Result<ChannelFim> {
    let p = scenario.params(k)?;
    let rx = &scenario.receivers[k].array;
    let n_r = rx.len();
    let snr = scenario.snr_for_delta(k, delta)?;
    let l = scenario.wavelength();
    let mut f = DMatrix::zeros(N_PARAMS, N_PARAMS);
    f[(idx::TAU, idx::TAU)] = delay_fim(scenario, n_r, snr);
    let (f_aa, f_ee, f_ae) = angle_fim_from_moments(rx, p.rx_aoa_az, p.rx_aoa_el, l, snr);
    f[(idx::RX_AZ, idx::RX_AZ)] = f_aa;
    f[(idx::RX_EL, idx::RX_EL)] = f_ee;
    f[(idx::RX_AZ, idx::RX_EL)] = f_ae;
    f[(idx::RX_EL, idx::RX_AZ)] = f_ae;
    let grads = cascade_gradients(scenario, k, &p, delta)?;
    let scale = 2.0 * n_r as f64 / scenario.noise_var;
    for u in 0..8 {
        for v in 0..8 {
            f[(3 + u, 3 + v)] = scale * (grads[u] * grads[v].conj()).re;
        }
    }
    Ok(ChannelFim { matrix: f })
}

/// Finite-difference FIM `(2 / sigma^2) Re{D^H D}` of the noiseless
/// differential signal, with five-point central differences.
pub fn fim_channel_numeric(scenario: &Scenario, k: usize, delta: &[Complex64], steps: FdSteps) -> Result<ChannelFim> {
    if !(steps.tau > 0.0 && steps.angle > 0.0 && steps.gain > 0.0) {
        return Err(Error::invalid("finite-difference steps must be > 0"));
    }
    let p0 = scenario.params(k)?.to_array();
    let f = scenario.beamformer(k)?;
    let model = scenario.signal_model(k, delta, &f)?;
    let mut jac: Vec<Vec<Complex64>> = Vec::with_capacity(N_PARAMS);
    for u in 0..N_PARAMS {
        let h = steps.step(u);
        if p0[u] + h == p0[u] || p0[u] - h == p0[u] {
            return Err(Error::StepUnderflow(crate::channel::PARAM_NAMES[u]));
        }
        let eval = |offset: f64| -> Result<Vec<Complex64>> {
            let mut q = p0;
            q[u] += offset;
            model.signal(&ChannelParams::from_array(&q))
        };
        let (p1, m1, p2, m2) = (eval(h)?, eval(-h)?, eval(2.0 * h)?, eval(-2.0 * h)?);
        jac.push(
            (0..p1.len())
                .map(|i| (8.0 * (p1[i] - m1[i]) - (p2[i] - m2[i])) / (12.0 * h))
                .collect(),
        );
    }
    let mut out = DMatrix::zeros(N_PARAMS, N_PARAMS);
    for u in 0..N_PARAMS {
        for v in u..N_PARAMS {
            let s: f64 = jac[u].iter().zip(&jac[v]).map(|(a, b)| (a.conj() * b).re).sum();
            let val = 2.0 * s / scenario.noise_var;
            out[(u, v)] = val;
            out[(v, u)] = val;
        }
    }
    Ok(ChannelFim { matrix: out })
}

/// Information ellipsoid from the delay / receive-angle block, without
/// checking for singular directions.
pub fn ellipsoid_from_block(path: &PathGeometry, f_a: &Matrix3<f64>, det_angles: f64) -> Result<InfoEllipsoid> {
    let j = position_jacobian(path)?;
    let u = path.rx_directions();
    let rho = path.delay_range();
    let ce = path.rx_aoa_el.cos();
    let rii = f_a[(0, 0)] / path.speed.powi(2);
    let lambda_az = f_a[(1, 1)] / (rho * ce).powi(2);
    let lambda_el = f_a[(2, 2)] / rho.powi(2);
    let cross = f_a[(1, 2)] / (rho * rho * ce);
    let det = det_angles / (rho.powi(4) * ce * ce);
    let (chi_azel, aii_az) = if lambda_el > 0.0 { (cross * cross / lambda_el, det / lambda_el) } else { (0.0, lambda_az) };
    let (chi_elaz, aii_el) = if lambda_az > 0.0 { (cross * cross / lambda_az, det / lambda_az) } else { (0.0, lambda_el) };
    debug_assert!((j.column(0) * path.speed - u.column(0)).norm() < 1e-9);
    Ok(InfoEllipsoid {
        u_tau: u.column(0).into_owned(),
        u_az: u.column(1).into_owned(),
        u_el: u.column(2).into_owned(),
        rii,
        lambda_az,
        lambda_el,
        chi_azel,
        chi_elaz,
        aii_az,
        aii_el,
    })
}

/// Ellipsoid of receiver `k` for one differential profile, unchecked.
pub fn ellipsoid_for_delta(scenario: &Scenario, k: usize, delta: &[Complex64]) -> Result<InfoEllipsoid> {
    let path = scenario.path(k)?;
    let rx = &scenario.receivers[k].array;
    let snr = scenario.snr_for_delta(k, delta)?;
    let l = scenario.wavelength();
    let (f_aa, f_ee, f_ae) = angle_fim_from_moments(rx, path.rx_aoa_az, path.rx_aoa_el, l, snr);
    let f_a = Matrix3::new(
        delay_fim(scenario, rx.len(), snr), 0.0, 0.0, //
        0.0, f_aa, f_ae, //
        0.0, f_ae, f_ee,
    );
    let det = angle_fim_determinant(rx, path.rx_aoa_az, path.rx_aoa_el, l, snr);
    ellipsoid_from_block(&path, &f_a, det)
}

fn first_delta(scenario: &Scenario, k: usize) -> Result<Vec<Complex64>> {
    scenario
        .pair_deltas(k)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::invalid("scenario has no instant pair"))
}

/// Position FIM `J_A F_A J_A^T` for the first instant pair of receiver `k`.
pub fn position_fim(scenario: &Scenario, k: usize) -> Result<PositionFim> {
    let delta = first_delta(scenario, k)?;
    let path = scenario.path(k)?;
    let fim = fim_channel_closed_form(scenario, k, &delta)?;
    let j = position_jacobian(&path)?;
    let m = j * fim.block_a() * j.transpose();
    ellipsoid_for_delta(scenario, k, &delta)?.check()?;
    Ok(PositionFim { matrix: (m + m.transpose()) * 0.5 })
}

/// Position EFIM in ellipsoid form for the first instant pair of receiver `k`.
pub fn efim_position(scenario: &Scenario, k: usize) -> Result<InfoEllipsoid> {
    let e = ellipsoid_for_delta(scenario, k, &first_delta(scenario, k)?)?;
    e.check()?;
    Ok(e)
}

/// Position error bound `sqrt(tr(F^-1))`.
pub fn peb(fim: &PositionFim) -> Result<Peb> {
    Ok(Peb { value: fim.crlb()?.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Waveform;
    use crate::geometry::{ArrayLayout, Orientation, Pose, SPEED_OF_LIGHT};
    use crate::scenario::{ReceiverNode, Ris, SnrSpec, Transmitter};
    use approx::assert_relative_eq;

    fn scenario(wf: Waveform, n_rx: usize, n_ris: usize, snr: SnrSpec) -> Scenario {
        let l = wf.wavelength();
        let a = |n| UpaGeometry::half_wavelength(n, n, l, ArrayLayout::Corner).unwrap();
        Scenario::new(
            Transmitter { position: Vec3::zeros(), array: a(4) },
            Ris::new(Pose::new(Vec3::new(-20.0, 5.0, 10.0), Orientation::default()), a(n_ris)),
            vec![ReceiverNode::anchor(Vec3::new(0.0, 12.0, 0.0), a(n_rx))],
            wf,
            snr,
        )
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn zero_gain_gives_zero_fim() {
        let s = scenario(Waveform::carrier(28e9), 4, 4, SnrSpec::Gain { re: 0.0, im: 0.0 });
        let d = first_delta(&s, 0).unwrap();
        // The signal is linear in g, so only the gain block survives at g = 0.
        let f = fim_channel_closed_form(&s, 0, &d).unwrap();
        let n = fim_channel_numeric(&s, 0, &d, FdSteps::default()).unwrap();
        for m in [&f.matrix, &n.matrix] {
            for u in 0..N_PARAMS {
                for v in 0..N_PARAMS {
                    if u < idx::GAIN_RE || v < idx::GAIN_RE {
                        assert_eq!(m[(u, v)], 0.0, "({u},{v})");
                    }
                }
            }
        }
        // (2 N_R / sigma^2) |b t|^2 P_T on the gain diagonal, with |b| = 2M and |t| = N_T.
        let expected = 2.0 * 16.0 * (2.0 * 16.0f64).powi(2) * 256.0;
        assert_relative_eq!(f.get(idx::GAIN_RE, idx::GAIN_RE), expected, max_relative = 1e-9);
        assert_relative_eq!(n.get(idx::GAIN_IM, idx::GAIN_IM), expected, max_relative = 1e-9);
        assert!(f.get(idx::GAIN_RE, idx::GAIN_IM).abs() < 1e-9 * expected);
        assert!(matches!(position_fim(&s, 0), Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn carrier_delay_information() {
        let s = scenario(Waveform::carrier(28e9), 4, 8, SnrSpec::PerAntennaDb(20.0));
        let d = first_delta(&s, 0).unwrap();
        let f = fim_channel_closed_form(&s, 0, &d).unwrap();
        let expected = 8.0 * PI * PI * 28e9f64.powi(2) * 16.0 * 100.0;
        assert_relative_eq!(f.get(0, 0), expected, max_relative = 1e-10);
        let n = fim_channel_numeric(&s, 0, &d, FdSteps::default()).unwrap();
        assert!(rel(n.get(0, 0), expected) < 1e-3);
    }

    #[test]
    fn closed_form_matches_numeric_on_receive_block() {
        let s = scenario(Waveform::ofdm(28e9, 128, 120e3), 4, 16, SnrSpec::PerAntennaDb(20.0));
        let d = first_delta(&s, 0).unwrap();
        let c = fim_channel_closed_form(&s, 0, &d).unwrap();
        let n = fim_channel_numeric(&s, 0, &d, FdSteps::default()).unwrap();
        for u in 0..3 {
            assert!(rel(c.get(u, u), n.get(u, u)) < 1e-3, "{u}: {} vs {}", c.get(u, u), n.get(u, u));
        }
        let norm = (c.get(1, 1) * c.get(2, 2)).sqrt();
        assert!((c.get(1, 2) - n.get(1, 2)).abs() / norm < 1e-3);
    }

    #[test]
    fn cascade_block_matches_numeric() {
        let mut s = scenario(Waveform::carrier(28e9), 4, 8, SnrSpec::PerAntennaDb(10.0));
        s.gain_phase = 0.7;
        let d = first_delta(&s, 0).unwrap();
        let c = fim_channel_closed_form(&s, 0, &d).unwrap();
        let n = fim_channel_numeric(&s, 0, &d, FdSteps::default()).unwrap();
        let diag_scale = |u: usize, v: usize| (n.get(u, u) * n.get(v, v)).sqrt().max(1e-300);
        for u in 3..N_PARAMS {
            for v in 3..N_PARAMS {
                assert!((c.get(u, v) - n.get(u, v)).abs() / diag_scale(u, v) < 1e-6, "({u},{v})");
            }
        }
    }

    #[test]
    fn numeric_fim_converges_under_halving() {
        let s = scenario(Waveform::ofdm(28e9, 64, 120e3), 4, 8, SnrSpec::PerAntennaDb(20.0));
        let d = first_delta(&s, 0).unwrap();
        let a = fim_channel_numeric(&s, 0, &d, FdSteps::default()).unwrap();
        let b = fim_channel_numeric(&s, 0, &d, FdSteps::default().halved()).unwrap();
        for u in 0..N_PARAMS {
            assert!(rel(b.get(u, u), a.get(u, u)) < 1e-4, "param {u}");
        }
    }

    #[test]
    fn numeric_fim_is_symmetric_psd() {
        let s = scenario(Waveform::ofdm(28e9, 16, 120e3), 2, 4, SnrSpec::PerAntennaDb(0.0));
        let d = first_delta(&s, 0).unwrap();
        let n = fim_channel_numeric(&s, 0, &d, FdSteps::default()).unwrap();
        assert!(crate::linalg::is_psd(&n.matrix, 1e-9));
    }

    #[test]
    fn step_underflow_detected() {
        let s = scenario(Waveform::carrier(28e9), 2, 2, SnrSpec::PerAntennaDb(0.0));
        let d = first_delta(&s, 0).unwrap();
        let r = fim_channel_numeric(&s, 0, &d, FdSteps { tau: 1e-40, angle: 1e-7, gain: 1e-6 });
        assert!(matches!(r, Err(Error::StepUnderflow("tau_r"))));
    }

    #[test]
    fn ellipsoid_reconstructs_position_fim_trace() {
        let s = scenario(Waveform::ofdm(28e9, 100, 120e3), 4, 16, SnrSpec::PerAntennaDb(20.0));
        let f = position_fim(&s, 0).unwrap();
        let e = efim_position(&s, 0).unwrap();
        let u = e.directions();
        assert_relative_eq!(u.transpose() * u, Matrix3::identity(), epsilon = 1e-12);
        let a = f.crlb().unwrap();
        let b = e.fim().crlb().unwrap();
        assert!(rel(b, a) < 1e-9);
        assert!(e.aii_az >= 0.0 && e.aii_el >= 0.0 && e.rii > 0.0);
    }

    #[test]
    fn intensities_follow_definitions() {
        let s = scenario(Waveform::ofdm(28e9, 100, 120e3), 4, 16, SnrSpec::PerAntennaDb(20.0));
        let e = efim_position(&s, 0).unwrap();
        let d = first_delta(&s, 0).unwrap();
        let f = fim_channel_closed_form(&s, 0, &d).unwrap();
        let p = s.path(0).unwrap();
        let rho = SPEED_OF_LIGHT * (p.tau_r - p.tau_tr);
        let ce = p.rx_aoa_el.cos();
        assert_relative_eq!(e.rii, f.get(0, 0) / SPEED_OF_LIGHT.powi(2), max_relative = 1e-12);
        assert_relative_eq!(e.lambda_az, f.get(1, 1) / (rho * rho * ce * ce), max_relative = 1e-12);
        assert_relative_eq!(e.lambda_el, f.get(2, 2) / (rho * rho), max_relative = 1e-12);
        let chi = f.get(1, 2).powi(2) / (rho.powi(4) * ce * ce) / e.lambda_el;
        assert_relative_eq!(e.chi_azel, chi, max_relative = 1e-9);
        assert_relative_eq!(e.aii_az, e.lambda_az - e.chi_azel, max_relative = 1e-6);
        assert_relative_eq!(e.aii_el, e.lambda_el - e.chi_elaz, max_relative = 1e-6);
    }

    #[test]
    fn lagrange_determinant_matches_closed_corner_factor() {
        // Corner layout: Syy Szz - Syz^2 = d^4 N_az^2 N_el^2 (N_az - 1)(N_el - 1)(7 N_R + N_az + N_el - 5) / 144.
        for (na, ne) in [(2usize, 2usize), (4, 4), (8, 3), (1, 5)] {
            let a = UpaGeometry::new(na, ne, 0.5, ArrayLayout::Corner).unwrap();
            let (fa, fe, n_r) = (na as f64, ne as f64, (na * ne) as f64);
            let expected = 0.5f64.powi(4) * fa * fa * fe * fe * (fa - 1.0) * (fe - 1.0) * (7.0 * n_r + fa + fe - 5.0) / 144.0;
            assert_relative_eq!(a.moment_determinant(), expected, max_relative = 1e-12, epsilon = 1e-15);
            let (aa, ee, ae) = angle_fim_from_moments(&a, 0.3, 0.2, 1.0, 5.0);
            let det = angle_fim_determinant(&a, 0.3, 0.2, 1.0, 5.0);
            assert!((aa * ee - ae * ae - det).abs() <= 1e-9 * (aa * ee).max(1e-300));
        }
    }

    #[test]
    fn rii_independent_of_range_aii_inverse_square() {
        let base = scenario(Waveform::ofdm(28e9, 100, 120e3), 4, 16, SnrSpec::PerAntennaDb(20.0));
        let mut far = base.clone();
        far.ris.pose.position *= 2.0;
        far.ris.design_pose = far.ris.pose;
        far.receivers[0].position *= 2.0;
        far.receivers[0].design_position *= 2.0;
        let (a, b) = (efim_position(&base, 0).unwrap(), efim_position(&far, 0).unwrap());
        assert_relative_eq!(a.rii, b.rii, max_relative = 1e-9);
        assert_relative_eq!(a.aii_az / 4.0, b.aii_az, max_relative = 1e-9);
        assert_relative_eq!(a.aii_el / 4.0, b.aii_el, max_relative = 1e-9);
    }

    #[test]
    fn peb_simple_cases() {
        let f = PositionFim { matrix: Matrix3::identity() };
        assert_relative_eq!(peb(&f).unwrap().value, 3f64.sqrt(), max_relative = 1e-15);
        let f = PositionFim { matrix: Matrix3::identity() * 4.0 };
        assert_relative_eq!(peb(&f).unwrap().value, 0.75f64.sqrt(), max_relative = 1e-15);
        assert!(peb(&PositionFim::zeros()).is_err());
    }

    #[test]
    fn aperture_forms_approach_exact_sums() {
        let l = 0.01;
        let (az, el) = (0.4, 0.3);
        let mut prev = f64::INFINITY;
        for n in [8, 16, 32, 64] {
            let a = UpaGeometry::half_wavelength(n, n, l, ArrayLayout::Corner).unwrap();
            let (ea, _, _) = angle_fim_from_moments(&a, az, el, l, 1.0);
            let (pa, _, _) = angle_fim_aperture_approx(&a, az, el, l, 1.0);
            let err = rel(pa, ea);
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 0.05);
    }
}
