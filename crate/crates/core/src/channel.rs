//! RIS cascade channel, phase profiles, beamforming and differential snapshots.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{steering_vector, PathGeometry, UpaGeometry, SPEED_OF_LIGHT};

/// Per-element RIS phases, representing `diag(exp(j w_1), ..., exp(j w_M))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisPhaseProfile {
    pub phases: Vec<f64>,
}

impl RisPhaseProfile {
    pub fn new(phases: Vec<f64>) -> Result<Self> {
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("RIS phases must be finite"));
        }
        Ok(Self { phases })
    }

    pub fn zeros(m: usize) -> Self {
        Self { phases: vec![0.0; m] }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        self.phases.iter().map(|&w| Complex64::from_polar(1.0, w)).collect()
    }
}

/// Diagonal of `Omega_plus - Omega_minus`.
pub fn profile_delta(minus: &RisPhaseProfile, plus: &RisPhaseProfile) -> Result<Vec<Complex64>> {
    if minus.len() != plus.len() {
        return Err(Error::DimensionMismatch { expected: minus.len(), got: plus.len() });
    }
    Ok(plus
        .diagonal()
        .iter()
        .zip(minus.diagonal())
        .map(|(p, m)| p - m)
        .collect())
}

pub const N_PARAMS: usize = 11;

pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "tau_r",
    "rx_aoa_az",
    "rx_aoa_el",
    "ris_aod_az",
    "ris_aod_el",
    "ris_aoa_az",
    "ris_aoa_el",
    "tx_aod_az",
    "tx_aod_el",
    "gain_re",
    "gain_im",
];

/// The channel parameter vector, in the canonical order of `PARAM_NAMES`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub tau_r: f64,
    pub rx_aoa_az: f64,
    pub rx_aoa_el: f64,
    pub ris_aod_az: f64,
    pub ris_aod_el: f64,
    pub ris_aoa_az: f64,
    pub ris_aoa_el: f64,
    pub tx_aod_az: f64,
    pub tx_aod_el: f64,
    pub gain_re: f64,
    pub gain_im: f64,
}

impl ChannelParams {
    pub fn from_path(path: &PathGeometry, gain: Complex64) -> Self {
        Self {
            tau_r: path.tau_r,
            rx_aoa_az: path.rx_aoa_az,
            rx_aoa_el: path.rx_aoa_el,
            ris_aod_az: path.ris_aod_az,
            ris_aod_el: path.ris_aod_el,
            ris_aoa_az: path.ris_aoa_az,
            ris_aoa_el: path.ris_aoa_el,
            tx_aod_az: path.tx_aod_az,
            tx_aod_el: path.tx_aod_el,
            gain_re: gain.re,
            gain_im: gain.im,
        }
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.tau_r,
            self.rx_aoa_az,
            self.rx_aoa_el,
            self.ris_aod_az,
            self.ris_aod_el,
            self.ris_aoa_az,
            self.ris_aoa_el,
            self.tx_aod_az,
            self.tx_aod_el,
            self.gain_re,
            self.gain_im,
        ]
    }

    pub fn from_array(v: &[f64; N_PARAMS]) -> Self {
        Self {
            tau_r: v[0],
            rx_aoa_az: v[1],
            rx_aoa_el: v[2],
            ris_aod_az: v[3],
            ris_aod_el: v[4],
            ris_aoa_az: v[5],
            ris_aoa_el: v[6],
            tx_aod_az: v[7],
            tx_aod_el: v[8],
            gain_re: v[9],
            gain_im: v[10],
        }
    }

    pub fn gain(&self) -> Complex64 {
        Complex64::new(self.gain_re, self.gain_im)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformMode {
    CarrierPhase,
    Ofdm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub carrier_hz: f64,
    pub mode: WaveformMode,
    pub n_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    /// Transmit power P_T (W).
    pub tx_power: f64,
}

impl Waveform {
    pub fn carrier(carrier_hz: f64) -> Self {
        Self {
            carrier_hz,
            mode: WaveformMode::CarrierPhase,
            n_subcarriers: 1,
            subcarrier_spacing_hz: 0.0,
            tx_power: 1.0,
        }
    }

    pub fn ofdm(carrier_hz: f64, n_subcarriers: usize, subcarrier_spacing_hz: f64) -> Self {
        Self {
            carrier_hz,
            mode: WaveformMode::Ofdm,
            n_subcarriers,
            subcarrier_spacing_hz,
            tx_power: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return Err(Error::invalid("carrier frequency must be > 0"));
        }
        if !(self.tx_power.is_finite() && self.tx_power > 0.0) {
            return Err(Error::invalid("transmit power must be > 0"));
        }
        if self.n_subcarriers == 0 {
            return Err(Error::invalid("need at least one subcarrier"));
        }
        if self.mode == WaveformMode::Ofdm && !(self.subcarrier_spacing_hz > 0.0) {
            return Err(Error::invalid("OFDM subcarrier spacing must be > 0"));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Effective bandwidth `N_c * delta_f`.
    pub fn bandwidth(&self) -> f64 {
        self.n_subcarriers as f64 * self.subcarrier_spacing_hz
    }

    /// Number of frequency bins in one snapshot.
    pub fn bins(&self) -> usize {
        match self.mode {
            WaveformMode::CarrierPhase => 1,
            WaveformMode::Ofdm => self.n_subcarriers,
        }
    }

    /// Centered subcarrier index `k - (N_c - 1) / 2`.
    pub fn centered_index(&self, k: usize) -> f64 {
        k as f64 - (self.n_subcarriers as f64 - 1.0) / 2.0
    }

    /// Frequency-domain delay signature `d(tau)` including the per-bin amplitude.
    ///
    /// Carrier mode returns the single carrier-phase term `exp(-j 2 pi f tau)`;
    /// OFDM splits the power equally and drops the common carrier phase.
    pub fn delay_signature(&self, tau: f64) -> Vec<Complex64> {
        match self.mode {
            WaveformMode::CarrierPhase => vec![Complex64::from_polar(1.0, -2.0 * PI * self.carrier_hz * tau)],
            WaveformMode::Ofdm => {
                let amp = (1.0 / self.n_subcarriers as f64).sqrt();
                (0..self.n_subcarriers)
                    .map(|k| {
                        Complex64::from_polar(amp, -2.0 * PI * self.centered_index(k) * self.subcarrier_spacing_hz * tau)
                    })
                    .collect()
            }
        }
    }

    /// Angular frequency of each bin with respect to the delay, `d/dtau` of the phase.
    pub fn delay_rates(&self) -> Vec<f64> {
        match self.mode {
            WaveformMode::CarrierPhase => vec![-2.0 * PI * self.carrier_hz],
            WaveformMode::Ofdm => (0..self.n_subcarriers)
                .map(|k| -2.0 * PI * self.centered_index(k) * self.subcarrier_spacing_hz)
                .collect(),
        }
    }
}

fn dot_h(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Cascade channel `H = g exp(-j 2 pi f tau) a_R(phi) a_r^H(phi~) Omega a_r(theta~) a_T^H(theta)`.
pub fn ris_channel(
    path: &PathGeometry,
    rx_array: &UpaGeometry,
    ris_array: &UpaGeometry,
    tx_array: &UpaGeometry,
    profile: &RisPhaseProfile,
    gain: Complex64,
    carrier_hz: f64,
) -> Result<DMatrix<Complex64>> {
    if profile.len() != ris_array.len() {
        return Err(Error::DimensionMismatch { expected: ris_array.len(), got: profile.len() });
    }
    let lambda = SPEED_OF_LIGHT / carrier_hz;
    let a_rx = steering_vector(rx_array, path.rx_aoa_az, path.rx_aoa_el, lambda)?;
    let a_tx = steering_vector(tx_array, path.tx_aod_az, path.tx_aod_el, lambda)?;
    let a_out = steering_vector(ris_array, path.ris_aod_az, path.ris_aod_el, lambda)?;
    let a_in = steering_vector(ris_array, path.ris_aoa_az, path.ris_aoa_el, lambda)?;
    let omega = profile.diagonal();
    let b: Complex64 = a_out
        .iter()
        .zip(&omega)
        .zip(&a_in)
        .map(|((o, w), i)| o.conj() * w * i)
        .sum();
    let s = gain * Complex64::from_polar(1.0, -2.0 * PI * carrier_hz * path.tau_r) * b;
    Ok(DMatrix::from_fn(a_rx.len(), a_tx.len(), |i, j| s * a_rx[i] * a_tx[j].conj()))
}

/// RIS phase pair whose difference co-phases the cascade toward the receiver.
///
/// With `phi_m` and `theta_m` the phases of the RIS steering entries toward the
/// receiver and the transmitter, `w_plus = phi_m - theta_m` and
/// `w_minus = w_plus + pi`, so the diagonal of `Omega_plus - Omega_minus` is
/// `2 exp(j (phi_m - theta_m))` and every term of the RIS sum adds in phase.
pub fn optimal_phase_pair(
    path: &PathGeometry,
    ris_array: &UpaGeometry,
    wavelength: f64,
) -> Result<(RisPhaseProfile, RisPhaseProfile)> {
    let a_out = steering_vector(ris_array, path.ris_aod_az, path.ris_aod_el, wavelength)?;
    let a_in = steering_vector(ris_array, path.ris_aoa_az, path.ris_aoa_el, wavelength)?;
    let plus: Vec<f64> = a_out.iter().zip(&a_in).map(|(o, i)| o.arg() - i.arg()).collect();
    let minus: Vec<f64> = plus.iter().map(|w| w + PI).collect();
    Ok((RisPhaseProfile { phases: minus }, RisPhaseProfile { phases: plus }))
}

/// Complex RIS factor `b = a_r^H(phi~) delta a_r(theta~)`.
pub fn ris_factor(delta: &[Complex64], path: &PathGeometry, ris_array: &UpaGeometry, wavelength: f64) -> Result<Complex64> {
    if delta.len() != ris_array.len() {
        return Err(Error::DimensionMismatch { expected: ris_array.len(), got: delta.len() });
    }
    let a_out = steering_vector(ris_array, path.ris_aod_az, path.ris_aod_el, wavelength)?;
    let a_in = steering_vector(ris_array, path.ris_aoa_az, path.ris_aoa_el, wavelength)?;
    Ok(a_out.iter().zip(delta).zip(&a_in).map(|((o, d), i)| o.conj() * d * i).sum())
}

/// `beta = |a_r^H(phi~) delta a_r(theta~)|^2`.
pub fn beta_factor(delta: &[Complex64], path: &PathGeometry, ris_array: &UpaGeometry, wavelength: f64) -> Result<f64> {
    Ok(ris_factor(delta, path, ris_array, wavelength)?.norm_sqr())
}

/// Transmit beamformer `f = a_T(theta)` steered at the RIS.
pub fn conjugate_beamformer(path: &PathGeometry, tx_array: &UpaGeometry, wavelength: f64) -> Result<Vec<Complex64>> {
    steering_vector(tx_array, path.tx_aod_az, path.tx_aod_el, wavelength)
}

/// `t = a_T^H(theta) f`.
pub fn tx_factor(f: &[Complex64], path: &PathGeometry, tx_array: &UpaGeometry, wavelength: f64) -> Result<Complex64> {
    if f.len() != tx_array.len() {
        return Err(Error::DimensionMismatch { expected: tx_array.len(), got: f.len() });
    }
    let a_tx = steering_vector(tx_array, path.tx_aod_az, path.tx_aod_el, wavelength)?;
    Ok(dot_h(&a_tx, f))
}

/// `gamma = |a_T^H(theta) f|^2 P_T`.
pub fn gamma_factor(
    f: &[Complex64],
    path: &PathGeometry,
    tx_array: &UpaGeometry,
    wavelength: f64,
    tx_power: f64,
) -> Result<f64> {
    Ok(tx_factor(f, path, tx_array, wavelength)?.norm_sqr() * tx_power)
}

/// Per-antenna SNR `|g|^2 beta gamma / sigma^2`.
pub fn received_snr(gain: Complex64, beta: f64, gamma: f64, noise_var: f64) -> Result<f64> {
    if !(noise_var > 0.0) {
        return Err(Error::invalid("noise variance must be > 0"));
    }
    Ok(gain.norm_sqr() * beta * gamma / noise_var)
}

/// Difference of received signals at two adjacent instants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialSnapshot {
    /// Sample `k * N_R + n` is antenna `n` on frequency bin `k`.
    pub samples: Vec<Complex64>,
    pub noise_var: f64,
    pub n_rx: usize,
    pub bins: usize,
}

/// Everything but the channel parameters needed to synthesize a snapshot.
#[derive(Debug, Clone)]
pub struct SignalModel<'a> {
    pub rx_array: &'a UpaGeometry,
    pub ris_array: &'a UpaGeometry,
    pub tx_array: &'a UpaGeometry,
    pub waveform: &'a Waveform,
    /// Diagonal of `Omega_plus - Omega_minus`.
    pub delta: &'a [Complex64],
    pub beamformer: &'a [Complex64],
}

impl SignalModel<'_> {
    pub fn wavelength(&self) -> f64 {
        self.waveform.wavelength()
    }

    /// Scalar `b t sqrt(P_T)` shared by all samples.
    pub fn cascade_scalar(&self, p: &ChannelParams) -> Result<Complex64> {
        let lambda = self.wavelength();
        let a_out = steering_vector(self.ris_array, p.ris_aod_az, p.ris_aod_el, lambda)?;
        let a_in = steering_vector(self.ris_array, p.ris_aoa_az, p.ris_aoa_el, lambda)?;
        let a_tx = steering_vector(self.tx_array, p.tx_aod_az, p.tx_aod_el, lambda)?;
        if self.delta.len() != a_out.len() {
            return Err(Error::DimensionMismatch { expected: a_out.len(), got: self.delta.len() });
        }
        if self.beamformer.len() != a_tx.len() {
            return Err(Error::DimensionMismatch { expected: a_tx.len(), got: self.beamformer.len() });
        }
        let b: Complex64 = a_out.iter().zip(self.delta).zip(&a_in).map(|((o, d), i)| o.conj() * d * i).sum();
        let t = dot_h(&a_tx, self.beamformer);
        Ok(b * t * self.waveform.tx_power.sqrt())
    }

    /// Noiseless differential signal for the parameters `p`.
    pub fn signal(&self, p: &ChannelParams) -> Result<Vec<Complex64>> {
        let s = p.gain() * self.cascade_scalar(p)?;
        let a_rx = steering_vector(self.rx_array, p.rx_aoa_az, p.rx_aoa_el, self.wavelength())?;
        let d = self.waveform.delay_signature(p.tau_r);
        let mut out = Vec::with_capacity(a_rx.len() * d.len());
        for dk in &d {
            let sk = s * dk;
            out.extend(a_rx.iter().map(|a| sk * a));
        }
        Ok(out)
    }
}

/// Adds circular complex Gaussian noise of variance `noise_var` per sample.
pub fn add_noise<R: Rng + ?Sized>(samples: &mut [Complex64], noise_var: f64, rng: &mut R) {
    let sd = (noise_var / 2.0).sqrt();
    for s in samples.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *s += Complex64::new(sd * re, sd * im);
    }
}

/// Deterministic generator for one `(trial, receiver, instant)` triple.
///
/// All generators share the key derived from `seed`; the triple selects the
/// ChaCha stream, so concurrent trials never overlap.
pub fn rng_stream(seed: u64, trial: u64, receiver: u64, instant: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial << 28) ^ (receiver << 20) ^ instant);
    rng
}
