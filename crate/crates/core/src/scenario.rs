//! Experiment description shared by every bound, detector and estimator.

use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    add_noise, beta_factor, conjugate_beamformer, gamma_factor, optimal_phase_pair, profile_delta, received_snr,
    ChannelParams, DifferentialSnapshot, RisPhaseProfile, SignalModel, Waveform,
};
use crate::error::{Error, Result};
use crate::geometry::{solve_path_geometry, PathGeometry, Pose, UpaGeometry, Vec3, SPEED_OF_LIGHT};

#[derive(Debug, Clone, PartialEq)]
pub struct Transmitter {
    pub position: Vec3,
    pub array: UpaGeometry,
}

/// The monitored RIS. Phases and the transmit beam are designed for
/// `design_pose`, which is the known initial placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Ris {
    pub pose: Pose,
    pub design_pose: Pose,
    pub array: UpaGeometry,
}

impl Ris {
    pub fn new(pose: Pose, array: UpaGeometry) -> Self {
        Self { pose, design_pose: pose, array }
    }
}

/// A cooperating receiver. `error_cov` is its self-positioning error
/// covariance (zero for an anchor); `design_position` is where the RIS phases
/// and the gain calibration assume it sits.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverNode {
    pub position: Vec3,
    pub design_position: Vec3,
    pub array: UpaGeometry,
    pub error_cov: Matrix3<f64>,
}

impl ReceiverNode {
    pub fn anchor(position: Vec3, array: UpaGeometry) -> Self {
        Self {
            position,
            design_position: position,
            array,
            error_cov: Matrix3::zeros(),
        }
    }

    pub fn with_error(mut self, error_cov: Matrix3<f64>) -> Self {
        self.error_cov = error_cov;
        self
    }
}

/// How the cascade gain `g` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrSpec {
    /// Per-antenna SNR `|g|^2 beta gamma / sigma^2` at the design point, in dB.
    /// `|g|` is back-solved for each receiver.
    PerAntennaDb(f64),
    /// Per-element SNR `|g|^2 P_T / sigma^2`, in dB, before any array gain.
    ElementDb(f64),
    /// Explicit complex gain.
    Gain { re: f64, im: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseSchedule {
    /// Alternate between the optimal pair. With `start_plus` the first instant
    /// uses `Omega_plus`.
    Alternating { start_plus: bool },
    /// One profile per instant, applied to every receiver.
    Explicit(Vec<RisPhaseProfile>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub tx: Transmitter,
    pub ris: Ris,
    pub receivers: Vec<ReceiverNode>,
    pub waveform: Waveform,
    pub snr: SnrSpec,
    /// Phase of `g` (rad); only the magnitude follows from `snr`.
    pub gain_phase: f64,
    /// Observation instants per receiver, T >= 2.
    pub instants: usize,
    pub schedule: PhaseSchedule,
    /// Noise variance per complex sample.
    pub noise_var: f64,
    pub seed: u64,
}

impl Scenario {
    /// Single-receiver scenario with optimal alternating phases, two instants and unit noise.
    pub fn new(tx: Transmitter, ris: Ris, receivers: Vec<ReceiverNode>, waveform: Waveform, snr: SnrSpec) -> Self {
        Self {
            tx,
            ris,
            receivers,
            waveform,
            snr,
            gain_phase: 0.0,
            instants: 2,
            schedule: PhaseSchedule::Alternating { start_plus: false },
            noise_var: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.waveform.validate()?;
        if self.receivers.is_empty() {
            return Err(Error::invalid("scenario needs at least one receiver"));
        }
        if self.instants < 2 {
            return Err(Error::invalid(format!("need at least two instants, got {}", self.instants)));
        }
        if !(self.noise_var.is_finite() && self.noise_var > 0.0) {
            return Err(Error::invalid("noise variance must be > 0"));
        }
        if let PhaseSchedule::Explicit(p) = &self.schedule {
            if p.len() != self.instants {
                return Err(Error::DimensionMismatch { expected: self.instants, got: p.len() });
            }
            if let Some(bad) = p.iter().find(|q| q.len() != self.ris.array.len()) {
                return Err(Error::DimensionMismatch { expected: self.ris.array.len(), got: bad.len() });
            }
        }
        for (k, rx) in self.receivers.iter().enumerate() {
            let q = &rx.error_cov;
            if (q - q.transpose()).norm() > 1e-12 * q.norm().max(1.0) {
                return Err(Error::invalid(format!("receiver {k}: error covariance not symmetric")));
            }
            if q.symmetric_eigenvalues().min() < -1e-12 * q.norm() {
                return Err(Error::invalid(format!("receiver {k}: error covariance not PSD")));
            }
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        self.waveform.wavelength()
    }

    fn receiver(&self, k: usize) -> Result<&ReceiverNode> {
        self.receivers
            .get(k)
            .ok_or_else(|| Error::invalid(format!("receiver index {k} out of range")))
    }

    /// True geometry of receiver `k`.
    pub fn path(&self, k: usize) -> Result<PathGeometry> {
        let rx = self.receiver(k)?;
        solve_path_geometry(&self.tx.position, &rx.position, &self.ris.pose, SPEED_OF_LIGHT)
    }

    /// Geometry the RIS phases and the transmit beam were designed for.
    pub fn design_path(&self, k: usize) -> Result<PathGeometry> {
        let rx = self.receiver(k)?;
        solve_path_geometry(&self.tx.position, &rx.design_position, &self.ris.design_pose, SPEED_OF_LIGHT)
    }

    /// Optimal `(Omega_minus, Omega_plus)` for receiver `k`'s design point.
    pub fn optimal_pair(&self, k: usize) -> Result<(RisPhaseProfile, RisPhaseProfile)> {
        optimal_phase_pair(&self.design_path(k)?, &self.ris.array, self.wavelength())
    }

    pub fn beamformer(&self, k: usize) -> Result<Vec<Complex64>> {
        conjugate_beamformer(&self.design_path(k)?, &self.tx.array, self.wavelength())
    }

    /// The profile used at each of the `instants` observation instants.
    pub fn profiles(&self, k: usize) -> Result<Vec<RisPhaseProfile>> {
        match &self.schedule {
            PhaseSchedule::Alternating { start_plus } => {
                let (minus, plus) = self.optimal_pair(k)?;
                Ok((0..self.instants)
                    .map(|i| if (i % 2 == 0) == *start_plus { plus.clone() } else { minus.clone() })
                    .collect())
            }
            PhaseSchedule::Explicit(p) => Ok(p.clone()),
        }
    }

    /// `Omega^[i] - Omega^[i-1]` for every adjacent instant pair.
    pub fn pair_deltas(&self, k: usize) -> Result<Vec<Vec<Complex64>>> {
        let p = self.profiles(k)?;
        p.windows(2).map(|w| profile_delta(&w[0], &w[1])).collect()
    }

    /// Gain of receiver `k`'s path.
    pub fn gain(&self, k: usize) -> Result<Complex64> {
        let mag = match self.snr {
            SnrSpec::Gain { re, im } => return Ok(Complex64::new(re, im)),
            SnrSpec::ElementDb(db) => (db_to_linear(db) * self.noise_var / self.waveform.tx_power).sqrt(),
            SnrSpec::PerAntennaDb(db) => {
                let design = self.design_path(k)?;
                let (minus, plus) = optimal_phase_pair(&design, &self.ris.array, self.wavelength())?;
                let beta = beta_factor(&profile_delta(&minus, &plus)?, &design, &self.ris.array, self.wavelength())?;
                let f = self.beamformer(k)?;
                let gamma = gamma_factor(&f, &design, &self.tx.array, self.wavelength(), self.waveform.tx_power)?;
                (db_to_linear(db) * self.noise_var / (beta * gamma)).sqrt()
            }
        };
        Ok(Complex64::from_polar(mag, self.gain_phase))
    }

    pub fn params(&self, k: usize) -> Result<ChannelParams> {
        Ok(ChannelParams::from_path(&self.path(k)?, self.gain(k)?))
    }

    /// Per-antenna SNR of receiver `k` for the differential profile `delta`.
    pub fn snr_for_delta(&self, k: usize, delta: &[Complex64]) -> Result<f64> {
        let path = self.path(k)?;
        let l = self.wavelength();
        let beta = beta_factor(delta, &path, &self.ris.array, l)?;
        let gamma = gamma_factor(&self.beamformer(k)?, &path, &self.tx.array, l, self.waveform.tx_power)?;
        received_snr(self.gain(k)?, beta, gamma, self.noise_var)
    }

    /// Snapshot model for receiver `k`. `delta` and `beamformer` are borrowed.
    pub fn signal_model<'a>(&'a self, k: usize, delta: &'a [Complex64], beamformer: &'a [Complex64]) -> Result<SignalModel<'a>> {
        Ok(SignalModel {
            rx_array: &self.receiver(k)?.array,
            ris_array: &self.ris.array,
            tx_array: &self.tx.array,
            waveform: &self.waveform,
            delta,
            beamformer,
        })
    }

    /// Largest distance between any two nodes (m).
    pub fn diameter(&self) -> f64 {
        let mut pts = vec![self.tx.position, self.ris.pose.position];
        pts.extend(self.receivers.iter().map(|r| r.position));
        let mut d: f64 = 0.0;
        for a in &pts {
            for b in &pts {
                d = d.max((a - b).norm());
            }
        }
        d
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Differential snapshot `(H^[i] - H^[i-1]) f x + w` for receiver `k`.
pub fn differential_signal<R: Rng + ?Sized>(
    scenario: &Scenario,
    k: usize,
    minus: &RisPhaseProfile,
    plus: &RisPhaseProfile,
    rng: Option<&mut R>,
) -> Result<DifferentialSnapshot> {
    let delta = profile_delta(minus, plus)?;
    let f = scenario.beamformer(k)?;
    let model = scenario.signal_model(k, &delta, &f)?;
    let mut samples = model.signal(&scenario.params(k)?)?;
    if let Some(rng) = rng {
        add_noise(&mut samples, scenario.noise_var, rng);
    }
    Ok(DifferentialSnapshot {
        samples,
        noise_var: scenario.noise_var,
        n_rx: scenario.receivers[k].array.len(),
        bins: scenario.waveform.bins(),
    })
}

/// Debug path: synthesizes both instants with a static background channel
/// `background` (N_R x N_T, frequency flat) and returns their difference.
pub fn differential_signal_with_background(
    scenario: &Scenario,
    k: usize,
    minus: &RisPhaseProfile,
    plus: &RisPhaseProfile,
    background: &DMatrix<Complex64>,
) -> Result<DifferentialSnapshot> {
    let f = scenario.beamformer(k)?;
    let n_rx = scenario.receivers.get(k).map(|r| r.array.len()).unwrap_or(0);
    if background.shape() != (n_rx, f.len()) {
        return Err(Error::DimensionMismatch { expected: n_rx * f.len(), got: background.len() });
    }
    let params = scenario.params(k)?;
    let bins = scenario.waveform.bins();
    let x = (scenario.waveform.tx_power / bins as f64).sqrt();
    let static_part: Vec<Complex64> = (0..n_rx)
        .map(|n| (0..f.len()).map(|q| background[(n, q)] * f[q]).sum::<Complex64>() * x)
        .collect();
    let instant = |profile: &RisPhaseProfile| -> Result<Vec<Complex64>> {
        let omega = profile.diagonal();
        let mut y = scenario.signal_model(k, &omega, &f)?.signal(&params)?;
        for (i, s) in y.iter_mut().enumerate() {
            *s += static_part[i % n_rx];
        }
        Ok(y)
    };
    let yp = instant(plus)?;
    let ym = instant(minus)?;
    Ok(DifferentialSnapshot {
        samples: yp.iter().zip(&ym).map(|(a, b)| a - b).collect(),
        noise_var: scenario.noise_var,
        n_rx,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{rng_stream, WaveformMode};
    use crate::geometry::{ArrayLayout, Orientation};
    use approx::assert_relative_eq;

    fn scenario(mode: WaveformMode, snr: SnrSpec) -> Scenario {
        let wf = match mode {
            WaveformMode::CarrierPhase => Waveform::carrier(28e9),
            WaveformMode::Ofdm => Waveform::ofdm(28e9, 16, 120e3),
        };
        let l = wf.wavelength();
        let a4 = UpaGeometry::half_wavelength(4, 4, l, ArrayLayout::Corner).unwrap();
        let ris = UpaGeometry::half_wavelength(8, 8, l, ArrayLayout::Corner).unwrap();
        Scenario::new(
            Transmitter { position: Vec3::zeros(), array: a4.clone() },
            Ris::new(Pose::new(Vec3::new(-20.0, 5.0, 10.0), Orientation::default()), ris),
            vec![ReceiverNode::anchor(Vec3::new(0.0, 12.0, 0.0), a4)],
            wf,
            snr,
        )
    }

    #[test]
    fn per_antenna_snr_is_met_at_design_point() {
        let s = scenario(WaveformMode::CarrierPhase, SnrSpec::PerAntennaDb(20.0));
        let delta = &s.pair_deltas(0).unwrap()[0];
        assert_relative_eq!(s.snr_for_delta(0, delta).unwrap(), 100.0, max_relative = 1e-10);
    }

    #[test]
    fn element_snr_includes_array_gains() {
        let s = scenario(WaveformMode::CarrierPhase, SnrSpec::ElementDb(0.0));
        let delta = &s.pair_deltas(0).unwrap()[0];
        // (2M)^2 from the RIS pair and N_T^2 from the beamformer.
        assert_relative_eq!(s.snr_for_delta(0, delta).unwrap(), 4.0 * 64.0 * 64.0 * 256.0, max_relative = 1e-10);
    }

    #[test]
    fn alternating_schedule_flips_sign_only() {
        let mut s = scenario(WaveformMode::CarrierPhase, SnrSpec::PerAntennaDb(0.0));
        s.instants = 4;
        let d = s.pair_deltas(0).unwrap();
        assert_eq!(d.len(), 3);
        for m in 0..d[0].len() {
            assert!((d[0][m] + d[1][m]).norm() < 1e-12);
            assert!((d[0][m] - d[2][m]).norm() < 1e-12);
        }
        s.schedule = PhaseSchedule::Alternating { start_plus: true };
        let e = s.pair_deltas(0).unwrap();
        assert!((e[0][0] + d[0][0]).norm() < 1e-12);
    }

    #[test]
    fn equal_profiles_zero_snapshot() {
        let s = scenario(WaveformMode::Ofdm, SnrSpec::PerAntennaDb(20.0));
        let (m, _) = s.optimal_pair(0).unwrap();
        let y = differential_signal::<rand_chacha::ChaCha8Rng>(&s, 0, &m, &m, None).unwrap();
        assert!(y.samples.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn snapshot_power_matches_snr() {
        for mode in [WaveformMode::CarrierPhase, WaveformMode::Ofdm] {
            let s = scenario(mode, SnrSpec::PerAntennaDb(13.0));
            let (m, p) = s.optimal_pair(0).unwrap();
            let y = differential_signal::<rand_chacha::ChaCha8Rng>(&s, 0, &m, &p, None).unwrap();
            let per_antenna = y.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / y.n_rx as f64;
            assert_relative_eq!(per_antenna, db_to_linear(13.0) * s.noise_var, max_relative = 1e-6);
        }
    }

    #[test]
    fn seeded_snapshots_are_bit_identical() {
        let s = scenario(WaveformMode::Ofdm, SnrSpec::PerAntennaDb(0.0));
        let (m, p) = s.optimal_pair(0).unwrap();
        let a = differential_signal(&s, 0, &m, &p, Some(&mut rng_stream(3, 0, 0, 1))).unwrap();
        let b = differential_signal(&s, 0, &m, &p, Some(&mut rng_stream(3, 0, 0, 1))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn background_cancels_in_difference() {
        let s = scenario(WaveformMode::Ofdm, SnrSpec::PerAntennaDb(10.0));
        let (m, p) = s.optimal_pair(0).unwrap();
        let bg = DMatrix::from_fn(16, 16, |i, j| Complex64::new((i + 2 * j) as f64, -(i as f64)) * 1e3);
        let with_bg = differential_signal_with_background(&s, 0, &m, &p, &bg).unwrap();
        let clean = differential_signal::<rand_chacha::ChaCha8Rng>(&s, 0, &m, &p, None).unwrap();
        let scale = clean.samples.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in with_bg.samples.iter().zip(&clean.samples) {
            assert!((a - b).norm() < 1e-6 * scale);
        }
    }

    #[test]
    fn validation_catches_bad_inputs() {
        let mut s = scenario(WaveformMode::CarrierPhase, SnrSpec::PerAntennaDb(0.0));
        assert!(s.validate().is_ok());
        s.instants = 1;
        assert!(s.validate().is_err());
        s.instants = 2;
        s.receivers[0].error_cov = Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, 1.0));
        assert!(s.validate().is_err());
    }
}
