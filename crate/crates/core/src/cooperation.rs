//! Accumulating position information over time instants and receivers,
//! including receivers that only know their own position approximately.

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fisher::{ellipsoid_for_delta, PositionFim};
use crate::linalg::{sym_inverse3, sym_sqrt3};
use crate::scenario::Scenario;

/// EFIM of receiver `k` accumulated over `instants` observation instants.
///
/// Each adjacent instant pair contributes one ellipsoid term. Pairs that share
/// the same differential profile (up to sign) are evaluated once.
pub fn efim_time(scenario: &Scenario, k: usize, instants: usize) -> Result<PositionFim> {
    if instants < 2 {
        return Err(Error::invalid(format!("need at least two instants, got {instants}")));
    }
    let mut s = scenario.clone();
    s.instants = instants;
    if let crate::scenario::PhaseSchedule::Explicit(p) = &scenario.schedule {
        if p.len() < instants {
            return Err(Error::DimensionMismatch { expected: instants, got: p.len() });
        }
        s.schedule = crate::scenario::PhaseSchedule::Explicit(p[..instants].to_vec());
    }
    if let crate::scenario::PhaseSchedule::Alternating { .. } = s.schedule {
        // Adjacent pairs of an alternating schedule differ only in sign, so
        // every pair contributes the same term.
        let (minus, plus) = s.optimal_pair(k)?;
        let term = ellipsoid_for_delta(&s, k, &crate::channel::profile_delta(&minus, &plus)?)?.fim();
        return Ok((1..instants).fold(PositionFim::zeros(), |acc, _| acc + term));
    }
    let deltas = s.pair_deltas(k)?;
    let mut cache: Vec<(Vec<Complex64>, PositionFim)> = Vec::new();
    let mut total = PositionFim::zeros();
    for d in &deltas {
        let hit = cache.iter().find(|(c, _)| same_up_to_sign(c, d)).map(|(_, f)| *f);
        let f = match hit {
            Some(f) => f,
            None => {
                let f = ellipsoid_for_delta(&s, k, d)?.fim();
                cache.push((d.clone(), f));
                f
            }
        };
        total = total + f;
    }
    Ok(total)
}

fn same_up_to_sign(a: &[Complex64], b: &[Complex64]) -> bool {
    a.len() == b.len() && (a.iter().zip(b).all(|(x, y)| x == y) || a.iter().zip(b).all(|(x, y)| *x == -*y))
}

/// Whether `q` is a multiple of the identity.
fn isotropic(q: &Matrix3<f64>) -> Option<f64> {
    let s = q.trace() / 3.0;
    ((q - Matrix3::identity() * s).norm() <= 1e-12 * q.norm().max(f64::MIN_POSITIVE)).then_some(s)
}

/// Shrinks an EFIM by a receiver self-positioning error covariance `q`,
/// i.e. `(F_e^-1 + Q)^-1` evaluated as `S (I + S Q S)^-1 S` with `S = F_e^(1/2)`
/// so that singular `F_e` and `Q` are both handled.
///
/// For isotropic `q = s I` each intensity `lambda` along the ellipsoid axes
/// becomes `lambda / (1 + lambda s)`.
pub fn apply_self_error(fe: &Matrix3<f64>, q: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if q.norm() == 0.0 {
        return Ok(*fe);
    }
    if let Some(s) = isotropic(q) {
        let eig = ((fe + fe.transpose()) * 0.5).symmetric_eigen();
        let shrunk = eig.eigenvalues.map(|l| {
            let l = l.max(0.0);
            l / (1.0 + l * s)
        });
        return Ok(eig.eigenvectors * Matrix3::from_diagonal(&shrunk) * eig.eigenvectors.transpose());
    }
    let root = sym_sqrt3(fe);
    let inner = Matrix3::identity() + root * q * root;
    let out = root * sym_inverse3(&inner)? * root;
    Ok((out + out.transpose()) * 0.5)
}

/// Time-accumulated EFIM of receiver `k` after accounting for its
/// self-positioning error covariance.
pub fn efim_with_self_error(scenario: &Scenario, k: usize) -> Result<PositionFim> {
    let fe = efim_time(scenario, k, scenario.instants)?;
    let q = scenario
        .receivers
        .get(k)
        .ok_or_else(|| Error::invalid(format!("receiver index {k} out of range")))?
        .error_cov;
    Ok(PositionFim { matrix: apply_self_error(&fe.matrix, &q)? })
}

/// Network EFIM: every receiver observes its own optimal phase pair in its own
/// time slots, and the per-receiver terms add.
pub fn efim_network(scenario: &Scenario) -> Result<PositionFim> {
    efim_subset(scenario, &(0..scenario.receivers.len()).collect::<Vec<_>>())
}

/// Network EFIM restricted to the receivers listed in `members`.
pub fn efim_subset(scenario: &Scenario, members: &[usize]) -> Result<PositionFim> {
    let mut total = PositionFim::zeros();
    for &k in members {
        total = total + efim_with_self_error(scenario, k)?;
    }
    Ok(total)
}

/// CRLBs of a network of anchors plus one extra receiver, with the extra node
/// treated as a perfect anchor, with its error covariance, and left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrlbSandwich {
    pub with_anchor: f64,
    pub with_error: f64,
    pub without: f64,
}

impl CrlbSandwich {
    /// `with_anchor <= with_error <= without`, up to a relative slack.
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.with_anchor <= self.with_error * (1.0 + rel_tol) && self.with_error <= self.without * (1.0 + rel_tol)
    }
}

pub fn crlb_sandwich(scenario: &Scenario, anchors: &[usize], extra: usize) -> Result<CrlbSandwich> {
    let base = efim_subset(scenario, anchors)?;
    let fe = efim_time(scenario, extra, scenario.instants)?;
    let q = scenario.receivers[extra].error_cov;
    let degraded = PositionFim { matrix: apply_self_error(&fe.matrix, &q)? };
    Ok(CrlbSandwich {
        with_anchor: (base + fe).crlb()?,
        with_error: (base + degraded).crlb()?,
        without: base.crlb()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{RisPhaseProfile, Waveform};
    use crate::fisher::efim_position;
    use crate::geometry::{ArrayLayout, Pose, UpaGeometry, Vec3};
    use crate::scenario::{PhaseSchedule, ReceiverNode, Ris, SnrSpec, Transmitter};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, Matrix6};

    fn scenario(rx: &[Vec3]) -> Scenario {
        let wf = Waveform::ofdm(28e9, 100, 120e3);
        let l = wf.wavelength();
        let a = |n| UpaGeometry::half_wavelength(n, n, l, ArrayLayout::Corner).unwrap();
        Scenario::new(
            Transmitter { position: Vec3::zeros(), array: a(4) },
            Ris::new(Pose::at(Vec3::new(-20.0, 5.0, 10.0)), a(16)),
            rx.iter().map(|p| ReceiverNode::anchor(*p, a(4))).collect(),
            wf,
            SnrSpec::PerAntennaDb(20.0),
        )
    }

    fn rel_close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol * b.norm()
    }

    #[test]
    fn two_instants_is_single_ellipsoid() {
        let s = scenario(&[Vec3::new(0.0, 12.0, 0.0)]);
        let t2 = efim_time(&s, 0, 2).unwrap();
        let e = efim_position(&s, 0).unwrap();
        assert!(rel_close(&t2.matrix, &e.matrix(), 1e-14));
    }

    #[test]
    fn optimal_time_accumulation_is_linear() {
        let s = scenario(&[Vec3::new(0.0, 12.0, 0.0)]);
        let base = efim_time(&s, 0, 2).unwrap().matrix;
        for t in [3usize, 5, 10] {
            let ft = efim_time(&s, 0, t).unwrap().matrix;
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(ft[(i, j)], (t - 1) as f64 * base[(i, j)], max_relative = 1e-9, epsilon = 1e-9 * base.norm());
                }
            }
        }
    }

    #[test]
    fn suboptimal_profiles_are_dominated() {
        let mut s = scenario(&[Vec3::new(0.0, 12.0, 0.0)]);
        s.instants = 4;
        let opt = efim_time(&s, 0, 4).unwrap().matrix;
        let m = s.ris.array.len();
        let profiles: Vec<RisPhaseProfile> = (0..4)
            .map(|i| RisPhaseProfile::new((0..m).map(|j| ((i * 31 + j * 7) % 13) as f64 * 0.5).collect()).unwrap())
            .collect();
        s.schedule = PhaseSchedule::Explicit(profiles);
        let sub = efim_time(&s, 0, 4).unwrap().matrix;
        let diff = opt - sub;
        assert!(diff.symmetric_eigenvalues().min() >= -1e-9 * opt.norm());
    }

    #[test]
    fn duplicate_receiver_doubles_information() {
        let p = Vec3::new(0.0, 12.0, 0.0);
        let one = efim_network(&scenario(&[p])).unwrap().matrix;
        let two = efim_network(&scenario(&[p, p])).unwrap().matrix;
        assert!(rel_close(&two, &(one * 2.0), 1e-14));
    }

    #[test]
    fn adding_receivers_never_increases_crlb() {
        let pts = [
            Vec3::new(0.0, 12.0, 0.0),
            Vec3::new(8.0, -3.0, 0.0),
            Vec3::new(-5.0, 20.0, 1.0),
            Vec3::new(12.0, 9.0, -2.0),
        ];
        let s = scenario(&pts);
        let mut prev = f64::INFINITY;
        for k in 1..=pts.len() {
            let c = efim_subset(&s, &(0..k).collect::<Vec<_>>()).unwrap().crlb().unwrap();
            assert!(c <= prev);
            prev = c;
        }
    }

    fn schur_oracle(fe: &Matrix3<f64>, q: &Matrix3<f64>) -> Matrix3<f64> {
        // Joint information of (r, b_R) with the receiver prior, then the
        // EFIM of r from the general LU inverse of the 6 x 6 matrix.
        let qi = q.try_inverse().unwrap();
        let mut big = Matrix6::zeros();
        big.fixed_view_mut::<3, 3>(0, 0).copy_from(fe);
        big.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-fe));
        big.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-fe));
        big.fixed_view_mut::<3, 3>(3, 3).copy_from(&(fe + qi));
        let inv = DMatrix::from_column_slice(6, 6, big.as_slice()).lu().try_inverse().unwrap();
        let tl = Matrix3::from_fn(|i, j| inv[(i, j)]);
        tl.try_inverse().unwrap()
    }

    #[test]
    fn self_error_matches_block_oracle() {
        let s = scenario(&[Vec3::new(0.0, 12.0, 0.0)]);
        let fe = efim_time(&s, 0, 2).unwrap().matrix;
        let iso = Matrix3::identity() * 1e-6;
        let aniso = Matrix3::new(2e-6, 3e-7, -1e-7, 3e-7, 5e-7, 2e-7, -1e-7, 2e-7, 1e-6);
        for q in [iso, aniso] {
            let got = apply_self_error(&fe, &q).unwrap();
            assert!(rel_close(&got, &schur_oracle(&fe, &q), 1e-9));
        }
    }

    #[test]
    fn self_error_limits() {
        let s = scenario(&[Vec3::new(0.0, 12.0, 0.0)]);
        let fe = efim_time(&s, 0, 2).unwrap().matrix;
        assert_eq!(apply_self_error(&fe, &Matrix3::zeros()).unwrap(), fe);
        let far = apply_self_error(&fe, &(Matrix3::identity() * 1e6)).unwrap();
        assert!(far.norm() <= 1e-6 * fe.norm());
    }

    #[test]
    fn isotropic_shrinks_intensities_harmonically() {
        let mut s = scenario(&[Vec3::new(0.0, 12.0, 0.0)]);
        let e = efim_position(&s, 0).unwrap();
        let sig2 = 1e-6;
        s.receivers[0].error_cov = Matrix3::identity() * sig2;
        let got = efim_with_self_error(&s, 0).unwrap().matrix;
        let eps_inv = 1.0 / sig2;
        let h = |l: f64| l * eps_inv / (l + eps_inv);
        let u = e.directions();
        let expected = u * Matrix3::from_diagonal(&Vec3::new(h(e.rii), h(e.aii_az), h(e.aii_el))) * u.transpose();
        assert!(rel_close(&got, &expected, 1e-9));
    }

    #[test]
    fn sandwich_limits() {
        let mut s = scenario(&[Vec3::new(0.0, 12.0, 0.0), Vec3::new(6.0, 3.0, 0.0)]);
        let z = crlb_sandwich(&s, &[0], 1).unwrap();
        assert_relative_eq!(z.with_anchor, z.with_error, max_relative = 1e-12);
        s.receivers[1].error_cov = Matrix3::identity() * 1e12;
        let inf = crlb_sandwich(&s, &[0], 1).unwrap();
        assert_relative_eq!(inf.with_error, inf.without, max_relative = 1e-6);
        s.receivers[1].error_cov = Matrix3::new(1e-4, 2e-5, 0.0, 2e-5, 3e-5, 0.0, 0.0, 0.0, 5e-5);
        let mid = crlb_sandwich(&s, &[0], 1).unwrap();
        assert!(mid.holds(0.0));
        assert!(mid.with_anchor < mid.with_error && mid.with_error < mid.without);
    }
}
