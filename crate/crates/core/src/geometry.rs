//! Coordinate frames, planar array layouts, wave and steering vectors, and the
//! map between a RIS position and the channel parameters seen at a receiver.
//!
//! Angle convention: azimuth in (-pi, pi] measured from +x toward +y, elevation
//! in [-pi/2, pi/2] measured from the x-y plane. All quantities are SI
//! (meters, seconds, radians).

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Vec3 = Vector3<f64>;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// RIS orientation as rotations about the x axis and the z axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Orientation {
    pub alpha_x: f64,
    pub alpha_z: f64,
}

impl Orientation {
    pub fn new(alpha_x: f64, alpha_z: f64) -> Self {
        Self {
            alpha_x: wrap_angle(alpha_x),
            alpha_z: wrap_angle(alpha_z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Orientation,
}

impl Pose {
    pub fn new(position: Vec3, orientation: Orientation) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn at(position: Vec3) -> Self {
        Self::new(position, Orientation::default())
    }
}

/// Where the element grid is anchored relative to the array reference point.
///
/// `Corner` indexes elements from zero (element (0, 0) sits on the reference
/// point); this is the layout whose second moments give the
/// `(N - 1)(2N - 1)` sums of the closed-form angle information. `Centered`
/// places the reference point at the array centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayLayout {
    Centered,
    #[default]
    Corner,
}

/// First and second moments of the element offsets in the local y-z plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArrayMoments {
    pub sum_y: f64,
    pub sum_z: f64,
    pub syy: f64,
    pub szz: f64,
    pub syz: f64,
}

/// Uniform planar array lying in the y-z plane of its local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpaGeometry {
    pub n_az: usize,
    pub n_el: usize,
    pub spacing: f64,
    pub layout: ArrayLayout,
    offsets: Vec<Vec3>,
    moments: ArrayMoments,
}

impl UpaGeometry {
    /// Builds an `n_az x n_el` array with element spacing `spacing` (m).
    /// Elements are ordered with the azimuth index running fastest.
    pub fn new(n_az: usize, n_el: usize, spacing: f64, layout: ArrayLayout) -> Result<Self> {
        if n_az == 0 || n_el == 0 {
            return Err(Error::invalid("array needs at least one element per axis"));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::invalid(format!("array spacing must be > 0, got {spacing}")));
        }
        let (cy, cz) = match layout {
            ArrayLayout::Centered => ((n_az as f64 - 1.0) / 2.0, (n_el as f64 - 1.0) / 2.0),
            ArrayLayout::Corner => (0.0, 0.0),
        };
        let mut offsets = Vec::with_capacity(n_az * n_el);
        for i_el in 0..n_el {
            for i_az in 0..n_az {
                offsets.push(Vec3::new(
                    0.0,
                    (i_az as f64 - cy) * spacing,
                    (i_el as f64 - cz) * spacing,
                ));
            }
        }
        let moments = offsets.iter().fold(ArrayMoments::default(), |mut m, p| {
            m.sum_y += p.y;
            m.sum_z += p.z;
            m.syy += p.y * p.y;
            m.szz += p.z * p.z;
            m.syz += p.y * p.z;
            m
        });
        Ok(Self {
            n_az,
            n_el,
            spacing,
            layout,
            offsets,
            moments,
        })
    }

    /// Half-wavelength array for the given carrier wavelength.
    pub fn half_wavelength(n_az: usize, n_el: usize, wavelength: f64, layout: ArrayLayout) -> Result<Self> {
        Self::new(n_az, n_el, wavelength / 2.0, layout)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[Vec3] {
        &self.offsets
    }

    pub fn moments(&self) -> ArrayMoments {
        self.moments
    }

    /// Syy * Szz - Syz^2, evaluated on the integer index grid so that the
    /// result is exactly zero for single-row or single-column arrays.
    pub fn moment_determinant(&self) -> f64 {
        let (cy, cz) = match self.layout {
            ArrayLayout::Centered => ((self.n_az as f64 - 1.0) / 2.0, (self.n_el as f64 - 1.0) / 2.0),
            ArrayLayout::Corner => (0.0, 0.0),
        };
        let (mut syy, mut szz, mut syz) = (0.0, 0.0, 0.0);
        for i_el in 0..self.n_el {
            for i_az in 0..self.n_az {
                let y = i_az as f64 - cy;
                let z = i_el as f64 - cz;
                syy += y * y;
                szz += z * z;
                syz += y * z;
            }
        }
        let det = (syy * szz - syz * syz).max(0.0);
        det * self.spacing.powi(4)
    }
}

/// Unit vector pointing at azimuth `az`, elevation `el`.
pub fn direction(az: f64, el: f64) -> Vec3 {
    Vec3::new(az.cos() * el.cos(), az.sin() * el.cos(), el.sin())
}

/// Azimuth and elevation of a non-zero vector.
pub fn angles_of(v: &Vec3) -> (f64, f64) {
    let az = if v.x == 0.0 && v.y == 0.0 { 0.0 } else { v.y.atan2(v.x) };
    let el = v.z.atan2(v.x.hypot(v.y));
    (wrap_angle(az), el)
}

/// Wave vector `(2 pi / lambda) [cos az cos el, sin az cos el, sin el]`.
pub fn wave_vector(az: f64, el: f64, wavelength: f64) -> Result<Vec3> {
    if !(az.is_finite() && el.is_finite() && wavelength.is_finite()) {
        return Err(Error::invalid("wave vector inputs must be finite"));
    }
    if wavelength <= 0.0 {
        return Err(Error::invalid(format!("wavelength must be > 0, got {wavelength}")));
    }
    Ok(direction(az, el) * (2.0 * PI / wavelength))
}

/// Unnormalized steering vector with entries `exp(-j p_n . k(az, el))`.
pub fn steering_vector(array: &UpaGeometry, az: f64, el: f64, wavelength: f64) -> Result<Vec<Complex64>> {
    let k = wave_vector(az, el, wavelength)?;
    Ok(array
        .offsets()
        .iter()
        .map(|p| Complex64::from_polar(1.0, -p.dot(&k)))
        .collect())
}

/// Rotation matrix `R(alpha_x, alpha_z) = Rz(alpha_z) Rx(alpha_x)`.
pub fn rotation_matrix(o: Orientation) -> Matrix3<f64> {
    let (sx, cx) = o.alpha_x.sin_cos();
    let (sz, cz) = o.alpha_z.sin_cos();
    Matrix3::new(
        cz, -sz * cx, -sz * sx, //
        sz, cz * cx, cz * sx, //
        0.0, -sx, cx,
    )
}

/// Coordinates of `point` in the RIS frame: `-R^-1 (r - point)`.
pub fn to_local_frame(ris: &Pose, point: &Vec3) -> Vec3 {
    -(rotation_matrix(ris.orientation).transpose() * (ris.position - point))
}

/// Orthonormal range / azimuth / elevation directions as the columns of a matrix.
pub fn unit_directions(az: f64, el: f64) -> Matrix3<f64> {
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    Matrix3::new(
        ca * ce, -sa, -ca * se, //
        sa * ce, ca, -sa * se, //
        se, 0.0, ce,
    )
}

/// Deterministic parameters of one transmitter -> RIS -> receiver path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathGeometry {
    /// Total delay Tx -> RIS -> Rx (s).
    pub tau_r: f64,
    /// Delay Tx -> RIS (s).
    pub tau_tr: f64,
    pub rx_aoa_az: f64,
    pub rx_aoa_el: f64,
    pub tx_aod_az: f64,
    pub tx_aod_el: f64,
    pub ris_aoa_az: f64,
    pub ris_aoa_el: f64,
    pub ris_aod_az: f64,
    pub ris_aod_el: f64,
    /// Distance RIS -> receiver (m).
    pub range_rx: f64,
    /// Propagation speed used to build the delays (m/s).
    pub speed: f64,
}

impl PathGeometry {
    /// True when the receiver sees the RIS straight up or down, where the
    /// azimuth derivative is undefined.
    pub fn is_elevation_singular(&self) -> bool {
        self.rx_aoa_el.cos().abs() < 1e-12
    }

    /// Range RIS -> receiver recovered from the delays, `c (tau_r - tau_tr)`.
    pub fn delay_range(&self) -> f64 {
        self.speed * (self.tau_r - self.tau_tr)
    }

    pub fn rx_directions(&self) -> Matrix3<f64> {
        unit_directions(self.rx_aoa_az, self.rx_aoa_el)
    }

    /// Receiver offset `r - b_R` rebuilt from delays and angles.
    pub fn rx_to_ris(&self) -> Vec3 {
        direction(self.rx_aoa_az, self.rx_aoa_el) * self.delay_range()
    }
}

/// Solves the Tx -> RIS -> Rx geometry.
///
/// Receiver AOA and transmitter AOD are global-frame directions toward the RIS;
/// the RIS angles are the directions toward the receiver (AOD) and the
/// transmitter (AOA) expressed in the RIS frame.
pub fn solve_path_geometry(tx: &Vec3, rx: &Vec3, ris: &Pose, c: f64) -> Result<PathGeometry> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::invalid("propagation speed must be > 0"));
    }
    let r = ris.position;
    let rx_to_ris = r - rx;
    let tx_to_ris = r - tx;
    let scale = r.norm().max(rx.norm()).max(tx.norm()).max(1.0);
    let range_rx = rx_to_ris.norm();
    let range_tx = tx_to_ris.norm();
    if range_rx <= f64::EPSILON * scale {
        return Err(Error::CoincidentPoints("receiver and RIS"));
    }
    if range_tx <= f64::EPSILON * scale {
        return Err(Error::CoincidentPoints("transmitter and RIS"));
    }
    let (rx_aoa_az, rx_aoa_el) = angles_of(&rx_to_ris);
    let (tx_aod_az, tx_aod_el) = angles_of(&tx_to_ris);
    let (ris_aod_az, ris_aod_el) = angles_of(&to_local_frame(ris, rx));
    let (ris_aoa_az, ris_aoa_el) = angles_of(&to_local_frame(ris, tx));
    let tau_tr = range_tx / c;
    Ok(PathGeometry {
        tau_r: tau_tr + range_rx / c,
        tau_tr,
        rx_aoa_az,
        rx_aoa_el,
        tx_aod_az,
        tx_aod_el,
        ris_aoa_az,
        ris_aoa_el,
        ris_aod_az,
        ris_aod_el,
        range_rx,
        speed: c,
    })
}

/// Jacobian of `(tau_r, az, el)` with respect to the RIS position, with the
/// Tx -> RIS delay held fixed. Columns are `d tau / d r`, `d az / d r`,
/// `d el / d r`.
pub fn position_jacobian(path: &PathGeometry) -> Result<Matrix3<f64>> {
    let rho = path.delay_range();
    if !(rho > 0.0) {
        return Err(Error::invalid("receiver range must be > 0"));
    }
    if path.is_elevation_singular() {
        return Err(Error::ElevationSingularity);
    }
    let u = path.rx_directions();
    let mut j = Matrix3::zeros();
    j.set_column(0, &(u.column(0) / path.speed));
    j.set_column(1, &(u.column(1) / (rho * path.rx_aoa_el.cos())));
    j.set_column(2, &(u.column(2) / rho));
    Ok(j)
}
