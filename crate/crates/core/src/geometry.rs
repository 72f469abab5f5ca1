//! Janus ("×") DVL beam geometry.
//!
//! Four beams share a common pitch angle `α` measured from the sensor's
//! vertical axis and are spread in yaw at 45°, 135°, 225° and 315°. Stacking
//! the unit beam vectors gives the 4×3 transform `H` mapping a DVL-frame
//! velocity to along-beam speeds; the velocity is recovered from four beam
//! speeds by least squares.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix3, Matrix3x4, Matrix4x3, SymmetricEigen, Vector3, Vector4};

use crate::error::{Error, Result};

/// Largest condition number of `HᵀH` accepted by the least-squares solve.
pub const MAX_CONDITION: f64 = 1e12;

/// Default beam pitch angle, typical for Workhorse-class Janus DVLs.
pub const DEFAULT_PITCH_DEG: f64 = 20.0;

pub const BEAM_COUNT: usize = 4;

/// A 3-axis velocity in m/s.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Velocity3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Velocity3 {
    pub const ZERO: Velocity3 = Velocity3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Elementwise product.
    pub fn hadamard(self, other: Velocity3) -> Velocity3 {
        Velocity3::new(self.x * other.x, self.y * other.y, self.z * other.z)
    }

    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis index {i} out of range"),
        }
    }
}

impl From<Vector3<f64>> for Velocity3 {
    fn from(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

impl Add for Velocity3 {
    type Output = Velocity3;
    fn add(self, rhs: Velocity3) -> Velocity3 {
        Velocity3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Velocity3 {
    type Output = Velocity3;
    fn sub(self, rhs: Velocity3) -> Velocity3 {
        Velocity3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Velocity3 {
    type Output = Velocity3;
    fn mul(self, rhs: f64) -> Velocity3 {
        Velocity3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

/// Along-beam speeds of the four beams, m/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamVelocities(pub [f64; BEAM_COUNT]);

impl BeamVelocities {
    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::from(self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vector4<f64>> for BeamVelocities {
    fn from(v: Vector4<f64>) -> Self {
        Self([v[0], v[1], v[2], v[3]])
    }
}

/// Yaw of beam `index` (1-based), `(index − 1)·π/2 + π/4`.
pub fn beam_yaw(index: usize) -> Result<f64> {
    if !(1..=BEAM_COUNT).contains(&index) {
        return Err(Error::domain(format!("beam index {index} outside 1..={BEAM_COUNT}")));
    }
    Ok((index - 1) as f64 * FRAC_PI_2 + FRAC_PI_4)
}

/// Unit direction of beam `index` (1-based) in the DVL frame for pitch `alpha`.
pub fn beam_direction(index: usize, alpha: f64) -> Result<Vector3<f64>> {
    let psi = beam_yaw(index)?;
    if !(0.0..FRAC_PI_2).contains(&alpha) {
        return Err(Error::domain(format!("beam pitch {alpha} rad outside [0, π/2)")));
    }
    Ok(Vector3::new(
        psi.cos() * alpha.sin(),
        psi.sin() * alpha.sin(),
        alpha.cos(),
    ))
}

/// Janus beam layout with a common pitch angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamGeometry {
    pitch_angle_rad: f64,
}

impl BeamGeometry {
    pub fn new(pitch_angle_rad: f64) -> Result<Self> {
        if !(pitch_angle_rad > 0.0 && pitch_angle_rad < FRAC_PI_2) {
            return Err(Error::domain(format!(
                "beam pitch {pitch_angle_rad} rad outside (0, π/2)"
            )));
        }
        Ok(Self { pitch_angle_rad })
    }

    pub fn from_degrees(deg: f64) -> Result<Self> {
        Self::new(deg.to_radians())
    }

    pub fn pitch_angle_rad(&self) -> f64 {
        self.pitch_angle_rad
    }

    pub fn yaw_angles_rad(&self) -> [f64; BEAM_COUNT] {
        std::array::from_fn(|i| i as f64 * FRAC_PI_2 + FRAC_PI_4)
    }

    pub fn transform(&self) -> Result<TransformMatrix> {
        build_transform(self.pitch_angle_rad)
    }
}

impl Default for BeamGeometry {
    fn default() -> Self {
        Self {
            pitch_angle_rad: DEFAULT_PITCH_DEG.to_radians(),
        }
    }
}

/// The stacked beam-direction matrix `H` (4×3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformMatrix {
    rows: Matrix4x3<f64>,
}

/// Builds `H` for pitch `alpha`; rejects pitches where `H` loses rank.
pub fn build_transform(alpha: f64) -> Result<TransformMatrix> {
    if !(alpha > 0.0 && alpha < FRAC_PI_2) {
        return Err(Error::domain(format!(
            "beam pitch {alpha} rad outside (0, π/2); H would lose rank"
        )));
    }
    let mut rows = Matrix4x3::zeros();
    for i in 0..BEAM_COUNT {
        let b = beam_direction(i + 1, alpha)?;
        rows.set_row(i, &b.transpose());
    }
    Ok(TransformMatrix { rows })
}

impl TransformMatrix {
    pub fn rows(&self) -> &Matrix4x3<f64> {
        &self.rows
    }

    /// Numerical rank from the singular values of `H`.
    pub fn rank(&self) -> usize {
        self.rows.rank(1e-10)
    }

    /// Condition number of the normal matrix `HᵀH`.
    pub fn normal_condition(&self) -> f64 {
        let eig = SymmetricEigen::new(self.rows.transpose() * self.rows);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// `(HᵀH)⁻¹Hᵀ`, guarded by [`MAX_CONDITION`].
    pub fn pseudo_inverse(&self) -> Result<Matrix3x4<f64>> {
        let cond = self.normal_condition();
        if !(cond <= MAX_CONDITION) {
            return Err(Error::Singular(format!(
                "HᵀH condition number {cond:e} exceeds {MAX_CONDITION:e}"
            )));
        }
        let normal: Matrix3<f64> = self.rows.transpose() * self.rows;
        let inv = normal
            .try_inverse()
            .ok_or_else(|| Error::Singular("HᵀH is not invertible".into()))?;
        Ok(inv * self.rows.transpose())
    }
}

/// Beam speeds `H·v` seen for a DVL-frame velocity `v`.
pub fn project_to_beams(h: &TransformMatrix, v: Velocity3) -> BeamVelocities {
    (h.rows * v.to_vector()).into()
}

/// Least-squares DVL-frame velocity from beam speeds.
pub fn solve_velocity(h: &TransformMatrix, y: BeamVelocities) -> Result<Velocity3> {
    Ok((h.pseudo_inverse()? * y.to_vector()).into())
}

/// Precomputed solver for repeated least-squares recovery with one `H`.
#[derive(Clone, Copy, Debug)]
pub struct VelocitySolver {
    pinv: Matrix3x4<f64>,
}

impl VelocitySolver {
    pub fn new(h: &TransformMatrix) -> Result<Self> {
        Ok(Self {
            pinv: h.pseudo_inverse()?,
        })
    }

    pub fn solve(&self, y: BeamVelocities) -> Velocity3 {
        (self.pinv * y.to_vector()).into()
    }
}
