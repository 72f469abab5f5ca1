//! Sensor error models.
//!
//! Two layers live here. [`BeamErrorTerms`] is the planted beam-space error
//! used to synthesize DVL measurements: one scale factor and one bias shared
//! by all four beams plus white noise. [`BodyErrorTerms`] is what a
//! calibration approach estimates: a per-axis scale-factor vector and bias
//! vector in the body frame, constrained by one of five [`ErrorModelKind`]s.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{BeamVelocities, Velocity3};
use crate::seed::Rng;

/// Smallest `1 + k` accepted when inverting a scale factor.
pub const MIN_SCALE_DIVISOR: f64 = 1e-6;

/// Planted beam-space error: `ỹ = y·(1 + scale) + bias·1₄ + n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamErrorTerms {
    pub scale: f64,
    pub bias_mps: f64,
    pub noise_std_mps: f64,
}

impl BeamErrorTerms {
    pub const ZERO: BeamErrorTerms = BeamErrorTerms {
        scale: 0.0,
        bias_mps: 0.0,
        noise_std_mps: 0.0,
    };

    pub fn new(scale: f64, bias_mps: f64, noise_std_mps: f64) -> Result<Self> {
        let t = Self {
            scale,
            bias_mps,
            noise_std_mps,
        };
        t.validate()?;
        Ok(t)
    }

    /// Builds terms from the units used in the published grids: scale in
    /// percent, bias and noise in cm/s.
    pub fn from_table_units(scale_pct: f64, bias_cmps: f64, noise_cmps: f64) -> Result<Self> {
        Self::new(scale_pct / 100.0, bias_cmps / 100.0, noise_cmps / 100.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > -1.0) || !self.scale.is_finite() {
            return Err(Error::domain(format!("beam scale {} must exceed -1", self.scale)));
        }
        if !(self.noise_std_mps >= 0.0) || !self.noise_std_mps.is_finite() {
            return Err(Error::domain(format!(
                "beam noise std {} must be non-negative",
                self.noise_std_mps
            )));
        }
        if !self.bias_mps.is_finite() {
            return Err(Error::domain("beam bias must be finite"));
        }
        Ok(())
    }
}

/// Applies the planted beam error to one set of beam speeds.
pub fn apply_beam_errors(y: BeamVelocities, terms: &BeamErrorTerms, rng: &mut Rng) -> BeamVelocities {
    let noise = gaussian(terms.noise_std_mps);
    BeamVelocities(std::array::from_fn(|i| {
        let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
        y.0[i] * (1.0 + terms.scale) + terms.bias_mps + n
    }))
}

/// The five estimation error models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorModelKind {
    /// Scalar scale factor.
    Em1,
    /// Per-axis scale factor.
    Em2,
    /// Scalar bias.
    Em3,
    /// Per-axis bias.
    Em4,
    /// Per-axis scale factor and per-axis bias.
    Em5,
}

impl ErrorModelKind {
    pub const ALL: [ErrorModelKind; 5] = [
        ErrorModelKind::Em1,
        ErrorModelKind::Em2,
        ErrorModelKind::Em3,
        ErrorModelKind::Em4,
        ErrorModelKind::Em5,
    ];

    /// 1-based model number.
    pub fn number(self) -> u8 {
        match self {
            ErrorModelKind::Em1 => 1,
            ErrorModelKind::Em2 => 2,
            ErrorModelKind::Em3 => 3,
            ErrorModelKind::Em4 => 4,
            ErrorModelKind::Em5 => 5,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        Self::ALL
            .get(usize::from(n).wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::domain(format!("error model {n} outside 1..=5")))
    }

    pub fn dimension(self) -> usize {
        terms_dimension(self)
    }

    /// Whether the model carries a scale factor.
    pub fn has_scale(self) -> bool {
        matches!(self, ErrorModelKind::Em1 | ErrorModelKind::Em2 | ErrorModelKind::Em5)
    }

    pub fn has_bias(self) -> bool {
        matches!(self, ErrorModelKind::Em3 | ErrorModelKind::Em4 | ErrorModelKind::Em5)
    }
}

impl fmt::Display for ErrorModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EM{}", self.number())
    }
}

impl FromStr for ErrorModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches("EM").trim_start_matches("em");
        let n: u8 = digits
            .parse()
            .map_err(|_| Error::domain(format!("unknown error model '{s}'")))?;
        Self::from_number(n)
    }
}

/// Number of free parameters a model estimates.
pub fn terms_dimension(kind: ErrorModelKind) -> usize {
    match kind {
        ErrorModelKind::Em1 | ErrorModelKind::Em3 => 1,
        ErrorModelKind::Em2 | ErrorModelKind::Em4 => 3,
        ErrorModelKind::Em5 => 6,
    }
}

/// Estimated body-frame error terms under one error model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyErrorTerms {
    kind: ErrorModelKind,
    scale_vec: Velocity3,
    bias_vec: Velocity3,
}

impl BodyErrorTerms {
    /// All-zero terms for `kind`.
    pub fn zero(kind: ErrorModelKind) -> Self {
        Self {
            kind,
            scale_vec: Velocity3::ZERO,
            bias_vec: Velocity3::ZERO,
        }
    }

    /// Checked constructor enforcing the per-kind structure.
    pub fn new(kind: ErrorModelKind, scale_vec: Velocity3, bias_vec: Velocity3) -> Result<Self> {
        let t = Self {
            kind,
            scale_vec,
            bias_vec,
        };
        t.check_structure()?;
        Ok(t)
    }

    pub fn kind(&self) -> ErrorModelKind {
        self.kind
    }

    pub fn scale_vec(&self) -> Velocity3 {
        self.scale_vec
    }

    pub fn bias_vec(&self) -> Velocity3 {
        self.bias_vec
    }

    /// Flattens back to the raw parameter layout of [`terms_from_vector`].
    pub fn to_vector(&self) -> Vec<f64> {
        let s = self.scale_vec.to_array();
        let b = self.bias_vec.to_array();
        match self.kind {
            ErrorModelKind::Em1 => vec![s[0]],
            ErrorModelKind::Em2 => s.to_vec(),
            ErrorModelKind::Em3 => vec![b[0]],
            ErrorModelKind::Em4 => b.to_vec(),
            ErrorModelKind::Em5 => s.iter().chain(b.iter()).copied().collect(),
        }
    }

    fn check_structure(&self) -> Result<()> {
        let s = self.scale_vec.to_array();
        let b = self.bias_vec.to_array();
        let all_equal = |v: [f64; 3]| v[0] == v[1] && v[1] == v[2];
        let zero = |v: [f64; 3]| v == [0.0; 3];
        let ok = match self.kind {
            ErrorModelKind::Em1 => all_equal(s) && zero(b),
            ErrorModelKind::Em2 => zero(b),
            ErrorModelKind::Em3 => zero(s) && all_equal(b),
            ErrorModelKind::Em4 => zero(s),
            ErrorModelKind::Em5 => true,
        };
        if !ok {
            return Err(Error::domain(format!("terms violate the {} structure", self.kind)));
        }
        if s.iter().any(|k| !(*k > -1.0)) {
            return Err(Error::domain("scale components must exceed -1"));
        }
        if !self.scale_vec.is_finite() || !self.bias_vec.is_finite() {
            return Err(Error::domain("terms must be finite"));
        }
        Ok(())
    }
}

/// Places a raw parameter vector into structured terms.
///
/// EM1/EM3 broadcast their scalar to all three axes; EM5 takes the scale
/// from `raw[0..3]` and the bias from `raw[3..6]`.
pub fn terms_from_vector(kind: ErrorModelKind, raw: &[f64]) -> Result<BodyErrorTerms> {
    let dim = terms_dimension(kind);
    if raw.len() != dim {
        return Err(Error::domain(format!(
            "{kind} expects {dim} parameters, got {}",
            raw.len()
        )));
    }
    let splat = |v: f64| Velocity3::new(v, v, v);
    let vec3 = |r: &[f64]| Velocity3::new(r[0], r[1], r[2]);
    let (scale_vec, bias_vec) = match kind {
        ErrorModelKind::Em1 => (splat(raw[0]), Velocity3::ZERO),
        ErrorModelKind::Em2 => (vec3(raw), Velocity3::ZERO),
        ErrorModelKind::Em3 => (Velocity3::ZERO, splat(raw[0])),
        ErrorModelKind::Em4 => (Velocity3::ZERO, vec3(raw)),
        ErrorModelKind::Em5 => (vec3(&raw[..3]), vec3(&raw[3..])),
    };
    BodyErrorTerms::new(kind, scale_vec, bias_vec)
}

/// A proper rotation matrix between two frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRotation(Matrix3<f64>);

impl FrameRotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let defect = (m.transpose() * m - Matrix3::identity()).abs().max();
        if !(defect <= 1e-12) {
            return Err(Error::domain(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {defect:e})"
            )));
        }
        if m.determinant() <= 0.0 {
            return Err(Error::domain("rotation determinant must be +1"));
        }
        Ok(Self(m))
    }

    /// Row-major constructor.
    pub fn from_row_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::domain("rotation needs 9 values"));
        }
        Self::new(Matrix3::from_row_slice(v))
    }

    /// Rotation about the z axis by `yaw` radians.
    pub fn about_z(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rotate(&self, v: Velocity3) -> Velocity3 {
        (self.0 * v.to_vector()).into()
    }

    pub fn rotate_inverse(&self, v: Velocity3) -> Velocity3 {
        (self.0.transpose() * v.to_vector()).into()
    }
}

impl Default for FrameRotation {
    fn default() -> Self {
        Self::identity()
    }
}

/// `(1 + k) ⊙ (R·v_ref) + b + δv`, with `δv ~ N(0, noise_std²·I)`.
pub fn apply_body_error(
    v_ref: Velocity3,
    terms: &BodyErrorTerms,
    rotation: &FrameRotation,
    noise_std: f64,
    rng: &mut Rng,
) -> Velocity3 {
    let one_plus_k = terms.scale_vec + Velocity3::new(1.0, 1.0, 1.0);
    let mut out = one_plus_k.hadamard(rotation.rotate(v_ref)) + terms.bias_vec;
    if let Some(d) = gaussian(noise_std) {
        out = out + Velocity3::new(d.sample(rng), d.sample(rng), d.sample(rng));
    }
    out
}

/// Inverts the body error model: `(v − b) ⊘ (1 + k)`.
pub fn calibrate(v_dvl: Velocity3, terms: &BodyErrorTerms) -> Result<Velocity3> {
    let s = terms.scale_vec.to_array();
    if s.iter().any(|k| !(1.0 + k > MIN_SCALE_DIVISOR)) {
        return Err(Error::Singular(format!(
            "scale factor {:?} leaves 1 + k below {MIN_SCALE_DIVISOR:e}",
            s
        )));
    }
    let d = v_dvl - terms.bias_vec;
    Ok(Velocity3::new(
        d.x / (1.0 + s[0]),
        d.y / (1.0 + s[1]),
        d.z / (1.0 + s[2]),
    ))
}

pub(crate) fn gaussian(std: f64) -> Option<Normal<f64>> {
    (std > 0.0).then(|| Normal::new(0.0, std).expect("finite positive std"))
}
