//! Closed-form scalar scale-factor calibration.
//!
//! Each sample gives `k̂_t = ‖v_dvl‖ / ‖v_ref‖ − 1`; the estimate is the mean
//! of `k̂_t` over the calibration window. Samples where the reference speed
//! is below [`SPEED_FLOOR_MPS`] are skipped.

use crate::error::{Error, Result};
use crate::error_models::MIN_SCALE_DIVISOR;
use crate::geometry::Velocity3;
use crate::simulation::VelocitySeries;

pub const SPEED_FLOOR_MPS: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineEstimate {
    pub k_bar: f64,
    pub samples_used: usize,
    pub skipped_low_speed: usize,
}

impl BaselineEstimate {
    /// An estimate carrying only a scale value, e.g. when reloaded from a report.
    pub fn from_scale(k_bar: f64) -> Self {
        Self {
            k_bar,
            samples_used: 1,
            skipped_low_speed: 0,
        }
    }
}

/// Per-sample scale factor, or `None` when the reference is too slow.
pub fn scale_factor_instant(v_dvl: Velocity3, v_ref: Velocity3) -> Option<f64> {
    let r = v_ref.norm();
    (r >= SPEED_FLOOR_MPS).then(|| v_dvl.norm() / r - 1.0)
}

pub fn scale_factor_average(dvl: &VelocitySeries, reference: &VelocitySeries) -> Result<BaselineEstimate> {
    if dvl.len() != reference.len() {
        return Err(Error::domain("DVL and reference series are not aligned"));
    }
    let mut sum = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for (d, r) in dvl.samples().iter().zip(reference.samples()) {
        match scale_factor_instant(*d, *r) {
            Some(k) => {
                sum += k;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    if used == 0 {
        return Err(Error::Estimation(format!(
            "no sample above the {SPEED_FLOOR_MPS} m/s speed floor ({skipped} skipped)"
        )));
    }
    Ok(BaselineEstimate {
        k_bar: sum / used as f64,
        samples_used: used,
        skipped_low_speed: skipped,
    })
}

/// `v / (1 + k̄)`.
pub fn baseline_calibrate(v: Velocity3, est: &BaselineEstimate) -> Result<Velocity3> {
    let d = 1.0 + est.k_bar;
    if !(d > MIN_SCALE_DIVISOR) {
        return Err(Error::Singular(format!("baseline scale {} is degenerate", est.k_bar)));
    }
    Ok(v * (1.0 / d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::Frame;
    use approx::assert_abs_diff_eq;

    #[test]
    fn instant_cases() {
        let r = Velocity3::new(0.4, -1.1, 0.2);
        assert_abs_diff_eq!(scale_factor_instant(r * 1.01, r).unwrap(), 0.01, epsilon = 1e-15);
        assert_eq!(scale_factor_instant(r, r), Some(0.0));
        let k = scale_factor_instant(Velocity3::new(2.02, 0.0, 0.0), Velocity3::new(2.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(k, 0.01, epsilon = 1e-15);
        assert_eq!(scale_factor_instant(r, Velocity3::new(0.05, 0.0, 0.0)), None);
    }

    #[test]
    fn average_skips_slow_samples() {
        let refs = vec![
            Velocity3::new(1.0, 0.0, 0.0),
            Velocity3::new(0.01, 0.0, 0.0),
            Velocity3::new(0.0, 2.0, 0.0),
        ];
        let dvl: Vec<_> = refs.iter().map(|v| *v * 1.02).collect();
        let est = scale_factor_average(
            &VelocitySeries::from_samples(0.0, dvl, Frame::Body),
            &VelocitySeries::from_samples(0.0, refs, Frame::Body),
        )
        .unwrap();
        assert_abs_diff_eq!(est.k_bar, 0.02, epsilon = 1e-15);
        assert_eq!((est.samples_used, est.skipped_low_speed), (2, 1));

        let slow = VelocitySeries::from_samples(0.0, vec![Velocity3::ZERO; 4], Frame::Body);
        assert!(matches!(scale_factor_average(&slow, &slow), Err(Error::Estimation(_))));
    }

    #[test]
    fn identical_series_give_zero() {
        let s = VelocitySeries::from_samples(0.0, vec![Velocity3::new(1.5, 0.1, 0.0); 20], Frame::Body);
        assert_eq!(scale_factor_average(&s, &s).unwrap().k_bar, 0.0);
    }

    #[test]
    fn calibrate_cases() {
        let v = Velocity3::new(2.02, 0.0, 0.0);
        assert_eq!(baseline_calibrate(v, &BaselineEstimate::from_scale(0.0)).unwrap(), v);
        let c = baseline_calibrate(v, &BaselineEstimate::from_scale(0.01)).unwrap();
        assert_abs_diff_eq!(c.x, 2.0, epsilon = 1e-15);
        assert!(baseline_calibrate(v, &BaselineEstimate::from_scale(-1.0)).is_err());

        let u = Velocity3::new(0.3, -1.7, 0.2);
        let est = BaselineEstimate::from_scale(0.013);
        let back = baseline_calibrate(u * 1.013, &est).unwrap();
        assert!((back - u).norm() < 1e-12);
    }

    #[test]
    fn estimator_is_scale_invariant() {
        let d = Velocity3::new(1.37, -0.21, 0.05);
        let r = Velocity3::new(1.35, -0.2, 0.049);
        let k = scale_factor_instant(d, r).unwrap();
        for c in [0.5, 2.0, 8.0] {
            let kc = scale_factor_instant(d * c, r * c).unwrap();
            assert!((kc - k).abs() <= 4.0 * f64::EPSILON);
        }
    }
}
