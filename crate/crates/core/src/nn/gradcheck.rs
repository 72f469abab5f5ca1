//! Central finite-difference gradient checking.

/// Denominator floor in the relative error, so that gradients at round-off
/// level compare in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index where the worst error occurred.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h`.
pub fn central_difference<F>(loss: &mut F, params: &mut [f64], i: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = params[i];
    params[i] = orig + h;
    let up = loss(params);
    params[i] = orig - h;
    let down = loss(params);
    params[i] = orig;
    (up - down) / (2.0 * h)
}

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic[i]` against central differences of `loss` for every
/// index in `indices`.
pub fn grad_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
    tolerance: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let mut theta = params.to_vec();
    let mut worst = (0.0, None);
    for &i in indices {
        let numeric = central_difference(&mut loss, &mut theta, i, h);
        let e = relative_error(analytic[i], numeric);
        if e > worst.0 || e.is_nan() {
            worst = (e, Some(i));
        }
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: indices.len(),
        tolerance,
        passed: worst.0 < tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_wrong_gradient_fails() {
        let f = |v: &[f64]| v[0] * v[0] + 3.0 * v[0] * v[1];
        let p = [1.5, -0.5];
        let good = [2.0 * 1.5 + 3.0 * -0.5, 3.0 * 1.5];
        let r = grad_check(f, &p, &good, &[0, 1], 1e-6, 1e-8);
        assert!(r.passed, "{r:?}");
        let bad = [good[0], good[1] * 1.01];
        let r = grad_check(f, &p, &bad, &[0, 1], 1e-6, 1e-5);
        assert!(!r.passed);
        assert_eq!(r.worst_index, Some(1));
    }
}
