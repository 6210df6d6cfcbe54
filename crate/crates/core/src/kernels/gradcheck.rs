use super::KernelError;

/// Largest relative error between `analytic` and central differences of `f`
/// at `params`, with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check(
    f: impl Fn(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<f64, KernelError> {
    if params.len() != analytic.len() {
        return Err(KernelError::ShapeMismatch { expected: params.len(), found: analytic.len() });
    }
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = f(&p);
        p[i] = orig - step;
        let down = f(&p);
        p[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(KernelError::NonFinite(i));
        }
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = finite_diff_check(|x| x[0] * x[0], &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_detected() {
        let err = finite_diff_check(|x| x[0] * x[0], &[3.0], &[0.0], 1e-5).unwrap();
        assert!((err - 1.0).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        assert!(matches!(finite_diff_check(|x| x[0], &[1.0], &[], 1e-5), Err(KernelError::ShapeMismatch { .. })));
        assert_eq!(finite_diff_check(|x| x[0].ln(), &[0.0], &[1.0], 1e-5), Err(KernelError::NonFinite(0)));
    }
}
