//! Central finite differences, the independent oracle for every adjoint rule.
//!
//! The numeric route never touches the tape's backward pass: it evaluates the
//! forward function twice per coordinate. Analytic gradients are compared
//! against it with a scale-aware relative error.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn numeric_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Scale-aware relative error between an analytic and a numeric derivative.
///
/// For values above `1e-4` in magnitude this is `|a−n| / max(|a|, |n|)`;
/// below that the finite-difference noise floor dominates any relative
/// measure, so the absolute difference is used instead.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < 1e-4 {
        diff
    } else {
        diff / scale
    }
}

/// Worst elementwise [`relative_error`] between two gradients.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "gradient length mismatch: {} vs {}",
        analytic.len(),
        numeric.len()
    );
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
