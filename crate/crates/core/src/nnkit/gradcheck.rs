use crate::error::{Error, Result};

/// Central difference step.
pub const FD_STEP: f64 = 1e-5;

/// Compares an analytic gradient with central finite differences.
///
/// `f` returns the value and its analytic gradient at a point. The result is
/// `max_i |g_i − fd_i| / max(1, |g_i|)`.
pub fn grad_check<F>(f: F, point: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (value, analytic) = f(point);
    if !value.is_finite() {
        return Err(Error::NonFiniteValue(
            "function value at the check point".into(),
        ));
    }
    if analytic.len() != point.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} entries for a {}-dimensional point",
            analytic.len(),
            point.len()
        )));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let plus = f(&x).0;
        x[i] = orig - FD_STEP;
        let minus = f(&x).0;
        x[i] = orig;
        let fd = (plus - minus) / (2.0 * FD_STEP);
        if !fd.is_finite() || !analytic[i].is_finite() {
            return Err(Error::NonFiniteValue(format!("coordinate {i}")));
        }
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = grad_check(|w| (w[0] * w[0], vec![2.0 * w[0]]), &[3.0]).unwrap();
        assert!(err <= 1e-9);
    }

    #[test]
    fn detects_wrong_gradient() {
        let err = grad_check(|w| (w[0] * w[0], vec![w[0]]), &[3.0]).unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let res = grad_check(|w| (w[0].ln(), vec![1.0 / w[0]]), &[-1.0]);
        assert!(matches!(res, Err(Error::NonFiniteValue(_))));
    }
}
