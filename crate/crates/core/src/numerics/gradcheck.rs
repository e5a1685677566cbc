//! Central finite-difference gradient oracle.
//!
//! Every analytic backward pass in the crate is validated against this
//! routine; it deliberately knows nothing about models or losses.

use crate::error::{Error, Result};

/// Central differences `(f(p + eps*e_i) - f(p - eps*e_i)) / (2*eps)`.
pub fn finite_diff_grad<F>(mut f: F, p: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::invalid_input("finite_diff_grad requires eps > 0"));
    }
    let mut work = p.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let hi = f(&work)?;
        work[i] = orig - eps;
        let lo = f(&work)?;
        work[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::numeric(format!(
                "finite_diff_grad: non-finite objective at coordinate {i}"
            )));
        }
        grad.push((hi - lo) / (2.0 * eps));
    }
    Ok(grad)
}

/// Relative error between analytic and finite-difference gradients:
/// `|a - b| / max(|a|, |b|, floor)` per coordinate, maximized.
pub fn max_relative_error(analytic: &[f64], reference: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), reference.len());
    analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = finite_diff_grad(|p| Ok(p[0] * p[0]), &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = finite_diff_grad(|_| Ok(4.2), &[1.0, -2.0, 0.5], 1e-4).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cubic_sum() {
        let g = finite_diff_grad(|p| Ok(p.iter().map(|v| v.powi(3)).sum()), &[1.0, 2.0], 1e-5)
            .unwrap();
        assert!((g[0] - 3.0).abs() < 1e-6);
        assert!((g[1] - 12.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let r = finite_diff_grad(|p| Ok(1.0 / (p[0] - 1.0)), &[1.0 - 1e-5], 1e-5);
        assert!(r.is_err());
    }

    #[test]
    fn non_positive_eps_rejected() {
        assert!(finite_diff_grad(|p| Ok(p[0]), &[0.0], 0.0).is_err());
    }
}
