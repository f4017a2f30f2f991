//! Exact and asymptotic learnability computations for raw and
//! standardized Bernoulli rewards.
//!
//! The learnability of a question is measured by the KL distance from
//! the initial policy to the KL-regularized optimal policy, which equals
//! the reward's cumulant generating function evaluated at `1/beta`. For
//! the standardized reward the leading term is `1/(2 beta^2)` for every
//! p, while the raw reward carries a `p(1-p)` factor.

use crate::error::{Error, Result};

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Parameter(format!(
            "success probability {p} must lie strictly inside (0, 1)"
        )));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) {
        return Err(Error::Parameter(format!("beta {beta} must be > 0")));
    }
    Ok(())
}

/// Support points of the standardized reward `(r - p)/sqrt(p(1-p))`:
/// `sqrt((1-p)/p)` on success and `-sqrt(p/(1-p))` on failure.
pub fn standardized_support(p: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    Ok((((1.0 - p) / p).sqrt(), -(p / (1.0 - p)).sqrt()))
}

/// `log(p e^{a} + (1-p) e^{b})` in a log-sum-exp form that cannot
/// overflow.
fn two_point_cgf(p: f64, a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + (p * (a - m).exp() + (1.0 - p) * (b - m).exp()).ln()
}

/// CGF of the standardized reward at `1/beta`; equals the KL distance
/// from the initial policy to the optimal policy under the normalized
/// reward.
pub fn exact_kl_normalized(p: f64, beta: f64) -> Result<f64> {
    check_p(p)?;
    check_beta(beta)?;
    let (v_success, v_fail) = standardized_support(p)?;
    Ok(two_point_cgf(p, v_success / beta, v_fail / beta))
}

/// CGF of the centered raw reward `r - p` at `1/beta`; its leading
/// `beta^{-2}` coefficient is `p(1-p)/2`.
pub fn exact_kl_raw(p: f64, beta: f64) -> Result<f64> {
    check_p(p)?;
    check_beta(beta)?;
    Ok(two_point_cgf(p, (1.0 - p) / beta, -p / beta))
}

/// The p-independent leading term `1/(2 beta^2)` of the normalized
/// learnability.
pub fn leading_term_normalized(beta: f64) -> f64 {
    1.0 / (2.0 * beta * beta)
}

/// Below this magnitude a residual is dominated by f64 rounding and is
/// dropped from the slope fit.
pub const RESIDUAL_PRECISION_FLOOR: f64 = 1e-15;

/// Log-log fit of the residual `exact - 1/(2 beta^2)` over a beta grid.
#[derive(Debug, Clone)]
pub struct ExpansionReport {
    pub p: f64,
    /// Fitted slope of `log |residual|` against `log beta`.
    pub slope: f64,
    /// `(beta, residual)` pairs that entered the fit.
    pub points: Vec<(f64, f64)>,
    /// Grid points dropped for falling below the precision floor.
    pub dropped: usize,
}

/// Fits the decay order of the residual against the beta grid. The slope
/// is the numerical stand-in for the `O(beta^{-3})` remainder: at
/// p = 0.5 the third cumulant vanishes and the slope is -4 instead.
pub fn verify_expansion(p: f64, betas: &[f64]) -> Result<ExpansionReport> {
    check_p(p)?;
    if betas.len() < 4 {
        return Err(Error::Parameter(format!(
            "beta grid has {} points; need at least 4",
            betas.len()
        )));
    }
    for &beta in betas {
        if beta < 10.0 {
            return Err(Error::Parameter(format!(
                "beta {beta} below 10; the series is only trusted for beta >= 10"
            )));
        }
    }
    let mut points = Vec::new();
    let mut dropped = 0;
    for &beta in betas {
        let residual = exact_kl_normalized(p, beta)? - leading_term_normalized(beta);
        if residual.abs() < RESIDUAL_PRECISION_FLOOR {
            dropped += 1;
        } else {
            points.push((beta, residual));
        }
    }
    if points.len() < 2 {
        return Err(Error::Parameter(
            "too few residuals above the precision floor to fit a slope".into(),
        ));
    }
    // Least-squares line through (ln beta, ln |residual|).
    let xs: Vec<f64> = points.iter().map(|(b, _)| b.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, r)| r.abs().ln()).collect();
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let sxx: f64 = xs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
    Ok(ExpansionReport {
        p,
        slope: sxy / sxx,
        points,
        dropped,
    })
}

/// Default beta grid for expansion checks.
pub const DEFAULT_BETA_GRID: [f64; 4] = [10.0, 20.0, 40.0, 80.0];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn support_examples() {
        assert_eq!(standardized_support(0.5).unwrap(), (1.0, -1.0));
        let (s, f) = standardized_support(0.1).unwrap();
        assert_abs_diff_eq!(s, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f, -1.0 / 3.0, epsilon = 1e-12);
        let (s, f) = standardized_support(0.9).unwrap();
        assert_abs_diff_eq!(s, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f, -3.0, epsilon = 1e-12);
        assert!(standardized_support(0.0).is_err());
        assert!(standardized_support(1.0).is_err());
    }

    #[test]
    fn support_is_standardized() {
        for k in 1..10 {
            let p = k as f64 / 10.0;
            let (s, f) = standardized_support(p).unwrap();
            let mean = p * s + (1.0 - p) * f;
            let var = p * s * s + (1.0 - p) * f * f - mean * mean;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalized_kl_examples() {
        assert_abs_diff_eq!(
            exact_kl_normalized(0.5, 10.0).unwrap(),
            0.1f64.cosh().ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(exact_kl_normalized(0.5, 10.0).unwrap(), 0.00499168, epsilon = 1e-8);

        let expected = (0.1 * 0.3f64.exp() + 0.9 * (-1.0f64 / 30.0).exp()).ln();
        assert_abs_diff_eq!(exact_kl_normalized(0.1, 10.0).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(exact_kl_normalized(0.1, 10.0).unwrap(), 0.0054654, epsilon = 1e-7);

        // CGF at t -> 0.
        assert!(exact_kl_normalized(0.3, 1e9).unwrap() < 1e-15);
    }

    #[test]
    fn raw_kl_examples() {
        assert_abs_diff_eq!(
            exact_kl_raw(0.5, 10.0).unwrap(),
            0.05f64.cosh().ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(exact_kl_raw(0.5, 10.0).unwrap(), 0.00124948, epsilon = 1e-8);
        // The leading raw term p(1-p)/(2 beta^2) peaks at p = 0.5.
        assert_abs_diff_eq!(0.25 / (2.0 * 100.0), 0.00125, epsilon = 1e-15);
        let at_half = exact_kl_raw(0.5, 50.0).unwrap();
        for k in [1, 2, 3, 4, 6, 7, 8, 9] {
            assert!(exact_kl_raw(k as f64 / 10.0, 50.0).unwrap() < at_half);
        }
    }

    #[test]
    fn raw_below_normalized() {
        for k in 1..10 {
            let p = k as f64 / 10.0;
            for beta in [1.0, 2.0, 10.0, 100.0] {
                assert!(
                    exact_kl_raw(p, beta).unwrap() < exact_kl_normalized(p, beta).unwrap(),
                    "ordering failed at p={p}, beta={beta}"
                );
            }
        }
    }

    #[test]
    fn leading_term_values() {
        assert_eq!(leading_term_normalized(10.0), 0.005);
        assert_eq!(leading_term_normalized(1.0), 0.5);
        assert_eq!(leading_term_normalized(100.0), 5e-5);
    }

    #[test]
    fn expansion_slopes() {
        let report = verify_expansion(0.1, &DEFAULT_BETA_GRID).unwrap();
        assert!(
            (report.slope + 3.0).abs() < 0.1,
            "expected slope near -3, got {}",
            report.slope
        );

        let report = verify_expansion(0.5, &DEFAULT_BETA_GRID).unwrap();
        assert!(
            (report.slope + 4.0).abs() < 0.1,
            "expected slope near -4, got {}",
            report.slope
        );
        // Residual at beta = 10 follows the ln cosh series term -t^4/12.
        let r10 = exact_kl_normalized(0.5, 10.0).unwrap() - leading_term_normalized(10.0);
        assert_abs_diff_eq!(r10, -8.33e-6, epsilon = 5e-8);
    }

    #[test]
    fn expansion_rejects_bad_grid() {
        assert!(verify_expansion(0.5, &[10.0, 20.0, 40.0]).is_err());
        assert!(verify_expansion(0.5, &[5.0, 20.0, 40.0, 80.0]).is_err());
    }

    #[test]
    fn p_independence_at_leading_order() {
        for k in 1..10 {
            let p = k as f64 / 10.0;
            let scaled = exact_kl_normalized(p, 100.0).unwrap() * 2.0 * 100.0 * 100.0;
            assert!(
                (scaled - 1.0).abs() < 0.05,
                "p = {p}: scaled learnability {scaled} strays from 1"
            );
        }
    }
}
