//! Normal and chi-squared distribution functions and quantiles.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF, accurate in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation for large `x`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// `Φ(b) - Φ(a)` for `a ≤ b`, evaluated in whichever tail avoids cancellation.
pub fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        (normal_sf(a) - normal_sf(b)).max(0.0)
    } else {
        (normal_cdf(b) - normal_cdf(a)).max(0.0)
    }
}

/// Standard normal quantile `z_p`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "normal quantile level {p} not in (0, 1)"
        )));
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    // Two Newton steps on whichever tail is smaller.
    for _ in 0..2 {
        let resid = if p < 0.5 {
            normal_cdf(x) - p
        } else {
            (1.0 - p) - normal_sf(x)
        };
        let d = normal_pdf(x);
        if d > 0.0 {
            x -= resid / d;
        }
    }
    Ok(x)
}

/// Chi-squared quantile with `dof` degrees of freedom at level `p`.
pub fn chi2_quantile(dof: usize, p: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidArgument(
            "chi-squared needs at least one degree of freedom".into(),
        ));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "chi-squared quantile level {p} not in (0, 1)"
        )));
    }
    let k = dof as f64;
    let a = 0.5 * k;
    // Work with the survival function; 1 - p is exact for the levels used here.
    let q = 1.0 - p;
    let sf = |x: f64| gamma_ur(a, 0.5 * x);
    let ln_norm = ln_gamma(a) + a * std::f64::consts::LN_2;
    let pdf = |x: f64| ((a - 1.0) * x.ln() - 0.5 * x - ln_norm).exp();

    // Wilson-Hilferty start.
    let z = normal_quantile(p)?;
    let h = 2.0 / (9.0 * k);
    let mut x = (k * (1.0 - h + z * h.sqrt()).powi(3)).max(1e-8);

    let (mut lo, mut hi) = (0.0_f64, x.max(1.0));
    while sf(hi) > q {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let f = sf(x) - q;
        if f > 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let d = pdf(x);
        let mut next = if d > 0.0 { x + f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1.0) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_quantiles_match_tables() {
        assert!((normal_quantile(0.975).unwrap() - 1.959963984540054).abs() < 1e-12);
        assert!((normal_quantile(0.95).unwrap() - 1.6448536269514722).abs() < 1e-12);
        assert!((normal_quantile(0.5).unwrap()).abs() < 1e-14);
        assert!((normal_quantile(1e-10).unwrap() + 6.361340902404056).abs() < 1e-9);
    }

    #[test]
    fn chi2_quantiles_match_tables() {
        let z = normal_quantile(0.975).unwrap();
        assert!((chi2_quantile(1, 0.95).unwrap() - z * z).abs() < 1e-10);
        assert!((chi2_quantile(2, 0.95).unwrap() - 5.991464547107979).abs() < 1e-10);
        assert!((chi2_quantile(10, 0.95).unwrap() - 18.307038053275146).abs() < 1e-9);
        assert!((chi2_quantile(40, 0.95).unwrap() - 55.75847927888702).abs() < 1e-9);
        assert!((chi2_quantile(320, 0.95).unwrap() - 362.71750408110336).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_levels() {
        assert!(normal_quantile(1.0).is_err());
        assert!(chi2_quantile(3, 0.0).is_err());
        assert!(chi2_quantile(0, 0.5).is_err());
    }

    #[test]
    fn normal_mass_is_stable_in_tails() {
        let m = normal_mass(10.0, 11.0);
        assert!(m > 0.0 && m < 1e-22);
        assert!((normal_mass(-1.0, 1.0) - 0.6826894921370859).abs() < 1e-14);
    }
}
