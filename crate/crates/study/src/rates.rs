//! Least-squares convergence rates.

use hdivproj::{Error, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Slope of `log e` against `log h`.
    HSlope,
    /// Slope of `log e` against `p` (exponential convergence).
    PExponential,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub mode: FitMode,
    pub abscissae: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    /// Root mean square of the residuals of the log-linear fit.
    pub residual: f64,
}

/// Fits `log e ≈ c + slope·x` with `x = log h` or `x = p`. Nonpositive errors
/// are dropped first; at least three points must remain.
pub fn fit_rate(errors: &[f64], abscissae: &[f64], mode: FitMode) -> Result<RateFit> {
    if errors.len() != abscissae.len() {
        return Err(Error::InvalidArgument(format!(
            "{} errors but {} abscissae",
            errors.len(),
            abscissae.len()
        )));
    }
    let (xs, es): (Vec<f64>, Vec<f64>) = abscissae
        .iter()
        .zip(errors)
        .filter(|(_, e)| **e > 0.0 && e.is_finite())
        .map(|(x, e)| (*x, *e))
        .unzip();
    if xs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "a rate fit needs at least 3 positive errors, got {}",
            xs.len()
        )));
    }
    let x: Vec<f64> = match mode {
        FitMode::HSlope => {
            if xs.iter().any(|h| *h <= 0.0) {
                return Err(Error::InvalidArgument("mesh sizes must be positive".into()));
            }
            xs.iter().map(|h| h.ln()).collect()
        }
        FitMode::PExponential => xs.clone(),
    };
    let y: Vec<f64> = es.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let c = my - slope * mx;
    let residual = (x.iter().zip(&y).map(|(a, b)| (b - c - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    Ok(RateFit {
        mode,
        abscissae: xs,
        errors: es,
        slope,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn geometric_data_has_exact_slope() {
        let fit = fit_rate(&[1e-1, 2.5e-2, 6.25e-3], &[1.0, 0.5, 0.25], FitMode::HSlope).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn constant_errors_have_zero_slope() {
        let fit = fit_rate(&[0.3; 4], &[1.0, 0.5, 0.25, 0.125], FitMode::HSlope).unwrap();
        assert!(fit.slope.abs() < 1e-14);
    }

    #[test]
    fn noisy_data_recovers_the_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h: Vec<f64> = (0..6).map(|i| 0.5f64.powi(i)).collect();
        let e: Vec<f64> = h.iter().map(|h| h.powf(1.5) * (1.0 + 0.01 * rng.random_range(-1.0..1.0))).collect();
        let fit = fit_rate(&e, &h, FitMode::HSlope).unwrap();
        assert!((fit.slope - 1.5).abs() < 0.05);
    }

    #[test]
    fn exponential_mode_fits_against_degree() {
        let p = [1.0, 2.0, 3.0, 4.0];
        let e: Vec<f64> = p.iter().map(|p: &f64| 3.0 * (-1.2 * p).exp()).collect();
        let fit = fit_rate(&e, &p, FitMode::PExponential).unwrap();
        assert!((fit.slope + 1.2).abs() < 1e-12);
    }

    #[test]
    fn too_few_points_are_rejected() {
        assert!(fit_rate(&[1.0, 0.5], &[1.0, 0.5], FitMode::HSlope).is_err());
        // zero errors are dropped before counting
        assert!(fit_rate(&[1.0, 0.5, 0.0], &[1.0, 0.5, 0.25], FitMode::HSlope).is_err());
    }
}
