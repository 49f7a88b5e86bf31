//! Least-squares fits used for exponent measurements.

use crate::error::{CoreError, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub rms: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(CoreError::InsufficientSamples {
            need: 2,
            got: xs.len().min(ys.len()),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(CoreError::FitRefused("degenerate abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - slope * x - intercept;
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(LinearFit {
        slope,
        intercept,
        rms,
    })
}

/// Slope of log|y| against log|x|; refuses non-positive data.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let lx: Vec<f64> = xs.iter().map(|x| x.abs().ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.abs().ln()).collect();
    if xs.iter().any(|x| *x == 0.0) || ys.iter().any(|y| *y == 0.0) {
        return Err(CoreError::FitRefused("zero datum in log-log fit".into()));
    }
    Ok(linear_fit(&lx, &ly)?.slope)
}

/// Golden-section minimization of a smooth 1-D function on [a, b].
pub fn golden_section_min(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..300 {
        if (b - a).abs() < tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_line() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.0).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 2.5).abs() < 1e-12);
        assert!((fit.intercept + 1.0).abs() < 1e-12);
        assert!(fit.rms < 1e-12);
    }

    #[test]
    fn log_log_power_law() {
        let xs: Vec<f64> = (1..30).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-1.75)).collect();
        let slope = log_log_slope(&xs, &ys).unwrap();
        assert!((slope + 1.75).abs() < 1e-10);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let xmin = golden_section_min(-2.0, 5.0, |x| (x - 1.3) * (x - 1.3) + 0.4, 1e-12);
        // sqrt(eps) is the attainable floor for a quadratic minimum.
        assert!((xmin - 1.3).abs() < 1e-6);
    }

    #[test]
    fn refuses_degenerate_input() {
        assert!(linear_fit(&[1.0], &[2.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_err());
        assert!(log_log_slope(&[1.0, 0.0], &[1.0, 2.0]).is_err());
    }
}
