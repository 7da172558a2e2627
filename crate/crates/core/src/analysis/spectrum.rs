//! Power spectra of sampled time series.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// One-sided periodogram of evenly spaced samples (spacing `dt` in ns).
/// Returns angular frequencies (rad/s) and power densities S(ω) in
/// units²·s/rad, normalised so that Σ S(ω)·Δω equals the sample variance.
pub fn periodogram(samples: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = samples.len();
    if n < 4 || !(dt > 0.0) {
        return Err(Error::Domain(format!("need >= 4 samples and dt > 0, got {n} and {dt}")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let d_omega = 2.0 * PI / (n as f64 * dt * 1e-9);
    let (omega, power) = (1..=n / 2)
        .map(|k| {
            let one_sided = if 2 * k == n { 1.0 } else { 2.0 };
            (k as f64 * d_omega, one_sided * buf[k].norm_sqr() / (n as f64 * n as f64) / d_omega)
        })
        .unzip();
    Ok((omega, power))
}

/// Least-squares slope of log S against log ω over `[omega_lo, omega_hi]`.
pub fn log_log_slope(omega: &[f64], power: &[f64], omega_lo: f64, omega_hi: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = omega
        .iter()
        .zip(power)
        .filter(|(w, p)| **w >= omega_lo && **w <= omega_hi && **p > 0.0)
        .map(|(w, p)| (w.ln(), p.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Fit(format!("only {} spectral points in band", pts.len())));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parseval() {
        let x: Vec<f64> = (0..256).map(|k| (0.3 * k as f64).sin() + 0.1 * (k % 7) as f64).collect();
        let (w, p) = periodogram(&x, 1.0).unwrap();
        let dw = w[0];
        let mean = x.iter().sum::<f64>() / 256.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 256.0;
        let total: f64 = p.iter().sum::<f64>() * dw;
        assert!((total / var - 1.0).abs() < 1e-10);
    }

    #[test]
    fn slope_of_power_law() {
        let w: Vec<f64> = (1..100).map(|k| k as f64).collect();
        let p: Vec<f64> = w.iter().map(|w| 3.0 / w).collect();
        assert!((log_log_slope(&w, &p, 1.0, 100.0).unwrap() + 1.0).abs() < 1e-12);
    }
}
