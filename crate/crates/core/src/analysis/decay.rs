//! Exponential-times-Gaussian envelope fits.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::lsq::{least_squares, linear_fit};
use super::oscillation::check_series;
use crate::error::{Error, Result};

/// Fit bounds (ns).
pub const T1_BOUNDS: (f64, f64) = (10.0, 1e5);
pub const TPHI_BOUNDS: (f64, f64) = (1.0, 1e5);

/// Envelope fit `h0·exp(−t/t1_tilde)·exp(−(t/t_phi)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub h0: f64,
    /// ns; infinite when fixed to infinity.
    pub t1_tilde: f64,
    /// ns.
    pub t_phi: f64,
    /// 1/e time of the fitted envelope (ns).
    pub t_e: f64,
    pub fixed_t1: bool,
    /// The Gaussian time exceeds the fitted window, so it is only a lower bound.
    pub t_phi_unresolved: bool,
    /// Both times are free and the window is shorter than half of the smaller.
    pub identifiability_warning: bool,
    pub residual_rms: f64,
}

impl DecayFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.h0 * (-t / self.t1_tilde - (t / self.t_phi).powi(2)).exp()
    }
}

/// Root of `r1·t + r2·t² = 1`.
pub fn one_over_e_time(r1: f64, r2: f64) -> f64 {
    if r2 <= 0.0 {
        return if r1 > 0.0 { 1.0 / r1 } else { f64::INFINITY };
    }
    // stable form of (−r1 + √(r1² + 4r2)) / (2r2)
    2.0 / (r1 + (r1 * r1 + 4.0 * r2).sqrt())
}

/// First time at which `h` falls to `level·h[0]`, interpolated linearly in
/// ln h between the bracketing samples. Makes no assumption about the
/// shape of the decay.
pub fn crossing_time(t: &[f64], h: &[f64], level: f64) -> Result<f64> {
    check_series(t, h, 2)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level must lie in (0, 1), got {level}")));
    }
    if !(h[0] > 0.0) {
        return Err(Error::Fit("envelope must start positive".into()));
    }
    let target = level * h[0];
    let i = h
        .iter()
        .position(|&v| v < target)
        .ok_or_else(|| Error::Fit(format!("envelope never falls below {level} of its initial value")))?;
    let (h0, h1) = (h[i - 1], h[i].max(1e-300));
    let w = (h0.ln() - target.ln()) / (h0.ln() - h1.ln());
    Ok(t[i - 1] + w * (t[i] - t[i - 1]))
}

fn rate_bounds() -> ((f64, f64), (f64, f64)) {
    (
        (1.0 / T1_BOUNDS.1, 1.0 / T1_BOUNDS.0),
        (TPHI_BOUNDS.1.powi(-2), TPHI_BOUNDS.0.powi(-2)),
    )
}

/// Weighted regression of ln h on (1, t, t²), used as the starting point.
fn log_regression(t: &[f64], h: &[f64], r1_fixed: Option<f64>) -> Option<(f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = t.iter().zip(h).filter(|(_, h)| **h > 0.0).map(|(t, h)| (*t, *h)).collect();
    let hmax = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let ncols = if r1_fixed.is_some() { 2 } else { 3 };
    if pts.len() < ncols {
        return None;
    }
    let a = DMatrix::from_fn(pts.len(), ncols, |i, j| {
        let (t, h) = pts[i];
        let w = h / hmax;
        w * match (j, r1_fixed) {
            (0, _) => 1.0,
            (1, None) => -t,
            _ => -t * t,
        }
    });
    let b = DVector::from_fn(pts.len(), |i, _| {
        let (t, h) = pts[i];
        (h / hmax) * (h.ln() + r1_fixed.map_or(0.0, |r1| r1 * t))
    });
    let c = linear_fit(&a, &b)?;
    Some(match r1_fixed {
        None => (c[0], c[1], c[2]),
        Some(r1) => (c[0], r1, c[1]),
    })
}

/// Fit the envelope. With `fix_t1` only the amplitude and the Gaussian
/// time are free (`Some(f64::INFINITY)` removes the exponential factor).
pub fn fit_decay(t: &[f64], h: &[f64], fix_t1: Option<f64>) -> Result<DecayFit> {
    check_series(t, h, 6)?;
    if h.iter().any(|&v| v < 0.0) || h.iter().all(|&v| v == 0.0) {
        return Err(Error::Fit("envelope must be non-negative and not identically zero".into()));
    }
    if let Some(t1) = fix_t1 {
        if !(t1 > 0.0) {
            return Err(Error::Domain(format!("fixed T1 must be > 0, got {t1}")));
        }
    }
    let ((r1_lo, r1_hi), (r2_lo, r2_hi)) = rate_bounds();
    let r1_fixed = fix_t1.map(|t1| 1.0 / t1);
    let (ln_h0, r1_init, r2_init) =
        log_regression(t, h, r1_fixed).ok_or_else(|| Error::Fit("envelope has too few positive points".into()))?;
    let r1_init = r1_fixed.unwrap_or(r1_init.clamp(r1_lo, r1_hi));
    let r2_init = r2_init.clamp(r2_lo, r2_hi);
    let n = t.len();
    // free parameters are logarithms, which keeps the rates positive
    let unpack = |x: &[f64]| -> (f64, f64, f64) {
        match r1_fixed {
            Some(r1) => (x[0].exp(), r1, x[1].exp()),
            None => (x[0].exp(), x[1].exp(), x[2].exp()),
        }
    };
    let x0: Vec<f64> = match r1_fixed {
        Some(_) => vec![ln_h0, r2_init.ln()],
        None => vec![ln_h0, r1_init.ln(), r2_init.ln()],
    };
    let fit = least_squares(&x0, n, |x, r| {
        let (h0, r1, r2) = unpack(x);
        for i in 0..n {
            r[i] = h0 * (-r1 * t[i] - r2 * t[i] * t[i]).exp() - h[i];
        }
    });
    if !fit.converged {
        return Err(Error::Fit(format!(
            "envelope fit did not converge ({}); start h0 = {:.4}, T1 = {:.1} ns, T_phi = {:.1} ns",
            fit.termination,
            ln_h0.exp(),
            1.0 / r1_init,
            r2_init.powf(-0.5)
        )));
    }
    let (h0, r1, r2) = unpack(&fit.x);
    let r1 = if r1_fixed.is_some() { r1 } else { r1.clamp(r1_lo, r1_hi) };
    let r2 = r2.clamp(r2_lo, r2_hi);
    let t1_tilde = if r1 > 0.0 { 1.0 / r1 } else { f64::INFINITY };
    let t_phi = r2.powf(-0.5);
    let span = t[n - 1];
    Ok(DecayFit {
        h0,
        t1_tilde,
        t_phi,
        t_e: one_over_e_time(r1, r2),
        fixed_t1: fix_t1.is_some(),
        t_phi_unresolved: t_phi > span,
        identifiability_warning: fix_t1.is_none() && span < 0.5 * t1_tilde.min(t_phi),
        residual_rms: fit.rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * dt).collect()
    }

    #[test]
    fn pure_exponential() {
        let t = grid(60, 10.0);
        let h: Vec<f64> = t.iter().map(|t| 0.7 * (-t / 800.0).exp()).collect();
        let f = fit_decay(&t, &h, None).unwrap();
        assert!((f.t1_tilde / 800.0 - 1.0).abs() < 0.02, "{f:?}");
        assert!(f.t_phi > t[59] && f.t_phi_unresolved);
    }

    #[test]
    fn pure_gaussian_with_infinite_t1() {
        let t = grid(40, 5.0);
        let h: Vec<f64> = t.iter().map(|t| 0.3 * (-(t / 90.0f64).powi(2)).exp()).collect();
        let f = fit_decay(&t, &h, Some(f64::INFINITY)).unwrap();
        assert!((f.t_phi / 90.0 - 1.0).abs() < 0.02);
        assert!(f.fixed_t1 && f.t1_tilde.is_infinite());
        assert!((f.t_e - 90.0).abs() < 1.0);
    }

    #[test]
    fn product_recovers_both_times() {
        let t = grid(80, 5.0);
        let h: Vec<f64> = t.iter().map(|t| (-t / 800.0 - (t / 120.0f64).powi(2)).exp()).collect();
        let f = fit_decay(&t, &h, None).unwrap();
        assert!((f.t1_tilde / 800.0 - 1.0).abs() < 0.05, "{f:?}");
        assert!((f.t_phi / 120.0 - 1.0).abs() < 0.05, "{f:?}");
        let ratio = f.eval(f.t_e) / f.h0;
        assert!((ratio - (-1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn scale_equivariant() {
        let t = grid(50, 4.0);
        let h: Vec<f64> = t.iter().map(|t| (-t / 300.0 - (t / 100.0f64).powi(2)).exp()).collect();
        let a = fit_decay(&t, &h, None).unwrap();
        let scaled: Vec<f64> = h.iter().map(|v| v * 37.0).collect();
        let b = fit_decay(&t, &scaled, None).unwrap();
        for (x, y) in [(a.t1_tilde, b.t1_tilde), (a.t_phi, b.t_phi), (a.t_e, b.t_e)] {
            assert!((x / y - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn identifiability_flag() {
        let t = grid(20, 1.0);
        let h: Vec<f64> = t.iter().map(|t| (-t / 800.0 - (t / 120.0f64).powi(2)).exp()).collect();
        assert!(fit_decay(&t, &h, None).unwrap().identifiability_warning);
    }

    #[test]
    fn rejects_bad_envelopes() {
        let t = grid(10, 1.0);
        assert!(fit_decay(&t[..5], &[1.0; 5], None).is_err());
        assert!(fit_decay(&t, &[0.0; 10], None).is_err());
        let mut h = vec![1.0; 10];
        h[3] = -0.1;
        assert!(fit_decay(&t, &h, None).is_err());
    }

    #[test]
    fn crossing_of_sampled_decay() {
        let t = grid(40, 5.0);
        let h: Vec<f64> = t.iter().map(|t| 0.6 * (-(t / 83.0f64).powi(2)).exp()).collect();
        let tc = crossing_time(&t, &h, (-1f64).exp()).unwrap();
        assert!((tc / 83.0 - 1.0).abs() < 0.01, "{tc}");
        let h: Vec<f64> = t.iter().map(|t| (-t / 50.0).exp()).collect();
        assert!((crossing_time(&t, &h, (-1f64).exp()).unwrap() - 50.0).abs() < 1e-9);
        assert!(crossing_time(&t, &vec![1.0; 40], 0.5).is_err());
        assert!(crossing_time(&t, &h, 1.5).is_err());
    }

    #[test]
    fn one_over_e() {
        assert_eq!(one_over_e_time(0.0, 0.0), f64::INFINITY);
        assert!((one_over_e_time(0.01, 0.0) - 100.0).abs() < 1e-12);
        let (r1, r2) = (1.0 / 800.0, 1.0 / 120.0f64.powi(2));
        let te = one_over_e_time(r1, r2);
        assert!((r1 * te + r2 * te * te - 1.0).abs() < 1e-12);
    }
}
