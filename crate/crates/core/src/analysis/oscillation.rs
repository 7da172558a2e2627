//! Frequency, phase and envelope of oscillating traces.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::lsq::{least_squares, linear_fit};
use crate::error::{Error, Result};

/// Damped-cosine fit `offset + amplitude·e^{−decay_rate·t}·cos(2π·f_osc·t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscFit {
    /// GHz.
    pub f_osc: f64,
    pub amplitude: f64,
    /// rad.
    pub phase: f64,
    pub offset: f64,
    /// 1/ns; negative for growing signals.
    pub decay_rate: f64,
    pub residual_rms: f64,
}

impl OscFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (-self.decay_rate * t).exp() * (2.0 * PI * self.f_osc * t + self.phase).cos()
    }
}

/// Local amplitude of an oscillation, one value per window centre.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Envelope {
    pub t: Vec<f64>,
    pub h: Vec<f64>,
}

/// Fixed-frequency fit `offset + i·cos(2πft) + q·sin(2πft)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quadrature {
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
}

pub(crate) fn check_series(t: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if t.len() != y.len() {
        return Err(Error::Domain(format!("trace has {} times but {} values", t.len(), y.len())));
    }
    if t.len() < min_len {
        return Err(Error::Fit(format!("need at least {min_len} samples, got {}", t.len())));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("trace contains non-finite values".into()));
    }
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("sample times must be strictly increasing".into()));
    }
    Ok(())
}

/// Least-squares quadrature amplitude of `y(t)` at frequency `f`.
pub fn demodulate(t: &[f64], y: &[f64], f: f64) -> Result<Quadrature> {
    check_series(t, y, 3)?;
    let w = 2.0 * PI * f;
    let a = DMatrix::from_fn(t.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => (w * t[i]).cos(),
        _ => (w * t[i]).sin(),
    });
    let c = linear_fit(&a, &DVector::from_column_slice(y))
        .ok_or_else(|| Error::Fit("singular quadrature fit".into()))?;
    // i·cos + q·sin = A·cos(ωt + φ) with φ = atan2(−q, i)
    Ok(Quadrature {
        amplitude: c[1].hypot(c[2]),
        phase: (-c[2]).atan2(c[1]),
        offset: c[0],
    })
}

/// Power of the mean-removed trace on a frequency grid (works for uneven sampling).
fn spectrum(t: &[f64], y: &[f64], freqs: &[f64]) -> Vec<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    freqs
        .iter()
        .map(|&f| {
            let (mut re, mut im) = (0.0, 0.0);
            for (&ti, &yi) in t.iter().zip(y) {
                let (s, c) = (2.0 * PI * f * ti).sin_cos();
                re += (yi - mean) * c;
                im -= (yi - mean) * s;
            }
            re * re + im * im
        })
        .collect()
}

/// Fit a damped cosine. The starting frequency is the peak of the discrete
/// spectrum; all five parameters are then refined by least squares.
pub fn fit_oscillation(t: &[f64], y: &[f64]) -> Result<OscFit> {
    check_series(t, y, 8)?;
    let n = t.len();
    let span = t[n - 1] - t[0];
    let mut dts: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    dts.sort_by(f64::total_cmp);
    let nyquist = 0.5 / dts[dts.len() / 2];
    let df = 1.0 / (8.0 * span);
    let freqs: Vec<f64> = (1..).map(|k| k as f64 * df).take_while(|&f| f <= nyquist).collect();
    let power = spectrum(t, y, &freqs);
    // ignore the lowest bins, dominated by slow trends
    let first = freqs.iter().position(|&f| f >= 1.0 / span).unwrap_or(0);
    let (k, &peak) = power[first..]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Fit("trace too short for a spectrum".into()))?;
    let k = k + first;
    let mut sorted = power[first..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    if !(peak > 10.0 * median) || peak < 1e-20 * (n as f64 * scale).powi(2) {
        return Err(Error::Fit("no spectral peak above the noise floor".into()));
    }
    let mut f0 = freqs[k];
    if k > 0 && k + 1 < freqs.len() {
        let (a, b, c) = (power[k - 1].ln(), power[k].ln(), power[k + 1].ln());
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            f0 += 0.5 * (a - c) / denom * df;
        }
    }
    let q = demodulate(t, y, f0)?;
    // internal parameters: [offset, u, v, f/f0, rate·span]
    let model = |x: &[f64], ti: f64| {
        let w = 2.0 * PI * x[3] * f0 * ti;
        x[0] + (-x[4] / span * ti).exp() * (x[1] * w.cos() - x[2] * w.sin())
    };
    let x0 = [q.offset, q.amplitude * q.phase.cos(), q.amplitude * q.phase.sin(), 1.0, 0.5];
    let fit = least_squares(&x0, n, |x, r| {
        for i in 0..n {
            r[i] = model(x, t[i]) - y[i];
        }
    });
    if !fit.converged {
        return Err(Error::Fit(format!("damped-cosine fit did not converge ({})", fit.termination)));
    }
    let x = &fit.x;
    let f_osc = (x[3] * f0).abs();
    let flip = if x[3] < 0.0 { -1.0 } else { 1.0 };
    let res = OscFit {
        f_osc,
        amplitude: x[1].hypot(x[2]),
        phase: (flip * x[2]).atan2(x[1]),
        offset: x[0],
        decay_rate: x[4] / span,
        residual_rms: fit.rms,
    };
    if f_osc * span < 1.5 {
        return Err(Error::Fit(format!(
            "trace spans {:.2} periods of the fitted {f_osc} GHz, need 1.5",
            f_osc * span
        )));
    }
    Ok(res)
}

/// Sliding-window quadrature demodulation at the fitted frequency, one
/// period per window. Windows that would leave the trace are skipped.
pub fn extract_envelope(t: &[f64], y: &[f64], fit: &OscFit) -> Result<Envelope> {
    if !(fit.f_osc > 0.0 && fit.f_osc.is_finite()) {
        return Err(Error::Fit(format!("unusable oscillation frequency {}", fit.f_osc)));
    }
    envelope_at(t, y, fit.f_osc)
}

/// Sliding-window envelope at a known frequency `f` (GHz).
pub fn envelope_at(t: &[f64], y: &[f64], f: f64) -> Result<Envelope> {
    check_series(t, y, 4)?;
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::Domain(format!("demodulation frequency must be > 0, got {f}")));
    }
    let period = 1.0 / f;
    let half = 0.5 * period;
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let eps = 1e-9 * period;
    let mut env = Envelope { t: vec![], h: vec![] };
    let mut lo = 0;
    let mut hi = 0;
    for &tc in t {
        if tc - half < t0 - eps || tc + half > t1 + eps {
            continue;
        }
        while t[lo] < tc - half - eps {
            lo += 1;
        }
        while hi < t.len() && t[hi] <= tc + half + eps {
            hi += 1;
        }
        if hi - lo < 4 {
            return Err(Error::Precondition(format!(
                "sampling too coarse: {} samples per oscillation period",
                hi - lo
            )));
        }
        let q = demodulate(&t[lo..hi], &y[lo..hi], f)?;
        env.t.push(tc);
        env.h.push(q.amplitude);
    }
    if env.t.is_empty() {
        return Err(Error::Precondition("trace shorter than one oscillation period".into()));
    }
    Ok(env)
}
