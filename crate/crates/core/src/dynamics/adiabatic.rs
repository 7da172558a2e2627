//! Sweep-rate check of flux transitions against the Landau–Zener window
//! `S² ≪ dδf/dt ≪ f_qb²`.

use serde::Serialize;

use super::pulse::{PulseSequence, Transition};
use crate::model::{detuning, dfqb_dphi, flux_at, qubit_frequency, DeviceParams};

/// Classification of one transition against the two bounds. Anything
/// within a factor of ten of a bound counts as near it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RampClass {
    Fine,
    /// Slow enough that the coupled pair starts to follow adiabatically.
    NearLower,
    BelowLower,
    /// Fast enough to start exciting the qubit itself.
    NearUpper,
    AboveUpper,
}

impl RampClass {
    fn of(rate: f64, lower: f64, upper: f64) -> Self {
        if rate >= upper {
            RampClass::AboveUpper
        } else if rate <= lower {
            RampClass::BelowLower
        } else if rate * 10.0 > upper {
            RampClass::NearUpper
        } else if rate < 10.0 * lower {
            RampClass::NearLower
        } else {
            RampClass::Fine
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RampRate {
    /// Centre (or start, for linear ramps) of the transition (ns).
    pub t: f64,
    pub from_dphi: f64,
    pub to_dphi: f64,
    /// |Δδf| divided by the rise time or ramp duration (GHz²).
    pub rate: f64,
    /// Largest instantaneous |dδf/dt| along the transition (GHz²).
    pub peak_rate: f64,
    pub class: RampClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdiabaticityReport {
    /// S² (GHz²).
    pub lower_bound: f64,
    /// Smallest f_qb² over the levels visited (GHz²).
    pub upper_bound: f64,
    pub ramps: Vec<RampRate>,
    /// True when any ramp is not [`RampClass::Fine`].
    pub flagged: bool,
}

impl AdiabaticityReport {
    pub fn min_rate(&self) -> Option<f64> {
        self.ramps.iter().map(|r| r.rate).reduce(f64::min)
    }

    pub fn max_rate(&self) -> Option<f64> {
        self.ramps.iter().map(|r| r.rate).reduce(f64::max)
    }
}

fn peak_rate(tr: &Transition, from: f64, params: &DeviceParams) -> f64 {
    let (a, b) = tr.window();
    const N: usize = 400;
    (0..=N)
        .map(|k| {
            let t = a + (b - a) * k as f64 / N as f64;
            let dphi = from + tr.value(t);
            // µΦ₀/ns → mΦ₀/ns
            (dfqb_dphi(flux_at(dphi, params), params) * tr.slope(t) * 1e-3).abs()
        })
        .fold(0.0, f64::max)
}

/// Sweep rate of the qubit–TLS detuning along every flux transition.
pub fn adiabaticity_check(seq: &PulseSequence, params: &DeviceParams) -> AdiabaticityReport {
    let profile = seq.profile();
    let levels = profile.levels();
    let lower = params.s * params.s;
    let upper = levels
        .iter()
        .map(|&l| qubit_frequency(flux_at(l, params), params).powi(2))
        .fold(f64::INFINITY, f64::min);
    let ramps: Vec<RampRate> = profile
        .transitions
        .iter()
        .zip(levels.windows(2))
        .map(|(tr, w)| {
            let (from, to) = (w[0], w[1]);
            let swing = (detuning(to, params) - detuning(from, params)).abs();
            let (t, rate, peak) = match *tr {
                Transition::Step { t0, .. } => (t0, f64::INFINITY, f64::INFINITY),
                Transition::Erf { t0, sigma, .. } => (
                    t0,
                    swing / (sigma * super::pulse::RISE_OVER_SIGMA),
                    peak_rate(tr, from, params),
                ),
                Transition::Linear { t0, t1, .. } => (t0, swing / (t1 - t0), peak_rate(tr, from, params)),
            };
            RampRate {
                t,
                from_dphi: from,
                to_dphi: to,
                rate,
                peak_rate: peak,
                class: RampClass::of(rate, lower, upper),
            }
        })
        .collect();
    let flagged = ramps.iter().any(|r| r.class != RampClass::Fine);
    AdiabaticityReport {
        lower_bound: lower,
        upper_bound: upper,
        ramps,
        flagged,
    }
}
