//! Flux-noise spectra, noise realizations, sequence filter coefficients and
//! the closed-form dephasing time.
//!
//! The 1/f spectrum S_Φ(ω) = A_Φ/|ω| is two-sided and normalised so that the
//! flux variance is ∫ S_Φ(ω) dω over all ω. A Gaussian phase accumulated under
//! this spectrum decays as exp[−(t/T_φ,N)²] with
//! 1/T_φ,N = 2π·√(c_N·A_Φ)·|∂f_osc/∂Φ|.

use std::f64::consts::{LN_2, PI};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dfosc_dphi, DeviceParams, C64};
use crate::quad;

/// Band-limited 1/f flux-noise spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneOverFSpectrum {
    /// Noise amplitude A_Φ in (µΦ₀)².
    pub a_phi: f64,
    /// Low angular-frequency cutoff (rad/s).
    pub omega_low: f64,
    /// High angular-frequency cutoff (rad/s).
    pub omega_high: f64,
}

impl Default for OneOverFSpectrum {
    fn default() -> Self {
        OneOverFSpectrum {
            a_phi: 1.4 * 1.4,
            omega_low: 2.0 * PI,
            omega_high: 2.0 * PI * 1e9,
        }
    }
}

impl OneOverFSpectrum {
    pub fn with_amplitude(a_phi: f64) -> Self {
        OneOverFSpectrum {
            a_phi,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_phi >= 0.0 && self.a_phi.is_finite()) {
            return Err(Error::config("a_phi", "must be finite and >= 0"));
        }
        if !(self.omega_low > 0.0) {
            return Err(Error::config("omega_low", "must be > 0"));
        }
        if !(self.omega_high > self.omega_low && self.omega_high.is_finite()) {
            return Err(Error::config("omega_high", "must be finite and > omega_low"));
        }
        Ok(())
    }
}

/// White transverse noise acting on the dressed states near f_osc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhiteTransverseChannel {
    /// Transverse noise power S_⊥ at f_osc (rad/s).
    pub s_perp: f64,
}

impl Default for WhiteTransverseChannel {
    fn default() -> Self {
        WhiteTransverseChannel { s_perp: 2.8e6 }
    }
}

impl WhiteTransverseChannel {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_perp >= 0.0 && self.s_perp.is_finite()) {
            return Err(Error::config("s_perp", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// A sampled flux-noise realization. Samples hold over `[k·dt, (k+1)·dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrajectory {
    /// Sample spacing (ns).
    pub dt: f64,
    /// Flux offsets (µΦ₀).
    pub samples: Vec<f64>,
}

impl NoiseTrajectory {
    /// Piecewise-constant value at time `t` (ns); clamps past the last sample.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = (t / self.dt).floor().max(0.0) as usize;
        self.samples[k.min(self.samples.len() - 1)]
    }

    /// Two-column CSV export `(t_ns, dphi_uPhi0)`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wtr.write_record(["t_ns", "dphi_uPhi0"])?;
        for (k, x) in self.samples.iter().enumerate() {
            wtr.write_record([(k as f64 * self.dt).to_string(), x.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Spectral density A_Φ/|ω| inside the band, zero outside.
pub fn psd(spec: &OneOverFSpectrum, omega: f64) -> Result<f64> {
    if omega == 0.0 || !omega.is_finite() {
        return Err(Error::Domain(format!("psd undefined at omega = {omega}")));
    }
    let w = omega.abs();
    if w < spec.omega_low || w > spec.omega_high {
        Ok(0.0)
    } else {
        Ok(spec.a_phi / w)
    }
}

/// Flux variance of the spectrum between `omega_low` and `omega_cut`.
pub fn quasistatic_variance(spec: &OneOverFSpectrum, omega_cut: f64) -> Result<f64> {
    if !(omega_cut > spec.omega_low && omega_cut <= spec.omega_high) {
        return Err(Error::Domain(format!(
            "cutoff {omega_cut} rad/s outside ({}, {}]",
            spec.omega_low, spec.omega_high
        )));
    }
    Ok(2.0 * spec.a_phi * (omega_cut / spec.omega_low).ln())
}

/// Standard deviation (µΦ₀) of the flux treated as static up to `omega_cut`.
pub fn quasistatic_sigma(spec: &OneOverFSpectrum, omega_cut: f64) -> Result<f64> {
    quasistatic_variance(spec, omega_cut).map(f64::sqrt)
}

/// Default quasi-static cutoff for an experiment of length `t_experiment` (ns):
/// ω_cut = 2π/(2·t).
pub fn default_quasistatic_cutoff(t_experiment: f64) -> f64 {
    PI / (t_experiment * 1e-9)
}

/// Deterministic RNG for a master seed.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for member `index` of an ensemble: an independent ChaCha stream.
pub fn ensemble_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Derived seed for grid point `index` of a sweep.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    ensemble_rng(master_seed, index.wrapping_add(1 << 40)).random()
}

/// One Gaussian quasi-static flux offset (µΦ₀).
pub fn sample_quasistatic(spec: &OneOverFSpectrum, omega_cut: f64, seed: u64) -> Result<f64> {
    let sigma = quasistatic_sigma(spec, omega_cut)?;
    let mut rng = rng_for(seed);
    Ok(draw_gaussian(&mut rng, sigma))
}

pub(crate) fn draw_gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    if sigma == 0.0 {
        0.0
    } else {
        sigma * z
    }
}

/// Number of FFT points used to synthesize `n_out` samples.
fn synthesis_length(n_out: usize) -> usize {
    (2 * n_out).next_power_of_two().max(8)
}

/// Lower edge (rad/s) of the lowest frequency cell of a synthesized
/// trajectory of the given duration and spacing (ns): half the fundamental.
/// Noise below it has to be supplied separately.
pub fn synthesis_floor(duration: f64, dt: f64) -> f64 {
    let n_out = (duration / dt).floor() as usize + 1;
    PI / (synthesis_length(n_out) as f64 * dt * 1e-9)
}

/// Spectral synthesis of a real 1/f trajectory covering `[0, duration]`.
///
/// Each discrete frequency ω_k = kΔω, Δω = 2π/(N·dt), gets independent
/// Gaussian cosine and sine amplitudes whose variance is the spectral weight
/// of its cell [(k−½)Δω, (k+½)Δω] clipped to the band, 2·A_Φ·ln(hi/lo); the
/// series is assembled with one inverse FFT. The synthesis period N·dt is at
/// least twice the requested duration.
pub fn synthesize_trajectory(
    spec: &OneOverFSpectrum,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<NoiseTrajectory> {
    let mut rng = rng_for(seed);
    synthesize_with(spec, duration, dt, &mut rng)
}

pub(crate) fn synthesize_with<R: Rng>(
    spec: &OneOverFSpectrum,
    duration: f64,
    dt: f64,
    rng: &mut R,
) -> Result<NoiseTrajectory> {
    if !(dt > 0.0 && duration >= dt) {
        return Err(Error::Domain(format!(
            "need duration >= dt > 0, got duration {duration}, dt {dt}"
        )));
    }
    let n_out = (duration / dt).floor() as usize + 1;
    let n = synthesis_length(n_out);
    let d_omega = 2.0 * PI / (n as f64 * dt * 1e-9);
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for (k, slot) in buf.iter_mut().enumerate().take(n / 2 + 1).skip(1) {
        let omega = k as f64 * d_omega;
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let lo = (omega - 0.5 * d_omega).max(spec.omega_low);
        let hi = (omega + 0.5 * d_omega).min(spec.omega_high);
        if hi <= lo || spec.a_phi == 0.0 {
            continue;
        }
        let sd = (2.0 * spec.a_phi * (hi / lo).ln()).sqrt();
        // Re[(a − ib)·e^{iωt}] = a·cos ωt + b·sin ωt
        *slot = C64::new(sd * a, -sd * b);
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut buf);
    let samples = buf.iter().take(n_out).map(|z| z.re).collect();
    Ok(NoiseTrajectory { dt, samples })
}

/// |y_N(z)|², the dimensionless filter of an N-pulse Carr–Purcell sequence at
/// z = ω·t (N = 0 is free evolution). Pulses sit at t·(2k−1)/(2N).
pub fn cp_filter(z: f64, n_pulses: u32) -> f64 {
    if z == 0.0 {
        return if n_pulses == 0 { 1.0 } else { 0.0 };
    }
    if n_pulses == 0 {
        let s = (0.5 * z).sin();
        return 4.0 * s * s / (z * z);
    }
    let n = n_pulses as f64;
    let last = if n_pulses % 2 == 0 { -1.0 } else { 1.0 };
    let mut re = 1.0 + last * z.cos();
    let mut im = last * z.sin();
    for k in 1..=n_pulses {
        let sign = if k % 2 == 0 { 2.0 } else { -2.0 };
        let phase = z * (2.0 * k as f64 - 1.0) / (2.0 * n);
        re += sign * phase.cos();
        im += sign * phase.sin();
    }
    (re * re + im * im) / (z * z)
}

/// ∫ dz/z·|y_N(z)|² from `z_low` to infinity.
pub(crate) fn filter_integral(n_pulses: u32, z_low: f64) -> f64 {
    let f = |z: f64| cp_filter(z, n_pulses) / z;
    let fu = |u: f64| cp_filter(u.exp(), n_pulses);
    let mut total = 0.0;
    // logarithmic part below z = 1
    if z_low < 1.0 {
        let u0 = z_low.ln();
        let pieces = (-u0).ceil().max(1.0) as usize;
        let w = -u0 / pieces as f64;
        for i in 0..pieces {
            total += quad::integrate(&fu, u0 + i as f64 * w, u0 + (i + 1) as f64 * w, 1e-13);
        }
    }
    // oscillatory part in half periods of the slowest phase factor
    let n = n_pulses.max(1) as f64;
    let z_start = z_low.max(1.0);
    let z_end = 400.0 * (n + 1.0) * PI;
    let step = PI / 2.0;
    let mut a = z_start;
    while a < z_end {
        let b = (a + step).min(z_end);
        total += quad::integrate(&f, a, b, 1e-14);
        a = b;
    }
    // tail: |y|²·z² averages to 4N + 2 (N ≥ 1) or 2 (N = 0)
    let mean = if n_pulses == 0 { 2.0 } else { 4.0 * n + 2.0 };
    total + mean / (2.0 * z_end * z_end)
}

/// Filter coefficient c_N of an N-pulse Carr–Purcell sequence of total
/// length `total_time` (ns): c_0 = ln(1/(ω_low·t)), c_1 = ln 2, and for
/// N ≥ 2 the filter integral ∫ dz/z·|y_N(z)|².
pub fn filter_coefficient(n_pulses: u32, total_time: f64, spec: &OneOverFSpectrum) -> Result<f64> {
    if !(total_time > 0.0 && total_time.is_finite()) {
        return Err(Error::Domain(format!("total_time must be > 0, got {total_time}")));
    }
    let z_low = spec.omega_low * total_time * 1e-9;
    match n_pulses {
        0 => {
            let c0 = (1.0 / z_low).ln();
            if c0 <= 0.0 {
                return Err(Error::Domain(format!(
                    "total_time {total_time} ns exceeds 1/omega_low"
                )));
            }
            Ok(c0)
        }
        1 => Ok(LN_2),
        n => Ok(filter_integral(n, z_low)),
    }
}

/// Gaussian dephasing time T_φ,N (ns) at flux offset `dphi` (µΦ₀).
///
/// For N = 0 the time inside c_0 is solved self-consistently (t = T_φ,0),
/// starting from `total_time`. Returns `f64::INFINITY` where the flux
/// sensitivity or the noise amplitude vanishes.
pub fn predicted_tphi(
    n_pulses: u32,
    dphi: f64,
    total_time: f64,
    spec: &OneOverFSpectrum,
    params: &DeviceParams,
) -> Result<f64> {
    // GHz per µΦ₀
    let sens = dfosc_dphi(dphi, params).abs() * 1e-3;
    if sens == 0.0 || spec.a_phi == 0.0 {
        return Ok(f64::INFINITY);
    }
    let tphi = |c: f64| 1.0 / (2.0 * PI * (c * spec.a_phi).sqrt() * sens);
    if n_pulses > 0 {
        return Ok(tphi(filter_coefficient(n_pulses, total_time, spec)?));
    }
    let mut t = total_time;
    for _ in 0..200 {
        let next = tphi(filter_coefficient(0, t, spec)?);
        if ((next - t) / next).abs() < 1e-9 {
            return Ok(next);
        }
        t = next;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psd_band_and_scaling() {
        let spec = OneOverFSpectrum::default();
        assert_relative_eq!(psd(&spec, spec.omega_low).unwrap(), spec.a_phi / spec.omega_low);
        let w0 = 2.0 * PI * 1e3;
        assert_relative_eq!(psd(&spec, 2.0 * w0).unwrap(), 0.5 * psd(&spec, w0).unwrap());
        assert_eq!(psd(&spec, 0.5 * spec.omega_low).unwrap(), 0.0);
        assert_eq!(psd(&spec, 2.0 * spec.omega_high).unwrap(), 0.0);
        assert_eq!(psd(&spec, -w0).unwrap(), psd(&spec, w0).unwrap());
        assert!(psd(&spec, 0.0).is_err());
    }

    #[test]
    fn quasistatic_sigma_values() {
        let spec = OneOverFSpectrum::default();
        // ln(cut/low) = π/2 gives σ² = π·A_Φ under the ∫ S dω normalisation
        let cut = spec.omega_low * (PI / 2.0).exp();
        assert_relative_eq!(quasistatic_variance(&spec, cut).unwrap(), PI * spec.a_phi, max_relative = 1e-12);
        // 1 Hz .. 10 MHz: σ² = 2·1.96·ln(1e7)
        let s = quasistatic_sigma(&spec, 2.0 * PI * 1e7).unwrap();
        assert!((s - 7.95).abs() < 0.01, "{s}");
        let zero = OneOverFSpectrum::with_amplitude(0.0);
        assert_eq!(quasistatic_sigma(&zero, 1e3).unwrap(), 0.0);
        assert!(quasistatic_sigma(&spec, 1.0).is_err());
        assert!(quasistatic_sigma(&spec, 1e12).is_err());
    }

    #[test]
    fn quasistatic_samples() {
        let spec = OneOverFSpectrum::default();
        let cut = 2.0 * PI * 1e6;
        let a = sample_quasistatic(&spec, cut, 7).unwrap();
        assert_eq!(a, sample_quasistatic(&spec, cut, 7).unwrap());
        assert_eq!(sample_quasistatic(&OneOverFSpectrum::with_amplitude(0.0), cut, 7).unwrap(), 0.0);
        let sigma = quasistatic_sigma(&spec, cut).unwrap();
        let mut rng = rng_for(99);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| draw_gaussian(&mut rng, sigma)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.02);
    }

    #[test]
    fn zero_amplitude_trajectory_is_silent() {
        let t = synthesize_trajectory(&OneOverFSpectrum::with_amplitude(0.0), 100.0, 1.0, 3).unwrap();
        assert_eq!(t.samples.len(), 101);
        assert!(t.samples.iter().all(|&x| x == 0.0));
        assert!(synthesize_trajectory(&OneOverFSpectrum::default(), 0.5, 1.0, 3).is_err());
    }

    #[test]
    fn trajectory_is_deterministic_and_exports_csv() {
        let spec = OneOverFSpectrum::default();
        let a = synthesize_trajectory(&spec, 50.0, 0.5, 11).unwrap();
        let b = synthesize_trajectory(&spec, 50.0, 0.5, 11).unwrap();
        assert_eq!(a, b);
        let mut out = Vec::new();
        a.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("t_ns,dphi_uPhi0\n0,"));
        assert_eq!(text.lines().count(), a.samples.len() + 1);
    }

    #[test]
    fn trajectory_variance_matches_mode_sum() {
        // E[sample variance over the window] = Σ_k v_k·(1 − |⟨e^{iω_k t}⟩|²)
        let spec = OneOverFSpectrum::default();
        let (dt, duration) = (1.0, 4095.0);
        let n_out = 4096;
        let n = synthesis_length(n_out);
        let d_omega = 2.0 * PI / (n as f64 * dt * 1e-9);
        let mut expect = 0.0;
        for k in 1..=n / 2 {
            let w = k as f64 * d_omega * dt * 1e-9;
            let (mut re, mut im) = (0.0, 0.0);
            for j in 0..n_out {
                re += (w * j as f64).cos();
                im += (w * j as f64).sin();
            }
            let m2 = (re * re + im * im) / (n_out * n_out) as f64;
            expect += 2.0 * spec.a_phi / k as f64 * (1.0 - m2);
        }
        let seeds = 64;
        let mut mean_var = 0.0;
        for seed in 0..seeds {
            let traj = synthesize_trajectory(&spec, duration, dt, seed).unwrap();
            let m = traj.samples.iter().sum::<f64>() / n_out as f64;
            mean_var += traj.samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n_out as f64;
        }
        mean_var /= seeds as f64;
        assert!((mean_var / expect - 1.0).abs() < 0.08, "{mean_var} vs {expect}");
    }

    #[test]
    fn filter_coefficients() {
        let spec = OneOverFSpectrum::default();
        assert_relative_eq!(filter_coefficient(1, 10.0, &spec).unwrap(), LN_2);
        assert_relative_eq!(filter_coefficient(1, 1e4, &spec).unwrap(), LN_2);
        let c0 = filter_coefficient(0, 100.0, &spec).unwrap();
        assert!((c0 - 14.28).abs() < 0.01);
        let c2 = filter_coefficient(2, 100.0, &spec).unwrap();
        assert!(c2 < LN_2 && LN_2 < c0);
        let c4 = filter_coefficient(4, 100.0, &spec).unwrap();
        assert!(c4 < c2);
        assert!(filter_coefficient(2, 0.0, &spec).is_err());
        assert!(filter_coefficient(0, -1.0, &spec).is_err());
    }

    #[test]
    fn filter_integral_reproduces_closed_forms() {
        // Hahn echo: exactly ln 2
        assert!((filter_integral(1, 1e-9) - LN_2).abs() < 1e-7);
        // free evolution: ln(1/z) + 3/2 − γ for small z
        let z = 2.0 * PI * 1e-7;
        let euler_gamma = 0.577_215_664_901_532_9;
        assert!((filter_integral(0, z) - ((1.0 / z).ln() + 1.5 - euler_gamma)).abs() < 1e-5);
    }

    #[test]
    fn predicted_tphi_values() {
        let spec = OneOverFSpectrum::default();
        let p = DeviceParams::default();
        assert_eq!(predicted_tphi(0, 0.0, 100.0, &spec, &p).unwrap(), f64::INFINITY);
        let t0 = predicted_tphi(0, -60.0, 100.0, &spec, &p).unwrap();
        assert!((t0 - 80.0).abs() < 5.0, "{t0}");
        // self-consistency: c_0 evaluated at t = T_φ,0 reproduces T_φ,0
        let c0 = filter_coefficient(0, t0, &spec).unwrap();
        let sens = dfosc_dphi(-60.0, &p).abs() * 1e-3;
        let direct = 1.0 / (2.0 * PI * (c0 * spec.a_phi).sqrt() * sens);
        assert!((direct / t0 - 1.0).abs() < 1e-3);
        let c0_100 = filter_coefficient(0, 100.0, &spec).unwrap();
        assert!((c0_100 / LN_2).sqrt() > 4.0);
        let t_plus = predicted_tphi(0, 60.0, 100.0, &spec, &p).unwrap();
        // nearly symmetric; the spectrum's curvature skews it by a few percent
        assert!((t_plus / t0 - 1.0).abs() < 0.05);
    }
}
