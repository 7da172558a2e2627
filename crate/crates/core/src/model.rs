//! Device parameters, spectra and Hamiltonians of the qubit–TLS system.
//!
//! Working units: frequencies and Hamiltonians (stored as `H/h`) in GHz, time in
//! ns, absolute qubit flux `phi_qb` in mΦ₀ and flux offsets from the resonance
//! point `dphi` in µΦ₀. The four-level basis is ordered
//! `{|0g⟩, |1g⟩, |0e⟩, |1e⟩}`, i.e. `index = qubit + 2 * tls`.

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix4 = Matrix4<C64>;
pub type ComplexMatrix2 = Matrix2<C64>;

/// Basis index of `|0g⟩`.
pub const IDX_0G: usize = 0;
/// Basis index of `|1g⟩`.
pub const IDX_1G: usize = 1;
/// Basis index of `|0e⟩`.
pub const IDX_0E: usize = 2;
/// Basis index of `|1e⟩`.
pub const IDX_1E: usize = 3;

/// CODATA exact SI constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Planck constant (J·s).
    pub h: f64,
    /// Magnetic flux quantum h/2e (Wb).
    pub phi0: f64,
    /// Boltzmann constant (J/K).
    pub kb: f64,
}

pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

pub const CONSTANTS: PhysicalConstants = PhysicalConstants {
    h: 6.626_070_15e-34,
    phi0: 6.626_070_15e-34 / (2.0 * ELEMENTARY_CHARGE),
    kb: 1.380_649e-23,
};

/// Physical parameters of the qubit and the TLS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DeviceParamsSi", into = "DeviceParamsSi")]
pub struct DeviceParams {
    /// Tunnel coupling Δ (GHz).
    pub delta: f64,
    /// Persistent current I_P (A).
    pub ip: f64,
    /// TLS frequency (GHz).
    pub f_tls: f64,
    /// Qubit–TLS splitting S (GHz).
    pub s: f64,
    /// Resonance flux Φ* (mΦ₀).
    pub phi_star: f64,
    /// Qubit relaxation time (s).
    pub t1_qb: f64,
    /// TLS relaxation time (s).
    pub t1_tls: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams::new(5.4, 180e-9, None, 0.076, -4.15, 10e-6, 1e-6)
    }
}

impl DeviceParams {
    /// Build a parameter set. With `f_tls = None` the TLS is placed exactly at
    /// the qubit frequency at `phi_star`.
    pub fn new(
        delta: f64,
        ip: f64,
        f_tls: Option<f64>,
        s: f64,
        phi_star: f64,
        t1_qb: f64,
        t1_tls: f64,
    ) -> Self {
        let mut p = DeviceParams {
            delta,
            ip,
            f_tls: 0.0,
            s,
            phi_star,
            t1_qb,
            t1_tls,
        };
        p.f_tls = f_tls.unwrap_or_else(|| qubit_frequency(phi_star, &p));
        p
    }

    /// Check the parameter invariants. Errors carry the SI field name.
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("delta", self.delta),
            ("ip", self.ip),
            ("s", self.s),
            ("t1_qb", self.t1_qb),
            ("t1_tls", self.t1_tls),
            ("f_tls", self.f_tls),
        ];
        for (name, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(
                    name,
                    format!("must be finite and > 0, got {value}"),
                ));
            }
        }
        if !self.phi_star.is_finite() {
            return Err(Error::config("phi_star", "must be finite"));
        }
        Ok(())
    }

    /// Qubit relaxation rate in 1/ns.
    pub fn gamma_qb(&self) -> f64 {
        1e-9 / self.t1_qb
    }

    /// TLS relaxation rate in 1/ns.
    pub fn gamma_tls(&self) -> f64 {
        1e-9 / self.t1_tls
    }
}

/// JSON form of [`DeviceParams`]: every field in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParamsSi {
    /// Hz
    pub delta: f64,
    /// A
    pub ip: f64,
    /// Hz; omitted or null places the TLS on resonance at `phi_star`.
    #[serde(default)]
    pub f_tls: Option<f64>,
    /// Hz
    pub s: f64,
    /// Wb
    pub phi_star: f64,
    /// s
    pub t1_qb: f64,
    /// s
    pub t1_tls: f64,
}

impl Default for DeviceParamsSi {
    fn default() -> Self {
        DeviceParamsSi {
            f_tls: None,
            ..DeviceParams::default().into()
        }
    }
}

impl From<DeviceParams> for DeviceParamsSi {
    fn from(p: DeviceParams) -> Self {
        DeviceParamsSi {
            delta: p.delta * 1e9,
            ip: p.ip,
            f_tls: Some(p.f_tls * 1e9),
            s: p.s * 1e9,
            phi_star: p.phi_star * 1e-3 * CONSTANTS.phi0,
            t1_qb: p.t1_qb,
            t1_tls: p.t1_tls,
        }
    }
}

impl TryFrom<DeviceParamsSi> for DeviceParams {
    type Error = Error;

    fn try_from(si: DeviceParamsSi) -> Result<Self> {
        let p = DeviceParams::new(
            si.delta * 1e-9,
            si.ip,
            si.f_tls.map(|f| f * 1e-9),
            si.s * 1e-9,
            si.phi_star / CONSTANTS.phi0 * 1e3,
            si.t1_qb,
            si.t1_tls,
        );
        p.validate()?;
        Ok(p)
    }
}

/// Energy bias per unit flux, 2·I_P·Φ₀/h, in GHz per mΦ₀.
fn bias_per_mphi0(params: &DeviceParams) -> f64 {
    2.0 * params.ip * CONSTANTS.phi0 / CONSTANTS.h * 1e-3 * 1e-9
}

/// Energy detuning ε = 2·I_P·Φ_qb/h in GHz for a flux in mΦ₀.
pub fn epsilon(phi_qb: f64, params: &DeviceParams) -> f64 {
    bias_per_mphi0(params) * phi_qb
}

/// Qubit transition frequency √(Δ² + ε²) in GHz.
pub fn qubit_frequency(phi_qb: f64, params: &DeviceParams) -> f64 {
    params.delta.hypot(epsilon(phi_qb, params))
}

/// ∂f_qb/∂Φ in GHz per mΦ₀.
pub fn dfqb_dphi(phi_qb: f64, params: &DeviceParams) -> f64 {
    let eps = epsilon(phi_qb, params);
    eps / qubit_frequency(phi_qb, params) * bias_per_mphi0(params)
}

/// Absolute qubit flux (mΦ₀) for an offset from the resonance point in µΦ₀.
pub fn flux_at(dphi: f64, params: &DeviceParams) -> f64 {
    params.phi_star + dphi * 1e-3
}

/// TLS–qubit detuning δf = f_TLS − f_qb(Φ* + δΦ) in GHz, δΦ in µΦ₀.
pub fn detuning(dphi: f64, params: &DeviceParams) -> f64 {
    params.f_tls - qubit_frequency(flux_at(dphi, params), params)
}

/// Coupled oscillation frequency √(δf² + S²).
pub fn f_osc(df: f64, s: f64) -> f64 {
    df.hypot(s)
}

/// Oscillation frequency at a flux offset (µΦ₀).
pub fn f_osc_at(dphi: f64, params: &DeviceParams) -> f64 {
    f_osc(detuning(dphi, params), params.s)
}

/// Flux sensitivity ∂f_osc/∂Φ in GHz per mΦ₀ at a flux offset in µΦ₀.
pub fn dfosc_dphi(dphi: f64, params: &DeviceParams) -> f64 {
    let df = detuning(dphi, params);
    let fo = f_osc(df, params.s);
    if fo == 0.0 {
        return 0.0;
    }
    let ddf = -dfqb_dphi(flux_at(dphi, params), params);
    df / fo * ddf
}

/// Flux offset (µΦ₀) at which `detuning` equals `target`, searched on the
/// branch of the qubit spectrum that contains Φ*.
pub fn flux_for_detuning(target: f64, params: &DeviceParams) -> Result<f64> {
    let sign = if params.phi_star < 0.0 { -1.0 } else { 1.0 };
    // Detuning is monotonic in |Φ| on one branch; at Φ = 0 it is maximal.
    let max_df = params.f_tls - params.delta;
    if !(target < max_df) || !target.is_finite() {
        return Err(Error::Domain(format!(
            "detuning {target} GHz unreachable (branch maximum {max_df} GHz)"
        )));
    }
    // g(|Φ|) = detuning at Φ = sign·|Φ|, decreasing in |Φ|.
    let g = |abs_phi: f64| params.f_tls - qubit_frequency(sign * abs_phi, params);
    let mut lo = 0.0;
    let mut hi = params.phi_star.abs().max(1.0);
    while g(hi) > target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Domain(format!("detuning {target} GHz unreachable")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let abs_phi = 0.5 * (lo + hi);
    Ok((sign * abs_phi - params.phi_star) * 1e3)
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Lab-frame Hamiltonian `H/h` (GHz) of qubit, TLS and their σx⊗σx coupling.
pub fn full_hamiltonian(phi_qb: f64, params: &DeviceParams) -> ComplexMatrix4 {
    let fq = qubit_frequency(phi_qb, params);
    let ft = params.f_tls;
    let mut h = ComplexMatrix4::zeros();
    for i in 0..4 {
        let zq = if i & 1 == 0 { 1.0 } else { -1.0 };
        let zt = if i & 2 == 0 { 1.0 } else { -1.0 };
        h[(i, i)] = c(-0.5 * fq * zq - 0.5 * ft * zt);
        h[(i, i ^ 3)] = c(-0.5 * params.s);
    }
    h
}

/// Four-level Hamiltonian in the frame rotating at f_TLS, within the
/// rotating-wave approximation. Block diagonal: `|0g⟩`, `{|1g⟩, |0e⟩}`, `|1e⟩`.
pub fn rotating_hamiltonian(df: f64, s: f64) -> ComplexMatrix4 {
    let mut h = ComplexMatrix4::zeros();
    h[(IDX_0G, IDX_0G)] = c(0.5 * df);
    h[(IDX_1G, IDX_1G)] = c(-0.5 * df);
    h[(IDX_0E, IDX_0E)] = c(0.5 * df);
    h[(IDX_1E, IDX_1E)] = c(-0.5 * df);
    h[(IDX_1G, IDX_0E)] = c(-0.5 * s);
    h[(IDX_0E, IDX_1G)] = c(-0.5 * s);
    h
}

/// Subspace Hamiltonian −½(δf·σz + S·σx) on `{|1g⟩, |0e⟩}` (GHz).
pub fn subspace_hamiltonian(df: f64, s: f64) -> ComplexMatrix2 {
    Matrix2::new(c(-0.5 * df), c(-0.5 * s), c(-0.5 * s), c(0.5 * df))
}

/// Largest absolute entry of `H − H†`.
pub fn hermiticity_defect(h: &ComplexMatrix4) -> f64 {
    let d = h - h.adjoint();
    d.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;

    fn p() -> DeviceParams {
        DeviceParams::default()
    }

    #[test]
    fn flux_quantum_matches_h_over_2e() {
        assert_relative_eq!(CONSTANTS.phi0, 2.067_833_848e-15, max_relative = 1e-9);
    }

    #[test]
    fn epsilon_values() {
        assert_eq!(epsilon(0.0, &p()), 0.0);
        // 2·I_P·Φ/h by hand: I_P·Φ[mΦ₀]·1e-3/e
        let by_hand = 180e-9 * 4.15e-3 / ELEMENTARY_CHARGE * 1e-9;
        assert_relative_eq!(epsilon(-4.15, &p()), -by_hand, max_relative = 1e-12);
        assert!((epsilon(-4.15, &p()) + 4.66).abs() < 0.01);
        assert!((epsilon(-2.95, &p()) + 3.31).abs() < 0.01);
        assert_relative_eq!(epsilon(1.3, &p()), -epsilon(-1.3, &p()));
    }

    #[test]
    fn qubit_spectrum_anchors() {
        assert_relative_eq!(qubit_frequency(0.0, &p()), 5.4);
        assert!((qubit_frequency(-4.15, &p()) / 7.08 - 1.0).abs() < 0.01);
        assert!((qubit_frequency(-2.95, &p()) / 6.3 - 1.0).abs() < 0.01);
        assert_relative_eq!(qubit_frequency(2.0, &p()), qubit_frequency(-2.0, &p()));
    }

    #[test]
    fn detuning_values() {
        assert_eq!(detuning(0.0, &p()), 0.0);
        // finite-difference slope of f_qb around Φ*
        let h = 1e-4;
        let slope = (qubit_frequency(-4.15 + h, &p()) - qubit_frequency(-4.15 - h, &p()))
            / (2.0 * h)
            * 1e-3;
        assert!((slope.abs() - 0.735e-3).abs() < 0.01e-3);
        // |δf| at -60 µΦ₀ ≈ 0.0444 GHz; sign follows δf = f_TLS − f_qb
        let d = detuning(-60.0, &p());
        assert!((d.abs() - 0.0444).abs() < 0.001, "{d}");
        assert!(d < 0.0);
        let far = detuning(1200.0, &p());
        assert!((far.abs() - 0.78).abs() < 0.03, "{far}");
    }

    #[test]
    fn f_osc_values() {
        assert_relative_eq!(f_osc(0.0, 0.076), 0.076);
        assert_relative_eq!(f_osc(-0.3, 0.0), 0.3);
        assert!((f_osc(0.0444, 0.076) - 0.0880).abs() < 1e-4);
    }

    #[test]
    fn sensitivity_matches_finite_difference() {
        assert_eq!(dfosc_dphi(0.0, &p()), 0.0);
        let fd = |x: f64| {
            let h = 0.1;
            (f_osc_at(x + h, &p()) - f_osc_at(x - h, &p())) / (2.0 * h) * 1e3
        };
        let a = dfosc_dphi(-60.0, &p());
        assert!((a.abs() - 0.373).abs() < 0.003, "{a}");
        for i in 0..=40 {
            let x = -200.0 + 10.0 * i as f64;
            if x == 0.0 {
                continue;
            }
            let an = dfosc_dphi(x, &p());
            let num = fd(x);
            assert!(((an - num) / an).abs() < 1e-6, "x={x} {an} {num}");
        }
    }

    #[test]
    fn flux_for_detuning_inverts() {
        for target in [-0.55, -0.1, 0.0, 0.3, 0.55] {
            let x = flux_for_detuning(target, &p()).unwrap();
            assert!((detuning(x, &p()) - target).abs() < 1e-10);
        }
        assert!(flux_for_detuning(5.0, &p()).is_err());
    }

    #[test]
    fn full_hamiltonian_is_hermitian_with_resonant_gap() {
        let h = full_hamiltonian(-4.15, &p());
        assert!(hermiticity_defect(&h) < 1e-12);
        let eig = SymmetricEigen::new(h);
        let mut e: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        assert!(((e[2] - e[1]) / 0.076 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn uncoupled_spectrum_is_tensor_sum() {
        let mut q = p();
        q.s = 0.0;
        let phi = -3.9;
        let fq = qubit_frequency(phi, &q);
        let eig = SymmetricEigen::new(full_hamiltonian(phi, &q));
        let mut e: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        let mut expect = vec![];
        for a in [-1.0, 1.0] {
            for b in [-1.0, 1.0] {
                expect.push(0.5 * a * fq + 0.5 * b * q.f_tls);
            }
        }
        expect.sort_by(f64::total_cmp);
        for (x, y) in e.iter().zip(&expect) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn subspace_gap_equals_f_osc() {
        let h = subspace_hamiltonian(0.0, 0.076);
        let eig = SymmetricEigen::new(h);
        // eigenvectors (|1g⟩ ± |0e⟩)/√2
        for k in 0..2 {
            let v = eig.eigenvectors.column(k);
            assert_relative_eq!(v[0].norm(), 1.0 / 2f64.sqrt(), epsilon = 1e-12);
            assert_relative_eq!(v[1].norm(), 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        }
        let eig = SymmetricEigen::new(subspace_hamiltonian(0.55, 0.076));
        let gap = (eig.eigenvalues[0] - eig.eigenvalues[1]).abs();
        assert!((gap - 0.5552).abs() < 1e-4);
    }

    #[test]
    fn projection_of_full_hamiltonian_is_subspace_hamiltonian() {
        for dphi in [-600.0, -300.0, -60.0, 0.0, 100.0, 600.0] {
            let df = detuning(dphi, &p());
            assert!(df.abs() <= 0.6);
            let h = full_hamiltonian(flux_at(dphi, &p()), &p());
            let sub = subspace_hamiltonian(df, p().s);
            let idx = [IDX_1G, IDX_0E];
            for a in 0..2 {
                for b in 0..2 {
                    let d = (h[(idx[a], idx[b])] - sub[(a, b)]).norm();
                    assert!(d <= 0.01 * f_osc(df, p().s), "{dphi} {d}");
                }
            }
        }
    }

    #[test]
    fn si_round_trip() {
        let json = serde_json::to_string(&p()).unwrap();
        let back: DeviceParams = serde_json::from_str(&json).unwrap();
        assert_relative_eq!(back.phi_star, -4.15, max_relative = 1e-12);
        assert_relative_eq!(back.f_tls, p().f_tls, max_relative = 1e-12);
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["t1_qb"] = serde_json::json!(-1e-5);
        let bad = v.to_string();
        assert!(serde_json::from_str::<DeviceParams>(&bad).is_err());
    }
}
