//! Relaxation budget of the coupled qubit–TLS oscillation.

use crate::error::{Error, Result};
use crate::model::DeviceParams;
use crate::noise::WhiteTransverseChannel;

/// Pure relaxation contribution ½(1/T1_qb + 1/T1_TLS) in 1/ns.
fn relaxation_floor(params: &DeviceParams) -> f64 {
    0.5 * (params.gamma_qb() + params.gamma_tls())
}

/// Envelope decay time T̃1 (ns) of the on-resonance oscillation; the
/// transverse channel adds half of Γ± + Γ∓ = S_⊥/2. Infinite when every
/// rate vanishes.
pub fn t1_tilde_from_rates(params: &DeviceParams, channel: &WhiteTransverseChannel) -> f64 {
    let rate = relaxation_floor(params) + 0.25 * channel.s_perp * 1e-9;
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

/// Transverse noise level S_⊥ (rad/s) that explains a measured T̃1 (ns).
pub fn infer_s_perp(t1_tilde: f64, params: &DeviceParams) -> Result<f64> {
    if !(t1_tilde > 0.0) {
        return Err(Error::Domain(format!("T1 tilde must be > 0, got {t1_tilde}")));
    }
    let floor = relaxation_floor(params);
    let excess = 1.0 / t1_tilde - floor;
    if excess < -1e-12 * floor {
        return Err(Error::InfeasibleRate(format!(
            "measured decay time {t1_tilde} ns exceeds the relaxation floor {} ns",
            1.0 / floor
        )));
    }
    Ok(4.0 * excess.max(0.0) * 1e9)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_budget() {
        let p = DeviceParams::default();
        let t1 = t1_tilde_from_rates(&p, &WhiteTransverseChannel::default());
        assert!((t1 - 800.0).abs() < 1e-9, "{t1}");
        let s = infer_s_perp(800.0, &p).unwrap();
        assert!((s / 2.8e6 - 1.0).abs() < 0.01);
    }

    #[test]
    fn floor_and_limits() {
        let p = DeviceParams::default();
        let none = WhiteTransverseChannel { s_perp: 0.0 };
        let floor = t1_tilde_from_rates(&p, &none);
        assert!((floor - 1818.18).abs() < 0.01, "{floor}");
        assert_eq!(infer_s_perp(floor, &p).unwrap(), 0.0);
        assert!(matches!(infer_s_perp(2.0 * floor, &p), Err(Error::InfeasibleRate(_))));
        let mut q = p;
        q.t1_qb = f64::INFINITY;
        q.t1_tls = f64::INFINITY;
        assert_eq!(t1_tilde_from_rates(&q, &none), f64::INFINITY);
    }

    #[test]
    fn round_trip() {
        let p = DeviceParams::default();
        for s in [0.0, 1e5, 2.8e6, 4e7] {
            let ch = WhiteTransverseChannel { s_perp: s };
            let back = infer_s_perp(t1_tilde_from_rates(&p, &ch), &p).unwrap();
            assert!((back - s).abs() <= 1e-9 * s.max(1.0), "{s} -> {back}");
        }
    }
}
