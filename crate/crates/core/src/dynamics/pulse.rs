//! Pulse sequences and the flux profile they generate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transitions with Gaussian edges are treated as settled beyond this many σ.
pub const EDGE_WINDOW_SIGMAS: f64 = 7.0;

/// 10–90 % width of a unit error-function step, in units of σ: 2·Φ⁻¹(0.9).
pub(crate) const RISE_OVER_SIGMA: f64 = 2.563_103_131_089_201;

/// Shape of the flux transition into a hold.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Edge {
    #[default]
    Instantaneous,
    /// Error-function step whose 10–90 % width is `rise_time` (ns).
    Gaussian { rise_time: f64 },
}

impl Edge {
    pub fn gaussian(rise_time: f64) -> Self {
        Edge::Gaussian { rise_time }
    }

    /// Standard deviation of the Gaussian kernel (ns); 0 for a step.
    pub fn sigma(&self) -> f64 {
        match *self {
            Edge::Instantaneous => 0.0,
            Edge::Gaussian { rise_time } => rise_time / RISE_OVER_SIGMA,
        }
    }

    /// Half-width of the time window over which the edge is still moving.
    pub fn half_window(&self) -> f64 {
        EDGE_WINDOW_SIGMAS * self.sigma()
    }
}

/// One element of a control sequence. Flux values are offsets δΦ from Φ*
/// in µΦ₀, durations in ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PulseSegment {
    /// Hold the flux at `dphi_target`. The transition from the previous level
    /// is centred on the segment start, so `duration` runs centre to centre.
    FluxHold {
        dphi_target: f64,
        duration: f64,
        #[serde(default)]
        edge: Edge,
    },
    /// Linear sweep from the previous level to `dphi_target` over `duration`.
    FluxRamp { dphi_target: f64, duration: f64 },
    /// Qubit π rotation at the current flux. With ideal pulses the rotation
    /// is applied instantly at the segment start and the rest of the segment
    /// is free evolution.
    QubitPiPulse {
        #[serde(default)]
        duration: f64,
    },
    /// End of the sequence; the state is read out here.
    ReadoutMarker {},
}

impl PulseSegment {
    pub fn hold(dphi_target: f64, duration: f64, edge: Edge) -> Self {
        PulseSegment::FluxHold {
            dphi_target,
            duration,
            edge,
        }
    }

    pub fn duration(&self) -> f64 {
        match *self {
            PulseSegment::FluxHold { duration, .. }
            | PulseSegment::FluxRamp { duration, .. }
            | PulseSegment::QubitPiPulse { duration } => duration,
            PulseSegment::ReadoutMarker {} => 0.0,
        }
    }

    pub(crate) fn set_duration(&mut self, d: f64) {
        match self {
            PulseSegment::FluxHold { duration, .. }
            | PulseSegment::FluxRamp { duration, .. }
            | PulseSegment::QubitPiPulse { duration } => *duration = d,
            PulseSegment::ReadoutMarker {} => {}
        }
    }
}

/// Ordered control program ending in a single readout marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSequence {
    /// Flux level before the first segment; defaults to the first flux target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_dphi: Option<f64>,
    pub segments: Vec<PulseSegment>,
}

impl PulseSequence {
    pub fn new(start_dphi: f64, segments: Vec<PulseSegment>) -> Self {
        PulseSequence {
            start_dphi: Some(start_dphi),
            segments,
        }
    }

    pub fn t_total(&self) -> f64 {
        self.segments.iter().map(PulseSegment::duration).sum()
    }

    /// Start time of segment `index`.
    pub fn segment_start(&self, index: usize) -> f64 {
        self.segments[..index].iter().map(PulseSegment::duration).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.segments.len();
        let markers = self
            .segments
            .iter()
            .filter(|s| matches!(s, PulseSegment::ReadoutMarker {}))
            .count();
        if markers != 1 || !matches!(self.segments.last(), Some(PulseSegment::ReadoutMarker {})) {
            return Err(Error::config(
                "segments",
                "exactly one readout_marker is required, as the last segment",
            ));
        }
        if let Some(d) = self.start_dphi {
            if !d.is_finite() {
                return Err(Error::config("start_dphi", "must be finite"));
            }
        }
        for (i, seg) in self.segments[..n - 1].iter().enumerate() {
            let at = |field: &str| format!("segments[{i}].{field}");
            let d = seg.duration();
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::config(at("duration"), format!("must be finite and >= 0, got {d}")));
            }
            match *seg {
                PulseSegment::FluxHold { dphi_target, edge, .. } => {
                    if !dphi_target.is_finite() {
                        return Err(Error::config(at("dphi_target"), "must be finite"));
                    }
                    if let Edge::Gaussian { rise_time } = edge {
                        if !(rise_time > 0.0 && rise_time.is_finite()) {
                            return Err(Error::config(
                                at("edge.gaussian.rise_time"),
                                format!("must be > 0, got {rise_time}"),
                            ));
                        }
                    }
                }
                PulseSegment::FluxRamp { dphi_target, .. } => {
                    if !dphi_target.is_finite() {
                        return Err(Error::config(at("dphi_target"), "must be finite"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Flux-time profile of the sequence.
    pub fn profile(&self) -> FluxProfile {
        let first_target = self.segments.iter().find_map(|s| match *s {
            PulseSegment::FluxHold { dphi_target, .. } | PulseSegment::FluxRamp { dphi_target, .. } => {
                Some(dphi_target)
            }
            _ => None,
        });
        let base = self.start_dphi.or(first_target).unwrap_or(0.0);
        let mut level = base;
        let mut t = 0.0;
        let mut transitions = Vec::new();
        for seg in &self.segments {
            match *seg {
                PulseSegment::FluxHold {
                    dphi_target,
                    duration,
                    edge,
                } => {
                    let dl = dphi_target - level;
                    if dl != 0.0 {
                        transitions.push(match edge {
                            Edge::Instantaneous => Transition::Step { t0: t, dl },
                            Edge::Gaussian { .. } => Transition::Erf {
                                t0: t,
                                dl,
                                sigma: edge.sigma(),
                            },
                        });
                    }
                    level = dphi_target;
                    t += duration;
                }
                PulseSegment::FluxRamp { dphi_target, duration } => {
                    let dl = dphi_target - level;
                    if dl != 0.0 {
                        transitions.push(if duration > 0.0 {
                            Transition::Linear {
                                t0: t,
                                t1: t + duration,
                                dl,
                            }
                        } else {
                            Transition::Step { t0: t, dl }
                        });
                    }
                    level = dphi_target;
                    t += duration;
                }
                PulseSegment::QubitPiPulse { duration } => t += duration,
                PulseSegment::ReadoutMarker {} => {}
            }
        }
        FluxProfile {
            base,
            transitions,
            t_total: t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Transition {
    Step { t0: f64, dl: f64 },
    Erf { t0: f64, dl: f64, sigma: f64 },
    Linear { t0: f64, t1: f64, dl: f64 },
}

impl Transition {
    /// Interval over which the transition is moving.
    pub(crate) fn window(&self) -> (f64, f64) {
        match *self {
            Transition::Step { t0, .. } => (t0, t0),
            Transition::Erf { t0, sigma, .. } => {
                (t0 - EDGE_WINDOW_SIGMAS * sigma, t0 + EDGE_WINDOW_SIGMAS * sigma)
            }
            Transition::Linear { t0, t1, .. } => (t0, t1),
        }
    }

    pub(crate) fn value(&self, t: f64) -> f64 {
        match *self {
            Transition::Step { t0, dl } => {
                if t >= t0 {
                    dl
                } else {
                    0.0
                }
            }
            Transition::Erf { t0, dl, sigma } => {
                let x = (t - t0) / sigma;
                if x <= -EDGE_WINDOW_SIGMAS {
                    0.0
                } else if x >= EDGE_WINDOW_SIGMAS {
                    dl
                } else {
                    dl * 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
                }
            }
            Transition::Linear { t0, t1, dl } => dl * ((t - t0) / (t1 - t0)).clamp(0.0, 1.0),
        }
    }

    pub(crate) fn slope(&self, t: f64) -> f64 {
        match *self {
            Transition::Step { .. } => 0.0,
            Transition::Erf { t0, dl, sigma } => {
                let x = (t - t0) / sigma;
                if x.abs() >= EDGE_WINDOW_SIGMAS {
                    0.0
                } else {
                    dl * (-0.5 * x * x).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
                }
            }
            Transition::Linear { t0, t1, dl } => {
                if t > t0 && t < t1 {
                    dl / (t1 - t0)
                } else {
                    0.0
                }
            }
        }
    }
}

/// δΦ(t) of a sequence: a start level plus a sum of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxProfile {
    base: f64,
    pub(crate) transitions: Vec<Transition>,
    t_total: f64,
}

impl FluxProfile {
    pub fn t_total(&self) -> f64 {
        self.t_total
    }

    /// δΦ (µΦ₀) at time `t`, without range checking.
    pub fn value(&self, t: f64) -> f64 {
        self.base + self.transitions.iter().map(|tr| tr.value(t)).sum::<f64>()
    }

    /// dδΦ/dt (µΦ₀/ns) at time `t`, ignoring instantaneous steps.
    pub fn slope(&self, t: f64) -> f64 {
        self.transitions.iter().map(|tr| tr.slope(t)).sum()
    }

    /// Distinct flux levels visited (start level and every plateau).
    pub fn levels(&self) -> Vec<f64> {
        let mut out = vec![self.base];
        let mut level = self.base;
        for tr in &self.transitions {
            level += match *tr {
                Transition::Step { dl, .. } | Transition::Erf { dl, .. } | Transition::Linear { dl, .. } => dl,
            };
            out.push(level);
        }
        out
    }

    /// Whether any transition is moving at time `t`.
    pub(crate) fn is_moving(&self, t: f64) -> bool {
        self.transitions.iter().any(|tr| {
            let (a, b) = tr.window();
            a < t && t < b
        })
    }
}

/// δΦ(t) of `seq` in µΦ₀ for `0 ≤ t ≤ t_total`.
pub fn flux_profile(seq: &PulseSequence, t: f64) -> Result<f64> {
    let total = seq.t_total();
    if !(0.0..=total).contains(&t) {
        return Err(Error::Domain(format!("t = {t} ns outside [0, {total}]")));
    }
    Ok(seq.profile().value(t))
}

/// A stretch of the sequence handled by a single propagation strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Piece {
    /// Constant flux.
    Flat { t0: f64, t1: f64, dphi: f64 },
    /// Moving flux, integrated in small steps.
    Smooth { t0: f64, t1: f64 },
    /// Instantaneous qubit π rotation.
    Pi { t: f64 },
    /// Part of a microwave-driven qubit π rotation that began at `start`.
    Driven { t0: f64, t1: f64, start: f64, rabi: f64 },
}

impl Piece {
    pub(crate) fn span(&self) -> (f64, f64) {
        match *self {
            Piece::Flat { t0, t1, .. } | Piece::Smooth { t0, t1 } | Piece::Driven { t0, t1, .. } => (t0, t1),
            Piece::Pi { t } => (t, t),
        }
    }
}

/// Execution plan: the sequence cut into pieces, in time order.
#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub profile: FluxProfile,
    pub pieces: Vec<Piece>,
}

impl Plan {
    pub(crate) fn new(seq: &PulseSequence, ideal_pi: bool) -> Plan {
        let profile = seq.profile();
        let total = profile.t_total;
        let mut cuts = vec![0.0, total];
        let mut pulses = Vec::new();
        let mut t = 0.0;
        for seg in &seq.segments {
            if let PulseSegment::QubitPiPulse { duration } = *seg {
                if ideal_pi || duration == 0.0 {
                    pulses.push((t, t));
                } else {
                    pulses.push((t, t + duration));
                }
                cuts.push(t);
                cuts.push(t + duration);
            }
            t += seg.duration();
        }
        for tr in &profile.transitions {
            let (a, b) = tr.window();
            cuts.push(a.clamp(0.0, total));
            cuts.push(b.clamp(0.0, total));
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let mut pieces: Vec<Piece> = Vec::new();
        let mut pending_pi: Vec<f64> = pulses.iter().filter(|p| p.0 == p.1).map(|p| p.0).collect();
        pending_pi.sort_by(f64::total_cmp);
        let mut pi_iter = pending_pi.into_iter().peekable();
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            while let Some(&tp) = pi_iter.peek() {
                if tp <= a {
                    pieces.push(Piece::Pi { t: tp });
                    pi_iter.next();
                } else {
                    break;
                }
            }
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let piece = if let Some(&(p0, p1)) = pulses.iter().find(|&&(p0, p1)| p0 < mid && mid < p1) {
                Piece::Driven {
                    t0: a,
                    t1: b,
                    start: p0,
                    rabi: 0.5 / (p1 - p0),
                }
            } else if profile.is_moving(mid) {
                Piece::Smooth { t0: a, t1: b }
            } else {
                Piece::Flat {
                    t0: a,
                    t1: b,
                    dphi: profile.value(mid),
                }
            };
            match (pieces.last_mut(), piece) {
                (Some(Piece::Smooth { t1, .. }), Piece::Smooth { t1: b1, .. }) => *t1 = b1,
                (Some(Piece::Driven { t1, start, .. }), Piece::Driven { t1: b1, start: s1, .. }) if *start == s1 => {
                    *t1 = b1
                }
                (Some(Piece::Flat { t1, dphi, .. }), Piece::Flat { t1: b1, dphi: d1, .. }) if *dphi == d1 => *t1 = b1,
                _ => pieces.push(piece),
            }
        }
        for tp in pi_iter {
            pieces.push(Piece::Pi { t: tp });
        }
        Plan { profile, pieces }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn edge() -> Edge {
        Edge::gaussian(1.5)
    }

    fn seq() -> PulseSequence {
        PulseSequence::new(
            1200.0,
            vec![
                PulseSegment::QubitPiPulse { duration: 0.0 },
                PulseSegment::hold(1200.0, 5.0, Edge::Instantaneous),
                PulseSegment::hold(-72.0, 40.0, edge()),
                PulseSegment::hold(1200.0, 5.0, edge()),
                PulseSegment::ReadoutMarker {},
            ],
        )
    }

    #[test]
    fn holds_and_midpoints() {
        let s = seq();
        assert_eq!(s.t_total(), 50.0);
        assert_eq!(flux_profile(&s, 25.0).unwrap(), -72.0);
        assert_eq!(flux_profile(&s, 0.5).unwrap(), 1200.0);
        assert_relative_eq!(flux_profile(&s, 5.0).unwrap(), 0.5 * (1200.0 - 72.0), epsilon = 1e-9);
        assert!(flux_profile(&s, 50.1).is_err());
        assert!(flux_profile(&s, -0.1).is_err());
    }

    #[test]
    fn rise_time_is_ten_to_ninety() {
        let e = edge();
        let p = PulseSequence::new(0.0, vec![PulseSegment::hold(1.0, 20.0, e), PulseSegment::ReadoutMarker {}])
            .profile();
        // locate the 10 % and 90 % crossings by bisection
        let cross = |level: f64| {
            let (mut lo, mut hi) = (-5.0, 5.0);
            for _ in 0..100 {
                let m = 0.5 * (lo + hi);
                if p.value(m) < level {
                    lo = m
                } else {
                    hi = m
                }
            }
            lo
        };
        assert_relative_eq!(cross(0.9) - cross(0.1), 1.5, epsilon = 1e-9);
    }

    #[test]
    fn profile_is_continuous_with_gaussian_edges() {
        let p = seq().profile();
        let mut prev = p.value(0.0);
        let mut t = 0.0;
        while t < 50.0 {
            t += 0.001;
            let v = p.value(t);
            assert!((v - prev).abs() < 1.0, "jump at {t}");
            prev = v;
        }
    }

    #[test]
    fn validation() {
        assert!(seq().validate().is_ok());
        let mut s = seq();
        s.segments.pop();
        assert!(s.validate().is_err());
        let mut s = seq();
        s.segments.insert(1, PulseSegment::ReadoutMarker {});
        assert!(s.validate().is_err());
        let mut s = seq();
        s.segments[2] = PulseSegment::hold(-72.0, -1.0, edge());
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("segments[2].duration"), "{err}");
        let mut s = seq();
        s.segments[2] = PulseSegment::hold(-72.0, 1.0, Edge::gaussian(0.0));
        assert!(s.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = seq();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"kind\":\"flux_hold\""));
        let back: PulseSequence = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let bad = r#"{"segments":[{"kind":"readout_marker","extra":1}]}"#;
        assert!(serde_json::from_str::<PulseSequence>(bad).is_err());
    }

    #[test]
    fn plan_covers_sequence() {
        let plan = Plan::new(&seq(), true);
        assert!(matches!(plan.pieces[0], Piece::Pi { t } if t == 0.0));
        let mut t = 0.0;
        for p in &plan.pieces {
            let (a, b) = p.span();
            assert_relative_eq!(a, t, epsilon = 1e-12);
            t = b;
        }
        assert_relative_eq!(t, 50.0, epsilon = 1e-12);
        let flat_mid = plan
            .pieces
            .iter()
            .find(|p| matches!(p, Piece::Flat { dphi, .. } if *dphi == -72.0))
            .unwrap();
        let (a, b) = flat_mid.span();
        let w = edge().half_window();
        assert_relative_eq!(a, 5.0 + w, epsilon = 1e-12);
        assert_relative_eq!(b, 45.0 - w, epsilon = 1e-12);
    }

    #[test]
    fn levels_and_ramps() {
        let s = PulseSequence::new(
            0.0,
            vec![
                PulseSegment::FluxRamp { dphi_target: 100.0, duration: 10.0 },
                PulseSegment::hold(100.0, 5.0, Edge::Instantaneous),
                PulseSegment::ReadoutMarker {},
            ],
        );
        let p = s.profile();
        assert_eq!(p.levels(), vec![0.0, 100.0]);
        assert_relative_eq!(p.value(5.0), 50.0);
        assert_relative_eq!(p.slope(5.0), 10.0);
        let plan = Plan::new(&s, true);
        assert!(matches!(plan.pieces[0], Piece::Smooth { .. }));
        assert!(matches!(plan.pieces[1], Piece::Flat { dphi, .. } if dphi == 100.0));
    }
}
