//! The four pulse experiments (swap spectroscopy, echo, refocus calibration,
//! Carr–Purcell decoupling) and the switching-probability readout.

use serde::{Deserialize, Serialize};

use crate::analysis::demodulate;
use crate::dynamics::{run_scans, Edge, EnsembleResult, EvolutionOptions, NoiseModel, PulseSegment, PulseSequence, Scan};
use crate::error::{Error, Result};
use crate::model::{f_osc_at, flux_for_detuning, DeviceParams};

/// Map from qubit excited-state population to SQUID switching probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutModel {
    pub p_sw_ground: f64,
    pub p_sw_excited: f64,
}

impl Default for ReadoutModel {
    fn default() -> Self {
        ReadoutModel {
            p_sw_ground: 0.9,
            p_sw_excited: 0.1,
        }
    }
}

impl ReadoutModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p_sw_ground", self.p_sw_ground), ("p_sw_excited", self.p_sw_excited)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if self.p_sw_ground <= self.p_sw_excited {
            return Err(Error::config("p_sw_ground", "must exceed p_sw_excited"));
        }
        Ok(())
    }
}

/// Switching probability for a qubit excited-state population.
pub fn apply_readout(p_excited: f64, model: &ReadoutModel) -> Result<f64> {
    // tolerate round-off just outside [0, 1]
    if !(-1e-9..=1.0 + 1e-9).contains(&p_excited) {
        return Err(Error::Domain(format!("p_excited = {p_excited} outside [0, 1]")));
    }
    let p = p_excited.clamp(0.0, 1.0);
    Ok(model.p_sw_ground * (1.0 - p) + model.p_sw_excited * p)
}

/// Timing shared by all experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    /// Flux offset (µΦ₀) where the qubit is prepared and read out.
    pub prep_dphi: f64,
    /// Wait at the preparation point before and after the interaction (ns).
    pub settle: f64,
    /// 10–90 % rise time of flux edges (ns); 0 gives ideal steps.
    pub rise_time: f64,
    /// Length of the qubit π pulse (ns); must be > 0 for driven pulses.
    pub pi_duration: f64,
    /// Signed detuning of refocusing pulses (GHz), see [`refocus_flux`].
    pub refocus_detune: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            prep_dphi: 1200.0,
            settle: 5.0,
            rise_time: 1.5,
            pi_duration: 0.0,
            refocus_detune: 0.55,
        }
    }
}

impl Schedule {
    pub fn validate(&self, opts: &EvolutionOptions) -> Result<()> {
        if !self.prep_dphi.is_finite() {
            return Err(Error::config("prep_dphi", "must be finite"));
        }
        if !(self.settle >= 0.0 && self.settle.is_finite()) {
            return Err(Error::config("settle", format!("must be >= 0, got {}", self.settle)));
        }
        if !(self.rise_time >= 0.0 && self.rise_time.is_finite()) {
            return Err(Error::config("rise_time", format!("must be >= 0, got {}", self.rise_time)));
        }
        if !(self.pi_duration >= 0.0 && self.pi_duration.is_finite()) {
            return Err(Error::config("pi_duration", format!("must be >= 0, got {}", self.pi_duration)));
        }
        if !opts.ideal_pi && self.pi_duration == 0.0 {
            return Err(Error::config("pi_duration", "must be > 0 when ideal_pi is false"));
        }
        if !(self.refocus_detune != 0.0 && self.refocus_detune.is_finite()) {
            return Err(Error::config("refocus_detune", "must be finite and non-zero"));
        }
        Ok(())
    }

    pub fn edge(&self) -> Edge {
        if self.rise_time > 0.0 {
            Edge::gaussian(self.rise_time)
        } else {
            Edge::Instantaneous
        }
    }

    /// Segments before the interaction: π pulse and settling at the preparation point.
    fn prologue(&self) -> Vec<PulseSegment> {
        vec![
            PulseSegment::QubitPiPulse {
                duration: self.pi_duration,
            },
            PulseSegment::hold(self.prep_dphi, self.settle, Edge::Instantaneous),
        ]
    }

    /// Return to the preparation point and read out.
    fn epilogue(&self) -> Vec<PulseSegment> {
        vec![
            PulseSegment::hold(self.prep_dphi, self.settle, self.edge()),
            PulseSegment::ReadoutMarker {},
        ]
    }

    fn sequence(&self, body: Vec<PulseSegment>) -> PulseSequence {
        let mut segs = self.prologue();
        segs.extend(body);
        segs.extend(self.epilogue());
        PulseSequence::new(self.prep_dphi, segs)
    }
}

/// Everything a protocol needs besides its own grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub params: DeviceParams,
    pub noise: NoiseModel,
    pub opts: EvolutionOptions,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Experiment {
    pub fn new(params: DeviceParams, noise: NoiseModel, opts: EvolutionOptions) -> Self {
        Experiment {
            params,
            noise,
            opts,
            schedule: Schedule::default(),
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.opts.validate()?;
        self.schedule.validate(&self.opts)
    }

    fn run(&self, scans: &[Scan]) -> Result<Vec<EnsembleResult>> {
        run_scans(scans, &self.params, &self.noise, &self.opts, self.seed)
    }
}

/// Population map over a two-parameter grid, indexed `[ix][iy]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult2D {
    pub x_name: String,
    pub x_unit: String,
    pub x: Vec<f64>,
    pub y_name: String,
    pub y_unit: String,
    pub y: Vec<f64>,
    /// Qubit excited-state population.
    pub p_excited: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub seed: u64,
    pub n_traj: usize,
    pub params: DeviceParams,
}

impl SweepResult2D {
    /// Switching probabilities for every grid point.
    pub fn p_sw(&self, readout: &ReadoutModel) -> Result<Vec<Vec<f64>>> {
        self.p_excited
            .iter()
            .map(|row| row.iter().map(|&p| apply_readout(p, readout)).collect())
            .collect()
    }

    /// Column of the map at `x[ix]` as a function of `y`.
    pub fn column(&self, ix: usize) -> &[f64] {
        &self.p_excited[ix]
    }
}

/// Excited-state population against one scanned time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub x_name: String,
    pub x: Vec<f64>,
    /// Total sequence time between the end of preparation and the start of readout (ns).
    pub total_time: Vec<f64>,
    pub p_excited: Vec<f64>,
    pub stderr: Vec<f64>,
    pub seed: u64,
    pub n_traj: usize,
}

fn check_grid(name: &str, grid: &[f64], min: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Precondition(format!("{name} grid is empty")));
    }
    if let Some(v) = grid.iter().find(|v| !(**v >= min && v.is_finite())) {
        return Err(Error::Precondition(format!("{name} value {v} must be finite and >= {min}")));
    }
    Ok(())
}

/// Flux offset (µΦ₀) of the refocusing pulse. The sign of `detune` selects
/// the side of the resonance (positive: TLS above the qubit) and its
/// magnitude is the oscillation frequency (GHz) during the pulse.
pub fn refocus_flux(detune: f64, params: &DeviceParams) -> Result<f64> {
    if !(detune.abs() > params.s) || !detune.is_finite() {
        return Err(Error::Domain(format!(
            "refocus detuning |{detune}| GHz must exceed the coupling {} GHz",
            params.s
        )));
    }
    let df = (detune * detune - params.s * params.s).sqrt();
    flux_for_detuning(df.copysign(detune), params)
}

/// Duration of a π refocusing rotation at oscillation frequency `|detune|`.
pub fn refocus_duration(detune: f64) -> f64 {
    0.5 / detune.abs()
}

/// Chevron: π at the preparation point, jump to each δΦ, hold τ₁, return, read out.
pub fn swap_spectroscopy(exp: &Experiment, dphi_grid: &[f64], tau1_grid: &[f64]) -> Result<SweepResult2D> {
    exp.validate()?;
    check_grid("dphi", dphi_grid, f64::NEG_INFINITY)?;
    check_grid("tau1", tau1_grid, 0.0)?;
    let sch = &exp.schedule;
    let scans: Vec<Scan> = dphi_grid
        .iter()
        .map(|&d| Scan::over(sch.sequence(vec![PulseSegment::hold(d, 0.0, sch.edge())]), 2, tau1_grid.to_vec()))
        .collect();
    let res = exp.run(&scans)?;
    Ok(SweepResult2D {
        x_name: "dphi".into(),
        x_unit: "uPhi0".into(),
        x: dphi_grid.to_vec(),
        y_name: "tau1".into(),
        y_unit: "ns".into(),
        y: tau1_grid.to_vec(),
        p_excited: res.iter().map(|r| r.excited.clone()).collect(),
        stderr: res.iter().map(|r| r.excited_stderr.clone()).collect(),
        seed: exp.seed,
        n_traj: res[0].n_traj,
        params: exp.params,
    })
}

fn echo_body(
    dphi: f64,
    tau1: f64,
    tau2: f64,
    refocus: Option<(f64, f64)>,
    edge: Edge,
) -> Vec<PulseSegment> {
    match refocus {
        None => vec![PulseSegment::hold(dphi, tau1 + tau2, edge)],
        Some((target, dur)) => vec![
            PulseSegment::hold(dphi, tau1, edge),
            PulseSegment::hold(target, dur, edge),
            PulseSegment::hold(dphi, tau2, edge),
        ],
    }
}

/// Free evolution for τ₁ + τ₂ (`n_refocus = 0`) or τ₁, a refocusing pulse,
/// then τ₂ (`n_refocus = 1`).
pub fn echo_experiment(exp: &Experiment, dphi: f64, tau1: f64, tau2_grid: &[f64], n_refocus: u32) -> Result<Trace> {
    exp.validate()?;
    if !(tau1 >= 0.0 && tau1.is_finite()) {
        return Err(Error::Precondition(format!("tau1 must be >= 0, got {tau1}")));
    }
    check_grid("tau2", tau2_grid, 0.0)?;
    let sch = &exp.schedule;
    let (scan, refocus_time) = match n_refocus {
        0 => {
            let durations = tau2_grid.iter().map(|t2| tau1 + t2).collect();
            (Scan::over(sch.sequence(echo_body(dphi, 0.0, 0.0, None, sch.edge())), 2, durations), 0.0)
        }
        1 => {
            let target = refocus_flux(sch.refocus_detune, &exp.params)?;
            let dur = refocus_duration(sch.refocus_detune);
            let body = echo_body(dphi, tau1, 0.0, Some((target, dur)), sch.edge());
            (Scan::over(sch.sequence(body), 4, tau2_grid.to_vec()), dur)
        }
        n => return Err(Error::Precondition(format!("n_refocus must be 0 or 1, got {n}"))),
    };
    let r = exp.run(&[scan])?.remove(0);
    Ok(Trace {
        x_name: "tau2".into(),
        x: tau2_grid.to_vec(),
        total_time: tau2_grid.iter().map(|t2| tau1 + refocus_time + t2).collect(),
        p_excited: r.excited,
        stderr: r.excited_stderr,
        seed: exp.seed,
        n_traj: r.n_traj,
    })
}

/// Refocus calibration map over (τ_refocus, τ₂) with the echo visibility per τ_refocus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub sweep: SweepResult2D,
    /// Quadrature amplitude of each τ₂ column at the operating-point frequency.
    pub visibility: Vec<f64>,
    /// Refined positions (ns) of the visibility maxima.
    pub peaks: Vec<f64>,
}

/// Echo sequences with refocusing pulses of varying length at the signed
/// detuning `detune` (see [`refocus_flux`]).
pub fn calibrate_refocus(
    exp: &Experiment,
    dphi: f64,
    tau1: f64,
    tau_refocus_grid: &[f64],
    tau2_grid: &[f64],
    detune: f64,
) -> Result<CalibrationResult> {
    exp.validate()?;
    if !(detune != 0.0 && detune.is_finite()) {
        return Err(Error::Precondition("refocus detuning must be non-zero".into()));
    }
    if !(tau1 >= 0.0 && tau1.is_finite()) {
        return Err(Error::Precondition(format!("tau1 must be >= 0, got {tau1}")));
    }
    check_grid("tau_refocus", tau_refocus_grid, 0.0)?;
    check_grid("tau2", tau2_grid, 0.0)?;
    if tau2_grid.len() < 3 {
        return Err(Error::Precondition("tau2 grid needs at least 3 points".into()));
    }
    let sch = &exp.schedule;
    let target = refocus_flux(detune, &exp.params)?;
    let scans: Vec<Scan> = tau_refocus_grid
        .iter()
        .map(|&tr| {
            let body = echo_body(dphi, tau1, 0.0, Some((target, tr)), sch.edge());
            Scan::over(sch.sequence(body), 4, tau2_grid.to_vec())
        })
        .collect();
    let res = exp.run(&scans)?;
    let f = f_osc_at(dphi, &exp.params);
    let visibility = res
        .iter()
        .map(|r| demodulate(tau2_grid, &r.excited, f).map(|q| q.amplitude))
        .collect::<Result<Vec<_>>>()?;
    let peaks = local_maxima(tau_refocus_grid, &visibility);
    Ok(CalibrationResult {
        sweep: SweepResult2D {
            x_name: "tau_refocus".into(),
            x_unit: "ns".into(),
            x: tau_refocus_grid.to_vec(),
            y_name: "tau2".into(),
            y_unit: "ns".into(),
            y: tau2_grid.to_vec(),
            p_excited: res.iter().map(|r| r.excited.clone()).collect(),
            stderr: res.iter().map(|r| r.excited_stderr.clone()).collect(),
            seed: exp.seed,
            n_traj: res[0].n_traj,
            params: exp.params,
        },
        visibility,
        peaks,
    })
}

/// Interior local maxima of `y(x)`, refined by a parabola through the three
/// neighbouring points, in increasing order.
pub fn local_maxima(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![];
    for i in 1..y.len().saturating_sub(1) {
        if y[i] > y[i - 1] && y[i] >= y[i + 1] {
            let (x0, x1, x2) = (x[i - 1], x[i], x[i + 1]);
            let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
            let d1 = (y1 - y0) / (x1 - x0);
            let d2 = (y2 - y1) / (x2 - x1);
            let curv = (d2 - d1) / (x2 - x0);
            let peak = if curv < 0.0 {
                0.5 * (x0 + x1) - d1 / (2.0 * curv)
            } else {
                x1
            };
            out.push(peak.clamp(x0, x2));
        }
    }
    out
}

/// Carr–Purcell run: every total time with every extension Δ of the final interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CpResult {
    pub n_pulses: u32,
    pub total_time: Vec<f64>,
    pub delta: Vec<f64>,
    /// `[i_t][i_delta]`.
    pub p_excited: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    /// Quadrature amplitude over Δ at the operating-point frequency, per total time.
    pub amplitude: Vec<f64>,
    /// Total time plus the mean Δ: the evolution time the amplitude describes.
    pub effective_time: Vec<f64>,
    pub f_demod: f64,
    pub seed: u64,
    pub n_traj: usize,
}

/// Free-evolution intervals of an N-pulse Carr–Purcell sequence of total
/// length `t` with refocusing pulses of length `tau_r` centred at t·(2k−1)/(2N).
pub fn cp_intervals(n_pulses: u32, t: f64, tau_r: f64) -> Result<Vec<f64>> {
    if n_pulses == 0 {
        return Ok(vec![t]);
    }
    let n = n_pulses as f64;
    let outer = t / (2.0 * n) - 0.5 * tau_r;
    let inner = t / n - tau_r;
    if outer < 0.0 {
        return Err(Error::Schedule(format!(
            "total time {t} ns leaves {outer:.3} ns before the first refocusing pulse; the spacing t/N = {:.3} ns must be at least the pulse length {tau_r:.3} ns",
            t / n
        )));
    }
    let mut v = vec![outer];
    v.extend(std::iter::repeat(inner).take(n_pulses as usize - 1));
    v.push(outer);
    Ok(v)
}

/// Carr–Purcell decoupling with `n_pulses` equally spaced refocusing pulses
/// (N = 0 is free evolution). Each total time is run with the final interval
/// extended by every Δ in `delta_grid`; the oscillation amplitude over Δ
/// measures the coherence left at the centre of the Δ window.
pub fn cp_sequence(
    exp: &Experiment,
    dphi: f64,
    n_pulses: u32,
    total_time_grid: &[f64],
    delta_grid: &[f64],
) -> Result<CpResult> {
    exp.validate()?;
    check_grid("total_time", total_time_grid, 0.0)?;
    check_grid("delta", delta_grid, 0.0)?;
    if delta_grid.len() < 3 {
        return Err(Error::Precondition("delta grid needs at least 3 points".into()));
    }
    let sch = &exp.schedule;
    let tau_r = refocus_duration(sch.refocus_detune);
    let target = if n_pulses > 0 {
        refocus_flux(sch.refocus_detune, &exp.params)?
    } else {
        dphi
    };
    let edge = sch.edge();
    let mut scans = Vec::with_capacity(total_time_grid.len());
    for &t in total_time_grid {
        let iv = cp_intervals(n_pulses, t, tau_r)?;
        let mut body = vec![PulseSegment::hold(dphi, iv[0], edge)];
        for &gap in &iv[1..] {
            body.push(PulseSegment::hold(target, tau_r, edge));
            body.push(PulseSegment::hold(dphi, gap, edge));
        }
        let last = iv[iv.len() - 1];
        let idx = 2 + body.len() - 1;
        scans.push(Scan::over(sch.sequence(body), idx, delta_grid.iter().map(|d| last + d).collect()));
    }
    let res = exp.run(&scans)?;
    let f = f_osc_at(dphi, &exp.params);
    let amplitude = res
        .iter()
        .map(|r| demodulate(delta_grid, &r.excited, f).map(|q| q.amplitude))
        .collect::<Result<Vec<_>>>()?;
    let mean_delta = delta_grid.iter().sum::<f64>() / delta_grid.len() as f64;
    Ok(CpResult {
        n_pulses,
        total_time: total_time_grid.to_vec(),
        effective_time: total_time_grid.iter().map(|t| t + mean_delta).collect(),
        delta: delta_grid.to_vec(),
        p_excited: res.iter().map(|r| r.excited.clone()).collect(),
        stderr: res.iter().map(|r| r.excited_stderr.clone()).collect(),
        amplitude,
        f_demod: f,
        seed: exp.seed,
        n_traj: res[0].n_traj,
    })
}

/// Evenly spaced Δ values covering one oscillation period at `dphi`.
pub fn one_period_deltas(dphi: f64, params: &DeviceParams, n: usize) -> Vec<f64> {
    let period = 1.0 / f_osc_at(dphi, params);
    (0..n).map(|k| period * k as f64 / n as f64).collect()
}
