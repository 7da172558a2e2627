//! Monte Carlo ensembles over flux noise, with duration scans that share the
//! common part of the propagation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evolve::{
    check_dt, Evolver, LabKet, Lindblad, NoiseRealization, NoiseView, RelaxationChannels, RotatingKet, Walker,
};
use super::pulse::{Piece, Plan, PulseSegment, PulseSequence};
use super::state::basis_ket;
use super::{EvolutionOptions, Frame, Mode, NoiseSampling};
use crate::error::{Error, Result};
use crate::model::{DeviceParams, IDX_0G};
use crate::noise::{
    default_quasistatic_cutoff, draw_gaussian, ensemble_rng, quasistatic_sigma, synthesize_with, synthesis_floor,
    OneOverFSpectrum, WhiteTransverseChannel,
};

/// Flux noise plus the white transverse channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub flux: OneOverFSpectrum,
    pub transverse: WhiteTransverseChannel,
}

impl NoiseModel {
    pub fn quiet() -> Self {
        NoiseModel {
            flux: OneOverFSpectrum::with_amplitude(0.0),
            transverse: WhiteTransverseChannel { s_perp: 0.0 },
        }
    }
}

/// A sequence evaluated at several durations of one of its segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub seq: PulseSequence,
    /// Segment whose duration is scanned; `None` runs `seq` as is.
    pub segment: Option<usize>,
    pub durations: Vec<f64>,
}

impl Scan {
    pub fn single(seq: PulseSequence) -> Self {
        Scan {
            seq,
            segment: None,
            durations: vec![],
        }
    }

    pub fn over(seq: PulseSequence, segment: usize, durations: Vec<f64>) -> Self {
        Scan {
            seq,
            segment: Some(segment),
            durations,
        }
    }

    pub fn len(&self) -> usize {
        match self.segment {
            None => 1,
            Some(_) => self.durations.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The concrete sequence of point `i`.
    pub fn sequence_at(&self, i: usize) -> PulseSequence {
        let mut seq = self.seq.clone();
        if let Some(j) = self.segment {
            seq.segments[j].set_duration(self.durations[i]);
        }
        seq
    }

    fn validate(&self) -> Result<()> {
        self.seq.validate()?;
        if let Some(j) = self.segment {
            if j + 1 >= self.seq.segments.len() {
                return Err(Error::Precondition(format!("scan segment {j} out of range")));
            }
            if let Some(d) = self.durations.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
                return Err(Error::Precondition(format!("scan duration {d} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Ensemble-averaged populations per scan point.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    /// Mean populations of `|0g⟩, |1g⟩, |0e⟩, |1e⟩`.
    pub mean: Vec<[f64; 4]>,
    /// Standard error of each mean.
    pub stderr: Vec<[f64; 4]>,
    /// Mean qubit excited-state population `P(1g) + P(1e)`.
    pub excited: Vec<f64>,
    pub excited_stderr: Vec<f64>,
    pub n_traj: usize,
}

enum PointPlan {
    Shared { extra: f64 },
    Direct(Plan),
}

struct Prepared {
    base: Option<Plan>,
    t_share: f64,
    t_end: f64,
    level: f64,
    points: Vec<PointPlan>,
    max_total: f64,
}

fn prepare(scan: &Scan, ideal_pi: bool) -> Prepared {
    let n = scan.len();
    let max_total = (0..n).map(|i| scan.sequence_at(i).t_total()).fold(0.0, f64::max);
    let direct = || Prepared {
        base: None,
        t_share: 0.0,
        t_end: 0.0,
        level: 0.0,
        points: (0..n).map(|i| PointPlan::Direct(Plan::new(&scan.sequence_at(i), ideal_pi))).collect(),
        max_total,
    };
    let Some(j) = scan.segment else {
        return direct();
    };
    let PulseSegment::FluxHold { dphi_target, edge, .. } = scan.seq.segments[j] else {
        return direct();
    };
    if n < 2 {
        return direct();
    }
    let w_in = edge.half_window();
    let w_out = match scan.seq.segments[j + 1] {
        PulseSegment::FluxHold { edge, .. } => edge.half_window(),
        _ => 0.0,
    };
    let d_base = w_in + w_out + 1.0;
    let mut base_seq = scan.seq.clone();
    base_seq.segments[j].set_duration(d_base);
    let start = base_seq.segment_start(j);
    let t_share = start + w_in + 0.5;
    let plan = Plan::new(&base_seq, ideal_pi);
    // every moving stretch must lie entirely on one side of the split point
    let straddles = plan.profile.transitions.iter().any(|tr| {
        let (a, b) = tr.window();
        a < t_share && t_share < b
    }) || plan.pieces.iter().any(|p| {
        let (a, b) = p.span();
        !matches!(p, Piece::Flat { .. }) && a < t_share && t_share < b
    });
    let level = plan.pieces.iter().find_map(|p| match *p {
        Piece::Flat { t0, t1, dphi } if t0 <= t_share && t_share < t1 => Some(dphi),
        _ => None,
    });
    let Some(level) = level.filter(|l| (l - dphi_target).abs() < 1e-9) else {
        return direct();
    };
    if straddles {
        return direct();
    }
    let points = scan
        .durations
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d >= d_base {
                PointPlan::Shared { extra: d - d_base }
            } else {
                PointPlan::Direct(Plan::new(&scan.sequence_at(i), ideal_pi))
            }
        })
        .collect();
    Prepared {
        t_end: plan.profile.t_total(),
        base: Some(plan),
        t_share,
        level,
        points,
        max_total,
    }
}

fn run_prepared<E: Evolver>(
    ev: &E,
    prep: &Prepared,
    dt: f64,
    noise: &NoiseRealization,
    init: &E::State,
) -> Vec<[f64; 4]> {
    let view = NoiseView::new(noise);
    let mut out = vec![[0.0; 4]; prep.points.len()];
    if let Some(base) = &prep.base {
        let walker = Walker { ev, plan: base, dt };
        let mut shared = init.clone();
        walker.advance(&mut shared, 0.0, prep.t_share, view);
        let suffix = (!noise.is_time_dependent()).then(|| walker.operator(prep.t_share, prep.t_end, view));
        for (slot, p) in out.iter_mut().zip(&prep.points) {
            if let PointPlan::Shared { extra } = *p {
                let mut s = shared.clone();
                walker.walk_flat(prep.level, prep.t_share, prep.t_share + extra, view, &mut |op| ev.apply(op, &mut s));
                match &suffix {
                    Some(op) => ev.apply(op, &mut s),
                    None => walker.advance(&mut s, prep.t_share, prep.t_end, NoiseView { noise, offset: extra }),
                }
                *slot = ev.populations(&s);
            }
        }
    }
    for (slot, p) in out.iter_mut().zip(&prep.points) {
        if let PointPlan::Direct(plan) = p {
            let walker = Walker { ev, plan, dt };
            let mut s = init.clone();
            walker.advance(&mut s, 0.0, plan.profile.t_total(), view);
            *slot = ev.populations(&s);
        }
    }
    out
}

fn draw_noise<R: Rng>(
    model: &NoiseModel,
    opts: &EvolutionOptions,
    duration: f64,
    rng: &mut R,
) -> Result<NoiseRealization> {
    let spec = &model.flux;
    if spec.a_phi == 0.0 {
        return Ok(NoiseRealization::Quiet);
    }
    match opts.noise_sampling {
        NoiseSampling::QuasiStatic => {
            let cut = opts
                .omega_cut
                .unwrap_or_else(|| default_quasistatic_cutoff(duration.max(opts.dt)))
                .min(spec.omega_high);
            let sigma = if cut > spec.omega_low {
                quasistatic_sigma(spec, cut)?
            } else {
                0.0
            };
            Ok(NoiseRealization::Static(draw_gaussian(rng, sigma)))
        }
        NoiseSampling::Trajectory => {
            let length = duration.max(opts.noise_dt) + opts.noise_dt;
            let mut traj = synthesize_with(spec, length, opts.noise_dt, rng)?;
            // components below the lowest synthesis cell enter as a static offset
            let w_f = synthesis_floor(length, opts.noise_dt);
            let sigma = if w_f > spec.omega_low {
                (2.0 * spec.a_phi * (w_f / spec.omega_low).ln()).sqrt()
            } else {
                0.0
            };
            let offset = draw_gaussian(rng, sigma);
            traj.samples.iter_mut().for_each(|x| *x += offset);
            Ok(NoiseRealization::Trajectory(traj))
        }
    }
}

fn ensemble<E: Evolver>(
    ev: &E,
    preps: &[Prepared],
    n_traj: usize,
    dt: f64,
    draw: impl Fn(u64) -> Result<NoiseRealization> + Sync,
) -> Result<Vec<EnsembleResult>> {
    let init = ev.initial(&basis_ket(IDX_0G));
    let per_traj: Vec<Vec<Vec<[f64; 4]>>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let noise = draw(i)?;
            Ok(preps.iter().map(|p| run_prepared(ev, p, dt, &noise, &init)).collect())
        })
        .collect::<Result<_>>()?;
    let n = n_traj as f64;
    let mut results = Vec::with_capacity(preps.len());
    for (k, prep) in preps.iter().enumerate() {
        let m = prep.points.len();
        let value = |traj: &Vec<Vec<[f64; 4]>>, p: usize, c: usize| {
            let pops = &traj[k][p];
            if c == 4 {
                pops[1] + pops[3]
            } else {
                pops[c]
            }
        };
        // two passes, so a noiseless ensemble gives exactly zero spread
        let stats = |p: usize, c: usize| {
            let mean = per_traj.iter().map(|t| value(t, p, c)).sum::<f64>() / n;
            let se = if n_traj > 1 {
                let ss: f64 = per_traj.iter().map(|t| (value(t, p, c) - mean).powi(2)).sum();
                (ss / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            (mean, se)
        };
        let mut r = EnsembleResult {
            mean: vec![[0.0; 4]; m],
            stderr: vec![[0.0; 4]; m],
            excited: vec![0.0; m],
            excited_stderr: vec![0.0; m],
            n_traj,
        };
        for p in 0..m {
            for c in 0..4 {
                (r.mean[p][c], r.stderr[p][c]) = stats(p, c);
            }
            (r.excited[p], r.excited_stderr[p]) = stats(p, 4);
        }
        results.push(r);
    }
    Ok(results)
}

fn with_evolver(
    params: &DeviceParams,
    frame: Frame,
    channels: Option<RelaxationChannels>,
    preps: &[Prepared],
    n: usize,
    dt: f64,
    draw: impl Fn(u64) -> Result<NoiseRealization> + Sync,
) -> Result<Vec<EnsembleResult>> {
    match (channels, frame) {
        (Some(ch), _) => ensemble(&Lindblad::new(*params, frame, &ch), preps, n, dt, draw),
        (None, Frame::TlsRotating) => ensemble(&RotatingKet { params: *params }, preps, n, dt, draw),
        (None, Frame::Lab) => ensemble(&LabKet { params: *params }, preps, n, dt, draw),
    }
}

/// Run every scan, starting each shot in `|0g⟩`. In Monte Carlo mode each
/// shot draws one noise realization (from stream `i` of `seed`) shared by
/// all scans and points; results are independent of thread count.
pub fn run_scans(
    scans: &[Scan],
    params: &DeviceParams,
    noise: &NoiseModel,
    opts: &EvolutionOptions,
    seed: u64,
) -> Result<Vec<EnsembleResult>> {
    opts.validate()?;
    params.validate()?;
    for scan in scans {
        scan.validate()?;
        for i in 0..scan.len() {
            check_dt(&scan.sequence_at(i), params, opts)?;
        }
    }
    let preps: Vec<Prepared> = scans.iter().map(|s| prepare(s, opts.ideal_pi)).collect();
    let longest = preps.iter().map(|p| p.max_total).fold(0.0, f64::max);
    let channels = RelaxationChannels::from_params(params, noise.transverse);
    match opts.mode {
        Mode::Unitary => with_evolver(params, opts.frame, None, &preps, 1, opts.dt, |_| Ok(NoiseRealization::Quiet)),
        Mode::Lindblad => with_evolver(params, opts.frame, Some(channels), &preps, 1, opts.dt, |_| {
            Ok(NoiseRealization::Quiet)
        }),
        Mode::MonteCarlo => {
            noise.flux.validate()?;
            let ch = opts.relaxation.then_some(channels);
            with_evolver(params, opts.frame, ch, &preps, opts.n_traj, opts.dt, |i| {
                let mut rng = ensemble_rng(seed, i);
                draw_noise(noise, opts, longest, &mut rng)
            })
        }
    }
}

/// Ensemble average of a single sequence.
pub fn run_trajectories(
    seq: &PulseSequence,
    params: &DeviceParams,
    noise: &NoiseModel,
    opts: &EvolutionOptions,
    seed: u64,
) -> Result<EnsembleResult> {
    let mut r = run_scans(&[Scan::single(seq.clone())], params, noise, opts, seed)?;
    Ok(r.remove(0))
}
