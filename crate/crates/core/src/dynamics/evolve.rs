//! Propagators for the qubit–TLS system and the engine that walks a pulse
//! plan with them.
//!
//! Constant-flux stretches use the exact exponential. Moving flux is
//! integrated with the fourth-order Magnus scheme (two Gauss nodes per step).
//! Dissipation enters through a Strang splitting inside moving stretches.

use std::f64::consts::PI;

use nalgebra::{Matrix2, SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::pulse::{Piece, Plan, PulseSegment, PulseSequence};
use super::state::{ket_populations, DensityMatrix4, Ket4};
use super::{EvolutionOptions, Frame};
use crate::error::{Error, Result};
use crate::model::{
    detuning, flux_at, full_hamiltonian, qubit_frequency, rotating_hamiltonian, ComplexMatrix4, DeviceParams, C64,
    IDX_0E, IDX_0G, IDX_1E, IDX_1G,
};
use crate::noise::{NoiseTrajectory, WhiteTransverseChannel};

pub type SuperOp = SMatrix<C64, 16, 16>;
type Vec16 = SVector<C64, 16>;

const SQRT3: f64 = 1.732_050_807_568_877_2;

fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// Relaxation channels for master-equation evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationChannels {
    /// Qubit energy relaxation time (s); infinity disables the channel.
    pub t1_qb: f64,
    /// TLS energy relaxation time (s); infinity disables the channel.
    pub t1_tls: f64,
    pub transverse: WhiteTransverseChannel,
}

impl RelaxationChannels {
    pub fn from_params(params: &DeviceParams, transverse: WhiteTransverseChannel) -> Self {
        RelaxationChannels {
            t1_qb: params.t1_qb,
            t1_tls: params.t1_tls,
            transverse,
        }
    }

    pub fn none() -> Self {
        RelaxationChannels {
            t1_qb: f64::INFINITY,
            t1_tls: f64::INFINITY,
            transverse: WhiteTransverseChannel { s_perp: 0.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t1_qb", self.t1_qb), ("t1_tls", self.t1_tls)] {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("{name} = {v} gives a negative or infinite rate")));
            }
        }
        if !(self.transverse.s_perp >= 0.0 && self.transverse.s_perp.is_finite()) {
            return Err(Error::Domain(format!("s_perp = {} must be >= 0", self.transverse.s_perp)));
        }
        Ok(())
    }

    /// Collapse operators with rates already folded in (units √(1/ns)).
    pub fn collapse_operators(&self) -> Vec<ComplexMatrix4> {
        let one = C64::new(1.0, 0.0);
        let mut ops = Vec::new();
        let g_qb = 1e-9 / self.t1_qb;
        if g_qb > 0.0 {
            let mut l = ComplexMatrix4::zeros();
            l[(IDX_0G, IDX_1G)] = one;
            l[(IDX_0E, IDX_1E)] = one;
            ops.push(l * C64::new(g_qb.sqrt(), 0.0));
        }
        let g_tls = 1e-9 / self.t1_tls;
        if g_tls > 0.0 {
            let mut l = ComplexMatrix4::zeros();
            l[(IDX_0G, IDX_0E)] = one;
            l[(IDX_1G, IDX_1E)] = one;
            ops.push(l * C64::new(g_tls.sqrt(), 0.0));
        }
        // σz on {|1g⟩, |0e⟩}; flips the resonant dressed states at S_⊥/4 each way
        let g_perp = 0.25 * self.transverse.s_perp * 1e-9;
        if g_perp > 0.0 {
            let mut l = ComplexMatrix4::zeros();
            l[(IDX_1G, IDX_1G)] = one;
            l[(IDX_0E, IDX_0E)] = -one;
            ops.push(l * C64::new(g_perp.sqrt(), 0.0));
        }
        ops
    }

    /// Dissipative part of the Lindblad generator on column-stacked ρ.
    pub fn dissipator(&self) -> SuperOp {
        let id = ComplexMatrix4::identity();
        let mut d = SuperOp::zeros();
        for l in self.collapse_operators() {
            let ldl = l.adjoint() * l;
            d += l.conjugate().kronecker(&l);
            d -= id.kronecker(&ldl) * C64::new(0.5, 0.0);
            d -= ldl.transpose().kronecker(&id) * C64::new(0.5, 0.0);
        }
        d
    }
}

/// `H/h` (GHz) of the chosen frame at flux offset `dphi`.
pub fn frame_hamiltonian(frame: Frame, dphi: f64, params: &DeviceParams) -> ComplexMatrix4 {
    match frame {
        Frame::Lab => full_hamiltonian(flux_at(dphi, params), params),
        Frame::TlsRotating => rotating_hamiltonian(detuning(dphi, params), params.s),
    }
}

fn frame_frequency(frame: Frame, params: &DeviceParams) -> f64 {
    match frame {
        Frame::Lab => 0.0,
        Frame::TlsRotating => params.f_tls,
    }
}

/// Resonant qubit drive within the rotating-wave approximation, as seen in
/// `frame`, at time `t_rel` after the pulse start.
fn drive_term(frame: Frame, dphi: f64, rabi: f64, t_rel: f64, params: &DeviceParams) -> ComplexMatrix4 {
    let nu = qubit_frequency(flux_at(dphi, params), params) - frame_frequency(frame, params);
    let up = cis(-2.0 * PI * nu * t_rel) * (0.5 * rabi);
    let mut d = ComplexMatrix4::zeros();
    for (lo, hi) in [(IDX_0G, IDX_1G), (IDX_0E, IDX_1E)] {
        d[(hi, lo)] = up;
        d[(lo, hi)] = up.conj();
    }
    d
}

fn drive_frequency(frame: Frame, dphi: f64, params: &DeviceParams) -> f64 {
    (qubit_frequency(flux_at(dphi, params), params) - frame_frequency(frame, params)).abs()
}

/// exp(−2πi·H·t) for Hermitian `h`.
pub fn unitary(h: &ComplexMatrix4, t: f64) -> ComplexMatrix4 {
    let hs = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(hs);
    let v = eig.eigenvectors;
    let mut vd = v;
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        let ph = cis(-2.0 * PI * lam * t);
        for r in 0..4 {
            vd[(r, k)] *= ph;
        }
    }
    vd * v.adjoint()
}

/// Fourth-order Magnus effective Hamiltonian for one step of length `h`
/// with `H1`, `H2` sampled at the Gauss nodes.
fn magnus_hamiltonian(h1: &ComplexMatrix4, h2: &ComplexMatrix4, h: f64) -> ComplexMatrix4 {
    let comm = h2 * h1 - h1 * h2;
    (h1 + h2) * C64::new(0.5, 0.0) + comm * C64::new(0.0, -SQRT3 * PI * h / 6.0)
}

fn pi_matrix() -> ComplexMatrix4 {
    let mut x = ComplexMatrix4::zeros();
    let one = C64::new(1.0, 0.0);
    x[(IDX_0G, IDX_1G)] = one;
    x[(IDX_1G, IDX_0G)] = one;
    x[(IDX_0E, IDX_1E)] = one;
    x[(IDX_1E, IDX_0E)] = one;
    x
}

/// Ideal qubit π rotation: σx on the qubit factor.
pub fn ideal_pi(psi: &Ket4) -> Ket4 {
    pi_matrix() * psi
}

/// A propagation backend: how states and propagators are represented.
pub(crate) trait Evolver: Sync {
    type State: Clone + Send + Sync;
    type Op: Clone + Send + Sync;
    type Aux;

    fn identity(&self) -> Self::Op;
    /// Propagator for constant flux `dphi` over `dur`.
    fn flat(&self, dphi: f64, dur: f64) -> Self::Op;
    /// Step-size dependent data shared by all steps of one stretch.
    fn aux(&self, h: f64) -> Self::Aux;
    /// One Magnus step with the flux at the two Gauss nodes.
    fn step(&self, aux: &Self::Aux, h: f64, d1: f64, d2: f64) -> Self::Op;
    /// One midpoint step under a resonant qubit drive.
    fn driven_step(&self, aux: &Self::Aux, h: f64, dphi: f64, rabi: f64, t_rel: f64) -> Self::Op;
    fn pi_op(&self) -> Self::Op;
    /// `second ∘ first`.
    fn then(&self, first: &Self::Op, second: &Self::Op) -> Self::Op;
    fn apply(&self, op: &Self::Op, s: &mut Self::State);
    fn populations(&self, s: &Self::State) -> [f64; 4];
    fn initial(&self, psi: &Ket4) -> Self::State;
    fn frame(&self) -> Frame;
    fn params(&self) -> &DeviceParams;
}

/// Rotating-frame pure-state backend using the block structure
/// `|0g⟩ ⊕ {|1g⟩, |0e⟩} ⊕ |1e⟩` of the Hamiltonian.
pub(crate) struct RotatingKet {
    pub params: DeviceParams,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum RotOp {
    Block { p0: C64, m: Matrix2<C64>, p3: C64 },
    Full(ComplexMatrix4),
}

impl RotOp {
    fn full(&self) -> ComplexMatrix4 {
        match *self {
            RotOp::Full(u) => u,
            RotOp::Block { p0, m, p3 } => {
                let mut u = ComplexMatrix4::zeros();
                u[(IDX_0G, IDX_0G)] = p0;
                u[(IDX_1E, IDX_1E)] = p3;
                let idx = [IDX_1G, IDX_0E];
                for a in 0..2 {
                    for b in 0..2 {
                        u[(idx[a], idx[b])] = m[(a, b)];
                    }
                }
                u
            }
        }
    }
}

/// exp(−iθ·(hx σx + hy σy + hz σz)).
fn su2(hx: f64, hy: f64, hz: f64, theta: f64) -> Matrix2<C64> {
    let r = (hx * hx + hy * hy + hz * hz).sqrt();
    let (sn, c) = (theta * r).sin_cos();
    let s = if r > 0.0 { sn / r } else { 0.0 };
    Matrix2::new(
        C64::new(c, -s * hz),
        C64::new(-s * hy, -s * hx),
        C64::new(s * hy, -s * hx),
        C64::new(c, s * hz),
    )
}

impl RotatingKet {
    fn block(&self, a1: f64, a2: f64, hy: f64, dur: f64) -> RotOp {
        let theta = 2.0 * PI * dur;
        let abar = 0.5 * (a1 + a2);
        RotOp::Block {
            p0: cis(-0.5 * theta * abar),
            m: su2(-0.5 * self.params.s, hy, -0.5 * abar, theta),
            p3: cis(0.5 * theta * abar),
        }
    }
}

impl Evolver for RotatingKet {
    type State = Ket4;
    type Op = RotOp;
    type Aux = ();

    fn identity(&self) -> RotOp {
        RotOp::Block {
            p0: C64::new(1.0, 0.0),
            m: Matrix2::identity(),
            p3: C64::new(1.0, 0.0),
        }
    }

    fn flat(&self, dphi: f64, dur: f64) -> RotOp {
        let a = detuning(dphi, &self.params);
        self.block(a, a, 0.0, dur)
    }

    fn aux(&self, _h: f64) {}

    fn step(&self, _: &(), h: f64, d1: f64, d2: f64) -> RotOp {
        let a1 = detuning(d1, &self.params);
        let a2 = detuning(d2, &self.params);
        let hy = SQRT3 * PI * h / 12.0 * self.params.s * (a2 - a1);
        self.block(a1, a2, hy, h)
    }

    fn driven_step(&self, _: &(), h: f64, dphi: f64, rabi: f64, t_rel: f64) -> RotOp {
        let hm = frame_hamiltonian(Frame::TlsRotating, dphi, &self.params)
            + drive_term(Frame::TlsRotating, dphi, rabi, t_rel, &self.params);
        RotOp::Full(unitary(&hm, h))
    }

    fn pi_op(&self) -> RotOp {
        RotOp::Full(pi_matrix())
    }

    fn then(&self, first: &RotOp, second: &RotOp) -> RotOp {
        match (first, second) {
            (RotOp::Block { p0: a0, m: am, p3: a3 }, RotOp::Block { p0: b0, m: bm, p3: b3 }) => RotOp::Block {
                p0: a0 * b0,
                m: bm * am,
                p3: a3 * b3,
            },
            _ => RotOp::Full(second.full() * first.full()),
        }
    }

    fn apply(&self, op: &RotOp, s: &mut Ket4) {
        match op {
            RotOp::Block { p0, m, p3 } => {
                s[IDX_0G] *= p0;
                s[IDX_1E] *= p3;
                let (x, y) = (s[IDX_1G], s[IDX_0E]);
                s[IDX_1G] = m[(0, 0)] * x + m[(0, 1)] * y;
                s[IDX_0E] = m[(1, 0)] * x + m[(1, 1)] * y;
            }
            RotOp::Full(u) => *s = u * *s,
        }
    }

    fn populations(&self, s: &Ket4) -> [f64; 4] {
        ket_populations(s)
    }

    fn initial(&self, psi: &Ket4) -> Ket4 {
        *psi
    }

    fn frame(&self) -> Frame {
        Frame::TlsRotating
    }

    fn params(&self) -> &DeviceParams {
        &self.params
    }
}

/// Lab-frame pure-state backend.
pub(crate) struct LabKet {
    pub params: DeviceParams,
}

impl Evolver for LabKet {
    type State = Ket4;
    type Op = ComplexMatrix4;
    type Aux = ();

    fn identity(&self) -> ComplexMatrix4 {
        ComplexMatrix4::identity()
    }

    fn flat(&self, dphi: f64, dur: f64) -> ComplexMatrix4 {
        unitary(&frame_hamiltonian(Frame::Lab, dphi, &self.params), dur)
    }

    fn aux(&self, _h: f64) {}

    fn step(&self, _: &(), h: f64, d1: f64, d2: f64) -> ComplexMatrix4 {
        let h1 = frame_hamiltonian(Frame::Lab, d1, &self.params);
        let h2 = frame_hamiltonian(Frame::Lab, d2, &self.params);
        unitary(&magnus_hamiltonian(&h1, &h2, h), h)
    }

    fn driven_step(&self, _: &(), h: f64, dphi: f64, rabi: f64, t_rel: f64) -> ComplexMatrix4 {
        let hm = frame_hamiltonian(Frame::Lab, dphi, &self.params)
            + drive_term(Frame::Lab, dphi, rabi, t_rel, &self.params);
        unitary(&hm, h)
    }

    fn pi_op(&self) -> ComplexMatrix4 {
        pi_matrix()
    }

    fn then(&self, first: &ComplexMatrix4, second: &ComplexMatrix4) -> ComplexMatrix4 {
        second * first
    }

    fn apply(&self, op: &ComplexMatrix4, s: &mut Ket4) {
        *s = op * *s;
    }

    fn populations(&self, s: &Ket4) -> [f64; 4] {
        ket_populations(s)
    }

    fn initial(&self, psi: &Ket4) -> Ket4 {
        *psi
    }

    fn frame(&self) -> Frame {
        Frame::Lab
    }

    fn params(&self) -> &DeviceParams {
        &self.params
    }
}

/// Master-equation backend on column-stacked density matrices.
pub(crate) struct Lindblad {
    pub params: DeviceParams,
    pub frame: Frame,
    dissipator: SuperOp,
}

impl Lindblad {
    pub(crate) fn new(params: DeviceParams, frame: Frame, channels: &RelaxationChannels) -> Self {
        Lindblad {
            params,
            frame,
            dissipator: channels.dissipator(),
        }
    }

    fn hamiltonian_part(h: &ComplexMatrix4) -> SuperOp {
        let id = ComplexMatrix4::identity();
        (id.kronecker(h) - h.transpose().kronecker(&id)) * C64::new(0.0, -2.0 * PI)
    }

    fn unitary_superop(u: &ComplexMatrix4) -> SuperOp {
        u.conjugate().kronecker(u)
    }
}

impl Evolver for Lindblad {
    type State = ComplexMatrix4;
    type Op = SuperOp;
    type Aux = SuperOp;

    fn identity(&self) -> SuperOp {
        SuperOp::identity()
    }

    fn flat(&self, dphi: f64, dur: f64) -> SuperOp {
        let h = frame_hamiltonian(self.frame, dphi, &self.params);
        ((Self::hamiltonian_part(&h) + self.dissipator) * C64::new(dur, 0.0)).exp()
    }

    fn aux(&self, h: f64) -> SuperOp {
        (self.dissipator * C64::new(0.5 * h, 0.0)).exp()
    }

    fn step(&self, half: &SuperOp, h: f64, d1: f64, d2: f64) -> SuperOp {
        let h1 = frame_hamiltonian(self.frame, d1, &self.params);
        let h2 = frame_hamiltonian(self.frame, d2, &self.params);
        let u = unitary(&magnus_hamiltonian(&h1, &h2, h), h);
        half * Self::unitary_superop(&u) * half
    }

    fn driven_step(&self, half: &SuperOp, h: f64, dphi: f64, rabi: f64, t_rel: f64) -> SuperOp {
        let hm = frame_hamiltonian(self.frame, dphi, &self.params)
            + drive_term(self.frame, dphi, rabi, t_rel, &self.params);
        half * Self::unitary_superop(&unitary(&hm, h)) * half
    }

    fn pi_op(&self) -> SuperOp {
        Self::unitary_superop(&pi_matrix())
    }

    fn then(&self, first: &SuperOp, second: &SuperOp) -> SuperOp {
        second * first
    }

    fn apply(&self, op: &SuperOp, s: &mut ComplexMatrix4) {
        let v = op * Vec16::from_column_slice(s.as_slice());
        *s = ComplexMatrix4::from_column_slice(v.as_slice());
    }

    fn populations(&self, s: &ComplexMatrix4) -> [f64; 4] {
        [s[(0, 0)].re, s[(1, 1)].re, s[(2, 2)].re, s[(3, 3)].re]
    }

    fn initial(&self, psi: &Ket4) -> ComplexMatrix4 {
        psi * psi.adjoint()
    }

    fn frame(&self) -> Frame {
        self.frame
    }

    fn params(&self) -> &DeviceParams {
        &self.params
    }
}

/// One flux-noise realization, as an additive offset to the profile.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum NoiseRealization {
    #[default]
    Quiet,
    /// Constant offset (µΦ₀) for the whole shot.
    Static(f64),
    /// Time-resolved offset.
    Trajectory(NoiseTrajectory),
}

impl NoiseRealization {
    pub(crate) fn is_time_dependent(&self) -> bool {
        matches!(self, NoiseRealization::Trajectory(_))
    }
}

/// A realization read with a time shift: `value(t) = noise(t + offset)`.
#[derive(Clone, Copy)]
pub(crate) struct NoiseView<'a> {
    pub noise: &'a NoiseRealization,
    pub offset: f64,
}

impl<'a> NoiseView<'a> {
    pub(crate) fn new(noise: &'a NoiseRealization) -> Self {
        NoiseView { noise, offset: 0.0 }
    }

    fn value(&self, t: f64) -> f64 {
        match self.noise {
            NoiseRealization::Quiet => 0.0,
            NoiseRealization::Static(x) => *x,
            NoiseRealization::Trajectory(tr) => tr.value_at(t + self.offset),
        }
    }

    /// First sample boundary strictly after `t`.
    fn next_change(&self, t: f64) -> f64 {
        match self.noise {
            NoiseRealization::Trajectory(tr) => {
                let u = t + self.offset;
                let k = (u / tr.dt).floor() + 1.0;
                let mut next = k * tr.dt - self.offset;
                if next <= t {
                    next = (k + 1.0) * tr.dt - self.offset;
                }
                next
            }
            _ => f64::INFINITY,
        }
    }
}

/// Walks pieces of a plan, emitting propagators in time order.
pub(crate) struct Walker<'a, E: Evolver> {
    pub ev: &'a E,
    pub plan: &'a Plan,
    pub dt: f64,
}

impl<'a, E: Evolver> Walker<'a, E> {
    /// Constant-flux stretch `[a, b]` at `level` plus noise.
    pub(crate) fn walk_flat(&self, level: f64, a: f64, b: f64, noise: NoiseView, emit: &mut impl FnMut(&E::Op)) {
        let mut t = a;
        while t < b {
            let next = noise.next_change(t).min(b);
            emit(&self.ev.flat(level + noise.value(t), next - t));
            t = next;
        }
    }

    fn walk_smooth(&self, a: f64, b: f64, noise: NoiseView, emit: &mut impl FnMut(&E::Op)) {
        let n = ((b - a) / self.dt - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let aux = self.ev.aux(h);
        let (g1, g2) = (0.5 - SQRT3 / 6.0, 0.5 + SQRT3 / 6.0);
        let prof = &self.plan.profile;
        for k in 0..n {
            let t0 = a + k as f64 * h;
            let (t1, t2) = (t0 + g1 * h, t0 + g2 * h);
            let d1 = prof.value(t1) + noise.value(t1);
            let d2 = prof.value(t2) + noise.value(t2);
            emit(&self.ev.step(&aux, h, d1, d2));
        }
    }

    fn walk_driven(&self, a: f64, b: f64, start: f64, rabi: f64, noise: NoiseView, emit: &mut impl FnMut(&E::Op)) {
        let prof = &self.plan.profile;
        let mid = 0.5 * (a + b);
        let nu = drive_frequency(self.ev.frame(), prof.value(mid), self.ev.params());
        let h_max = if nu > 0.0 { self.dt.min(0.02 / nu) } else { self.dt };
        let n = ((b - a) / h_max - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let aux = self.ev.aux(h);
        for k in 0..n {
            let tm = a + (k as f64 + 0.5) * h;
            let d = prof.value(tm) + noise.value(tm);
            emit(&self.ev.driven_step(&aux, h, d, rabi, tm - start));
        }
    }

    /// Emit propagators covering `[t_a, t_b)`. A π pulse at `t_b` is included
    /// only when `t_b` is the end of the sequence.
    pub(crate) fn walk(&self, t_a: f64, t_b: f64, noise: NoiseView, emit: &mut impl FnMut(&E::Op)) {
        let total = self.plan.profile.t_total();
        for piece in &self.plan.pieces {
            match *piece {
                Piece::Pi { t } => {
                    if (t_a <= t && t < t_b) || (t == t_b && t_b >= total) {
                        emit(&self.ev.pi_op());
                    }
                }
                Piece::Flat { t0, t1, dphi } => {
                    let (a, b) = (t0.max(t_a), t1.min(t_b));
                    if b > a {
                        self.walk_flat(dphi, a, b, noise, emit);
                    }
                }
                Piece::Smooth { t0, t1 } => {
                    let (a, b) = (t0.max(t_a), t1.min(t_b));
                    if b > a {
                        self.walk_smooth(a, b, noise, emit);
                    }
                }
                Piece::Driven { t0, t1, start, rabi } => {
                    let (a, b) = (t0.max(t_a), t1.min(t_b));
                    if b > a {
                        self.walk_driven(a, b, start, rabi, noise, emit);
                    }
                }
            }
        }
    }

    pub(crate) fn advance(&self, state: &mut E::State, t_a: f64, t_b: f64, noise: NoiseView) {
        self.walk(t_a, t_b, noise, &mut |op| self.ev.apply(op, state));
    }

    pub(crate) fn operator(&self, t_a: f64, t_b: f64, noise: NoiseView) -> E::Op {
        let mut acc = self.ev.identity();
        self.walk(t_a, t_b, noise, &mut |op| acc = self.ev.then(&acc, op));
        acc
    }
}

/// Largest |eigenvalue| of the frame Hamiltonian over the flux levels visited.
pub fn max_frequency(seq: &PulseSequence, params: &DeviceParams, frame: Frame) -> f64 {
    let mut levels = seq.profile().levels();
    if levels.is_empty() {
        levels.push(0.0);
    }
    let mut f_max: f64 = 0.0;
    for &dphi in &levels {
        let h = frame_hamiltonian(frame, dphi, params);
        let eig = SymmetricEigen::new(h);
        f_max = eig.eigenvalues.iter().fold(f_max, |m, e| m.max(e.abs()));
    }
    f_max
}

/// Check that `dt` resolves the fastest frequency of the sequence.
pub fn check_dt(seq: &PulseSequence, params: &DeviceParams, opts: &EvolutionOptions) -> Result<()> {
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(Error::Precondition(format!("dt must be > 0, got {}", opts.dt)));
    }
    let f_max = max_frequency(seq, params, opts.frame);
    let bound = 0.1 / f_max;
    if opts.dt > bound {
        return Err(Error::Precondition(format!(
            "dt = {} ns exceeds 0.1/f_max = {bound:.4} ns (f_max = {f_max:.4} GHz)",
            opts.dt
        )));
    }
    Ok(())
}

fn check_times(times: &[f64], total: f64) -> Result<()> {
    let mut prev = 0.0;
    for &t in times {
        if !(t >= prev && t <= total) {
            return Err(Error::Domain(format!(
                "sample times must be sorted within [0, {total}], got {t}"
            )));
        }
        prev = t;
    }
    Ok(())
}

fn trace_states<E: Evolver>(
    ev: &E,
    seq: &PulseSequence,
    init: E::State,
    opts: &EvolutionOptions,
    times: &[f64],
    noise: &NoiseRealization,
) -> Vec<E::State> {
    let plan = Plan::new(seq, opts.ideal_pi);
    let walker = Walker {
        ev,
        plan: &plan,
        dt: opts.dt,
    };
    let total = seq.t_total();
    let view = NoiseView::new(noise);
    let mut state = init;
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len().max(1));
    for &ts in times {
        walker.advance(&mut state, t, ts, view);
        t = ts;
        out.push(state.clone());
    }
    if times.is_empty() {
        walker.advance(&mut state, 0.0, total, view);
        out.push(state);
    }
    out
}

/// Unitary evolution of `psi0` through `seq`. Returns the state at each of
/// `times` (sorted, within the sequence), or only the final state when
/// `times` is empty. A π pulse scheduled exactly at a sample time is applied
/// after that sample, except at the end of the sequence.
pub fn propagate_piecewise(
    psi0: &Ket4,
    seq: &PulseSequence,
    params: &DeviceParams,
    opts: &EvolutionOptions,
    times: &[f64],
) -> Result<Vec<Ket4>> {
    seq.validate()?;
    check_dt(seq, params, opts)?;
    check_times(times, seq.t_total())?;
    let quiet = NoiseRealization::Quiet;
    Ok(match opts.frame {
        Frame::TlsRotating => trace_states(&RotatingKet { params: *params }, seq, *psi0, opts, times, &quiet),
        Frame::Lab => trace_states(&LabKet { params: *params }, seq, *psi0, opts, times, &quiet),
    })
}

/// Master-equation evolution of `rho0` through `seq` with the given
/// relaxation channels. Sampling follows [`propagate_piecewise`].
pub fn evolve_lindblad(
    rho0: &DensityMatrix4,
    seq: &PulseSequence,
    params: &DeviceParams,
    channels: &RelaxationChannels,
    opts: &EvolutionOptions,
    times: &[f64],
) -> Result<Vec<DensityMatrix4>> {
    seq.validate()?;
    channels.validate()?;
    check_dt(seq, params, opts)?;
    check_times(times, seq.t_total())?;
    let ev = Lindblad::new(*params, opts.frame, channels);
    let states = trace_states(&ev, seq, *rho0.matrix(), opts, times, &NoiseRealization::Quiet);
    Ok(states.into_iter().map(DensityMatrix4::new_unchecked).collect())
}

/// How a qubit π rotation is realised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PiPulse {
    /// Exact σx on the qubit factor.
    Ideal,
    /// Resonant drive of the given duration (ns) at the current flux.
    Driven { duration: f64 },
}

/// Apply a qubit π rotation to `psi` at flux offset `dphi`.
pub fn apply_pi_pulse(
    psi: &Ket4,
    pulse: PiPulse,
    dphi: f64,
    params: &DeviceParams,
    opts: &EvolutionOptions,
) -> Result<Ket4> {
    match pulse {
        PiPulse::Ideal => Ok(ideal_pi(psi)),
        PiPulse::Driven { duration } => {
            if !(duration > 0.0) {
                return Err(Error::Domain(format!("driven π pulse needs duration > 0, got {duration}")));
            }
            let seq = PulseSequence::new(
                dphi,
                vec![PulseSegment::QubitPiPulse { duration }, PulseSegment::ReadoutMarker {}],
            );
            let opts = EvolutionOptions {
                ideal_pi: false,
                ..opts.clone()
            };
            Ok(propagate_piecewise(psi, &seq, params, &opts, &[])?[0])
        }
    }
}
