//! Time evolution of the qubit–TLS system through flux-pulse sequences.

mod adiabatic;
mod ensemble;
mod evolve;
mod pulse;
mod state;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adiabatic::{adiabaticity_check, AdiabaticityReport, RampClass, RampRate};
pub use ensemble::{run_scans, run_trajectories, EnsembleResult, NoiseModel, Scan};
pub use evolve::{
    apply_pi_pulse, check_dt, evolve_lindblad, frame_hamiltonian, ideal_pi, max_frequency, propagate_piecewise,
    unitary, NoiseRealization, PiPulse, RelaxationChannels, SuperOp,
};
pub use pulse::{flux_profile, Edge, FluxProfile, PulseSegment, PulseSequence, EDGE_WINDOW_SIGMAS};
pub use state::{basis_ket, ket_populations, DensityMatrix4, Ket4};

/// Reference frame of the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Full four-level Hamiltonian, no rotating-wave approximation.
    Lab,
    /// Frame rotating at f_TLS, rotating-wave approximation.
    #[default]
    TlsRotating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Single noiseless pure-state run.
    #[default]
    Unitary,
    /// Single noiseless run with relaxation.
    Lindblad,
    /// Ensemble over flux-noise realizations.
    MonteCarlo,
}

/// How flux noise is drawn in Monte Carlo mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSampling {
    /// One Gaussian offset per shot.
    #[default]
    QuasiStatic,
    /// Synthesized 1/f time series per shot.
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionOptions {
    /// Integration step through moving flux (ns).
    pub dt: f64,
    pub mode: Mode,
    pub n_traj: usize,
    pub frame: Frame,
    pub ideal_pi: bool,
    pub noise_sampling: NoiseSampling,
    /// Include relaxation channels inside Monte Carlo shots.
    pub relaxation: bool,
    /// Sample spacing of synthesized noise trajectories (ns).
    pub noise_dt: f64,
    /// Quasi-static cutoff (rad/s); defaults to π / (longest sequence).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_cut: Option<f64>,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        EvolutionOptions {
            dt: 0.01,
            mode: Mode::Unitary,
            n_traj: 200,
            frame: Frame::TlsRotating,
            ideal_pi: true,
            noise_sampling: NoiseSampling::QuasiStatic,
            relaxation: false,
            noise_dt: 1.0,
            omega_cut: None,
        }
    }
}

impl EvolutionOptions {
    pub fn monte_carlo(n_traj: usize) -> Self {
        EvolutionOptions {
            mode: Mode::MonteCarlo,
            n_traj,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", format!("must be > 0, got {}", self.dt)));
        }
        if self.mode == Mode::MonteCarlo && self.n_traj == 0 {
            return Err(Error::config("n_traj", "must be >= 1 in monte_carlo mode"));
        }
        if !(self.noise_dt > 0.0 && self.noise_dt.is_finite()) {
            return Err(Error::config("noise_dt", format!("must be > 0, got {}", self.noise_dt)));
        }
        if let Some(w) = self.omega_cut {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::config("omega_cut", format!("must be > 0, got {w}")));
            }
        }
        Ok(())
    }
}
