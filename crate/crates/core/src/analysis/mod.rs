//! Fits and model comparisons for simulated traces.

mod compare;
mod decay;
mod lsq;
mod oscillation;
mod rates;
mod spectrum;

pub use compare::{compare_to_model, predicted_te, ComparisonRow, ModelComparison, TePoint, REFERENCE_A_PHI};
pub use decay::{crossing_time, fit_decay, one_over_e_time, DecayFit, T1_BOUNDS, TPHI_BOUNDS};
pub use oscillation::{demodulate, envelope_at, extract_envelope, fit_oscillation, Envelope, OscFit, Quadrature};
pub use rates::{infer_s_perp, t1_tilde_from_rates};
pub use spectrum::{log_log_slope, periodogram};
