//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{EvolutionOptions, NoiseModel};
use crate::error::{Error, Result};
use crate::model::{DeviceParams, DeviceParamsSi};
use crate::protocols::{cp_intervals, refocus_duration, refocus_flux, Experiment, ReadoutModel, Schedule};

/// A list of values or an evenly spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range(GridRange),
}

/// `start` to `stop` inclusive, either `n` points or a fixed `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub start: f64,
    pub stop: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl Grid {
    pub fn range(start: f64, stop: f64, n: usize) -> Self {
        Grid::Range(GridRange {
            start,
            stop,
            n: Some(n),
            step: None,
        })
    }

    /// Expand to explicit values. `path` names the field in errors.
    pub fn values(&self, path: &str) -> Result<Vec<f64>> {
        let v = match self {
            Grid::List(v) => v.clone(),
            Grid::Range(r) => {
                if !(r.start.is_finite() && r.stop.is_finite()) {
                    return Err(Error::config(path, "start and stop must be finite"));
                }
                match (r.n, r.step) {
                    (Some(n), None) => {
                        if n == 0 {
                            return Err(Error::config(path, "n must be >= 1"));
                        }
                        if n == 1 {
                            vec![r.start]
                        } else {
                            let h = (r.stop - r.start) / (n - 1) as f64;
                            (0..n).map(|k| r.start + k as f64 * h).collect()
                        }
                    }
                    (None, Some(step)) => {
                        if !(step > 0.0 && step.is_finite()) || r.stop < r.start {
                            return Err(Error::config(path, "step must be > 0 with stop >= start"));
                        }
                        let count = ((r.stop - r.start) / step + 1e-9).floor() as usize + 1;
                        if count > 1_000_000 {
                            return Err(Error::config(path, "range has more than 10^6 points"));
                        }
                        (0..count).map(|k| r.start + k as f64 * step).collect()
                    }
                    _ => return Err(Error::config(path, "give exactly one of `n` and `step`")),
                }
            }
        };
        if v.is_empty() {
            return Err(Error::config(path, "grid is empty"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::config(path, "grid values must be finite"));
        }
        Ok(v)
    }

    fn non_negative(&self, path: &str) -> Result<Vec<f64>> {
        let v = self.values(path)?;
        if let Some(x) = v.iter().find(|x| **x < 0.0) {
            return Err(Error::config(path, format!("times must be >= 0, got {x}")));
        }
        Ok(v)
    }
}

fn default_n_refocus() -> Vec<u32> {
    vec![0, 1]
}

fn default_delta_points() -> usize {
    8
}

/// Parameters of the experiment to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolConfig {
    /// Chevron over flux offset (µΦ₀) and interaction time (ns).
    SwapSpectroscopy { dphi: Grid, tau1: Grid },
    /// Free evolution and single-pulse echo traces.
    Echo {
        dphi: f64,
        tau1: f64,
        tau2: Grid,
        #[serde(default = "default_n_refocus")]
        n_refocus: Vec<u32>,
    },
    /// Echo visibility against refocusing-pulse length.
    CalibrateRefocus {
        dphi: f64,
        tau1: f64,
        tau_refocus: Grid,
        tau2: Grid,
        /// GHz
        detune: f64,
    },
    /// Carr–Purcell decoupling with envelope fits per flux offset and pulse count.
    CpSequence {
        dphi: Grid,
        n_pulses: Vec<u32>,
        total_time: Grid,
        /// Samples of the final-interval sweep over one oscillation period.
        #[serde(default = "default_delta_points")]
        delta_points: usize,
        /// Envelope points before this time (ns) are excluded from the fits.
        #[serde(default)]
        fit_from: f64,
        /// Exponential time (ns) held fixed in the fits; defaults to the
        /// relaxation budget, or infinity when relaxation is off.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fit_t1: Option<f64>,
    },
}

impl ProtocolConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolConfig::SwapSpectroscopy { .. } => "swap_spectroscopy",
            ProtocolConfig::Echo { .. } => "echo",
            ProtocolConfig::CalibrateRefocus { .. } => "calibrate_refocus",
            ProtocolConfig::CpSequence { .. } => "cp_sequence",
        }
    }

    /// Check grids and schedule feasibility without simulating.
    pub fn validate(&self, exp: &Experiment) -> Result<()> {
        let at = |f: &str| format!("protocol.{f}");
        let finite_time = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(at(name), format!("must be finite and >= 0, got {v}")))
            }
        };
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(at(name), "must be finite"))
            }
        };
        let refocus = |detune: f64, path: String| {
            refocus_flux(detune, &exp.params).map_err(|e| Error::config(path, e.to_string()))
        };
        match self {
            ProtocolConfig::SwapSpectroscopy { dphi, tau1 } => {
                dphi.values(&at("dphi"))?;
                tau1.non_negative(&at("tau1"))?;
            }
            ProtocolConfig::Echo {
                dphi,
                tau1,
                tau2,
                n_refocus,
            } => {
                finite("dphi", *dphi)?;
                finite_time("tau1", *tau1)?;
                tau2.non_negative(&at("tau2"))?;
                if n_refocus.is_empty() || n_refocus.iter().any(|n| *n > 1) {
                    return Err(Error::config(at("n_refocus"), "entries must be 0 or 1"));
                }
                if n_refocus.contains(&1) {
                    refocus(exp.schedule.refocus_detune, "schedule.refocus_detune".into())?;
                }
            }
            ProtocolConfig::CalibrateRefocus {
                dphi,
                tau1,
                tau_refocus,
                tau2,
                detune,
            } => {
                finite("dphi", *dphi)?;
                finite_time("tau1", *tau1)?;
                tau_refocus.non_negative(&at("tau_refocus"))?;
                if tau2.non_negative(&at("tau2"))?.len() < 3 {
                    return Err(Error::config(at("tau2"), "needs at least 3 points"));
                }
                if *detune == 0.0 || !detune.is_finite() {
                    return Err(Error::config(at("detune"), "must be finite and non-zero"));
                }
                refocus(*detune, at("detune"))?;
            }
            ProtocolConfig::CpSequence {
                dphi,
                n_pulses,
                total_time,
                delta_points,
                fit_from,
                fit_t1,
            } => {
                dphi.values(&at("dphi"))?;
                let times = total_time.non_negative(&at("total_time"))?;
                if n_pulses.is_empty() {
                    return Err(Error::config(at("n_pulses"), "must not be empty"));
                }
                if *delta_points < 3 {
                    return Err(Error::config(at("delta_points"), "must be >= 3"));
                }
                finite_time("fit_from", *fit_from)?;
                if let Some(t1) = fit_t1 {
                    if !(*t1 > 0.0) {
                        return Err(Error::config(at("fit_t1"), "must be > 0"));
                    }
                }
                let tau_r = refocus_duration(exp.schedule.refocus_detune);
                if n_pulses.iter().any(|n| *n > 0) {
                    refocus(exp.schedule.refocus_detune, "schedule.refocus_detune".into())?;
                }
                for &n in n_pulses {
                    for &t in &times {
                        cp_intervals(n, t, tau_r)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn default_predict_dphi() -> Grid {
    Grid::range(-200.0, 200.0, 81)
}

fn default_predict_n() -> Vec<u32> {
    vec![0, 1, 2, 4]
}

/// Grid for the analytic prediction table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    #[serde(default = "default_predict_dphi")]
    pub dphi: Grid,
    #[serde(default = "default_predict_n")]
    pub n_pulses: Vec<u32>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            dphi: default_predict_dphi(),
            n_pulses: default_predict_n(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Top-level configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub device: DeviceParamsSi,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub readout: ReadoutModel,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolConfig>,
    #[serde(default)]
    pub evolution: EvolutionOptions,
    #[serde(default)]
    pub predict: PredictConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// A parsed configuration together with the hash of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Hex SHA-256 of the file contents.
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    /// Parse JSON. Syntax and schema errors carry the JSON path of the offending field.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::config(if path == "." { "<root>".into() } else { path }, inner.to_string())
        })
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Ok(LoadedConfig {
            config: Self::from_json(&bytes)?,
            sha256: sha256_hex(&bytes),
        })
    }

    pub fn device_params(&self) -> Result<DeviceParams> {
        DeviceParams::try_from(self.device.clone()).map_err(|e| e.within("device"))
    }

    /// Validate every section and assemble the simulation inputs.
    pub fn experiment(&self) -> Result<Experiment> {
        let params = self.device_params()?;
        self.noise.flux.validate().map_err(|e| e.within("noise.flux"))?;
        self.noise.transverse.validate().map_err(|e| e.within("noise.transverse"))?;
        self.readout.validate().map_err(|e| e.within("readout"))?;
        self.evolution.validate().map_err(|e| e.within("evolution"))?;
        self.schedule.validate(&self.evolution).map_err(|e| e.within("schedule"))?;
        let exp = Experiment {
            params,
            noise: self.noise,
            opts: self.evolution.clone(),
            schedule: self.schedule,
            seed: self.seed,
        };
        if let Some(p) = &self.protocol {
            p.validate(&exp)?;
        }
        self.predict.dphi.values("predict.dphi")?;
        Ok(exp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_of(json: &str) -> String {
        match ExperimentConfig::from_json(json.as_bytes()).and_then(|c| c.experiment().map(|_| c)) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_json(br#"{"seed": 3}"#).unwrap();
        let exp = c.experiment().unwrap();
        let d = DeviceParams::default();
        assert!((exp.params.f_tls / d.f_tls - 1.0).abs() < 1e-12);
        assert!((exp.params.phi_star / d.phi_star - 1.0).abs() < 1e-12);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert!(c.protocol.is_none());
    }

    #[test]
    fn error_paths() {
        assert_eq!(path_of(r#"{"device": {"delta": 5.4e9, "ip": 1.8e-7, "s": 7.6e7, "phi_star": -8.58e-18, "t1_qb": -1e-5, "t1_tls": 1e-6}}"#), "device.t1_qb");
        assert_eq!(path_of(r#"{"evolution": {"dt": 0.05, "bogus": 1}}"#), "evolution.bogus");
        assert_eq!(path_of(r#"{"evolution": {"dt": -1}}"#), "evolution.dt");
        assert_eq!(path_of(r#"{"noise": {"flux": {"a_phi": -1}}}"#), "noise.flux.a_phi");
        assert_eq!(path_of(r#"{"readout": {"p_sw_ground": 0.1, "p_sw_excited": 0.9}}"#), "readout.p_sw_ground");
        assert_eq!(
            path_of(r#"{"protocol": {"kind": "swap_spectroscopy", "dphi": [0], "tau1": {"start": 0, "stop": 5}}}"#),
            "protocol.tau1"
        );
        assert_eq!(path_of(r#"{"protocol": {"kind": "echo", "dphi": -72, "tau1": 10, "tau2": [1], "extra": 0}}"#), "protocol");
        assert_eq!(path_of(r#"{"seed": "x"}"#), "seed");
    }

    #[test]
    fn infeasible_cp_schedule_names_spacing() {
        let json = r#"{"protocol": {"kind": "cp_sequence", "dphi": [-84], "n_pulses": [4], "total_time": [2, 50]}}"#;
        let c = ExperimentConfig::from_json(json.as_bytes()).unwrap();
        let err = c.experiment().unwrap_err();
        assert!(matches!(err, Error::Schedule(_)));
        assert!(err.to_string().contains("spacing"));
    }

    #[test]
    fn grids() {
        assert_eq!(Grid::range(0.0, 1.0, 3).values("g").unwrap(), vec![0.0, 0.5, 1.0]);
        let g = Grid::Range(GridRange {
            start: 0.0,
            stop: 0.3,
            n: None,
            step: Some(0.1),
        });
        assert_eq!(g.values("g").unwrap().len(), 4);
        assert!(Grid::List(vec![]).values("g").is_err());
        let parsed: Grid = serde_json::from_str(r#"{"start": 1, "stop": 2, "n": 2}"#).unwrap();
        assert_eq!(parsed.values("g").unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn round_trips_through_json() {
        let json = r#"{"protocol": {"kind": "calibrate_refocus", "dphi": -72, "tau1": 97, "tau_refocus": {"start": 0, "stop": 9, "step": 0.1}, "tau2": {"start": 80, "stop": 120, "n": 41}, "detune": 0.55}, "seed": 7}"#;
        let c = ExperimentConfig::from_json(json.as_bytes()).unwrap();
        let back = ExperimentConfig::from_json(serde_json::to_string(&c).unwrap().as_bytes()).unwrap();
        assert_eq!(c, back);
        c.experiment().unwrap();
    }
}
