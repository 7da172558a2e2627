//! Command-line front end: `run`, `predict`, `validate`, `list-figures`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{
    compare_to_model, envelope_at, fit_decay, fit_oscillation, predicted_te, t1_tilde_from_rates, TePoint,
};
use crate::config::{ExperimentConfig, LoadedConfig, ProtocolConfig};
use crate::error::{Error, Result};
use crate::model::f_osc_at;
use crate::noise::predicted_tphi;
use crate::protocols::{
    apply_readout, calibrate_refocus, cp_sequence, echo_experiment, one_period_deltas, swap_spectroscopy, Experiment,
};

// stdout may be a closed pipe (e.g. piped into head); that is not an error
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Exit status for configuration and schedule errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for failures during simulation or analysis.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tls-refocus", version, about = "Flux-pulse refocusing of a qubit coupled to a two-level system")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the configured protocol and write CSV, metadata and a plot script.
    Run(CommonArgs),
    /// Tabulate analytic predictions without simulation.
    Predict(CommonArgs),
    /// Check a configuration and exit.
    Validate(CommonArgs),
    /// List the bundled figure configurations.
    ListFigures,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Override the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A bundled configuration reproducing one figure.
pub struct Figure {
    pub name: &'static str,
    pub description: &'static str,
    pub json: &'static str,
}

pub const FIGURES: &[Figure] = &[
    Figure {
        name: "fig1_chevron",
        description: "swap spectroscopy chevron around the TLS resonance",
        json: include_str!("../../../configs/fig1_chevron.json"),
    },
    Figure {
        name: "fig2_echo",
        description: "free decay and single refocusing echo at -72 uPhi0",
        json: include_str!("../../../configs/fig2_echo.json"),
    },
    Figure {
        name: "fig3_calibration",
        description: "echo visibility against refocusing-pulse length",
        json: include_str!("../../../configs/fig3_calibration.json"),
    },
    Figure {
        name: "fig4_decoupling",
        description: "Carr-Purcell envelope decay times against flux and pulse number",
        json: include_str!("../../../configs/fig4_decoupling.json"),
    },
];

/// Files written by a command.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Schedule(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parse arguments, dispatch, and return the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::ListFigures => {
            for f in FIGURES {
                say!("{:<18} configs/{}.json  {}", f.name, f.name, f.description);
            }
            Ok(())
        }
        Command::Validate(a) => validate(a).map(|kind| say!("ok: {kind}")),
        Command::Run(a) => run(a).map(|art| report(&art)),
        Command::Predict(a) => predict(a).map(|art| report(&art)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn report(art: &Artifacts) {
    for f in &art.files {
        say!("wrote {}", f.display());
    }
}

fn load(args: &CommonArgs) -> Result<(LoadedConfig, Experiment)> {
    let mut loaded = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        loaded.config.seed = seed;
    }
    if let Some(out) = &args.out {
        loaded.config.output_dir = out.clone();
    }
    if args.threads == Some(0) {
        return Err(Error::config("--threads", "must be >= 1"));
    }
    let exp = loaded.config.experiment()?;
    Ok((loaded, exp))
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Precondition(format!("cannot start thread pool: {e}")))?
            .install(f),
    }
}

/// Check the configuration; returns the protocol kind.
pub fn validate(args: &CommonArgs) -> Result<&'static str> {
    let (loaded, _) = load(args)?;
    Ok(loaded.config.protocol.as_ref().map_or("predict only", ProtocolConfig::kind))
}

/// Run the configured protocol.
pub fn run(args: &CommonArgs) -> Result<Artifacts> {
    let (loaded, exp) = load(args)?;
    let cfg = &loaded.config;
    let protocol = cfg
        .protocol
        .as_ref()
        .ok_or_else(|| Error::config("protocol", "required for `run`"))?;
    let out = Output::create(&cfg.output_dir)?;
    let results = with_threads(args.threads, || run_protocol(protocol, cfg, &exp, &out))?;
    out.finish(&loaded, protocol.kind(), results)
}

/// Write the analytic prediction table.
pub fn predict(args: &CommonArgs) -> Result<Artifacts> {
    let (loaded, exp) = load(args)?;
    let cfg = &loaded.config;
    let out = Output::create(&cfg.output_dir)?;
    let t1 = if exp.opts.relaxation || cfg.protocol.is_none() {
        t1_tilde_from_rates(&exp.params, &exp.noise.transverse)
    } else {
        f64::INFINITY
    };
    let mut rows = vec![];
    say!("{:>10} {:>3} {:>10} {:>10} {:>10} {:>10}", "dphi", "N", "f_osc", "T1~", "T_phi", "T_e");
    for dphi in cfg.predict.dphi.values("predict.dphi")? {
        for &n in &cfg.predict.n_pulses {
            let f = f_osc_at(dphi, &exp.params);
            let te = predicted_te(n, dphi, &exp.noise.flux, &exp.params, t1)?;
            let tphi = predicted_tphi(n, dphi, if te.is_finite() { te } else { 1e6 }, &exp.noise.flux, &exp.params)?;
            say!("{dphi:>10.3} {n:>3} {f:>10.6} {t1:>10.2} {tphi:>10.2} {te:>10.2}");
            rows.push(vec![num(dphi), n.to_string(), num(f), num(t1), num(tphi), num(te)]);
        }
    }
    out.csv(
        "predict.csv",
        &["dphi_uPhi0", "N", "f_osc_GHz", "t1_tilde_ns", "t_phi_ns", "t_e_ns"],
        &rows,
    )?;
    out.script("plot_predict.py", PLOT_PREDICT)?;
    out.finish(&loaded, "predict", json!({ "t1_tilde_ns": json_num(t1) }))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn json_num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(num(v))
    }
}

/// Collects the files of one command invocation.
struct Output {
    dir: PathBuf,
    files: std::sync::Mutex<Vec<PathBuf>>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: Default::default(),
        })
    }

    fn push(&self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.lock().unwrap().push(p.clone());
        p
    }

    fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(self.push(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn script(&self, name: &str, body: &str) -> Result<()> {
        fs::write(self.push(name), body)?;
        Ok(())
    }

    fn finish(self, loaded: &LoadedConfig, kind: &str, results: Value) -> Result<Artifacts> {
        #[derive(Serialize)]
        struct Metadata<'a> {
            tool: &'a str,
            version: &'a str,
            command: &'a str,
            config_sha256: &'a str,
            seed: u64,
            outputs: Vec<String>,
            results: Value,
            config: &'a ExperimentConfig,
        }
        let mut files = self.files.into_inner().unwrap();
        let outputs = files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        let meta = Metadata {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: kind,
            config_sha256: &loaded.sha256,
            seed: loaded.config.seed,
            outputs,
            results,
            config: &loaded.config,
        };
        let path = self.dir.join("metadata.json");
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        fs::write(&path, text)?;
        files.push(path);
        Ok(Artifacts { out_dir: self.dir, files })
    }
}

fn run_protocol(protocol: &ProtocolConfig, cfg: &ExperimentConfig, exp: &Experiment, out: &Output) -> Result<Value> {
    let p_sw = |p: f64| apply_readout(p, &cfg.readout).map(num);
    match protocol {
        ProtocolConfig::SwapSpectroscopy { dphi, tau1 } => {
            let dphi = dphi.values("protocol.dphi")?;
            let tau1 = tau1.values("protocol.tau1")?;
            let sw = swap_spectroscopy(exp, &dphi, &tau1)?;
            let mut rows = vec![];
            let mut freq_rows = vec![];
            for (ix, d) in dphi.iter().enumerate() {
                for (iy, t) in tau1.iter().enumerate() {
                    let p = sw.p_excited[ix][iy];
                    rows.push(vec![num(*d), num(*t), num(p), num(sw.stderr[ix][iy]), p_sw(p)?]);
                }
                let fitted = fit_oscillation(&tau1, &sw.p_excited[ix]).map_or(f64::NAN, |f| f.f_osc);
                freq_rows.push(vec![num(*d), num(fitted), num(f_osc_at(*d, &exp.params))]);
            }
            out.csv("chevron.csv", &["dphi_uPhi0", "tau1_ns", "p_excited", "stderr", "p_sw"], &rows)?;
            out.csv("chevron_fosc.csv", &["dphi_uPhi0", "f_osc_fit_GHz", "f_osc_model_GHz"], &freq_rows)?;
            out.script("plot_chevron.py", PLOT_CHEVRON)?;
            Ok(json!({ "n_traj": sw.n_traj }))
        }
        ProtocolConfig::Echo {
            dphi,
            tau1,
            tau2,
            n_refocus,
        } => {
            let tau2 = tau2.values("protocol.tau2")?;
            let f = f_osc_at(*dphi, &exp.params);
            let mut rows = vec![];
            let mut peaks = BTreeMap::new();
            let mut n_traj = 0;
            for &n in n_refocus {
                let tr = echo_experiment(exp, *dphi, *tau1, &tau2, n)?;
                n_traj = tr.n_traj;
                for i in 0..tau2.len() {
                    let p = tr.p_excited[i];
                    rows.push(vec![n.to_string(), num(tau2[i]), num(tr.total_time[i]), num(p), num(tr.stderr[i]), p_sw(p)?]);
                }
                if let Ok(env) = envelope_at(&tau2, &tr.p_excited, f) {
                    let (i, h) = env.h.iter().enumerate().fold((0, f64::MIN), |b, (i, &h)| if h > b.1 { (i, h) } else { b });
                    peaks.insert(format!("n_refocus_{n}"), json!({ "tau2_ns": env.t[i], "envelope": h }));
                }
            }
            out.csv(
                "echo.csv",
                &["n_refocus", "tau2_ns", "total_time_ns", "p_excited", "stderr", "p_sw"],
                &rows,
            )?;
            out.script("plot_echo.py", PLOT_ECHO)?;
            Ok(json!({ "n_traj": n_traj, "f_osc_GHz": f, "envelope_peaks": peaks }))
        }
        ProtocolConfig::CalibrateRefocus {
            dphi,
            tau1,
            tau_refocus,
            tau2,
            detune,
        } => {
            let tr = tau_refocus.values("protocol.tau_refocus")?;
            let t2 = tau2.values("protocol.tau2")?;
            let cal = calibrate_refocus(exp, *dphi, *tau1, &tr, &t2, *detune)?;
            let mut rows = vec![];
            for (ix, r) in tr.iter().enumerate() {
                for (iy, t) in t2.iter().enumerate() {
                    let p = cal.sweep.p_excited[ix][iy];
                    rows.push(vec![num(*r), num(*t), num(p), num(cal.sweep.stderr[ix][iy]), p_sw(p)?]);
                }
            }
            out.csv("calibration.csv", &["tau_refocus_ns", "tau2_ns", "p_excited", "stderr", "p_sw"], &rows)?;
            let vis: Vec<Vec<String>> = tr.iter().zip(&cal.visibility).map(|(r, v)| vec![num(*r), num(*v)]).collect();
            out.csv("visibility.csv", &["tau_refocus_ns", "visibility"], &vis)?;
            out.script("plot_calibration.py", PLOT_CALIBRATION)?;
            Ok(json!({ "n_traj": cal.sweep.n_traj, "visibility_peaks_ns": cal.peaks }))
        }
        ProtocolConfig::CpSequence {
            dphi,
            n_pulses,
            total_time,
            delta_points,
            fit_from,
            fit_t1,
        } => {
            let dphis = dphi.values("protocol.dphi")?;
            let times = total_time.values("protocol.total_time")?;
            let fixed = fit_t1.unwrap_or(if exp.opts.relaxation {
                t1_tilde_from_rates(&exp.params, &exp.noise.transverse)
            } else {
                f64::INFINITY
            });
            let (mut raw, mut env_rows, mut fit_rows, mut points) = (vec![], vec![], vec![], vec![]);
            let mut n_traj = 0;
            let mut failures = vec![];
            for &d in &dphis {
                let deltas = one_period_deltas(d, &exp.params, *delta_points);
                for &n in n_pulses {
                    let cp = cp_sequence(exp, d, n, &times, &deltas)?;
                    n_traj = cp.n_traj;
                    for (it, t) in times.iter().enumerate() {
                        for (id, dl) in deltas.iter().enumerate() {
                            raw.push(vec![
                                num(d),
                                n.to_string(),
                                num(*t),
                                num(*dl),
                                num(cp.p_excited[it][id]),
                                num(cp.stderr[it][id]),
                            ]);
                        }
                        env_rows.push(vec![
                            num(d),
                            n.to_string(),
                            num(*t),
                            num(cp.effective_time[it]),
                            num(cp.amplitude[it]),
                        ]);
                    }
                    let (tw, hw): (Vec<f64>, Vec<f64>) = times
                        .iter()
                        .zip(cp.effective_time.iter().zip(&cp.amplitude))
                        .filter(|(t, _)| **t >= *fit_from)
                        .map(|(_, (te, h))| (*te, *h))
                        .unzip();
                    match fit_decay(&tw, &hw, Some(fixed)) {
                        Ok(fit) => {
                            fit_rows.push(vec![
                                num(d),
                                n.to_string(),
                                num(cp.f_demod),
                                num(fit.t1_tilde),
                                num(fit.t_phi),
                                num(fit.t_e),
                                num(fit.residual_rms),
                            ]);
                            points.push(TePoint { dphi: d, n_pulses: n, t_e: fit.t_e });
                        }
                        Err(e) => {
                            eprintln!("warning: envelope fit at dphi = {d}, N = {n}: {e}");
                            failures.push(json!({ "dphi": d, "n_pulses": n, "error": e.to_string() }));
                            fit_rows.push(vec![num(d), n.to_string(), num(cp.f_demod), num(f64::NAN), num(f64::NAN), num(f64::NAN), num(f64::NAN)]);
                        }
                    }
                }
            }
            out.csv(
                "cp_raw.csv",
                &["dphi_uPhi0", "n_pulses", "total_time_ns", "delta_ns", "p_excited", "stderr"],
                &raw,
            )?;
            out.csv("cp_envelope.csv", &["dphi_uPhi0", "n_pulses", "total_time_ns", "effective_time_ns", "amplitude"], &env_rows)?;
            out.csv(
                "cp_fits.csv",
                &["dphi_uPhi0", "N", "f_osc_GHz", "t1_tilde_ns", "t_phi_ns", "t_e_ns", "residual_rms"],
                &fit_rows,
            )?;
            out.script("plot_decoupling.py", PLOT_DECOUPLING)?;
            let comparison = match compare_to_model(&points, &exp.noise.flux, &exp.params, fixed) {
                Ok(c) => serde_json::to_value(c)?,
                Err(e) => json!({ "skipped": e.to_string() }),
            };
            Ok(json!({
                "n_traj": n_traj,
                "fit_t1_ns": json_num(fixed),
                "fit_failures": failures,
                "model_comparison": comparison,
            }))
        }
    }
}

const PLOT_CHEVRON: &str = r#"# Chevron map and oscillation frequency from chevron.csv / chevron_fosc.csv.
import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("chevron.csv")))
dphi = sorted({float(r["dphi_uPhi0"]) for r in rows})
tau = sorted({float(r["tau1_ns"]) for r in rows})
grid = {(float(r["dphi_uPhi0"]), float(r["tau1_ns"])): float(r["p_sw"]) for r in rows}
z = [[grid[(d, t)] for d in dphi] for t in tau]
fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
a.pcolormesh(dphi, tau, z, shading="nearest", cmap="viridis")
a.set_xlabel("dPhi (uPhi0)")
a.set_ylabel("tau1 (ns)")
f = list(csv.DictReader(open("chevron_fosc.csv")))
b.plot([float(r["dphi_uPhi0"]) for r in f], [float(r["f_osc_fit_GHz"]) for r in f], "o", label="fit")
b.plot([float(r["dphi_uPhi0"]) for r in f], [float(r["f_osc_model_GHz"]) for r in f], "-", label="model")
b.set_xlabel("dPhi (uPhi0)")
b.set_ylabel("f_osc (GHz)")
b.legend()
fig.tight_layout()
fig.savefig("chevron.png", dpi=150)
"#;

const PLOT_ECHO: &str = r#"# Free decay and echo traces from echo.csv.
import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("echo.csv")))
for n in sorted({r["n_refocus"] for r in rows}):
    sel = [r for r in rows if r["n_refocus"] == n]
    plt.plot([float(r["tau2_ns"]) for r in sel], [float(r["p_sw"]) for r in sel], label=f"N = {n}")
plt.xlabel("tau2 (ns)")
plt.ylabel("P_SW")
plt.legend()
plt.savefig("echo.png", dpi=150)
"#;

const PLOT_CALIBRATION: &str = r#"# Refocusing calibration map and visibility from calibration.csv / visibility.csv.
import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("calibration.csv")))
tr = sorted({float(r["tau_refocus_ns"]) for r in rows})
t2 = sorted({float(r["tau2_ns"]) for r in rows})
grid = {(float(r["tau_refocus_ns"]), float(r["tau2_ns"])): float(r["p_sw"]) for r in rows}
z = [[grid[(a, b)] for a in tr] for b in t2]
fig, (a, b) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
a.pcolormesh(tr, t2, z, shading="nearest", cmap="viridis")
a.set_ylabel("tau2 (ns)")
v = list(csv.DictReader(open("visibility.csv")))
b.plot([float(r["tau_refocus_ns"]) for r in v], [float(r["visibility"]) for r in v])
b.set_xlabel("tau_refocus (ns)")
b.set_ylabel("visibility")
fig.tight_layout()
fig.savefig("calibration.png", dpi=150)
"#;

const PLOT_DECOUPLING: &str = r#"# Envelope decay times against flux for each pulse number, from cp_fits.csv.
import csv
import matplotlib.pyplot as plt

rows = [r for r in csv.DictReader(open("cp_fits.csv")) if r["t_e_ns"] not in ("NaN", "inf")]
for n in sorted({int(r["N"]) for r in rows}):
    sel = [r for r in rows if int(r["N"]) == n]
    plt.semilogy([float(r["dphi_uPhi0"]) for r in sel], [float(r["t_e_ns"]) for r in sel], "o-", label=f"N = {n}")
plt.xlabel("dPhi (uPhi0)")
plt.ylabel("T_e (ns)")
plt.legend()
plt.savefig("decoupling.png", dpi=150)
"#;

const PLOT_PREDICT: &str = r#"# Predicted envelope decay time against flux, from predict.csv.
import csv
import matplotlib.pyplot as plt

rows = [r for r in csv.DictReader(open("predict.csv")) if r["t_e_ns"] != "inf"]
for n in sorted({int(r["N"]) for r in rows}):
    sel = [r for r in rows if int(r["N"]) == n]
    plt.semilogy([float(r["dphi_uPhi0"]) for r in sel], [float(r["t_e_ns"]) for r in sel], label=f"N = {n}")
plt.xlabel("dPhi (uPhi0)")
plt.ylabel("T_e (ns)")
plt.legend()
plt.savefig("predict.png", dpi=150)
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_validate() {
        for f in FIGURES {
            let c = ExperimentConfig::from_json(f.json.as_bytes()).unwrap_or_else(|e| panic!("{}: {e}", f.name));
            c.experiment().unwrap_or_else(|e| panic!("{}: {e}", f.name));
            assert!(c.protocol.is_some());
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("a", "b")), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Schedule("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Fit("x".into())), EXIT_RUNTIME);
        assert_eq!(main_with_args(["tls-refocus", "run"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["tls-refocus", "validate", "--config", "/nonexistent.json"]), EXIT_CONFIG);
    }
}
