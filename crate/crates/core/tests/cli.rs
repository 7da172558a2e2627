use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tls-refocus"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn runs_are_bitwise_reproducible() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(
        work.path(),
        "swap.json",
        r#"{"protocol": {"kind": "swap_spectroscopy", "dphi": [-60, 0, 60], "tau1": {"start": 0, "stop": 20, "step": 1}},
            "evolution": {"mode": "monte_carlo", "n_traj": 16, "dt": 0.05}, "seed": 11}"#,
    );
    let out = work.path().join("out");
    let mut snapshots = vec![];
    for threads in ["1", "3"] {
        if out.exists() {
            fs::remove_dir_all(&out).unwrap();
        }
        let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        snapshots.push(read_dir_bytes(&out));
    }
    assert_eq!(snapshots[0], snapshots[1]);
    let names: Vec<&str> = snapshots[0].iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"chevron.csv") && names.contains(&"metadata.json"), "{names:?}");
}

#[test]
fn seed_override_changes_monte_carlo_output() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(
        work.path(),
        "echo.json",
        r#"{"protocol": {"kind": "echo", "dphi": -72, "tau1": 20, "tau2": [0, 5, 10], "n_refocus": [0]},
            "evolution": {"mode": "monte_carlo", "n_traj": 8, "dt": 0.05}}"#,
    );
    let mut csvs = vec![];
    for seed in ["1", "2"] {
        let out = work.path().join(seed);
        let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(fs::read_to_string(out.join("echo.csv")).unwrap());
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
        assert_eq!(meta["seed"].as_u64(), Some(seed.parse().unwrap()));
        assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    }
    assert_ne!(csvs[0], csvs[1]);
}

#[test]
fn invalid_device_parameter_is_a_config_error() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(work.path(), "bad.json", r#"{"device": {"t1_qb": -1e-6}}"#);
    for cmd in ["validate", "predict", "run"] {
        let o = run(&[cmd, "--config", cfg.to_str().unwrap(), "--out", work.path().join("o").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("device.t1_qb"), "{cmd}: {err}");
    }
}

#[test]
fn unknown_fields_and_bad_syntax_are_config_errors() {
    let work = tempfile::tempdir().unwrap();
    let typo = write_config(work.path(), "typo.json", r#"{"evolution": {"n_trajs": 5}}"#);
    let o = run(&["validate", "--config", typo.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("evolution"));
    let broken = write_config(work.path(), "broken.json", "{");
    assert_eq!(run(&["validate", "--config", broken.to_str().unwrap()]).status.code(), Some(2));
    let missing = work.path().join("absent.json");
    assert_eq!(run(&["validate", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn infeasible_pulse_spacing_is_a_schedule_error() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(
        work.path(),
        "cp.json",
        r#"{"protocol": {"kind": "cp_sequence", "dphi": [-84], "n_pulses": [4], "total_time": [2, 40]}}"#,
    );
    let o = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("spacing"));
}

#[test]
fn predict_reports_relaxation_limit_and_noiseless_infinity() {
    let work = tempfile::tempdir().unwrap();
    let cfg = write_config(
        work.path(),
        "pred.json",
        r#"{"noise": {"flux": {"a_phi": 0}}, "predict": {"dphi": [0, -84], "n_pulses": [0, 1]}}"#,
    );
    let out = work.path().join("p");
    let o = run(&["predict", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("predict.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let t1: f64 = rec[col("t1_tilde_ns")].parse().unwrap();
        assert!((t1 / 800.0 - 1.0).abs() < 0.01, "{t1}");
        assert_eq!(&rec[col("t_phi_ns")], "inf");
        assert!((rec[col("t_e_ns")].parse::<f64>().unwrap() - t1).abs() < 1e-9);
    }

    // with noise, the sweet spot is still dephasing free while the flank is not
    let cfg = write_config(work.path(), "pred2.json", r#"{"predict": {"dphi": [0, -84], "n_pulses": [0]}}"#);
    let out = work.path().join("p2");
    assert!(run(&["predict", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let text = fs::read_to_string(out.join("predict.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0][4], "inf");
    let tphi: f64 = rows[1][4].parse().unwrap();
    assert!(tphi > 40.0 && tphi < 80.0, "{tphi}");
}

#[test]
fn bundled_figures_are_listed_and_valid() {
    let o = run(&["list-figures"]);
    assert!(o.status.success());
    let listing = String::from_utf8_lossy(&o.stdout);
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mut count = 0;
    for line in listing.lines() {
        let path = line.split_whitespace().nth(1).unwrap();
        let v = run(&["validate", "--config", root.join(path).to_str().unwrap()]);
        assert!(v.status.success(), "{path}: {}", String::from_utf8_lossy(&v.stderr));
        count += 1;
    }
    assert_eq!(count, 4);
}
