use std::collections::BTreeSet;
use std::path::Path;

use serde_json::Value;
use tls_refocus::config::{ExperimentConfig, Grid, ProtocolConfig};

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().map(|o| o.keys().cloned().collect()).unwrap_or_default()
}

fn schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn schema_matches_config_fields() {
    let schema = schema();
    let props = &schema["properties"];
    let mut config: ExperimentConfig = serde_json::from_str("{}").unwrap();
    config.evolution.omega_cut = Some(1e7);
    config.device.f_tls = Some(7e9);
    let v = serde_json::to_value(&config).unwrap();

    let mut top = keys(&v);
    top.insert("protocol".into());
    assert_eq!(top, keys(props));
    for section in ["device", "readout", "schedule", "evolution", "predict"] {
        assert_eq!(keys(&v[section]), keys(&props[section]["properties"]), "{section}");
    }
    for sub in ["flux", "transverse"] {
        assert_eq!(keys(&v["noise"][sub]), keys(&props["noise"]["properties"][sub]["properties"]), "noise.{sub}");
    }

    let g = || Grid::List(vec![1.0]);
    let protocols = [
        ProtocolConfig::SwapSpectroscopy { dphi: g(), tau1: g() },
        ProtocolConfig::Echo { dphi: 0.0, tau1: 1.0, tau2: g(), n_refocus: vec![0] },
        ProtocolConfig::CalibrateRefocus { dphi: 0.0, tau1: 1.0, tau_refocus: g(), tau2: g(), detune: 0.5 },
        ProtocolConfig::CpSequence {
            dphi: g(),
            n_pulses: vec![1],
            total_time: g(),
            delta_points: 8,
            fit_from: 0.0,
            fit_t1: Some(1.0),
        },
    ];
    let variants = props["protocol"]["oneOf"].as_array().unwrap();
    for p in protocols {
        let v = serde_json::to_value(&p).unwrap();
        let variant = variants
            .iter()
            .find(|s| s["properties"]["kind"]["const"] == v["kind"])
            .unwrap_or_else(|| panic!("no schema variant for {}", v["kind"]));
        assert_eq!(keys(&v), keys(&variant["properties"]), "{}", v["kind"]);
    }
}

#[test]
fn schema_defaults_match_code_defaults() {
    let schema = schema();
    let props = &schema["properties"];
    let v = serde_json::to_value(serde_json::from_str::<ExperimentConfig>("{}").unwrap()).unwrap();
    for section in ["readout", "schedule", "evolution"] {
        for (k, val) in v[section].as_object().unwrap() {
            let d = &props[section]["properties"][k]["default"];
            match (val.as_f64(), d.as_f64()) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{section}.{k}"),
                _ => assert_eq!(val, d, "{section}.{k}"),
            }
        }
    }
    for (k, val) in v["device"].as_object().unwrap() {
        let d = &props["device"]["properties"][k]["default"];
        match (val.as_f64(), d.as_f64()) {
            (Some(a), Some(b)) => assert!((a / b - 1.0).abs() < 1e-9, "device.{k}: {a} vs {b}"),
            _ => assert_eq!(val, d, "device.{k}"),
        }
    }
}
