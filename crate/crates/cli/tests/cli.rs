use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;
use uwbscan_core::{apply_signature, material_response, MaterialKind, PulseSet};

fn uwbscan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwbscan"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: stdout {:?} stderr {:?}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

const QUICK_DESIGN: &str = r#"{"ga": {"population": 16, "generations": 3}}"#;

/// A small designed pulse set shared by the simulation tests.
fn pulse_set() -> &'static (TempDir, PathBuf) {
    static SET: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    SET.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("design.json"), QUICK_DESIGN).unwrap();
        let out = uwbscan(&["design", "--config", "design.json", "--out", "set"], dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let path = dir.path().join("set/pulse_set.json");
        (dir, path)
    })
}

fn sim_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("sim.json");
    let text = format!(r#"{{"pulse_set": {:?}{extra}}}"#, pulse_set().1);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn design_writes_outputs_and_reports_feasible() {
    let dir = pulse_set().0.path().join("set");
    for name in ["pulse_set.json", "pulses.csv", "psd.csv", "history.csv"] {
        assert!(dir.join(name).is_file(), "{name} missing");
    }
    let set = PulseSet::load(&dir.join("pulse_set.json")).unwrap();
    assert_eq!(set.len(), 4);
    let psd = std::fs::read_to_string(dir.join("psd.csv")).unwrap();
    assert!(psd.starts_with("freq_hz,mask_dbm_per_mhz,psd_1,psd_2,psd_3,psd_4\n"));
    let history = std::fs::read_to_string(dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 4);
}

#[test]
fn infeasible_design_exits_3_and_keeps_best() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"L": 2, "ga": {"population": 8, "generations": 2},
        "mask": [{"f_lo_hz": 0, "f_hi_hz": 1e10, "limit_dbm_per_mhz": -1000}]}"#;
    std::fs::write(dir.path().join("d.json"), cfg).unwrap();
    let out = uwbscan(&["design", "--config", "d.json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stdout_json(&out)["feasible"], Value::Bool(false));
    assert!(dir.path().join("o/pulse_set.json").is_file());
}

#[test]
fn config_and_io_errors_have_distinct_codes() {
    let dir = TempDir::new().unwrap();
    let out = uwbscan(&["sweep", "--config", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(4));

    std::fs::write(dir.path().join("bad.json"), r#"{"trials": 0}"#).unwrap();
    let out = uwbscan(&["sweep", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("typo.json"), r#"{"trails": 5}"#).unwrap();
    let out = uwbscan(&["locate", "--config", "typo.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = uwbscan(&["sweep", "--snr", "loud"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn locate_prints_a_trial() {
    let dir = TempDir::new().unwrap();
    let cfg = sim_config(dir.path(), "");
    let args = ["locate", "--config", cfg.to_str().unwrap(), "--seed", "7", "--trial", "3", "--snr", "inf", "--out", "o"];
    let out = uwbscan(&args, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["trial"], 3);
    assert_eq!(v["snr_db"], "inf");
    assert_eq!(v["links"].as_array().unwrap().len(), 4);
    assert!(v["position_error_m"].as_f64().unwrap() < 0.05);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/locate.json")).unwrap()).unwrap();
    assert_eq!(saved, v);
}

#[test]
fn sweep_writes_csvs_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = sim_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    let run = |out: &str, serial: bool| {
        let mut args = vec!["sweep", "--config", cfg, "--snr", "20,inf", "--trials", "3", "--seed", "11", "--out", out];
        if serial {
            args.push("--serial");
        }
        let o = uwbscan(&args, dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("a", false);
    run("b", true);
    for name in ["sweep.csv", "links.csv", "fixes.csv"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
    let sweep = std::fs::read_to_string(dir.path().join("a/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert!(sweep.lines().nth(2).unwrap().starts_with("inf,3,"));
}

#[test]
fn detect_from_material_and_waveforms() {
    let dir = TempDir::new().unwrap();
    let out = uwbscan(&["detect", "--material", "human", "--band", "1e9,7e9"], dir.path());
    assert_eq!(stdout_json(&out)["label"], "human_present");

    let set = PulseSet::load(&pulse_set().1).unwrap();
    let tx = set.pulse(0).clone();
    let rx = apply_signature(&tx, &material_response(MaterialKind::BrickWall)).unwrap();
    tx.write_csv(std::fs::File::create(dir.path().join("tx.csv")).unwrap()).unwrap();
    rx.write_csv(std::fs::File::create(dir.path().join("rx.csv")).unwrap()).unwrap();
    let out = uwbscan(&["detect", "--tx", "tx.csv", "--rx", "rx.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["label"], "artificial_only");

    let out = uwbscan(&["detect", "--tx", "tx.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = uwbscan(&["detect", "--material", "human", "--band", "7e9,1e9"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cir_dump_is_seeded() {
    let dir = TempDir::new().unwrap();
    let a = uwbscan(&["cir", "--seed", "5"], dir.path());
    let b = uwbscan(&["cir", "--seed", "5", "--out", "cir.csv"], dir.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("delay_s,gain\n"));
    assert!(text.lines().count() > 20);
    assert_eq!(std::fs::read_to_string(dir.path().join("cir.csv")).unwrap(), text);

    let sig = uwbscan(&["cir", "--material", "wood_door"], dir.path());
    assert!(String::from_utf8(sig.stdout).unwrap().starts_with("freq_hz,attenuation_db,phase_rad\n"));
}
