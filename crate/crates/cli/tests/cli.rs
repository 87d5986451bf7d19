use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const RENEWAL: &str = r#"{"schema":1,"law":{"kind":"gem","theta":1},"h":0.01,"t_max":8,"j_max":2,"dump_grids":true}"#;
const OCCUPANCY: &str =
    r#"{"schema":1,"n":10000,"j_max":2,"law":{"kind":"gem","theta":1},"seed":5,"replicates":20,"h":0.01,"t_max":10}"#;

fn nestocc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nestocc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_with(config: &str, sub: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = out.parent().unwrap().join(format!("{sub}.json"));
    fs::write(&cfg, config).unwrap();
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    nestocc(&args)
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn renewal_writes_grids_reports_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = run_with(RENEWAL, "renewal", &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["subcommand"], "renewal");
    assert_eq!(m["passed"], true);
    let outputs: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for name in [
        "grids.csv",
        "grid_V_2.csv",
        "check_lorden.json",
        "check_power_band.json",
    ] {
        assert!(outputs.contains(&name), "{name}");
        assert!(out.join(name).exists());
    }
    let stored = fs::read(out.join("config.json")).unwrap();
    let hash: String = Sha256::digest(&stored).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(m["config_hash"], hash.as_str());
    let grid = fs::read_to_string(out.join("grid_V.csv")).unwrap();
    assert!(grid.starts_with("t,value\n0.0000000000000000e0,"));
    assert!(!grid.contains('\r'));
}

#[test]
fn malformed_json_names_byte_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_with("{\"schema\": 1,, }", "renewal", &tmp.path().join("run"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("invalid config at byte 13"), "{err}");
    assert!(!tmp.path().join("run").join("manifest.json").exists());
}

#[test]
fn wrong_field_type_names_path() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = RENEWAL.replace("\"h\":0.01", "\"h\":\"small\"");
    let o = run_with(&bad, "renewal", &tmp.path().join("run"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid config at h (byte"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_with(OCCUPANCY, "occupancy", &a, &["--threads", "1"])
        .status
        .success());
    assert!(run_with(OCCUPANCY, "occupancy", &b, &[]).status.success());
    assert_eq!(
        fs::read(a.join("occupancy.csv")).unwrap(),
        fs::read(b.join("occupancy.csv")).unwrap()
    );
    let header = fs::read_to_string(a.join("occupancy.csv")).unwrap();
    assert!(header.starts_with("replicate,j,K,rho,Y1,Y2,Y3\n"));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_with(OCCUPANCY, "occupancy", &a, &[]).status.success());
    assert!(run_with(OCCUPANCY, "occupancy", &b, &["--seed", "6"]).status.success());
    assert_eq!(manifest(&b)["seed"], 6);
    assert_ne!(
        fs::read(a.join("occupancy.csv")).unwrap(),
        fs::read(b.join("occupancy.csv")).unwrap()
    );
    let stored: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("config.json")).unwrap()).unwrap();
    assert_eq!(stored["seed"], 6);
}

#[test]
fn acceptance_creates_missing_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("nested").join("acceptance");
    let o = nestocc(&["acceptance", "--only", "6", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("criterion  6 wlln"));
    let m = manifest(&out);
    assert_eq!(m["results"][0][1], true);
    assert!(out.join("acceptance.json").exists());
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = nestocc(&["renewal", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
