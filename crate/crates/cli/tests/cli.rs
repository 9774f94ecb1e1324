use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dmtlink(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmtlink"))
        .current_dir(dir)
        .env_remove("DMTLINK_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Loopback keeps every CLI test fast and exact; one frame per channel.
const LOOPBACK: &str = r#"{"mode": "loopback", "min_bits": 1}"#;

fn loopback_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("lb.json"), LOOPBACK).unwrap();
    dir
}

fn only_file(dir: &Path, prefix: &str, ext: &str) -> std::path::PathBuf {
    let found: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let n = p.file_name().unwrap().to_string_lossy();
            n.starts_with(prefix) && n.ends_with(ext)
        })
        .collect();
    assert_eq!(found.len(), 1, "{prefix}*{ext} in {}: {found:?}", dir.display());
    found.into_iter().next().unwrap()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn loopback_run_is_error_free() {
    let dir = loopback_dir();
    let o = dmtlink(dir.path(), &["--config", "lb.json", "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("channel 1: measured BER 0.000e0"), "{}", stdout(&o));
    let out = dir.path().join("out");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(only_file(&out, "run_", ".json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["channels"][0]["ber"], 0.0);
    for f in manifest["files"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists(), "{f}");
    }
}

#[test]
fn malformed_config_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{\n  \"mode\": \"loopback\",\n  \"detuning_ghz\": ,\n}").unwrap();
    let o = dmtlink(dir.path(), &["--config", "bad.json", "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json:3:19"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"detuning": 19}"#).unwrap();
    let o = dmtlink(dir.path(), &["--config", "c.json", "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown field `detuning`"), "{}", stderr(&o));
}

#[test]
fn invalid_scenario_is_a_config_error() {
    let dir = loopback_dir();
    let o = dmtlink(dir.path(), &["--config", "lb.json", "--channels", "1", "run"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn override_supersedes_file_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.json"),
        r#"{"mode": "loopback", "min_bits": 1, "detuning_ghz": 7.5}"#,
    )
    .unwrap();
    let o = dmtlink(dir.path(), &["--config", "c.json", "--detuning-ghz", "19", "--out-dir", "res", "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: Value =
        serde_json::from_str(&fs::read_to_string(only_file(&dir.path().join("res"), "run_", ".json")).unwrap()).unwrap();
    assert_eq!(m["scenario"]["link"]["detuning"], 19e9);
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = loopback_dir();
    let o = Command::new(env!("CARGO_BIN_EXE_dmtlink"))
        .current_dir(dir.path())
        .env("DMTLINK_OUT_DIR", "from_env")
        .args(["--config", "lb.json", "run"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    only_file(&dir.path().join("from_env"), "run_", ".json");
}

#[test]
fn run_csv_headers_are_stable() {
    let dir = loopback_dir();
    assert_eq!(dmtlink(dir.path(), &["--config", "lb.json", "run"]).status.code(), Some(0));
    let out = dir.path().join("out");
    assert_eq!(
        first_line(&only_file(&out, "ber_", ".csv")),
        "channel,status,bit_errors,bits_total,ber,margin_db"
    );
    assert_eq!(first_line(&only_file(&out, "snr_", ".csv")), "channel,subcarrier,snr_db");
    assert_eq!(
        first_line(&only_file(&out, "loading_", ".csv")),
        "subcarrier,snr_db,bits,power"
    );
}

#[test]
fn detuning_sweep_has_one_row_per_offset() {
    let dir = loopback_dir();
    let o = dmtlink(dir.path(), &["--config", "lb.json", "sweep", "--axis", "detuning", "--range", "0:25:2.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(only_file(&dir.path().join("out"), "sweep_detuning_", ".csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "series,detuning_ghz,ber,status,margin_db");
    assert_eq!(lines.len(), 12);
    let offsets: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(offsets.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(offsets[0], 0.0);
    assert_eq!(offsets[10], 25.0);
    assert!(stdout(&o).contains("lowest BER"));
}

#[test]
fn reach_sweep_plots_two_detunings() {
    let dir = loopback_dir();
    let o = dmtlink(
        dir.path(),
        &["--config", "lb.json", "--svg", "sweep", "--axis", "reach", "--detunings-ghz", "0,19"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    let csv = fs::read_to_string(only_file(&out, "sweep_reach_", ".csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
    let svg = fs::read_to_string(only_file(&out, "sweep_reach_", ".svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains("112G_0GHz") && svg.contains("112G_19GHz"));
    let m: Value = serde_json::from_str(&fs::read_to_string(only_file(&out, "sweep_reach_", ".json")).unwrap()).unwrap();
    assert_eq!(m["command"], "sweep");
    assert_eq!(m["files"].as_array().unwrap().len(), 2);
}

#[test]
fn detunings_flag_is_rejected_on_detuning_axis() {
    let dir = loopback_dir();
    let o = dmtlink(
        dir.path(),
        &["--config", "lb.json", "sweep", "--axis", "detuning", "--detunings-ghz", "0,19"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn table_lists_every_scenario_in_reach_order() {
    let dir = loopback_dir();
    let o = dmtlink(dir.path(), &["--config", "lb.json", "table"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(only_file(&dir.path().join("out"), "table_", ".csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "reach_km,n_channels,net_rate_gbps,worst_channel,worst_ber,status,pass");
    let rows: Vec<(f64, String)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), format!("{}x{}", f[1], f[2]))
        })
        .collect();
    assert_eq!(
        rows.iter().map(|r| r.1.as_str()).collect::<Vec<_>>(),
        ["4x112", "5x89.6", "6x74.7", "7x64", "8x56"]
    );
    assert!(rows.windows(2).all(|w| w[1].0 > w[0].0));
    assert!(lines[1..].iter().all(|l| l.ends_with(",true")));
}

#[test]
fn scenario_flag_restricts_the_table() {
    let dir = loopback_dir();
    let o = dmtlink(dir.path(), &["--config", "lb.json", "table", "--scenario", "8x56"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(only_file(&dir.path().join("out"), "table_", ".csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("240,8,56,"), "{}", lines[1]);
    let o = dmtlink(dir.path(), &["--config", "lb.json", "table", "--scenario", "3x150"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn osnr_sweep_reports_the_crossing() {
    let dir = tempfile::tempdir().unwrap();
    let o = dmtlink(dir.path(), &["sweep", "--axis", "osnr", "--values", "30,50"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    let footer = s.lines().find(|l| l.contains("required OSNR")).unwrap_or_else(|| panic!("{s}"));
    let osnr: f64 = footer.split("required OSNR ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!((30.0..50.0).contains(&osnr), "{footer}");
}

#[test]
fn sync_loss_is_ber_above_target() {
    let dir = tempfile::tempdir().unwrap();
    let o = dmtlink(dir.path(), &["--osnr-db", "12", "run"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).contains("sync_lost"));
}

#[test]
fn infeasible_format_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = dmtlink(dir.path(), &["--osnr-db", "30", "run"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("infeasible"));
}

#[test]
fn fading_dump_has_both_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let o = dmtlink(dir.path(), &["--reach-km", "50", "--detuning-ghz", "0", "fading"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(only_file(&dir.path().join("out"), "fading_", ".csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("frequency_hz,simulated_db,analytic_db"));
    assert_eq!(lines.count(), 1024);
}

#[test]
fn config_dump_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = dmtlink(dir.path(), &["config"]);
    assert_eq!(o.status.code(), Some(0));
    let mut doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["detuning_ghz"], 19.0);
    doc["mode"] = "loopback".into();
    doc["min_bits"] = 1.into();
    fs::write(dir.path().join("full.json"), doc.to_string()).unwrap();
    let o = dmtlink(dir.path(), &["--config", "full.json", "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
