//! End-to-end CLI checks: deterministic outputs, schema errors with the
//! right exit codes, and the bundled presets against their formulas.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_coldsim")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("coldsim-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).output().expect("spawn")
}

fn read_csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") {
            out.push((
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&path).unwrap(),
            ));
        }
    }
    out.sort();
    out
}

#[test]
fn every_subcommand_is_byte_deterministic() {
    for sub in [
        "characterize",
        "reverse-subarrays",
        "mitigate",
        "analytics",
        "ecc",
    ] {
        let a = tmp_dir(&format!("{sub}-a"));
        let b = tmp_dir(&format!("{sub}-b"));
        for out in [&a, &b] {
            let st = run(&[
                sub,
                "--preset",
                "default",
                "--seed",
                "7",
                "--out",
                out.to_str().unwrap(),
            ]);
            assert!(
                st.status.success(),
                "{sub}: {}",
                String::from_utf8_lossy(&st.stderr)
            );
        }
        let csv_a = read_csvs(&a);
        let csv_b = read_csvs(&b);
        assert!(!csv_a.is_empty(), "{sub} wrote no CSVs");
        assert_eq!(csv_a, csv_b, "{sub}: outputs differ between runs");
        let _ = std::fs::remove_dir_all(a);
        let _ = std::fs::remove_dir_all(b);
    }
}

#[test]
fn missing_geometry_is_a_config_error_with_exit_2() {
    let dir = tmp_dir("badcfg");
    let cfg = dir.join("bad.json");
    std::fs::write(&cfg, "{}").unwrap();
    let st = run(&[
        "analytics",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(st.status.code(), Some(2));
    let err = String::from_utf8_lossy(&st.stderr);
    assert!(err.contains("geometry"), "stderr must name the key: {err}");
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tmp_dir("unknown");
    let cfg = dir.join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"geometry":{"banks":1,"subarrays_per_bank":2,"rows_per_subarray":4,"columns_per_row":4},"bogus":1}"#,
    )
    .unwrap();
    let st = run(&[
        "analytics",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("bogus"));
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn runtime_failures_exit_3() {
    let dir = tmp_dir("exit3");
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
            "geometry":{"banks":1,"subarrays_per_bank":2,"rows_per_subarray":4,"columns_per_row":4},
            "ecc":{"codes":["custom"],"weights":[1],"h_matrix_file":"/nonexistent/h.txt"}
        }"#,
    )
    .unwrap();
    let st = run(&[
        "ecc",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(st.status.code(), Some(3));
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn refresh_ops_preset_matches_formula_everywhere() {
    let dir = tmp_dir("refresh-ops");
    let st = run(&[
        "analytics",
        "--preset",
        "paper-fig-refresh-ops",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(st.status.success());
    let text = std::fs::read_to_string(dir.join("refresh_ops.csv")).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(3) {
        let parts: Vec<&str> = line.split(',').collect();
        assert_eq!(parts.len(), 3);
        let f: f64 = parts[0].parse().unwrap();
        let t_ms: f64 = parts[1].parse().unwrap();
        let got: f64 = parts[2].parse().unwrap();
        let expect = coldsim::analytics::normalized_refresh_ops(f, t_ms * 1e6, 64.0 * 1e6).unwrap();
        assert!(
            (got - expect).abs() < 1e-12,
            "cell ({f}, {t_ms}): {got} vs {expect}"
        );
        rows += 1;
    }
    assert_eq!(rows, 13 * 4);
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn manifest_carries_version_seed_and_hash() {
    let dir = tmp_dir("manifest");
    let st = run(&[
        "analytics",
        "--preset",
        "paper-fig-refresh-ops",
        "--seed",
        "99",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(st.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 99);
    assert!(manifest["tool_version"].is_string());
    assert!(manifest["config_hash"].is_string());
    assert!(manifest["config"]["geometry"]["banks"].is_number());
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn boundaries_csv_matches_configured_layout() {
    let dir = tmp_dir("bounds");
    let st = run(&[
        "reverse-subarrays",
        "--preset",
        "default",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(st.status.success());
    let text = std::fs::read_to_string(dir.join("boundaries.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(3).collect();
    // Preset layout: 64, 128, 96.
    assert_eq!(rows, vec!["0,0,63,64", "1,64,191,128", "2,192,287,96"]);
    let _ = std::fs::remove_dir_all(dir);
}
