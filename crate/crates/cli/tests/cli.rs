use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

/// A 4×4-cell grid and two epochs keep every run to a few seconds.
const SMALL: [&str; 6] = [
    "--set",
    "grid.lat_max=51.0",
    "--set",
    "grid.lon_max=-99.0",
    "--epochs",
    "2",
];

fn xco2(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xco2"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .env_remove("XCO2_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small(cmd: &str, extra: &[&str]) -> Vec<String> {
    let mut v = vec![cmd.to_string()];
    v.extend(SMALL.iter().map(|s| s.to_string()));
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run_small(cmd: &str, extra: &[&str], out: &Path) -> Output {
    let args = small(cmd, extra);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    xco2(&refs, out)
}

#[test]
fn pipeline_writes_stamped_artifacts() {
    let dir = TempDir::new().unwrap();
    let o = run_small("pipeline", &[], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("validation_report.json")).unwrap(),
    )
    .unwrap();
    let hash = report["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    for name in [
        "losses.csv",
        "field.csv",
        "report.csv",
        "cells.csv",
        "features.csv",
        "loss_curve.svg",
        "scatter.svg",
    ] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.contains(&hash), "{name} lacks the config hash");
        assert!(text.contains("seed=42"), "{name} lacks the seed");
    }
    let field = fs::read_to_string(dir.path().join("field.csv")).unwrap();
    assert_eq!(
        field.lines().filter(|l| !l.starts_with('#')).count(),
        1 + 16 * 12
    );
}

#[test]
fn corrupt_soundings_name_the_stage() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(
        &bad,
        "lat,lon,time_iso8601,xco2_ppm,sigma_ppm\n50.1,-99.9,not-a-time,410,0.3\n",
    )
    .unwrap();
    let env = dir.path().join("env.csv");
    fs::write(&env, "row,col,month\n").unwrap();
    let o = run_small(
        "pipeline",
        &[
            "--soundings",
            bad.to_str().unwrap(),
            "--env",
            env.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("stage aggregate"), "{}", stderr(&o));
}

#[test]
fn out_of_range_sounding_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(
        &bad,
        "lat,lon,time_iso8601,xco2_ppm,sigma_ppm\n50.1,-99.9,2024-03-01T12:00:00Z,9999,0.3\n",
    )
    .unwrap();
    let o = xco2(
        &["aggregate", "--soundings", bad.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("aggregate"));
}

#[test]
fn invalid_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let o = run_small(
        "pipeline",
        &["--set", "scenario.gap_fraction=1.5"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run_small(
        "pipeline",
        &["--set", "feature_registry=\"/nonexistent/registry.json\""],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{ not json").unwrap();
    let o = xco2(&["pipeline", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_4() {
    let dir = TempDir::new().unwrap();
    let o = run_small("train", &["--lr", "1e300"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("stage train"));
}

#[test]
fn output_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_xco2"))
        .args([
            "synth",
            "--set",
            "grid.lat_max=51.0",
            "--set",
            "grid.lon_max=-99.0",
        ])
        .env("XCO2_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("soundings.csv").exists());
    assert!(dir.path().join("truth.csv").exists());
}

#[test]
fn stages_chain_through_files() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(run_small("synth", &[], d).status.code(), Some(0));
    let s = d.join("soundings.csv");
    let e = d.join("env.csv");
    let st = d.join("station.csv");
    let t = d.join("truth.csv");
    let files = [
        "--soundings",
        s.to_str().unwrap(),
        "--env",
        e.to_str().unwrap(),
        "--station",
        st.to_str().unwrap(),
        "--station-lat",
        "50.5",
        "--station-lon",
        "-99.5",
        "--truth",
        t.to_str().unwrap(),
    ];
    for cmd in [
        "aggregate",
        "features",
        "spectrogram",
        "train",
        "reconstruct",
        "validate",
    ] {
        let o = run_small(cmd, &files, d);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
    }
    for name in [
        "cells.csv",
        "features.csv",
        "feature_registry.json",
        "model.json",
        "field.csv",
        "validation_report.json",
    ] {
        assert!(d.join(name).exists(), "{name} missing");
    }
    assert!(d.join("spectrograms").read_dir().unwrap().count() == 16);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("validation_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["radius_validation"].as_array().unwrap().len(), 3);
    assert_eq!(report["truth_comparison"].as_array().unwrap().len(), 2);
}

#[test]
fn poultry_classifies_regions() {
    let dir = TempDir::new().unwrap();
    let regions = dir.path().join("regions.csv");
    fs::write(
        &regions,
        "name,area_km2,mean_lat,facility_count\ndense,1000,0,18\nmid,1000,0,1\nsparse,10000,0,1\n",
    )
    .unwrap();
    let o = xco2(
        &["poultry", "--regions", regions.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("density_report.csv")).unwrap();
    assert!(report.contains("dense,0.018000,high"), "{report}");
    assert!(report.contains("mid,0.001000,medium"));
    assert!(report.contains("sparse,0.000100,low"));
}
