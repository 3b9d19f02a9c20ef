//! End-to-end checks of the runner and the `risbeam` binary on a small surface.

use std::path::{Path, PathBuf};
use std::process::Command;

use ris_beam::scene::Scenario;
use ris_beam_cli::{run, sweep, Method, RunOptions, RunReport};

fn small_scenario() -> Scenario {
    let mut s = Scenario::reference();
    s.ris_rows = 3;
    s.ris_cols = 3;
    s.N_t = 4;
    s
}

fn write_config(dir: &Path, s: &Scenario) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(s).unwrap()).unwrap();
    path
}

fn risbeam(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_risbeam"));
    cmd.args(args).env("RUST_LOG", "error");
    cmd
}

#[test]
fn report_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_scenario());
    let opts = RunOptions {
        method: Method::UacpMask,
        ..RunOptions::default()
    };
    let report = run(Some(&config), dir.path(), &opts).unwrap();
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let parsed: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, report);
    assert_eq!(parsed.config_echo, small_scenario());
    assert_eq!(parsed.wall_time_s, 0.0);
    assert!(parsed.mask_enforced);
    assert_eq!(parsed.per_receiver_rates.len(), 2);
    let mbps = parsed.min_rate_bits * parsed.bandwidth_hz / 1e6;
    assert!((parsed.min_rate_mbps - mbps).abs() <= 1e-12 * mbps.abs().max(1e-300));
}

#[test]
fn pattern_csv_dbm_column_follows_the_watts_column() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_scenario());
    let opts = RunOptions {
        method: Method::Uacp,
        sweep_grid_deg: 1.0,
        ..RunOptions::default()
    };
    run(Some(&config), dir.path(), &opts).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join("beam_pattern.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(headers.iter().collect::<Vec<_>>(), ["angle_deg", "power_w", "power_dbm"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 179);
    assert_eq!(&rows[0][0], "-89");
    assert_eq!(&rows[178][0], "89");
    for r in &rows {
        let w: f64 = r[1].parse().unwrap();
        let dbm: f64 = r[2].parse().unwrap();
        assert!(w > 0.0);
        assert!((dbm - (10.0 * w.log10() + 30.0)).abs() < 1e-9);
    }
}

#[test]
fn discrete_run_writes_codebook_phases() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_scenario());
    let out = dir.path().join("uadp");
    let status = risbeam(&["--method", "uadp", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let mut reader = csv::Reader::from_path(out.join("ris_state.csv")).unwrap();
    let quarter = std::f64::consts::FRAC_PI_2;
    let mut count = 0;
    for r in reader.records() {
        let r = r.unwrap();
        let amplitude: f64 = r[5].parse().unwrap();
        let phase: f64 = r[6].parse().unwrap();
        assert!((amplitude - 1.0).abs() < 1e-12);
        let steps = phase / quarter;
        assert!((steps - steps.round()).abs() < 1e-9, "phase {phase} is not a multiple of pi/2");
        count += 1;
    }
    assert_eq!(count, 9);
}

#[test]
fn unknown_method_exits_with_usage_code() {
    let status = risbeam(&["--method", "foo"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn missing_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let status = risbeam(&["--config", "no/such/file.json", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn invalid_scenario_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = small_scenario();
    s.theta_ref_deg = vec![50.0, 30.0];
    let config = write_config(dir.path(), &s);
    let status = risbeam(&["--config"]).arg(&config).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn bad_sweep_size_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let status = risbeam(&["sweep", "--sizes", "4by4", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_scenario());
    let opts = RunOptions::default();
    let rows = sweep(Some(&config), dir.path(), &[(2, 2), (3, 3)], &[Method::Uacp, Method::Uadp], &opts).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.error.is_none() && r.n_ris == r.rows * r.cols));
    let text = std::fs::read_to_string(dir.path().join("rate_vs_ris_size.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rows,cols,n_ris,method,min_rate_bits,min_rate_mbps,error"));
    let cells: Vec<(String, String)> = lines
        .map(|l| {
            let parts: Vec<&str> = l.split(',').collect();
            (parts[2].to_string(), parts[3].to_string())
        })
        .collect();
    let expected = [("4", "uacp"), ("4", "uadp"), ("9", "uacp"), ("9", "uadp")];
    assert_eq!(cells, expected.map(|(a, b)| (a.to_string(), b.to_string())));
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let reference = ris_beam_cli::load_scenario(Some(&root.join("reference.toml")), None).unwrap();
    assert_eq!(reference, Scenario::reference());
    let shifted = ris_beam_cli::load_scenario(Some(&root.join("shifted.toml")), None).unwrap();
    assert_eq!((shifted.theta_inc_deg, shifted.theta_ref_deg), (25.0, vec![20.0, 40.0]));
    let three = ris_beam_cli::load_scenario(Some(&root.join("three_beams.toml")), None).unwrap();
    assert_eq!(three.N_r, vec![2, 2, 2]);
}
