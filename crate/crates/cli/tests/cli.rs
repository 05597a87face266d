//! End-to-end tests of the command line: exit codes, report contents, and
//! byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::Output;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nonholo")
}

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn run(args: &[&str]) -> Output {
    std::process::Command::new(bin())
        .args(args)
        .output()
        .expect("spawn nonholo")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn drift_of(report: &serde_json::Value, name: &str) -> f64 {
    report["analyses"]["drift"]["integrals"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["name"] == name)
        .unwrap_or_else(|| panic!("integral {name} missing"))["relative_drift"]
        .as_f64()
        .unwrap()
}

#[test]
fn version_prints_and_succeeds() {
    let out = run(&["version"]);
    assert_eq!(exit_code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("nonholo "));
}

#[test]
fn turntable_acceptance_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = scenario_dir().join("turntable-acceptance.toml");
    let out = run(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(
        exit_code(&out),
        0,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let report = read_json(&tmp.path().join("report.json"));
    // Reduced period of the pinned dynamics: 2π(1+c)/(cΩ) = 7π.
    let period = report["analyses"]["period"]["period"].as_f64().unwrap();
    let expected = 7.0 * std::f64::consts::PI;
    assert!(
        (period - expected).abs() / expected < 1e-8,
        "period {period} vs {expected}"
    );
    for name in [
        "omega_z",
        "spin_offset_x",
        "spin_offset_y",
        "moving_energy_shifted",
    ] {
        assert!(drift_of(&report, name) < 1e-9, "{name} drifted");
    }
    // The settings block rides along with every report.
    assert_eq!(report["settings"]["rtol"].as_f64().unwrap(), 1e-12);
    assert!(tmp.path().join("trajectory.csv").exists());
    // Trajectory CSV has the documented header.
    let csv = std::fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "t,q0,q1,q2,q3,q4,qd0,qd1,qd2,qd3,qd4,lambda0,lambda1,residual"
    );
}

#[test]
fn bowl_omega0_scenario_energy_conserved() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = scenario_dir().join("bowl-omega0.toml");
    let out = run(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(
        exit_code(&out),
        0,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(&tmp.path().join("report.json"));
    assert!(drift_of(&report, "energy") < 1e-9);
}

#[test]
fn bowl_rotating_scenario_moving_energy_and_period() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = scenario_dir().join("bowl-rotating.toml");
    let out = run(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(
        exit_code(&out),
        0,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(&tmp.path().join("report.json"));
    assert!(drift_of(&report, "moving_energy") < 1e-9);
    assert!(report["analyses"]["period"]["periodic"].as_bool().unwrap());
    let dim = report["analyses"]["frequencies"]["torus_dimension"]
        .as_u64()
        .unwrap();
    assert!(dim <= 3);
}

#[test]
fn unknown_key_rejected_with_name() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    let text = std::fs::read_to_string(scenario_dir().join("turntable-acceptance.toml"))
        .unwrap()
        .replace("omega = 1.0", "omeag = 1.0");
    std::fs::write(&path, text).unwrap();
    let out = run(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("omeag"), "stderr was: {stderr}");
}

#[test]
fn invalid_projection_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    let text = std::fs::read_to_string(scenario_dir().join("turntable-acceptance.toml"))
        .unwrap()
        .replace("projection = \"every-step\"", "projection = \"sometimes\"");
    std::fs::write(&path, text).unwrap();
    let out = run(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let scenario = scenario_dir().join("bowl-rotating.toml");
    let mut blobs = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().unwrap();
        let out = run(&[
            "run",
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            tmp.path().to_str().unwrap(),
            "--seed",
            "9",
            "--quiet",
        ]);
        assert_eq!(exit_code(&out), 0);
        let report = std::fs::read(tmp.path().join("report.json")).unwrap();
        let traj = std::fs::read(tmp.path().join("trajectory.csv")).unwrap();
        blobs.push((report, traj));
    }
    assert_eq!(blobs[0].0, blobs[1].0, "report.json differs between runs");
    assert_eq!(
        blobs[0].1, blobs[1].1,
        "trajectory.csv differs between runs"
    );
}

fn write_check_scenario(dir: &Path, omega: f64, frame: &str) -> PathBuf {
    let path = dir.join("check.toml");
    let text = format!(
        r#"
schema_version = 1
seed = 5

[system]
preset = "turntable"
a = 1.0
c = 0.4
omega = {omega}

[initial]
x = 1.0
y = 0.0
spin = [0.0, 1.0, 0.0]

[integrator]
t_end = 1.0

{frame}
"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn check_passes_at_table_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_check_scenario(tmp.path(), 1.0, "[frame]\nkind = \"rotating\"\neta = 1.0");
    let out = run(&[
        "check",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(
        exit_code(&out),
        0,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn check_fails_at_double_rate_with_report() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_check_scenario(tmp.path(), 1.0, "[frame]\nkind = \"rotating\"\neta = 2.0");
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "check",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&out), 4);
    let report = read_json(&out_dir.join("hypotheses.json"));
    let failed = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "generator_compatibility")
        .unwrap();
    assert_eq!(failed["passed"], false);
    assert!(failed["worst_residual"].as_f64().unwrap() > 0.1);
}

#[test]
fn check_identity_frame_on_linear_system_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_check_scenario(tmp.path(), 0.0, "[frame]\nkind = \"identity\"");
    let out = run(&[
        "check",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(
        exit_code(&out),
        0,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn check_rotating_map_frame_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_check_scenario(tmp.path(), 1.0, "[frame]\nkind = \"rotating\"");
    let out = run(&[
        "check",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(
        exit_code(&out),
        0,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn tabulated_profile_scenario_runs() {
    let tmp = tempfile::tempdir().unwrap();
    // Knot format: three whitespace-separated columns u rho zeta, strictly
    // increasing u, '#' comments allowed.
    let mut table = String::from("# paraboloid samples\n");
    for i in 0..60 {
        let u = 0.2 + 0.03 * i as f64;
        table.push_str(&format!("{u} {u} {}\n", 0.5 * u * u));
    }
    let table_path = tmp.path().join("bowl.dat");
    std::fs::write(&table_path, table).unwrap();

    let scenario_path = tmp.path().join("table.toml");
    let text = std::fs::read_to_string(scenario_dir().join("bowl-omega0.toml"))
        .unwrap()
        .replace(
            "kind = \"paraboloid\"\ncurvature = 1.0",
            &format!("kind = \"table\"\npath = \"{}\"", table_path.display()),
        )
        .replace("t_end = 200.0", "t_end = 20.0")
        .replace("u = 1.2", "u = 1.0");
    std::fs::write(&scenario_path, text).unwrap();

    let out = run(&[
        "run",
        "--scenario",
        scenario_path.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(
        exit_code(&out),
        0,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = read_json(&tmp.path().join("out").join("report.json"));
    // Spline knots interpolate the smooth profile; conservation still holds.
    assert!(drift_of(&report, "energy") < 1e-9);
}

#[test]
fn trajectory_csv_round_trips_exactly() {
    // 17 significant digits: parsing a value and re-serializing with the
    // writer's format reproduces the bytes, so drift measurements survive
    // re-import.
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        "--scenario",
        scenario_dir().join("bowl-rotating.toml").to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&out), 0);
    let csv = std::fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    for line in csv.lines().skip(1).take(200) {
        for field in line.split(',') {
            let value: f64 = field.parse().unwrap();
            assert_eq!(
                format!("{value:.16e}"),
                field,
                "field {field} not round-trip"
            );
        }
    }
}

#[test]
fn drift_curves_written_alongside_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        "--scenario",
        scenario_dir().join("bowl-omega0.toml").to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&out), 0);
    let csv = std::fs::read_to_string(tmp.path().join("drift.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "t,energy,moving_energy");
    assert!(csv.lines().count() > 10);
}

#[test]
fn sweep_produces_row_per_grid_point() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = scenario_dir().join("bowl-sweep.toml");
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "sweep",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(
        exit_code(&out),
        0,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let drift_col = header
        .iter()
        .position(|h| *h == "moving_energy_drift")
        .unwrap();
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[4], "ok");
        let drift: f64 = cols[drift_col].parse().unwrap();
        assert!(drift < 1e-9, "row drift {drift}");
    }
}

#[test]
fn sweep_isolates_off_domain_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("sweep.toml");
    let text = std::fs::read_to_string(scenario_dir().join("bowl-sweep.toml"))
        .unwrap()
        .replace(
            "omega = [0.1, 0.2]",
            "omega = [0.1]\nposition = [1.0, -0.5]",
        );
    std::fs::write(&path, text).unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "sweep",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(
        exit_code(&out),
        0,
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains(",ok,"));
    assert!(rows[1].contains("failed"));
}

#[test]
fn off_domain_initial_state_is_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad-ic.toml");
    let text = std::fs::read_to_string(scenario_dir().join("bowl-omega0.toml"))
        .unwrap()
        .replace("u = 1.2", "u = -0.5");
    std::fs::write(&path, text).unwrap();
    let out = run(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("domain"), "stderr: {stderr}");
}

#[test]
fn sweep_empty_grid_is_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("sweep.toml");
    let text = std::fs::read_to_string(scenario_dir().join("bowl-sweep.toml"))
        .unwrap()
        .replace("omega = [0.1, 0.2]", "omega = []");
    std::fs::write(&path, text).unwrap();
    let out = run(&[
        "sweep",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn single_point_sweep_matches_run_analyses() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("sweep.toml");
    let text = std::fs::read_to_string(scenario_dir().join("bowl-sweep.toml"))
        .unwrap()
        .replace("omega = [0.1, 0.2]", "omega = [0.1]");
    std::fs::write(&path, text).unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "sweep",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&out), 0);

    // Reference via `run` on the matching single scenario.
    let run_out_dir = tmp.path().join("run-out");
    let run_out = run(&[
        "run",
        "--scenario",
        scenario_dir().join("bowl-rotating.toml").to_str().unwrap(),
        "--out",
        run_out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(exit_code(&run_out), 0);
    let report = read_json(&run_out_dir.join("report.json"));
    let expected_period = report["analyses"]["period"]["period"].as_f64().unwrap();

    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let period_col = header.iter().position(|h| *h == "period").unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let period: f64 = row[period_col].parse().unwrap();
    assert!((period - expected_period).abs() < 1e-9);
}
