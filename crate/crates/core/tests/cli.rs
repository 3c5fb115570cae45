use std::process::Command;

fn coalmpc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coalmpc"))
}

#[test]
fn grid_then_run() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("grid.json");
    let status = coalmpc()
        .args(["grid", "--rows", "3", "--cols", "3", "--out"])
        .arg(&scenario)
        .status()
        .unwrap();
    assert!(status.success());
    let out = dir.path().join("out");
    let status = coalmpc()
        .args(["run", "--mode", "cir", "--coop-cost", "a", "--steps", "12", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["trajectories.csv", "timeline.json", "costs.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let csv = std::fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12 * 9);
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.json");
    std::fs::write(&scenario, r#"{"grid": [2, 2], "R": "x"}"#).unwrap();
    let output = coalmpc()
        .args(["run", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains('R'));
}

#[test]
fn solver_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("grid.json");
    assert!(coalmpc().args(["grid", "--out"]).arg(&scenario).status().unwrap().success());
    let output = coalmpc()
        .args(["run", "--mode", "cen", "--steps", "3", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(dir.path().join("out"))
        .env("COALMPC_TOL", "1e-300")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{}", String::from_utf8_lossy(&output.stderr));
}
