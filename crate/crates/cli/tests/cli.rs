use std::path::PathBuf;
use std::process::Command;

fn sadg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sadg"))
}

fn map(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../maps").join(name)
}

#[test]
fn batch_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rows.csv");
    let status = sadg()
        .args(["--map", map("warehouse_30x30.json").to_str().unwrap()])
        .args(["--agents", "5", "--delay", "3,10", "--horizon", "1,inf", "--scenarios", "2"])
        .args(["--seed", "4", "--tick", "1.0", "--no-timing", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 2);
    assert!(text.lines().any(|l| l.starts_with("5,3,inf,")));
}

#[test]
fn baseline_only_leaves_switching_columns_empty() {
    let out = sadg()
        .args(["--map", map("warehouse_30x30.json").to_str().unwrap()])
        .args(["--agents", "3", "--delay", "5", "--scenarios", "1", "--tick", "1", "--baseline-only"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[6], row[7]), ("", ""));
}

#[test]
fn bad_arguments_fail() {
    assert!(!sadg().args(["--agents", "3"]).status().unwrap().success());
    let bad_h = sadg().args(["--map", map("crossing.json").to_str().unwrap(), "--horizon", "0"]).output().unwrap();
    assert!(!bad_h.status.success());
    let both = sadg()
        .args(["--map", map("crossing.json").to_str().unwrap(), "--baseline-only", "--switching-only"])
        .output()
        .unwrap();
    assert!(!both.status.success());
}

#[test]
fn plan_dump_and_episode() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    let crossing = map("crossing.json");
    let crossing = crossing.to_str().unwrap();
    let st = sadg()
        .args(["plan", "--map", crossing, "--starts", "A,E", "--goals", "H,D", "--out", plan.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(st.success());

    let dump = sadg().args(["adg", "dump", "--map", crossing, "--plan", plan.to_str().unwrap()]).output().unwrap();
    assert!(dump.status.success());
    let v: serde_json::Value = serde_json::from_slice(&dump.stdout).unwrap();
    assert!(!v["vertices"].as_array().unwrap().is_empty());

    let log = dir.path().join("events.ndjson");
    let ep = sadg()
        .args(["episode", "--map", crossing, "--plan", plan.to_str().unwrap(), "--delay", "100", "--onset", "0"])
        .args(["--delay-fraction", "0.5", "--switching", "--log", log.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(ep.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&ep.stdout).unwrap();
    assert!(summary["cumulative"].as_f64().unwrap() > 0.0);
    assert!(std::fs::read_to_string(&log).unwrap().lines().count() > 4);
}

#[test]
fn gen_map_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.json");
    assert!(sadg().args(["gen-map", "--out", out.to_str().unwrap()]).status().unwrap().success());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(map("warehouse_30x30.json")).unwrap());
}
