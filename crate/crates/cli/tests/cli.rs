use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cluster_notify::adversary::AttackOutcome;
use cluster_notify::bulletin::parse_bulletin;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cluster-notify"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn simulate_then_match_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(bin().args(["simulate", "--config"]).arg(config("planted.toml")).arg("--out").arg(&out).output().unwrap());
    for f in ["world_summary.json", "bulletin.jsonl", "notices.jsonl", "eval_report.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let bulletin = std::fs::read_to_string(out.join("bulletin.jsonl")).unwrap();
    let records = parse_bulletin(&bulletin).unwrap();
    assert!(!records.is_empty());

    // A history sitting in the first event's region during its bucket.
    let e = &records[0].event;
    let c = e.region.iter().nth(e.region.len() / 2).unwrap();
    let t = e.bucket.0 as i64 * 300 + 30;
    let history = dir.path().join("history.txt");
    std::fs::write(
        &history,
        format!("# t,x,y\n{},{},{}\n{},0,0\n", t, c.cx as f64 * 4.0 + 2.0, c.cy as f64 * 4.0 + 2.0, t + 9000),
    )
    .unwrap();
    let notices =
        ok(bin().args(["match", "--history"]).arg(&history).arg("--events").arg(out.join("bulletin.jsonl")).output().unwrap());
    assert!(notices.lines().count() >= 1);
    assert!(notices.contains(&e.event_id.to_string()));

    let far = dir.path().join("far.txt");
    std::fs::write(&far, "0,-5000,-5000\n").unwrap();
    let none = ok(bin().args(["match", "--history"]).arg(&far).arg("--events").arg(out.join("bulletin.jsonl")).output().unwrap());
    assert_eq!(none, "");
}

#[test]
fn attack_writes_outcome() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["lone_false_report", "sybil", "probe"] {
        let out = dir.path().join(kind);
        ok(bin()
            .args(["attack", "--kind", kind, "--config"])
            .arg(config("planted.toml"))
            .args(["--seed", "5", "--out"])
            .arg(&out)
            .output()
            .unwrap());
        let outcome: AttackOutcome = serde_json::from_str(&std::fs::read_to_string(out.join("outcome.json")).unwrap()).unwrap();
        assert_eq!(outcome.inference.is_some(), kind == "probe");
    }
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nunknown_key = 3\n").unwrap();
    let out = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown"));

    let out = bin().args(["attack", "--kind", "nonsense", "--config"]).arg(config("planted.toml")).args(["--out", "x"]).output();
    assert!(!out.unwrap().status.success());
}
