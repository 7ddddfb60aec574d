use std::fs;
use std::path::Path;
use std::process::Command;

const TINY: &str = r#"{"episodes": 2, "steps_per_episode": 3, "rf_trees": 5, "rf_max_depth": 4,
  "d_model": 8, "n_heads": 2, "op_hidden": 8, "critic_hidden": 8, "erg_budget": 20}"#;

fn write_inputs(dir: &Path) {
    let mut csv = String::from("a,b,c,y\n");
    for i in 0..80 {
        let (a, b, c) = (i as f64 / 40.0 - 1.0, ((i * 7) % 13) as f64 / 6.5 - 1.0, ((i * 5) % 11) as f64);
        csv.push_str(&format!("{a},{b},{c},{}\n", a * b + 0.01 * c));
    }
    fs::write(dir.join("data.csv"), csv).unwrap();
    fs::write(dir.join("cfg.json"), TINY).unwrap();
}

fn haft(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_haft"))
        .current_dir(dir)
        .env_remove("HAFT_SEED")
        .args(args)
        .output()
        .unwrap()
}

const DATA: [&str; 8] = ["--data", "data.csv", "--target", "y", "--task", "reg", "--config", "cfg.json"];

#[test]
fn run_writes_reports_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    let out = haft(tmp.path(), &[&["run"], &DATA[..], &["--seed", "3", "--out", "out"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = tmp.path().join("out");
    for f in ["run.json", "trace.jsonl", "train_log.jsonl", "curve.csv", "best_features.csv", "provenance.json"] {
        assert!(o.join(f).is_file(), "missing {f}");
    }
    assert!(fs::read_dir(o.join("checkpoints")).unwrap().count() >= 6);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["method"], "haft");

    let rep = haft(tmp.path(), &[&["replay"], &DATA[..], &["--provenance", "out/provenance.json"]].concat());
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    let r: serde_json::Value = serde_json::from_slice(&rep.stdout).unwrap();
    assert!(r["score"].as_f64().unwrap().is_finite());
}

#[test]
fn baselines_and_variants_run() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    for extra in [&["--baseline", "rdg"][..], &["--baseline", "erg"], &["--variant", "no-shared-critic"]] {
        let out = haft(tmp.path(), &[&["run"], &DATA[..], extra, &["--out", "o"]].concat());
        assert!(out.status.success(), "{extra:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn failures_emit_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    let mut args = DATA.to_vec();
    args[3] = "nope";
    let out = haft(tmp.path(), &[&["run"], &args[..], &["--out", "o"]].concat());
    assert!(!out.status.success());
    let rec: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["error"]["kind"], "target_not_found");

    let out = haft(tmp.path(), &["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let rec: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["error"]["kind"], "usage");
}

#[test]
fn seed_env_override_applies() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    let run = |env: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_haft"));
        c.current_dir(tmp.path()).env_remove("HAFT_SEED");
        if let Some(s) = env {
            c.env("HAFT_SEED", s);
        }
        let o = c.args([&["run"], &DATA[..], &["--baseline", "rdg", "--out", out]].concat()).output().unwrap();
        assert!(o.status.success());
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join(out).join("run.json")).unwrap()).unwrap();
        v["seed"].as_u64().unwrap()
    };
    assert_eq!(run(Some("17"), "a"), 17);
    assert_eq!(run(None, "b"), 0);
}
