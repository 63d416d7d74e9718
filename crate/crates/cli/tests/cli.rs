use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
episodes = 2
eval_episodes = 1

[agent]
actor_hidden = [16]
critic_hidden = [16]
batch_size = 8

[asem]
hidden = 16
z1 = 8
z2 = 4
decoder_hidden = 16
"#;

fn routesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_routesim")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_check_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let run = dir.path().join("full");
    let out = routesim(&["--self-check", "train", "--config", path(&cfg), "--out", path(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("self-check passed"));
    for f in ["config.toml", "trace.csv", "metrics.json", "model.ckpt"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let trace = run.join("trace.csv");
    let metrics = run.join("metrics.json");
    let out = routesim(&["metrics", path(&trace), "--eval-episodes", "1", "--check", path(&metrics)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = routesim(&["replay", path(&trace)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8_lossy(&out.stdout);
    assert_eq!(csv.lines().count(), 3);

    let text = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let col = header.iter().position(|h| *h == "r_final").unwrap();
    let mut cells: Vec<String> = lines[3].split(',').map(String::from).collect();
    cells[col] = "0.123".into();
    lines[3] = cells.join(",");
    let tampered = dir.path().join("tampered.csv");
    fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let out = routesim(&["replay", path(&tampered), "--config", path(&run.join("config.toml"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn baseline_runs_and_bad_kind_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = routesim(&["baseline", "random", "--config", path(&cfg), "--out", path(&dir.path().join("r"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = routesim(&["baseline", "no_asem", "--config", path(&cfg), "--out", path(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn burst_test_reads_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let run = dir.path().join("full");
    assert!(routesim(&["train", "--config", path(&cfg), "--out", path(&run)]).status.success());
    let ckpt = format!("full={}", path(&run.join("model.ckpt")));
    let report = dir.path().join("burst.json");
    let out = routesim(&["burst-test", "--config", path(&cfg), "--checkpoint", &ckpt, "--out", path(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["outcomes"].as_array().unwrap().len(), 1);
}
