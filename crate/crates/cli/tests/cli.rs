use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"seed = 3

[corpus]
families = [{ name = "room", width = 9, height = 9, obstacle_density = 0.1 }]
train = 3
val = 1
test = 2

[data]
demos_per_scene = 2
eval_per_scene = 2

[pretrain]
epochs = 3

[train]
workers = 1
episodes = 25

[eval]
repetitions = 2

[ablation]
seeds = [1]

[paths]
scenes = "scenes"
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iomnav"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok(dir.path(), &["gen-scenes", "-c", "tiny.toml"]);
    dir
}

#[test]
fn full_pipeline_is_reproducible_and_replayable() {
    let dir = setup();
    let d = dir.path();
    for split in ["train", "val", "test"] {
        assert!(d.join("scenes").join(split).read_dir().unwrap().count() > 0);
    }
    ok(d, &["pretrain", "-c", "tiny.toml", "--out", "pre"]);
    assert!(d.join("pre/model.ckpt.json").exists());
    assert!(d.join("pre/config.toml").exists());

    for out in ["tr1", "tr2"] {
        ok(d, &["train", "-c", "tiny.toml", "--out", out, "--init", "pre/model.ckpt.json"]);
    }
    let log1 = fs::read(d.join("tr1/train_log.jsonl")).unwrap();
    assert_eq!(log1, fs::read(d.join("tr2/train_log.jsonl")).unwrap());
    assert_eq!(
        fs::read(d.join("tr1/model.ckpt.json")).unwrap(),
        fs::read(d.join("tr2/model.ckpt.json")).unwrap()
    );
    assert_eq!(String::from_utf8(log1).unwrap().lines().count(), 25);

    for out in ["ev1", "ev2"] {
        ok(d, &["eval", "-c", "tiny.toml", "--checkpoint", "tr1/model.ckpt.json", "--out", out, "--noisy"]);
    }
    let metrics = fs::read_to_string(d.join("ev1/metrics.json")).unwrap();
    assert_eq!(metrics, fs::read_to_string(d.join("ev2/metrics.json")).unwrap());
    assert!(metrics.contains("\"spl_all\""));
    assert!(fs::read_to_string(d.join("ev1/collisions.csv")).unwrap().starts_with("group,mean_collisions\n"));
    let index = fs::read_to_string(d.join("ev1/episodes.jsonl")).unwrap();
    // 2 test scenes x 2 specs x 2 repetitions.
    assert_eq!(index.lines().count(), 8);

    let replayed = ok(d, &["replay", "--episodes", "ev1/episodes.jsonl"]);
    assert!(replayed.contains("match"), "{replayed}");

    let dump = ok(d, &["inspect-iom", "--episodes", "ev1/episodes.jsonl", "--index", "0"]);
    let trace = fs::read_to_string(d.join("ev1/traces/00000.jsonl")).unwrap();
    assert_eq!(dump.lines().count(), trace.lines().count());
    for line in dump.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["entries"].is_array());
    }
}

#[test]
fn missing_checkpoint_exits_nonzero() {
    let dir = setup();
    let out = run(dir.path(), &["eval", "-c", "tiny.toml", "--checkpoint", "missing.json", "--out", "ev"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn tampered_trace_fails_replay() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["pretrain", "-c", "tiny.toml", "--out", "pre", "--epochs", "1"]);
    ok(d, &["eval", "-c", "tiny.toml", "--checkpoint", "pre/model.ckpt.json", "--out", "ev"]);
    let path = d.join("ev/traces/00001.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let r = lines[0]["reward"].as_f64().unwrap();
    lines[0]["reward"] = serde_json::json!(r + 0.5);
    let body: Vec<String> = lines.iter().map(|v| v.to_string()).collect();
    fs::write(&path, body.join("\n") + "\n").unwrap();
    let out = run(d, &["replay", "--episodes", "ev/episodes.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("reward"));
}

#[test]
fn resume_continues_the_episode_count() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "-c", "tiny.toml", "--out", "tr", "--episodes", "10"]);
    ok(d, &["train", "-c", "tiny.toml", "--out", "tr", "--episodes", "18", "--resume"]);
    let log = fs::read_to_string(d.join("tr/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 18);
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["episode"], 17);
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let dir = setup();
    let d = dir.path();
    let table = ok(d, &["ablate", "-c", "tiny.toml", "--out", "abl", "--episodes", "4"]);
    assert_eq!(table.lines().count(), 8);
    let csv = fs::read_to_string(d.join("abl/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert_eq!(fs::read_to_string(d.join("abl/runs.jsonl")).unwrap().lines().count(), 8);
    assert!(d.join("abl/config.toml").exists());
}

#[test]
fn bad_configuration_exits_nonzero_with_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = run(d, &["gen-scenes", "-c", "bad.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rate") && err.contains("bad.toml"), "{err}");

    let out = run(d, &["gen-scenes", "-c", "absent.toml"]);
    assert!(!out.status.success());

    fs::write(d.join("gamma.toml"), "[train]\ngamma = 1.5\n").unwrap();
    let out = run(d, &["pretrain", "-c", "gamma.toml", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
}

#[test]
fn missing_scenes_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train", "--out", "tr", "--scenes", "nowhere", "--episodes", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
}
