use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cyclesum(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyclesum"))
        .args(args)
        .env_remove("CYCLESUM_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth_small(dir: &Path) {
    let out = cyclesum(&[
        "synth", "--out", dir.to_str().unwrap(), "--videos", "6", "--frames", "200", "--dim", "4",
        "--events", "20", "--seed", "7",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn only_dir(parent: &Path) -> std::path::PathBuf {
    let mut dirs: Vec<_> = fs::read_dir(parent).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}

#[test]
fn synth_is_deterministic_and_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out = cyclesum(&["synth", "--out", a.to_str().unwrap(), "--videos", "20", "--frames", "96", "--dim", "32", "--seed", "7"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("wrote 20 videos (k=96, d=32"));
    cyclesum(&["synth", "--out", b.to_str().unwrap(), "--videos", "20", "--frames", "96", "--dim", "32", "--seed", "7"]);
    for i in [0, 7, 19] {
        let f = format!("video_{i:02}.f32");
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap());
    }
    let out = cyclesum(&["synth", "--out", tmp.path().join("c").to_str().unwrap(), "--videos", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_env_var_is_the_default() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, env: Option<&str>, extra: &[&str]| {
        let dir = tmp.path().join(name);
        let mut c = Command::new(env!("CARGO_BIN_EXE_cyclesum"));
        c.args(["synth", "--out", dir.to_str().unwrap(), "--videos", "2", "--frames", "12", "--dim", "3", "--events", "2"]);
        c.args(extra);
        c.env_remove("CYCLESUM_SEED");
        if let Some(v) = env {
            c.env("CYCLESUM_SEED", v);
        }
        assert!(c.output().unwrap().status.success());
        fs::read(dir.join("video_00.f32")).unwrap()
    };
    assert_eq!(run("env", Some("3"), &[]), run("flag", None, &["--seed", "3"]));
    assert_ne!(run("env4", Some("4"), &[]), run("flag3", None, &["--seed", "3"]));
}

#[test]
fn train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data);
    let runs = tmp.path().join("runs");
    let cfg = tmp.path().join("small.cfg");
    fs::write(&cfg, "model.hidden = 4\nmodel.z_dim = 2\ntrain.max_epochs = 2\n").unwrap();
    let out = cyclesum(&[
        "train", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--variant", "c",
        "--seed", "3", "--out", runs.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("loss.enable_gan_f = false"));
    assert!(text.contains("loss.enable_gan_b = false"));
    assert!(text.contains("loss.enable_cycle_f = true"));
    let run = only_dir(&runs);
    assert!(run.file_name().unwrap().to_str().unwrap().ends_with("-seed3"));
    for f in ["config.txt", "loss.csv", "epochs.csv", "splits.json", "checkpoint/params.bin"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let loss = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 2 * 5);

    let reports = tmp.path().join("reports");
    let out = cyclesum(&[
        "eval", "--checkpoint", run.join("checkpoint").to_str().unwrap(), "--data", data.to_str().unwrap(),
        "--out", reports.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("random baseline F"));
    assert!(text.contains("SumMe 41.9") && text.contains("TVSum 57.6"));
    let report = only_dir(&reports);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 1);
}

#[test]
fn gt_against_itself_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data);
    let out = cyclesum(&[
        "eval", "--ground-truth", "--data", data.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let rows: Vec<String> = stdout(&out).lines().filter(|l| l.starts_with("video_")).map(String::from).collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let f: f64 = r.split_whitespace().nth(3).unwrap().parse().unwrap();
        assert_eq!(f, 1.0, "{r}");
    }
}

#[test]
fn zero_epochs_gives_empty_log() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data);
    let runs = tmp.path().join("runs");
    let out = cyclesum(&[
        "train", "--data", data.to_str().unwrap(), "--max-epochs", "0", "--out", runs.to_str().unwrap(),
        "--set", "model.hidden=4", "--set", "model.z_dim=2",
    ]);
    assert!(out.status.success());
    let loss = fs::read_to_string(only_dir(&runs).join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1);
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data);
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "train.clip = 0.1\n").unwrap();
    let out = cyclesum(&["train", "--data", data.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key `train.clip`"));
    let out = cyclesum(&["train", "--data", data.to_str().unwrap(), "--variant", "3g"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cyclesum(&["train", "--data", tmp.path().join("missing").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numeric_abort_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data);
    let out = cyclesum(&[
        "train", "--data", data.to_str().unwrap(), "--max-epochs", "3", "--lr", "1e308",
        "--out", tmp.path().join("runs").to_str().unwrap(), "--set", "model.hidden=4",
        "--set", "model.z_dim=2", "--set", "train.clip_generators=false",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn dimension_mismatch_names_both_dims() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data);
    let runs = tmp.path().join("runs");
    cyclesum(&[
        "train", "--data", data.to_str().unwrap(), "--max-epochs", "0", "--out", runs.to_str().unwrap(),
        "--set", "model.hidden=4", "--set", "model.z_dim=2",
    ]);
    let other = tmp.path().join("other");
    cyclesum(&["synth", "--out", other.to_str().unwrap(), "--videos", "5", "--frames", "200", "--dim", "5", "--events", "20"]);
    let ckpt = tmp.path().join("lone");
    fs::create_dir(&ckpt).unwrap();
    for e in fs::read_dir(only_dir(&runs).join("checkpoint")).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), ckpt.join(e.file_name())).unwrap();
    }
    let out = cyclesum(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", other.to_str().unwrap(), "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("feature dim 4") && err.contains("dim 5"), "{err}");
}

#[test]
fn verify_math_reports_and_scales() {
    let out = cyclesum(&["verify-math", "--joints", "20", "--max-alphabet", "6", "--grid-points", "2000"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("joints = 20") && text.contains("max_alphabet = 6"));
    assert!(text.contains("informational: KL upper-bound claim"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn gradcheck_single_term_and_precision_policy() {
    let out = cyclesum(&["gradcheck", "--term", "prior_b"]);
    let text = stdout(&out);
    assert!(text.contains("prior_b") && !text.contains("total"));
    assert!(text.contains("below rounding noise"));
    let passed = text.contains("PASS");
    assert_eq!(out.status.code(), Some(if passed { 0 } else { 4 }), "{text}");
    let out = cyclesum(&["gradcheck", "--precision", "f32"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("64-bit"));
    assert_eq!(cyclesum(&["gradcheck", "--term", "nope"]).status.code(), Some(2));
}

#[test]
fn splits_command_writes_partitions() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_small(&data);
    let file = tmp.path().join("splits.json");
    let out = cyclesum(&["splits", "--data", data.to_str().unwrap(), "--out", file.to_str().unwrap(), "--seed", "2"]);
    assert!(out.status.success());
    let splits: serde_json::Value = serde_json::from_str(&fs::read_to_string(&file).unwrap()).unwrap();
    let splits = splits.as_array().unwrap();
    assert_eq!(splits.len(), 5);
    for s in splits {
        assert_eq!(s["train"].as_array().unwrap().len() + s["test"].as_array().unwrap().len(), 6);
    }
}
