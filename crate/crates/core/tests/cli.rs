use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use tempfile::tempdir;

const SMALL: [&str; 8] = [
    "--set",
    "NumEnv=4",
    "--set",
    "OriPolicyEnvNum=2",
    "--set",
    "NumStep=16",
    "--set",
    "NumUpdate=3",
];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adamemento"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn train_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(extra);
    run(&args)
}

fn data_rows(metrics: &str) -> Vec<&str> {
    metrics.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn invalid_configuration_exits_with_one() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("run");
    let bad = train_small(&out, &["--set", "Confidence=1.5"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("Confidence"));
    let unknown = train_small(&out, &["--set", "NoSuchKey=3"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("NoSuchKey"));
}

#[test]
fn set_overrides_the_config_file() {
    let dir = tempdir().unwrap();
    let file = dir.path().join("run.cfg");
    std::fs::write(&file, "# small run\nNumUpdate = 5\nSeed = 3\n").unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--config", file.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    assert!(run(&args).status.success());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(data_rows(&metrics).len(), 3);
    assert!(metrics.starts_with("# ") && metrics.lines().next().unwrap().contains("seed=3"));
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"completed\""));
}

#[test]
fn training_is_deterministic_per_seed() {
    let dir = tempdir().unwrap();
    let read = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        assert!(train_small(&out, &["--seed", seed]).status.success());
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let a = read("a", "7");
    assert_eq!(a, read("b", "7"));
    assert_ne!(a, read("c", "8"));
}

#[test]
fn verify_reports_every_instance_and_a_summary() {
    let out = run(&["verify", "--count", "20", "--first-seed", "100"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "seed,theorem,holds,min_gap,C,resamples,error");
    assert_eq!(lines.len(), 1 + 40 + 1);
    assert!(lines[1..41].iter().all(|l| l.split(',').nth(2) == Some("true")));
    assert!(lines[41].starts_with("# instances=40 failures=0"));
    assert_eq!(run(&["verify", "--theorem", "3"]).status.code(), Some(1));
}

#[test]
fn inspection_commands_read_a_checkpoint() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(train_small(&out, &[]).status.success());
    for f in ["metrics.csv", "episodes.csv", "checkpoint.bin", "manifest.json", "visits.pgm", "visits.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let ckpt = out.join("checkpoint.bin");
    let ckpt = ckpt.to_str().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    assert!(run(&["novelty-map", "--checkpoint", ckpt, "--out", &p("novelty")]).status.success());
    let novelty = std::fs::read_to_string(dir.path().join("novelty/novelty.csv")).unwrap();
    assert!(novelty.lines().count() > 48);
    assert!(dir.path().join("novelty/novelty.pgm").exists());

    assert!(run(&["inspect-confidence", "--checkpoint", ckpt, "--out", &p("conf.csv")]).status.success());
    assert!(run(&["dump-memory", "--checkpoint", ckpt, "--out", &p("memory.csv")]).status.success());
    assert!(dir.path().join("memory.csv").exists());

    assert!(run(&["replay", "--checkpoint", ckpt, "--episodes", "2", "--out", &p("replay")]).status.success());
    let replay = std::fs::read_to_string(dir.path().join("replay/replay.csv")).unwrap();
    assert!(replay.starts_with("episode,step,state,action,reward,source"));
    assert!(dir.path().join("replay/replay.txt").exists());

    let metrics = out.join("metrics.csv");
    assert!(run(&["plot", "--metrics", metrics.to_str().unwrap(), "--out", &p("m.svg")]).status.success());
    assert!(std::fs::read_to_string(dir.path().join("m.svg")).unwrap().contains("<svg"));

    // A checkpoint from one layout does not fit another.
    let other = run(&["novelty-map", "--env", "four_rooms", "--checkpoint", ckpt, "--out", &p("x")]);
    assert_eq!(other.status.code(), Some(2));
}

#[test]
fn killed_run_leaves_a_parseable_prefix() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend(&SMALL[..6]);
    args.extend(["--set", "NumUpdate=100000"]);
    let mut child = bin().args(&args).stdout(Stdio::null()).stderr(Stdio::null()).spawn().unwrap();
    let metrics = out.join("metrics.csv");
    let started = Instant::now();
    loop {
        let rows = std::fs::read_to_string(&metrics).map(|m| data_rows(&m).len()).unwrap_or(0);
        if rows >= 3 {
            break;
        }
        assert!(started.elapsed() < Duration::from_secs(120), "no rows appeared");
        std::thread::sleep(Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert!(text.ends_with('\n'));
    let width = text.lines().nth(1).unwrap().split(',').count();
    for (i, row) in data_rows(&text).iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), width);
        assert_eq!(fields[0].parse::<usize>().unwrap(), i + 1);
        // Losses of modules that have not trained yet are left empty.
        assert!(fields.iter().all(|f| f.is_empty() || f.parse::<f64>().is_ok()));
    }
}

#[test]
fn failed_run_marks_its_manifest() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("run");
    // A directory where the episode log should go makes the final write fail.
    std::fs::create_dir_all(out.join("episodes.csv")).unwrap();
    let result = train_small(&out, &[]);
    assert_eq!(result.status.code(), Some(2));
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\""));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(data_rows(&metrics).len(), 3);
}
