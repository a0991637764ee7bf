use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sem(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sem"));
    cmd.args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SEM_DATA_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn sem")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &str = "\
# tiny synthetic run
dataset = synthetic
attention = sem
epochs = 1
batch_size = 16
eval_batch_size = 16
milestones =
synthetic_train = 32
synthetic_test = 16
";

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.txt");
    fs::write(
        &path,
        format!("{SMALL}output_dir = {}\n", dir.join("run").display()),
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn train_then_eval_and_export() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = sem(&["train", "--config", &cfg], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("test_top1"));
    let run = tmp.path().join("run");
    for f in [
        "config.txt",
        "metrics.jsonl",
        "timing.jsonl",
        "final.ckpt",
        "best.ckpt",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let resolved = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(resolved.contains("attention=sem\n") && resolved.contains("momentum=0.9\n"));

    let ckpt = run.join("final.ckpt").display().to_string();
    let a = sem(
        &[
            "eval",
            "--config",
            &cfg,
            "--checkpoint",
            &ckpt,
            "--batch-size",
            "3",
        ],
        &[],
    );
    let b = sem(&["eval", "--config", &cfg, "--checkpoint", &ckpt], &[]);
    assert_eq!(code(&a), 0);
    let top1 = |o: &Output| stdout(o).split_whitespace().nth(1).unwrap().to_string();
    assert_eq!(top1(&a), top1(&b));

    let csv1 = sem(
        &["export-decisions", "--config", &cfg, "--checkpoint", &ckpt],
        &[],
    );
    let file = tmp.path().join("dec.csv");
    let csv2 = sem(
        &[
            "export-decisions",
            "--config",
            &cfg,
            "--checkpoint",
            &ckpt,
            "--output",
            file.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&csv1), 0);
    assert_eq!(code(&csv2), 0);
    assert_eq!(stdout(&csv1).into_bytes(), fs::read(&file).unwrap());
    assert_eq!(stdout(&csv1).lines().count(), 7);
}

#[test]
fn set_overrides_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out_dir = tmp.path().join("zero");
    let out = sem(
        &[
            "train",
            "--config",
            &cfg,
            "--set",
            "epochs=0",
            "--set",
            &format!("output_dir={}", out_dir.display()),
        ],
        &[],
    );
    assert_eq!(code(&out), 0);
    assert!(out_dir.join("initial.ckpt").exists());
    assert_eq!(fs::read(out_dir.join("metrics.jsonl")).unwrap(), b"");
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    for args in [
        vec!["train", "--config", &cfg, "--set", "nonsense=1"],
        vec!["train", "--config", &cfg, "--set", "epochs"],
        vec!["train", "--config", &cfg, "--set", "depth=21"],
        vec!["gradcheck", "--scope", "no-such-op"],
        vec!["ablate", "--config", &cfg, "--which", "bogus"],
        vec!["frobnicate"],
    ] {
        let out = sem(&args, &[]);
        assert_eq!(
            code(&out),
            2,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    // plain checkpoint has no decision networks
    let plain = tmp.path().join("plain");
    let out = sem(
        &[
            "train",
            "--config",
            &cfg,
            "--set",
            "attention=none",
            "--set",
            "epochs=0",
            "--set",
            &format!("output_dir={}", plain.display()),
        ],
        &[],
    );
    assert_eq!(code(&out), 0);
    let ckpt = plain.join("initial.ckpt").display().to_string();
    let out = sem(
        &["export-decisions", "--config", &cfg, "--checkpoint", &ckpt],
        &[],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = sem(
        &["train", "--config", &cfg, "--set", "dataset=cifar10"],
        &[("SEM_DATA_DIR", tmp.path())],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let out = sem(
        &["train", "--config", &cfg, "--set", "dataset=cifar10"],
        &[],
    );
    assert_eq!(code(&out), 3);

    let bad = tmp.path().join("bad.ckpt");
    fs::write(&bad, b"SEMCKPT1 definitely not a checkpoint").unwrap();
    let out = sem(
        &[
            "eval",
            "--config",
            &cfg,
            "--checkpoint",
            bad.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("integrity"));
}

#[test]
fn numerical_failures_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = sem(
        &[
            "train", "--config", &cfg, "--set", "lr=1e30", "--set", "epochs=3",
        ],
        &[],
    );
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));

    let out = sem(&["gradcheck", "--scope", "switch", "--tolerance", "0"], &[]);
    assert_eq!(code(&out), 4);
}

#[test]
fn gradcheck_passes_and_lists_scopes() {
    let out = sem(&["gradcheck", "--scope", "sem-layer"], &[]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).lines().count() >= 5);
    assert!(!stdout(&out).contains("FAIL"));
    let list = stdout(&sem(&["gradcheck", "--scope", "list"], &[]));
    assert!(list.lines().any(|l| l == "switch") && list.lines().any(|l| l == "full-block"));
}

#[test]
fn random_ops_and_ablate_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = sem(
        &[
            "random-ops",
            "--config",
            &cfg,
            "--arity",
            "2",
            "--trials",
            "1",
            "--set",
            "max_steps=1",
        ],
        &[],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("trial,assignment_seed,test_top1,assignment\n"));
    assert!(tmp.path().join("run/trial_0/assignment.txt").exists());

    let out = sem(
        &[
            "ablate",
            "--config",
            &cfg,
            "--which",
            "no_augment",
            "--set",
            "max_steps=1",
        ],
        &[],
    );
    assert_eq!(code(&out), 0);
    let table = stdout(&out);
    assert_eq!(table.lines().count(), 3);
    assert_eq!(
        table,
        fs::read_to_string(tmp.path().join("run/ablation.csv")).unwrap()
    );
}
