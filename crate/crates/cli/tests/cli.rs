use std::path::Path;
use std::process::{Command, Output};

fn flowinv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowinv"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train_small(dir: &Path, name: &str) {
    let out = format!("runs/{name}");
    let o = flowinv(
        &["train", "--seed", "7", "--out", &out, "--iterations", "40"],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn train_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path(), "a");
    train_small(dir.path(), "b");
    for file in ["model.finv", "loss.csv"] {
        let a = std::fs::read(dir.path().join("runs/a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("runs/b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn recon_table_has_four_config_rows() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path(), "a");
    let o = flowinv(
        &[
            "experiment",
            "recon-table",
            "--ckpt",
            "runs/a/model.finv",
            "--trials",
            "3",
            "--seed",
            "3",
            "--steps",
            "8",
            "--out",
            "runs/r",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("runs/r/recon_table.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "config,l1_mean,l1_std");
    let configs: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        configs,
        [
            "euler+approximate",
            "nti+approximate",
            "euler+empty",
            "nti+empty"
        ]
    );
}

#[test]
fn edit_writes_report_schedule_and_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path(), "a");
    let o = flowinv(
        &[
            "edit",
            "--ckpt",
            "runs/a/model.finv",
            "--seed",
            "1",
            "--source-token",
            "5",
            "--edit-token",
            "9",
            "--nti",
            "--steps",
            "10",
            "--out",
            "runs/e",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("runs/e");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("edit.json")).unwrap()).unwrap();
    assert_eq!(report["request"]["edit_token"], 9);
    assert_eq!(report["request"]["use_nti"], true);
    assert!(report["reconstruction_l1"].as_f64().unwrap() >= 0.0);
    assert!(out.join("null_schedule.finv").exists());
    let csv = std::fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert!(csv.starts_with("run_id,direction,step,t,velocity_norm\n"));
    // 3 runs x 11 records + header
    assert_eq!(csv.lines().count(), 34);
}

#[test]
fn no_nti_skips_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path(), "a");
    let o = flowinv(
        &[
            "edit",
            "--ckpt",
            "runs/a/model.finv",
            "--seed",
            "1",
            "--source-token",
            "5",
            "--edit-token",
            "9",
            "--no-nti",
            "--steps",
            "5",
            "--out",
            "runs/e",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!dir.path().join("runs/e/null_schedule.finv").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowinv(&["train", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o)
        .lines()
        .any(|l| l.starts_with("error: kind=usage msg=")));

    let o = flowinv(&["train", "--iterations", "1"], dir.path());
    assert_eq!(o.status.code(), Some(1), "missing seed");
    assert!(stderr(&o).contains("--seed"));

    train_small(dir.path(), "a");
    let o = flowinv(
        &[
            "edit",
            "--ckpt",
            "runs/a/model.finv",
            "--seed",
            "1",
            "--source-token",
            "5",
            "--edit-token",
            "0",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.finv"), b"FINV\x01").unwrap();
    let o = flowinv(&["inspect", "--ckpt", "bad.finv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error: kind=corrupt_file msg="), "{err}");

    train_small(dir.path(), "a");
    let o = flowinv(
        &[
            "invert",
            "--ckpt",
            "runs/a/model.finv",
            "--seed",
            "1",
            "--source-token",
            "5",
            "--token",
            "999",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: kind=token_range"));
}

#[test]
fn help_lists_default_hyperparameters() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in [
        &["edit"][..],
        &["reconstruct"],
        &["experiment", "recon-table"],
    ] {
        let mut args = cmd.to_vec();
        args.push("--help");
        let o = flowinv(&args, dir.path());
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        for needle in [
            "[default: 5]",
            "[default: 50]",
            "[default: 0.0001]",
            "[default: 10]",
        ] {
            assert!(text.contains(needle), "{cmd:?} help lacks {needle}");
        }
    }
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path(), "a");
    std::fs::write(
        dir.path().join("run.toml"),
        "seed = 4\nckpt = \"runs/a/model.finv\"\nout = \"runs/cfg\"\nsteps = 6\n",
    )
    .unwrap();
    let o = flowinv(
        &["invert", "--config", "run.toml", "--source-token", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("runs/cfg/inversion.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(v["steps"], 6);

    std::fs::write(dir.path().join("typo.toml"), "sead = 4\n").unwrap();
    let o = flowinv(
        &["invert", "--config", "typo.toml", "--source-token", "2"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reconstruct_with_nti_writes_schedule() {
    let dir = tempfile::tempdir().unwrap();
    train_small(dir.path(), "a");
    let o = flowinv(
        &[
            "reconstruct",
            "--ckpt",
            "runs/a/model.finv",
            "--seed",
            "2",
            "--source-token",
            "3",
            "--nti",
            "--steps",
            "6",
            "--out",
            "runs/rec",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("runs/rec");
    assert!(out.join("null_schedule.finv").exists());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("reconstruction.json")).unwrap())
            .unwrap();
    assert_eq!(v["use_nti"], true);
}
