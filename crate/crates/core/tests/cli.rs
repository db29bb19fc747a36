use std::path::Path;
use std::process::{Command, Output};

fn relightkit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relightkit"))
        .args(args)
        .current_dir(cwd)
        .env("RELIGHTKIT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn synth<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["synth-capture", "--image-size", "16", "--lights", "6"];
    v.extend_from_slice(extra);
    v
}

#[test]
fn manifest_counts_two_roles_per_pair_and_camera() {
    let dir = tempfile::tempdir().unwrap();
    let o = relightkit(
        &synth(&["--pairs", "3", "--cameras", "2", "--out", "cap"]),
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("cap/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 12);
    assert!(dir.path().join("cap/run.json").is_file());
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.toml"),
        "[synth-capture]\npairs = 2\ncameras = 1\nimage_size = 16\nlights = 6\n",
    )
    .unwrap();
    let o = relightkit(
        &["--config", "cfg.toml", "synth-capture", "--out", "a"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("a/manifest.jsonl"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    let o = relightkit(
        &[
            "--config",
            "cfg.toml",
            "synth-capture",
            "--pairs",
            "3",
            "--out",
            "b",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("b/manifest.jsonl"))
            .unwrap()
            .lines()
            .count(),
        6
    );

    std::fs::write(dir.path().join("bad.toml"), "[synth-capture]\npairz = 2\n").unwrap();
    let o = relightkit(
        &["--config", "bad.toml", "synth-capture", "--out", "c"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("pairz"));
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&relightkit(&["no-such-command"], dir.path())), 2);
    assert_eq!(code(&relightkit(&["synth-capture"], dir.path())), 2);
    assert_eq!(code(&relightkit(&["--help"], dir.path())), 0);

    let o = relightkit(&["preprocess", "--in", "missing"], dir.path());
    assert_eq!(code(&o), 3);
    assert_eq!(String::from_utf8_lossy(&o.stderr).trim().lines().count(), 1);

    let o = relightkit(
        &synth(&["--pairs", "4", "--cameras", "1", "--out", "cap"]),
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let o = relightkit(
        &[
            "adapt",
            "--mode",
            "scratch",
            "--subject",
            "cap",
            "--steps",
            "6",
            "--batch",
            "2",
            "--lr",
            "1e30",
            "--out",
            "m.ckpt",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("m.ckpt").exists());
}

#[test]
fn refuses_to_replace_foreign_directories() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("mine")).unwrap();
    std::fs::write(dir.path().join("mine/notes.txt"), "keep me").unwrap();
    let o = relightkit(
        &synth(&["--pairs", "1", "--cameras", "1", "--out", "mine"]),
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(dir.path().join("mine/notes.txt").is_file());
}

#[test]
fn resume_continues_to_the_same_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&relightkit(
            &synth(&["--pairs", "4", "--cameras", "1", "--out", "cap"]),
            d
        )),
        0
    );
    let common = [
        "adapt",
        "--mode",
        "scratch",
        "--subject",
        "cap",
        "--batch",
        "2",
    ];
    let run = |extra: &[&str]| {
        let mut args = common.to_vec();
        args.extend_from_slice(extra);
        let o = relightkit(&args, d);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["--steps", "4", "--out", "straight.ckpt"]);
    run(&["--steps", "2", "--out", "half.ckpt"]);
    run(&[
        "--steps",
        "4",
        "--resume",
        "half.ckpt",
        "--out",
        "resumed.ckpt",
    ]);
    let a = std::fs::read(d.join("straight.ckpt")).unwrap();
    let b = std::fs::read(d.join("resumed.ckpt")).unwrap();
    assert_eq!(a, b);
}
