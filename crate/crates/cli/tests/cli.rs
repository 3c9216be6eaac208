//! Exit codes, written artifacts and rendered reports of the binary.

use std::path::Path;
use std::process::{Command, Output};

fn afsd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afsd")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn invalid_config_exits_with_one_and_names_the_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let o = afsd(&[
        "--out-dir",
        p(tmp.path()),
        "--set",
        "train.lr=-1",
        "--set",
        "model.channels=7",
        "synth",
    ]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("train.lr") && err.contains("model.groups"), "{err}");

    let o = afsd(&["--out-dir", p(tmp.path()), "--set", "train.nonsense=1", "synth"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_checkpoint_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(
        code(&afsd(&[
            "--out-dir",
            p(&data),
            "--set",
            "synth.train_videos=2",
            "synth"
        ])),
        0
    );
    let o = afsd(&[
        "--out-dir",
        p(tmp.path()),
        "infer",
        "--data",
        p(&data),
        "--checkpoint",
        p(&tmp.path().join("nowhere")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no checkpoint"));
}

#[test]
fn short_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let small = [
        "--set",
        "synth.train_videos=3",
        "--set",
        "synth.test_videos=2",
        "--set",
        "model.channels=16",
        "--set",
        "model.num_levels=3",
        "--set",
        "train.epochs=2",
        "--set",
        "train.lr=1e-3",
    ];
    let run = |out: &Path, rest: &[&str]| {
        let mut args = vec!["--out-dir", p(out)];
        args.extend_from_slice(&small);
        args.extend_from_slice(rest);
        let o = afsd(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let (data, train, infer, eval, report) = (
        root.join("data"),
        root.join("train"),
        root.join("infer"),
        root.join("eval"),
        root.join("report"),
    );
    run(&data, &["synth"]);
    assert!(data.join("annotations.json").is_file());
    run(&train, &["--stream", "both", "train", "--data", p(&data)]);
    for stream in ["rgb", "flow"] {
        for f in [
            "model.ckpt",
            "epoch_001.ckpt",
            "epoch_002.ckpt",
            "train_log.jsonl",
            "train_summary.json",
        ] {
            assert!(train.join(stream).join(f).is_file(), "{stream}/{f}");
        }
    }
    run(
        &infer,
        &[
            "--stream",
            "both",
            "infer",
            "--data",
            p(&data),
            "--checkpoint",
            p(&train),
        ],
    );
    let dets = infer.join("detections.jsonl");
    let table = run(&eval, &["eval", "--data", p(&data), "--detections", p(&dets)]);
    assert!(table.starts_with("tIoU") && table.contains("mAP"), "{table}");
    assert_eq!(std::fs::read_to_string(eval.join("report.txt")).unwrap(), table);
    let log = train.join("rgb/train_log.jsonl");
    run(
        &report,
        &["report", "--log", p(&log), "--detections", p(&dets), "--data", p(&data)],
    );
    for f in ["loss_curves.svg", "pr_curves.svg"] {
        let svg = std::fs::read_to_string(report.join(f)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<text"), "{f}");
    }
    for dir in [&data, &train, &infer, &eval, &report] {
        assert!(dir.join("config.resolved.toml").is_file());
    }
    run(
        &root.join("bench"),
        &["bench", "--checkpoint", p(&train), "--clips", "2"],
    );
    assert!(root.join("bench/bench.json").is_file());
}
