use std::path::Path;
use std::process::{Command, Output};

fn fcd(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_fcd"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    out
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = fcd(args, cwd);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY: [&str; 10] = [
    "--set",
    "encoder.stage_channels=8,12,16,24",
    "--set",
    "encoder.blocks_per_stage=1",
    "--set",
    "decoder.width=8",
    "--set",
    "cmla.dim=16",
    "--set",
    "epochs=1",
];

#[test]
fn synth_train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &[
            "make-synth",
            "--out",
            "data",
            "--samples",
            "2",
            "--test",
            "2",
            "--patch",
            "64",
        ],
        d,
    );
    assert!(d.join("data/train/A/s00000.png").is_file());
    assert!(d.join("data/train/prompts.json").is_file());

    let mut args = vec!["train", "--preset", "synthetic", "--data", "data", "--out", "run"];
    args.extend(TINY);
    ok(&args, d);
    for f in ["best.ckpt", "last.ckpt", "config.txt", "train_log.json"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }

    ok(
        &[
            "eval",
            "--ckpt",
            "run/best.ckpt",
            "--data",
            "data",
            "--report",
            "rep.json",
            "--oracle",
        ],
        d,
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("rep.json")).unwrap()).unwrap();
    assert_eq!(report["f1"], 1.0);
    assert_eq!(report["sek"], 1.0);

    ok(
        &[
            "predict",
            "--ckpt",
            "run/best.ckpt",
            "--t1",
            "data/test/A/s00002.png",
            "--t2",
            "data/test/B/s00002.png",
            "--prompt",
            r#"{"scene": "farmland"}"#,
            "--out",
            "pred.png",
        ],
        d,
    );
    assert!(d.join("pred.png").is_file());

    let n: usize = ok(&["params", "--ckpt", "run/best.ckpt"], d).trim().parse().unwrap();
    let mut args = vec!["params", "--preset", "synthetic"];
    args.extend(&TINY[..8]);
    let m: usize = ok(&args, d).trim().parse().unwrap();
    assert_eq!(n, m);
}

#[test]
fn config_output_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(
        &["config", "--preset", "synthetic", "--set", "loss.tau=0.85"],
        dir.path(),
    );
    std::fs::write(dir.path().join("c.txt"), &text).unwrap();
    assert_eq!(ok(&["config", "--config", "c.txt"], dir.path()), text);
    assert!(text.contains("loss.tau = 0.85\n"));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = fcd(&["config", "--set", "epochs=0"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));
    assert!(!fcd(
        &["eval", "--ckpt", "missing.ckpt", "--data", ".", "--report", "r.json"],
        dir.path()
    )
    .status
    .success());
}
