use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn sgraft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgraft")).args(args).output().expect("spawn sgraft")
}

fn ok(args: &[&str]) -> String {
    let out = sgraft(args);
    assert!(
        out.status.success(),
        "sgraft {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = sgraft(args);
    assert!(!out.status.success(), "sgraft {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small generated-data flags shared by the training commands.
const TINY: &[&str] = &[
    "--classes", "3", "--per-class", "10", "--test-per-class", "2", "--image-size", "16", "--batch-size", "8",
];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_owned(args: &[String]) -> String {
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn lambda_rows(csv: &str) -> Vec<(Option<f64>, f64)> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[5].parse().ok(), f[6].parse().unwrap())
        })
        .collect()
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["gen-data", "--classes", "10", "--per-class", "100", "--seed", "7", "--image-size", "16", "--out", p(dir)]);
    }
    let labels = fs::read_to_string(a.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 1001);
    for f in ["images.sgt", "masks.sgt", "labels.csv", "meta.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_data_empty_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("empty");
    ok(&["gen-data", "--per-class", "0", "--out", p(&dir)]);
    assert_eq!(fs::read_to_string(dir.join("labels.csv")).unwrap(), "index,label\n");
}

/// Returns the echoed config and the per-pair coefficients.
fn augment(extra: &[&str]) -> (String, Vec<(Option<f64>, f64)>) {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("prev");
    let mut args = vec!["augment".to_string()];
    args.extend(with(TINY, extra));
    args.extend(["--out".to_string(), p(&out).to_string()]);
    let stdout = run_owned(&args);
    assert!(out.join("preview.png").exists());
    (stdout, lambda_rows(&fs::read_to_string(out.join("lambdas.csv")).unwrap()))
}

#[test]
fn augment_vanilla_keeps_images() {
    let (stdout, rows) = augment(&["--strategy", "vanilla", "--pairs", "4"]);
    assert!(stdout.contains("strategy = \"vanilla\""));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|&(s, a)| s == Some(1.0) && a == 1.0));
}

#[test]
fn augment_full_mask_pastes_source() {
    let (_, rows) = augment(&["--p-b", "1.0", "--sigma", "0"]);
    assert!(rows.iter().all(|&(s, a)| s == Some(1.0) && a == 1.0), "{rows:?}");
}

#[test]
fn augment_default_lambdas_in_range() {
    let (_, rows) = augment(&["--pairs", "8"]);
    assert_eq!(rows.len(), 8);
    for (s, a) in rows {
        let s = s.unwrap();
        assert!((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&a));
    }
}

#[test]
fn augment_missing_dataset_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("prev");
    let err = fails(&["augment", "--data", p(&tmp.path().join("nope")), "--out", p(&out)]);
    assert!(err.contains("does not exist"), "{err}");
    assert!(!out.exists());
}

#[test]
fn train_on_hundred_images_is_fast_and_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-data", "--classes", "10", "--per-class", "10", "--image-size", "32", "--out", p(&data)]);
    let mut metrics = Vec::new();
    for run in ["r1", "r2"] {
        let out = tmp.path().join(run);
        let start = Instant::now();
        let stdout = ok(&[
            "train", "--strategy", "saliency_grafting", "--epochs", "1", "--warmup", "0", "--data", p(&data),
            "--test-per-class", "2", "--seed", "3", "--out", p(&out),
        ]);
        assert!(start.elapsed().as_secs() < 60);
        assert!(stdout.contains("epochs = 1"));
        let dirs: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
        assert_eq!(dirs.len(), 1);
        for f in ["config.toml", "metrics.csv", "model.sgt"] {
            assert!(dirs[0].join(f).exists(), "{f}");
        }
        metrics.push(fs::read(dirs[0].join("metrics.csv")).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
}

#[test]
fn eval_and_occlude_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let mut args = vec!["train".to_string()];
    args.extend(with(TINY, &["--epochs", "2", "--out", p(&runs)]));
    run_owned(&args);
    let dir = fs::read_dir(&runs).unwrap().next().unwrap().unwrap().path();
    let ckpt = dir.join("model.sgt");

    let mut args = vec!["eval".to_string()];
    args.extend(with(TINY, &["--checkpoint", p(&ckpt)]));
    let csv = run_owned(&args);
    assert!(csv.starts_with("split,count,top1,top5,loss\ntest,6,"), "{csv}");

    let out = tmp.path().join("occ");
    let mut args = vec!["occlude".to_string()];
    args.extend(with(TINY, &["--checkpoint", p(&ckpt), "--out", p(&out)]));
    let csv = run_owned(&args);
    assert!(csv.starts_with("k=0%,k=12.5%,k=25%\n"));
    assert_eq!(fs::read_to_string(out.join("occlusion.csv")).unwrap(), csv);

    let mut args = vec!["eval".to_string()];
    args.extend(with(TINY, &["--classes", "2", "--checkpoint", p(&ckpt)]));
    let err = fails(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(err.contains("classes"), "{err}");
}

#[test]
fn eval_missing_checkpoint_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eval");
    let err = fails(&["eval", "--checkpoint", p(&tmp.path().join("missing.sgt")), "--out", p(&out)]);
    assert!(err.contains("missing.sgt"), "{err}");
    assert!(!out.exists());
}

#[test]
fn ablate_writes_three_row_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("abl");
    let mut args = vec!["ablate".to_string()];
    args.extend(with(
        TINY,
        &["--seeds", "3", "--epochs", "2", "--warmup", "1", "--jobs", "2", "--calibration-maps", "6", "--out", p(&out)],
    ));
    run_owned(&args);
    let table = fs::read_to_string(out.join("ablation_table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4, "{table}");
    assert!(lines[1].starts_with("Deterministic + area labels"));
    assert!(lines[3].starts_with("Stochastic + saliency labels"));
}

#[test]
fn fidelity_reports_oracle_rows() {
    let mut args = vec!["fidelity".to_string()];
    args.extend(with(TINY, &["--pairs", "50"]));
    let csv = run_owned(&args);
    assert!(csv.contains("\noracle,") && csv.contains("\noracle-blurred,"), "{csv}");
}

#[test]
fn config_file_is_strict_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    fs::write(&cfg, "epochs = 3\nlr = 0.02\n[graft]\ntemperature = 0.3\n").unwrap();
    let out = tmp.path().join("prev");
    let mut args = vec!["augment".to_string(), "--config".into(), p(&cfg).into()];
    args.extend(with(TINY, &["--epochs", "9", "--out", p(&out)]));
    let echoed = run_owned(&args);
    assert!(echoed.contains("epochs = 9"));
    assert!(echoed.contains("lr = 0.02"));
    assert!(echoed.contains("temperature = 0.3"));

    fs::write(&cfg, "epochs = 3\nlearning_rate = 0.1\n").unwrap();
    let err = fails(&["train", "--config", p(&cfg), "--out", p(&tmp.path().join("r"))]);
    assert!(err.contains("learning_rate"), "{err}");
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn invalid_combinations_rejected_before_compute() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let err = fails(&["train", "--strategy", "mixup", "--label-mode", "saliency", "--out", p(&out)]);
    assert!(err.contains("mixup"), "{err}");
    fails(&["train", "--scales", "4x0", "--out", p(&out)]);
    fails(&["train", "--scarcity", "1.5", "--out", p(&out)]);
    assert!(!out.exists());
}

#[test]
fn help_lists_flags_and_unknown_flags_fail() {
    let help = ok(&["train", "--help"]);
    for flag in [
        "--strategy", "--label-mode", "--saliency", "--alpha", "--temperature", "--sigma", "--scales", "--warmup",
        "--k-augments", "--epochs", "--batch-size", "--lr", "--seed", "--scarcity", "--config", "--out",
    ] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
    assert!(ok(&["ablate", "--help"]).contains("--jobs"));
    let err = fails(&["train", "--bogus"]);
    assert!(err.contains("--bogus"));
}
