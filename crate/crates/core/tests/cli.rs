use std::path::Path;
use std::process::{Command, Output};

fn oncovit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oncovit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = oncovit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_for_every_subcommand() {
    let top = ok(&["--help"]);
    for sub in ["gen-synthetic", "split", "gradcheck", "pretrain", "finetune", "evaluate", "compare"] {
        assert!(top.contains(sub), "{sub} missing from top-level help");
        let help = ok(&[sub, "--help"]);
        for flag in ["--seed", "--out", "--config"] {
            assert!(help.contains(flag), "{sub} help lacks {flag}");
        }
    }
    assert!(ok(&["finetune", "--help"]).contains("--freeze-backbone"));
    assert!(ok(&["compare", "--help"]).contains("--parallel"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = oncovit(&["trane"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(oncovit(&["pretrain", "--epochs", "many"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let out = oncovit(&["split", "--manifest", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn gradcheck_reports_error() {
    let out = ok(&["gradcheck", "--model", "vit", "--seed", "1"]);
    let line = out.lines().find(|l| l.starts_with("max_rel_err=")).unwrap();
    let err: f64 = line["max_rel_err=".len()..].parse().unwrap();
    assert!(err < 1e-3, "{out}");
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p);
    ok(&["gen-synthetic", "--per-class", "10", "--image-size", "16", "--seed", "4", "--out", s(&d("data"))]);
    let split = ok(&["split", "--manifest", s(&d("data/manifest.txt")), "--out", s(&d("split"))]);
    assert_eq!(split.trim(), "train=24 val=3 test=3");
    let (train, val) = (d("split/train.txt"), d("split/val.txt"));
    let common = ["--epochs", "2", "--batch-size", "8", "--seed", "4"];
    let pre = d("pre");
    let mut args = vec!["pretrain", "--model", "vit", "--image-size", "16"];
    args.extend(["--train", s(&train), "--val", s(&val), "--out", s(&pre)]);
    args.extend(common);
    ok(&args);
    let csv = std::fs::read_to_string(pre.join("pretrain_metrics.csv")).unwrap();
    assert!(csv.starts_with("model,dataset,epoch,split,accuracy,loss\n"));
    assert_eq!(csv.lines().filter(|l| l.contains(",val,")).count(), 2);

    let (ck, ft) = (pre.join("pretrained.ovck"), d("ft"));
    let mut args = vec!["finetune", "--checkpoint", s(&ck), "--freeze-backbone"];
    args.extend(["--train", s(&train), "--val", s(&val), "--out", s(&ft)]);
    args.extend(common);
    ok(&args);
    let eval = ok(&[
        "evaluate",
        "--checkpoint",
        s(&d("ft/finetuned.ovck")),
        "--manifest",
        s(&d("split/test.txt")),
    ]);
    assert!(eval.contains("samples=3"), "{eval}");
    assert!(eval.contains("accuracy="), "{eval}");
    assert_eq!(eval.lines().filter(|l| l.starts_with("  ")).count(), 3);
}

#[test]
fn seeded_runs_are_byte_identical() {
    let run = |dir: &Path| {
        ok(&[
            "compare",
            "--models",
            "vgg-mini,vit",
            "--image-size",
            "16",
            "--per-class",
            "6",
            "--epochs",
            "2",
            "--batch-size",
            "8",
            "--seed",
            "9",
            "--out",
            s(dir),
        ]);
        (
            std::fs::read(dir.join("comparison.csv")).unwrap(),
            std::fs::read(dir.join("summary.txt")).unwrap(),
        )
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run(a.path());
    assert_eq!(first, run(b.path()));
    let csv = String::from_utf8(first.0).unwrap();
    assert!(csv.contains("# best val accuracy:"), "{csv}");
}

#[test]
fn config_file_values_are_applied_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.ini");
    std::fs::write(&cfg, "[run]\nseed = 5\n[train]\nepochs = 7\n").unwrap();
    ok(&["gen-synthetic", "--config", s(&cfg), "--per-class", "2", "--image-size", "8", "--out", s(&dir.path().join("a"))]);
    ok(&["gen-synthetic", "--seed", "5", "--per-class", "2", "--image-size", "8", "--out", s(&dir.path().join("b"))]);
    let img = |p: &str| std::fs::read(dir.path().join(p).join("images/00000.ppm")).unwrap();
    assert_eq!(img("a"), img("b"));
    std::fs::write(&cfg, "[train]\nepoch = 7\n").unwrap();
    assert_eq!(oncovit(&["gradcheck", "--config", s(&cfg)]).status.code(), Some(1));
}
