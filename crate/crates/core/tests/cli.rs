use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use subcat::pipeline::{run_eval, RunConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subcat"))
}

fn code(args: &[&str]) -> i32 {
    let out = bin().args(args).output().unwrap();
    out.status.code().unwrap()
}

/// Every non-plot output file under `dir`, keyed by relative path.
fn outputs(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x != "svg" && x != "png") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const TINY: &[&str] = &[
    "--set", "synth_train.n_images=24",
    "--set", "synth_test.n_images=8",
    "--set", "resolutions=1",
    "--set", "cluster.b=2",
    "--set", "train.tree_schedule=[8,16]",
    "--set", "train.n_random_neg=300",
    "--set", "train.mining_rounds=1",
    "--set", "orientation.bins=4",
];

fn tiny(root: &Path, cmd: &str, out: &str, extra: &[&str]) -> std::process::Output {
    let train = root.join("data/train");
    let test = root.join("data/test");
    let mut c = bin();
    c.arg(cmd)
        .args(TINY)
        .arg("--set").arg(format!("train_dir={}", train.display()))
        .arg("--set").arg(format!("test_dir={}", test.display()))
        .arg("--out").arg(root.join(out))
        .args(extra);
    c.output().unwrap()
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["eval", "--set", "no.such.key=1"]), 2);
    assert_eq!(code(&["eval", "--set", "resolutions=2"]), 2);
    assert_eq!(code(&["eval", "--config", "/nonexistent/run.json"]), 2);
    let out = bin().args(["eval"]).env("SUBCAT_WORKERS", "many").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_label_dir_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["eval", "--set"])
        .arg(format!("test_dir={}", dir.path().join("absent").display()))
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn empty_image_dir_detects_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(tiny(root, "synth", "out", &[]).status.success());
    assert!(tiny(root, "cluster", "out", &[]).status.success());
    assert!(tiny(root, "train", "out", &[]).status.success());
    let empty = root.join("empty");
    std::fs::create_dir_all(empty.join("image_2")).unwrap();
    std::fs::create_dir_all(empty.join("label_2")).unwrap();
    let out = tiny(root, "detect", "out", &["--set", &format!("test_dir={}", empty.display())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 detections in 0 images"));
}

#[test]
fn pipeline_is_idempotent_and_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let s = tiny(root, "synth", "out1", &[]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let a = tiny(root, "all", "out1", &["--workers", "1"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let first = outputs(&root.join("out1"));
    assert!(first.keys().any(|k| k.starts_with("models")));
    assert!(first.keys().any(|k| k.starts_with("eval")));

    // rerun in place, and again with more workers
    assert!(tiny(root, "all", "out1", &["--workers", "1"]).status.success());
    assert_eq!(first, outputs(&root.join("out1")));
    assert!(tiny(root, "all", "out2", &["--workers", "3"]).status.success());
    assert_eq!(first, outputs(&root.join("out2")));

    // results missing for an image count as zero detections
    let cfg = RunConfig::default()
        .with_overrides(&[
            format!("test_dir={}", root.join("data/test").display()),
            format!("out_dir={}", root.join("out1").display()),
        ])
        .unwrap();
    let before = run_eval(&cfg).unwrap();
    let victim = std::fs::read_dir(cfg.results_dir()).unwrap().next().unwrap().unwrap().path();
    std::fs::remove_file(&victim).unwrap();
    let after = run_eval(&cfg).unwrap();
    assert_eq!(before.results.len(), after.results.len());
    for (b, a) in before.results.iter().zip(&after.results) {
        assert!(a.ap <= b.ap + 1e-12);
        assert!(a.n_detections <= b.n_detections);
    }
}

#[test]
fn shipped_defaults_match_the_code() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/defaults.json");
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::default());
}
