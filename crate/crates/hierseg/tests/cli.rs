use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use hierseg::checkpoint;
use hierseg::commands::{cmd_crossval, cmd_eval, cmd_phantom, cmd_preprocess, cmd_train, LAST_CHECKPOINT};
use hierseg::config::{parse_override, RunConfig};
use hierseg::nifti_io::{load_scan, save_scan, write_mask, write_volume};
use hierseg::pipeline::{sha256_file, MANIFEST_FILE};
use hierseg::Error;
use hierseg_core::phantom::make_phantom;
use hierseg_core::{BinaryMask, Volume};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hierseg"));
    c.env("RUST_LOG", "warn");
    c
}

fn cfg(overrides: &[&str]) -> RunConfig {
    let o: Vec<_> = overrides.iter().map(|s| parse_override(s).unwrap()).collect();
    RunConfig::resolve(None, &o).unwrap()
}

fn nifti_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".nii.gz"))
        .collect();
    v.sort();
    v
}

/// Small desk settings: 32×32×16 scans, a handful of epochs.
const SMALL: &[&str] = &[
    "model.variant=baseline-light",
    "phantom.extents=[32, 32, 16]",
    "train.crop=[32, 32, 16]",
    "infer.window=[32, 32, 16]",
    "train.epochs=2",
];

#[test]
fn phantom_files_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let c = cfg(&["phantom.n=4", "phantom.extents=[16, 16, 16]"]);
    cmd_phantom(&c, &a).unwrap();
    cmd_phantom(&c, &b).unwrap();
    let (fa, fb) = (nifti_files(&a), nifti_files(&b));
    assert_eq!(fa.len(), 8);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    assert_eq!(RunConfig::load(&a.join("config.toml")).unwrap(), c);
}

#[test]
fn phantom_edge_cases_via_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("none");
    let st = bin().args(["phantom", "--n", "0", "--out"]).arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(nifti_files(&out).is_empty());

    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let st = bin()
        .args(["phantom", "--n", "1", "--out"])
        .arg(blocker.join("sub"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn mask_coercion_and_extent_checks() {
    let dir = tempfile::tempdir().unwrap();
    let img = Volume::from_fn(1, [8, 8, 8], [1.0; 3], |_, p| p[0] as f32).unwrap();
    let ras = "RAS".parse().unwrap();
    write_volume(&dir.path().join("i.nii.gz"), &img, ras).unwrap();
    let labels = Volume::from_fn(1, [8, 8, 8], [1.0; 3], |_, p| if p[2] > 3 { 2.0 } else { 0.0 }).unwrap();
    write_volume(&dir.path().join("m.nii.gz"), &labels, ras).unwrap();
    let s = load_scan("x", &dir.path().join("i.nii.gz"), Some(&dir.path().join("m.nii.gz"))).unwrap();
    let m = s.mask.unwrap();
    assert!(m.data().iter().all(|&v| v <= 1));
    assert_eq!(m.foreground(), 8 * 8 * 4);
    assert_eq!(s.image, img);

    let short = BinaryMask::zeros([8, 8, 4], [1.0; 3]).unwrap();
    write_mask(&dir.path().join("s.nii.gz"), &short, ras).unwrap();
    assert!(load_scan("x", &dir.path().join("i.nii.gz"), Some(&dir.path().join("s.nii.gz"))).is_err());
}

#[test]
fn preprocess_manifest_and_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    for seed in 0..3 {
        let mut s = make_phantom(seed, [20, 16, 16], 2).unwrap();
        s.orientation = "LPS".parse().unwrap();
        save_scan(&input, &s).unwrap();
    }
    let c = cfg(&[]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = cmd_preprocess(&c, &input, &a).unwrap();
    cmd_preprocess(&c, &input, &b).unwrap();
    assert_eq!(
        sha256_file(&a.join(MANIFEST_FILE)).unwrap(),
        sha256_file(&b.join(MANIFEST_FILE)).unwrap()
    );
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(ra.manifest).unwrap()).unwrap();
    let steps: Vec<&str> = manifest["steps"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    assert!(!steps.contains(&"standardize_intensity") && !steps.contains(&"smooth_edge_preserving"));
    assert_eq!(manifest["scans"][0]["source_orientation"], "LPS");
    let out = load_scan("p", &a.join("phantom-0000_image.nii.gz"), None).unwrap();
    assert_eq!(out.orientation.to_string(), "RAS");

    fs::write(input.join("phantom-0001_image.nii.gz"), b"corrupt").unwrap();
    let c_dir = dir.path().join("c");
    let err = cmd_preprocess(&c, &input, &c_dir).unwrap_err();
    assert!(matches!(err, Error::Partial { failed: 1, total: 3 }));
    assert_eq!(err.exit_code(), 2);
    assert_eq!(nifti_files(&c_dir).len(), 4);
    let st = bin()
        .args(["preprocess", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(dir.path().join("d"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut o: Vec<&str> = SMALL.to_vec();
    o.extend(["phantom.n=4", "train.epochs=4"]);
    let full = cmd_train(&cfg(&o), &dir.path().join("full"), None).unwrap();

    o.push("train.epochs=2");
    cmd_train(&cfg(&o), &dir.path().join("part"), None).unwrap();
    o.pop();
    let resumed = cmd_train(
        &cfg(&o),
        &dir.path().join("resumed"),
        Some(&dir.path().join("part").join(LAST_CHECKPOINT)),
    )
    .unwrap();
    assert_eq!((resumed.best_epoch, resumed.epochs), (full.best_epoch, full.epochs));

    let a = checkpoint::load(&dir.path().join("full").join(LAST_CHECKPOINT))
        .unwrap()
        .state;
    let b = checkpoint::load(&dir.path().join("resumed").join(LAST_CHECKPOINT))
        .unwrap()
        .state;
    let curve = |s: &hierseg_core::train::TrainState| -> Vec<(f64, f64)> {
        s.history.records.iter().map(|r| (r.train_loss, r.val_dsc)).collect()
    };
    assert_eq!(curve(&a), curve(&b));
    assert_eq!(a.model.snapshot(), b.model.snapshot());
}

#[test]
fn resume_rejects_a_different_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut o: Vec<&str> = SMALL.to_vec();
    o.extend(["phantom.n=4", "train.epochs=1"]);
    cmd_train(&cfg(&o), dir.path(), None).unwrap();
    o[0] = "model.variant=light";
    let err = cmd_train(&cfg(&o), &dir.path().join("x"), Some(&dir.path().join(LAST_CHECKPOINT))).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn crossval_outputs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut o: Vec<&str> = SMALL.to_vec();
    o.extend(["phantom.n=4", "crossval.k=2", "train.epochs=1"]);
    let r = cmd_crossval(&cfg(&o), dir.path()).unwrap();
    assert_eq!(r.folds.len(), 2);
    assert_eq!(r.pooled.scans.len(), 4);
    for f in [
        "pooled.csv",
        "summary.csv",
        "scans.csv",
        "table.txt",
        "config.toml",
        "fold-0/history.csv",
        "fold-1/split.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(
        fs::read_to_string(dir.path().join("summary.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    o.push("crossval.k=5");
    let err = cmd_crossval(&cfg(&o), &dir.path().join("k")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn eval_identity_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let s = make_phantom(2, [16, 16, 16], 2).unwrap();
    let files = save_scan(dir.path(), &s).unwrap();
    let m = cmd_eval(&files[1], &files[1], None).unwrap();
    assert_eq!((m.dsc, m.ppv, m.sensitivity), (1.0, 1.0, 1.0));

    let other = make_phantom(2, [16, 16, 32], 2).unwrap();
    let odir = dir.path().join("o");
    let ofiles = save_scan(&odir, &other).unwrap();
    assert!(cmd_eval(&files[1], &ofiles[1], None).is_err());
    let st = bin()
        .arg("eval")
        .arg("--pred")
        .arg(&files[1])
        .arg("--gt")
        .arg(&ofiles[1])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
    let out = bin()
        .arg("eval")
        .arg("--pred")
        .arg(&files[1])
        .arg("--gt")
        .arg(&files[1])
        .output()
        .unwrap();
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        "DSC 1.0000  PPV 1.0000  SENS 1.0000"
    );
}

#[test]
fn divergence_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["train", "--out"])
        .arg(dir.path())
        .args(SMALL.iter().flat_map(|s| ["--set", s]))
        .args([
            "--set",
            "phantom.n=4",
            "--set",
            "train.lr=1e38",
            "--set",
            "train.batch_size=1",
            "--epochs",
            "4",
        ])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(3));
}
