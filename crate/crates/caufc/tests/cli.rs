//! End-to-end runs of the `caufc` executable.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use caufc::model_file::{read_model, write_model};

fn caufc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caufc")).args(args).env_remove("CAUFC_THREADS").output().unwrap()
}

fn ok(args: &[&str]) {
    let out = caufc(args);
    assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

/// Small mixed dataset: 6 CNN (16x2x8 -> 16x16 tokens) and 6 ViT (16x16).
fn dataset(root: &Path) -> PathBuf {
    ok(&["gen", "--arch", "cnn", "--dims", "16x2x8", "--count", "6", "--classes", "2", "--seed", "1", "--quiet", "--out", s(&root.join("cnn"))]);
    ok(&["gen", "--arch", "vit", "--dims", "16x16", "--count", "6", "--classes", "2", "--seed", "2", "--quiet", "--out", s(&root.join("vit"))]);
    let mut text = String::new();
    for arch in ["cnn", "vit"] {
        for line in std::fs::read_to_string(root.join(arch).join("manifest.tsv")).unwrap().lines().filter(|l| !l.starts_with('#')) {
            text.push_str(&format!("{}/{}\n", arch, line));
        }
    }
    let m = root.join("mixed.tsv");
    std::fs::write(&m, text).unwrap();
    m
}

fn train_tiny(manifest: &Path, out: &Path, lambda: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--manifest", s(manifest), "--lambda", lambda, "--batch-size", "2", "--steps-per-epoch", "2",
        "--val-counts", "2,2", "--patience", "0", "--plateau-factor", "0.01", "--max-epochs", "40", "--quiet", "--out", s(out),
    ];
    args.extend_from_slice(extra);
    caufc(&args)
}

#[test]
fn gen_writes_files_and_is_repeatable() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen", "--arch", "cnn", "--dims", "2048x7x7", "--count", "10", "--classes", "5", "--seed", "7", "--quiet", "--out", s(out)]);
    }
    let fa = files(&a);
    assert_eq!(fa.iter().filter(|p| p.extension().unwrap() == "caft").count(), 11);
    assert_eq!(std::fs::read_to_string(a.join("manifest.tsv")).unwrap().lines().filter(|l| !l.starts_with('#')).count(), 10);
    for p in fa {
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(b.join(p.file_name().unwrap())).unwrap());
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let d = tempfile::tempdir().unwrap();
    let out = caufc(&["gen", "--arch", "cnn", "--dims", "2048x7", "--count", "1", "--out", s(d.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--dims"));
    assert!(files(d.path()).is_empty());

    let m = dataset(d.path());
    let t = d.path().join("t");
    let out = caufc(&["train", "--manifest", s(&m), "--out", s(&t)]);
    assert_eq!(out.status.code(), Some(2));
    let out = caufc(&["train", "--manifest", s(&m), "--lambda", "0.01", "--ratio", "0:5", "--out", s(&t)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--ratio"));
    let out = caufc(&["train", "--manifest", s(&m), "--lambda", "0.02", "--out", s(&t)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!t.exists());

    let bad_env = Command::new(env!("CARGO_BIN_EXE_caufc")).args(["curve", "--records", "x.csv"]).env("CAUFC_THREADS", "many").output().unwrap();
    assert_eq!(bad_env.status.code(), Some(2));
    assert_eq!(caufc(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn train_encode_decode_eval_curve() {
    let d = tempfile::tempdir().unwrap();
    let m = dataset(d.path());
    let t = d.path().join("model");
    let out = train_tiny(&m, &t, "0.01", &["--ratio", "1:5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let log = std::fs::read_to_string(t.join("train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert!(lines.next().unwrap().starts_with("epoch,train_loss,val_loss,lr"));
    let lrs: Vec<f64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(lrs[0], 1e-4);
    assert!(*lrs.last().unwrap() <= 1e-8, "{:?}", lrs);
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));

    // encode -> decode reproduces the decoder-side reconstruction every time
    let model = t.join("model.cafm");
    let enc = d.path().join("enc");
    ok(&["encode", "--model", s(&model), "--input", s(&m), "--quiet", "--out", s(&enc)]);
    let streams = files(&enc);
    assert_eq!(streams.len(), 12);
    let mut dec_args = vec!["decode", "--model", s(&model), "--quiet", "--input"];
    dec_args.extend(streams.iter().map(|p| s(p)));
    let (r1, r2) = (d.path().join("r1"), d.path().join("r2"));
    ok(&[dec_args.clone(), vec!["--out", s(&r1)]].concat());
    ok(&[dec_args.clone(), vec!["--out", s(&r2)]].concat());
    for p in files(&r1) {
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(r2.join(p.file_name().unwrap())).unwrap());
    }
    let original = caufc::caft::read_caft(&d.path().join("vit").join("vit_000003.caft")).unwrap();
    let rec = caufc::caft::read_caft(&r1.join("vit_000003.caft")).unwrap();
    assert_eq!(rec.dims(), original.dims());

    // a different model is refused with both hashes in the message
    let other = d.path().join("other.cafm");
    let mut mf = read_model(&model).unwrap();
    let good_hash = mf.model.model_hash();
    mf.model = caufc_core::CodecModel::init(mf.model.arch().clone(), 99).unwrap();
    write_model(&mf, &other).unwrap();
    let out = caufc(&["decode", "--model", s(&other), "--input", s(&streams[0]), "--out", s(&d.path().join("bad"))]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains(&format!("{:016x}", good_hash)) && msg.contains(&format!("{:016x}", mf.model.model_hash())), "{}", msg);
    assert!(!d.path().join("bad").exists());

    // four lambdas x two architectures -> eight records, two polylines
    let mut record_files = Vec::new();
    for (i, lambda) in [0.001, 0.003, 0.005, 0.01].iter().enumerate() {
        let mut mf = read_model(&model).unwrap();
        mf.lambda = *lambda;
        let p = d.path().join(format!("m{}.cafm", i));
        write_model(&mf, &p).unwrap();
        let name = format!("rec{}.csv", i);
        ok(&[
            "eval", "--model", s(&p), "--manifest", s(&m), "--centroids", s(&d.path().join("cnn/centroids.caft")),
            s(&d.path().join("vit/centroids.caft")), "--records-name", &name, "--quiet", "--out", s(d.path()),
        ]);
        record_files.push(d.path().join(name));
    }
    let mut args = vec!["curve", "--quiet", "--out", s(d.path()), "--records"];
    args.extend(record_files.iter().map(|p| s(p)));
    ok(&args);
    let csv = std::fs::read_to_string(d.path().join("rd.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert_eq!(csv.lines().next().unwrap(), "lambda,arch,bpfp,mse,accuracy,n");
    let svg = std::fs::read_to_string(d.path().join("rd.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn failed_encode_leaves_no_output() {
    let d = tempfile::tempdir().unwrap();
    let m = dataset(d.path());
    let model = d.path().join("m.cafm");
    write_model(
        &caufc::model_file::ModelFile {
            model: caufc_core::CodecModel::init(caufc_core::CodecArch::default(), 1).unwrap(),
            lambda: 0.001,
        },
        &model,
    )
    .unwrap();
    // one entry too small for the codec makes the whole command fail
    caufc::caft::write_caft_values(&d.path().join("tiny.caft"), caufc_core::Layout::Tokens2D, vec![2, 2], vec![0.0; 4], caufc_core::ArchTag::VitLike).unwrap();
    let mut text = std::fs::read_to_string(&m).unwrap();
    text.push_str("tiny.caft\tvit\t0\n");
    std::fs::write(&m, text).unwrap();
    let enc = d.path().join("enc");
    let out = caufc(&["encode", "--model", s(&model), "--input", s(&m), "--out", s(&enc)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!enc.exists());
}
