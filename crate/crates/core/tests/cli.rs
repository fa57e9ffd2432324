use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmfuse::embedding_store::load_embeddings;
use mmfuse::fusion_gates::{GateForm, GateModel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmfuse"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn mmfuse")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Small synthetic corpus plus a fitted mapping in `dir`.
fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "synth",
            "--vocab-size",
            "160",
            "--dim",
            "6",
            "--pairs",
            "120",
            "--dev-pairs",
            "60",
            "--benchmark-pairs",
            "40",
            "--images-per-word",
            "3",
            "--out-dir",
            "corpus",
        ],
    );
    ok(
        dir.path(),
        &[
            "map",
            "--ling",
            "corpus/ling.txt",
            "--visual",
            "corpus/visual.txt",
            "--lambda",
            "0.6",
            "--out",
            "map",
        ],
    );
    dir
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

/// Reruns the manifest in `out` into `<out>_again` and checks every output
/// file is byte-identical; manifests may differ only in the output line.
fn assert_rerun_identical(dir: &Path, out: &str) {
    let again = format!("{}_again", out);
    ok(
        dir,
        &[
            "rerun",
            "--manifest",
            &format!("{}/manifest.txt", out),
            "--out",
            &again,
        ],
    );
    let a = files(&dir.join(out));
    let b = files(&dir.join(&again));
    assert_eq!(
        a.iter()
            .map(|p| p.file_name().unwrap().to_owned())
            .collect::<Vec<_>>(),
        b.iter()
            .map(|p| p.file_name().unwrap().to_owned())
            .collect::<Vec<_>>()
    );
    for (x, y) in a.iter().zip(&b) {
        let (bx, by) = (
            fs::read_to_string(x).unwrap(),
            fs::read_to_string(y).unwrap(),
        );
        if x.file_name().unwrap() == "manifest.txt" {
            let strip = |s: &str| {
                s.lines()
                    .filter(|l| !l.starts_with("out=") && !l.starts_with("out-dir="))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            assert_eq!(strip(&bx), strip(&by));
        } else {
            assert_eq!(bx, by, "{:?} differs after rerun", x);
        }
    }
}

const TRAIN: &[&str] = &[
    "train",
    "--ling",
    "corpus/ling.txt",
    "--visual",
    "corpus/visual.txt",
    "--mapping",
    "map/mapping.txt",
    "--pairs",
    "corpus/pairs.tsv",
    "--supersenses",
    "corpus/supersenses.tsv",
    "--benchmarks",
    "a=corpus/bench_synth1.tsv,b=corpus/bench_synth2.tsv",
    "--epochs",
    "2",
];

#[test]
fn every_subcommand_reruns_byte_identically() {
    let dir = setup();
    let d = dir.path();
    assert_rerun_identical(d, "corpus");
    ok(
        d,
        &[
            "map",
            "--ling",
            "corpus/ling.txt",
            "--visual",
            "corpus/visual.txt",
            "--lambda-grid",
            "0.1,0.6,1.0",
            "--folds",
            "5",
            "--out",
            "cv",
        ],
    );
    assert_rerun_identical(d, "cv");
    for (gate, form) in [("m", "val"), ("c", "vec"), ("s", "vec")] {
        let out = format!("train_{}{}", gate, form);
        let mut args = TRAIN.to_vec();
        args.extend(["--gate", gate, "--form", form, "--out", &out]);
        ok(d, &args);
        assert_rerun_identical(d, &out);
    }
    ok(
        d,
        &[
            "fuse",
            "--ling",
            "corpus/ling.txt",
            "--mapping",
            "map/mapping.txt",
            "--model",
            "train_svec/gate_model.txt",
            "--out",
            "fused",
        ],
    );
    assert_rerun_identical(d, "fused");
    ok(
        d,
        &[
            "fuse",
            "--ling",
            "corpus/ling.txt",
            "--images",
            "corpus/images.tsv",
            "--baseline",
            "dispersion",
            "--out",
            "disp",
        ],
    );
    assert_rerun_identical(d, "disp");
    ok(
        d,
        &[
            "eval",
            "--tables",
            "g=fused/fused.txt,d=disp/fused.txt",
            "--benchmarks",
            "a=corpus/bench_synth1.tsv",
            "--visual-vocab",
            "corpus/visual.txt",
            "--out",
            "ev",
        ],
    );
    assert_rerun_identical(d, "ev");
    ok(
        d,
        &[
            "analyze",
            "--model",
            "train_cvec/gate_model.txt",
            "--ling",
            "corpus/ling.txt",
            "--mapping",
            "map/mapping.txt",
            "--concreteness",
            "corpus/concreteness.tsv",
            "--supersenses",
            "corpus/supersenses.tsv",
            "--top-k",
            "3",
            "--out",
            "an",
        ],
    );
    assert_rerun_identical(d, "an");
}

#[test]
fn same_seed_twice_gives_identical_models() {
    let dir = setup();
    for out in ["t1", "t2"] {
        let mut args = TRAIN.to_vec();
        args.extend(["--gate", "s", "--form", "val", "--seed", "7", "--out", out]);
        ok(dir.path(), &args);
    }
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("t1/gate_model.txt"), read("t2/gate_model.txt"));
    assert_eq!(read("t1/train_report.tsv"), read("t2/train_report.tsv"));
}

#[test]
fn zero_epochs_write_the_initialized_model() {
    let dir = setup();
    // Drop the trailing `--epochs 2` of the shared flags.
    let mut args = TRAIN[..TRAIN.len() - 2].to_vec();
    args.extend([
        "--gate", "m", "--form", "vec", "--epochs", "0", "--out", "t0",
    ]);
    ok(dir.path(), &args);
    let text = fs::read_to_string(dir.path().join("t0/gate_model.txt")).unwrap();
    let model = mmfuse::fusion_gates::read_gate_model(text.as_bytes(), "m").unwrap();
    assert_eq!(
        model,
        GateModel::modality(GateForm::Vector, 6, 6, 1.0).unwrap()
    );
    let report = fs::read_to_string(dir.path().join("t0/train_report.tsv")).unwrap();
    assert_eq!(report, "epoch\tlr\tmean_loss\tdev_spearman\n");
}

#[test]
fn repeats_write_one_model_per_seed() {
    let dir = setup();
    let mut args = TRAIN.to_vec();
    args.extend([
        "--gate",
        "m",
        "--form",
        "val",
        "--repeats",
        "2",
        "--out",
        "rep",
    ]);
    ok(dir.path(), &args);
    for name in [
        "gate_model.0.txt",
        "gate_model.1.txt",
        "train_report.0.tsv",
        "train_report.1.tsv",
        "eval.tsv",
    ] {
        assert!(dir.path().join("rep").join(name).exists(), "{}", name);
    }
    let eval = fs::read_to_string(dir.path().join("rep/eval.tsv")).unwrap();
    assert_eq!(eval.lines().count(), 1 + 2 * 3);
}

#[test]
fn explicit_flags_override_config_file() {
    let dir = setup();
    let d = dir.path();
    let config = "# defaults for this corpus\nling=corpus/ling.txt\nvisual=corpus/visual.txt\nlambda=5\nout=from_config\n";
    fs::write(d.join("map.conf"), config).unwrap();
    ok(d, &["map", "--config", "map.conf", "--lambda", "0.6"]);
    let manifest = fs::read_to_string(d.join("from_config/manifest.txt")).unwrap();
    assert!(manifest.contains("\nlambda=0.6\n"));
    assert_eq!(
        fs::read(d.join("from_config/mapping.txt")).unwrap(),
        fs::read(d.join("map/mapping.txt")).unwrap()
    );
    let out = run(d, &["eval", "--config", "from_config/manifest.txt"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn map_prints_cross_validation_table() {
    let dir = setup();
    let stdout = ok(
        dir.path(),
        &[
            "map",
            "--ling",
            "corpus/ling.txt",
            "--visual",
            "corpus/visual.txt",
            "--lambda-grid",
            "0.1,0.6,1.0",
            "--folds",
            "5",
            "--out",
            "cv",
        ],
    );
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "lambda\tcv_mse");
    assert!(
        lines[1].starts_with("0.1\t")
            && lines[2].starts_with("0.6\t")
            && lines[3].starts_with("1\t")
    );
    assert!(lines[4].starts_with("chosen lambda "));
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    let missing = run(
        d,
        &[
            "map",
            "--ling",
            "nowhere.txt",
            "--visual",
            "corpus/visual.txt",
            "--out",
            "x",
        ],
    );
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nowhere.txt"));

    let usage = run(d, &["map", "--ling", "corpus/ling.txt"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(run(d, &["frobnicate"]).status.code(), Some(2));

    fs::write(d.join("bad.txt"), "a 1.0\nb 1.0 2.0\n").unwrap();
    let parse = run(
        d,
        &[
            "map",
            "--ling",
            "bad.txt",
            "--visual",
            "corpus/visual.txt",
            "--out",
            "x",
        ],
    );
    assert_eq!(parse.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&parse.stderr).contains(":2:"));

    fs::write(d.join("blocker"), "").unwrap();
    let unwritable = run(d, &["synth", "--out-dir", "blocker/sub"]);
    assert_eq!(unwritable.status.code(), Some(2));

    assert_eq!(run(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn rerun_refuses_changed_inputs() {
    let dir = setup();
    let d = dir.path();
    let mut corpus = fs::read_to_string(d.join("corpus/visual.txt")).unwrap();
    corpus.push_str("extra 0 0 0 0 0 1\n");
    fs::write(d.join("corpus/visual.txt"), corpus).unwrap();
    let out = run(
        d,
        &["rerun", "--manifest", "map/manifest.txt", "--out", "map2"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn eval_matrix_shape_and_ridge_equivalence() {
    let dir = setup();
    let d = dir.path();
    ok(
        d,
        &[
            "fuse",
            "--ling",
            "corpus/ling.txt",
            "--mapping",
            "map/mapping.txt",
            "--baseline",
            "ridge",
            "--out",
            "ridge",
        ],
    );
    fs::write(d.join("unit.txt"), "gate modality value 6\ng_L 1\ng_P 1\n").unwrap();
    ok(
        d,
        &[
            "fuse",
            "--ling",
            "corpus/ling.txt",
            "--mapping",
            "map/mapping.txt",
            "--model",
            "unit.txt",
            "--out",
            "unit",
        ],
    );
    assert_eq!(
        load_embeddings(d.join("ridge/fused.txt"), None).unwrap(),
        load_embeddings(d.join("unit/fused.txt"), None).unwrap()
    );

    // A third benchmark whose only pair is unknown: every cell undefined.
    fs::write(d.join("oov.tsv"), "word1\tword2\tscore\nzzz\tyyy\t3.0\n").unwrap();
    ok(
        d,
        &[
            "eval",
            "--tables",
            "ridge=ridge/fused.txt,unit=unit/fused.txt",
            "--benchmarks",
            "a=corpus/bench_synth1.tsv,b=corpus/bench_synth2.tsv,oov=oov.tsv",
            "--visual-vocab",
            "corpus/visual.txt",
            "--out",
            "ev",
        ],
    );
    let tsv = fs::read_to_string(d.join("ev/results.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = tsv
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect())
        .collect();
    assert_eq!(rows.len(), 18);
    for (r, u) in rows[..9].iter().zip(&rows[9..]) {
        assert_eq!((r[0], u[0]), ("ridge", "unit"));
        assert_eq!(r[1..], u[1..]);
    }
    let oov: Vec<&Vec<&str>> = rows.iter().filter(|r| r[1] == "oov").collect();
    assert_eq!(oov.len(), 6);
    assert!(oov.iter().all(|r| r[3] == "NA"));
    assert!(oov.iter().any(|r| r[2] == "ZS" && r[5] == "1"));
}
