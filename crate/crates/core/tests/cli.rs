use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use homonmt::fixture::BUNDLED;
use serde_json::Value;

fn homonmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homonmt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    serde_json::from_str(lines[0]).expect("error is JSON")
}

fn head(name: &str, n: usize) -> String {
    let text = BUNDLED.iter().find(|(f, _)| *f == name).unwrap().1;
    text.lines().take(n).map(|l| format!("{l}\n")).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Files {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Files {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("train.tsv"), head("train.tsv", 120)).unwrap();
        fs::write(root.join("valid.tsv"), head("valid.tsv", 20)).unwrap();
        fs::write(root.join("test.tsv"), head("test.tsv", 10)).unwrap();
        fs::write(root.join("mono.txt"), head("mono.txt", 150)).unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

const TINY: [&str; 12] = [
    "--d-model",
    "16",
    "--heads",
    "2",
    "--d-ff",
    "32",
    "--encoder-layers",
    "1",
    "--epochs",
    "1",
    "--warmup",
    "1",
];

#[test]
fn inject_noise_at_ratio_zero_is_verbatim() {
    let f = Files::new();
    let out = f.path("noisy.tsv");
    ok(homonmt(&[
        "--seed",
        "7",
        "inject-noise",
        "--ratio",
        "0",
        "--input",
        s(&f.path("train.tsv")),
        "--output",
        s(&out),
    ]));
    assert_eq!(
        fs::read(&out).unwrap(),
        fs::read(f.path("train.tsv")).unwrap()
    );
    let meta: Value =
        serde_json::from_slice(&fs::read(f.path("noisy.tsv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["config"]["command"]["inject-noise"]["ratio"], 0.0);
}

#[test]
fn inject_noise_is_reproducible_and_keeps_targets() {
    let f = Files::new();
    let run = |name: &str| {
        let out = f.path(name);
        ok(homonmt(&[
            "--seed",
            "3",
            "inject-noise",
            "--ratio",
            "0.3",
            "--input",
            s(&f.path("train.tsv")),
            "--output",
            s(&out),
        ]));
        fs::read_to_string(out).unwrap()
    };
    let (a, b) = (run("a.tsv"), run("b.tsv"));
    assert_eq!(a, b);
    let original = fs::read_to_string(f.path("train.tsv")).unwrap();
    assert_ne!(a, original);
    for (x, y) in a.lines().zip(original.lines()) {
        assert_eq!(x.split('\t').nth(1), y.split('\t').nth(1));
        assert_eq!(
            x.split('\t').next().unwrap().chars().count(),
            y.split('\t').next().unwrap().chars().count()
        );
    }
}

#[test]
fn convert_and_augment() {
    let f = Files::new();
    fs::write(f.path("one.txt"), "建一所小学\n").unwrap();
    let out = ok(homonmt(&["convert", "--input", s(&f.path("one.txt"))]));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "jian yi suo xiao xue\n"
    );

    let aug = f.path("aug.tsv");
    ok(homonmt(&[
        "augment",
        "--input",
        s(&f.path("train.tsv")),
        "--output",
        s(&aug),
        "--copies",
        "2",
    ]));
    assert_eq!(fs::read_to_string(&aug).unwrap().lines().count(), 360);
    let meta: Value =
        serde_json::from_slice(&fs::read(f.path("aug.tsv.meta.json")).unwrap()).unwrap();
    assert_eq!(
        meta["output"]["substitutions"].as_array().unwrap().len(),
        360
    );
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let f = Files::new();
    let unknown = homonmt(&["detect", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert_eq!(error_line(&unknown)["error"], "usage");

    let missing = homonmt(&[
        "inject-noise",
        "--ratio",
        "0.1",
        "--input",
        "/nonexistent/file",
    ]);
    assert_eq!(missing.status.code(), Some(2));

    let bad_ratio = homonmt(&[
        "inject-noise",
        "--ratio",
        "1.5",
        "--input",
        s(&f.path("train.tsv")),
    ]);
    assert_eq!(bad_ratio.status.code(), Some(2));

    fs::write(f.path("broken.tsv"), "no tab here\n").unwrap();
    let broken = homonmt(&[
        "augment",
        "--input",
        s(&f.path("broken.tsv")),
        "--output",
        s(&f.path("x.tsv")),
    ]);
    assert_eq!(broken.status.code(), Some(1));
    assert_eq!(error_line(&broken)["error"], "runtime");

    fs::write(f.path("crlf.txt"), "建一所小学\r\n").unwrap();
    assert_eq!(
        homonmt(&["convert", "--input", s(&f.path("crlf.txt"))])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn train_detect_translate_evaluate_sweep() {
    let f = Files::new();
    let det = f.path("det.ckpt");
    let mono = f.path("mono.txt");
    let mut args = vec!["train-detector", "--mono", s(&mono), "--output", s(&det)];
    args.extend(TINY);
    ok(homonmt(&args));
    assert!(f.path("det.ckpt.meta.json").exists());

    fs::write(f.path("lines.txt"), "建议所小学\n").unwrap();
    let out = ok(homonmt(&[
        "detect",
        "--detector",
        s(&det),
        "--input",
        s(&f.path("lines.txt")),
    ]));
    let record: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(record["tokens"].as_array().unwrap().len(), 5);
    assert_eq!(record["lls"].as_array().unwrap().len(), 5);

    let nmt = f.path("nmt.ckpt");
    let (train, valid) = (f.path("train.tsv"), f.path("valid.tsv"));
    let mut args = vec![
        "train-nmt",
        "--train",
        s(&train),
        "--valid",
        s(&valid),
        "--mode",
        "robust",
        "--output",
        s(&nmt),
    ];
    args.extend(["--decoder-layers", "1"]);
    args.extend(TINY);
    ok(homonmt(&args));

    fs::write(f.path("src.txt"), "建 yi 所小学\n他画了一只猫\n").unwrap();
    let out = ok(homonmt(&[
        "translate",
        "--model",
        s(&nmt),
        "--beam",
        "2",
        "--input",
        s(&f.path("src.txt")),
    ]));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);

    let report = f.path("eval.json");
    ok(homonmt(&[
        "evaluate",
        "--model",
        s(&nmt),
        "--test",
        s(&f.path("test.tsv")),
        "--output",
        s(&report),
    ]));
    let report: Value = serde_json::from_slice(&fs::read(report).unwrap()).unwrap();
    let score = report["bleu"]["score"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&score));

    let sweep_dir = f.path("sweep");
    let with_detector = format!("pipe={},{}", s(&nmt), s(&det));
    let plain = format!("plain={}", s(&nmt));
    let sweep = |threads: &str| {
        ok(homonmt(&[
            "--threads",
            threads,
            "sweep",
            "--system",
            &plain,
            "--system",
            &with_detector,
            "--test",
            s(&f.path("test.tsv")),
            "--ratios",
            "0.2",
            "--beam",
            "1",
            "--output-dir",
            s(&sweep_dir),
        ]));
        fs::read(sweep_dir.join("sweep.json")).unwrap()
    };
    let first = sweep("1");
    assert_eq!(first, sweep("2"));
    let tsv = fs::read_to_string(sweep_dir.join("sweep.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 5);
}

#[test]
fn config_file_supplies_defaults() {
    let f = Files::new();
    fs::write(f.path("run.cfg"), "# noise settings\nratio = 0\nseed = 7\n").unwrap();
    let out = f.path("n.tsv");
    ok(homonmt(&[
        "inject-noise",
        "--config",
        s(&f.path("run.cfg")),
        "--input",
        s(&f.path("train.tsv")),
        "--output",
        s(&out),
    ]));
    assert_eq!(
        fs::read(&out).unwrap(),
        fs::read(f.path("train.tsv")).unwrap()
    );
    let meta: Value =
        serde_json::from_slice(&fs::read(f.path("n.tsv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 7);
}
