use std::path::Path;
use std::process::{Command, Output};

use torusgff_core::io::{read_manifest, read_sample_manifest, sha256_hex};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_torusgff"))
        .args(args)
        .env_remove("TORUSGFF_THREADS")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["mass", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "exp_nonexistent"]).status.code(), Some(2));
    assert_eq!(run(&["mass", "--beta", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(
        run(&["verify", "exp_boundary_constant", "--side", "8"])
            .status
            .code(),
        Some(0)
    );
}

#[test]
fn zero_threads_are_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_torusgff"))
        .args(["spectrum", "--side", "2"])
        .env("TORUSGFF_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["spectrum", "--side", "2", "--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn spectrum_of_the_smallest_square() {
    let out = run(&["spectrum", "--dim", "2", "--side", "2", "--format", "json"]);
    assert!(out.status.success());
    let v = json(&out);
    let eta: Vec<f64> = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["eta"].as_f64().unwrap())
        .collect();
    assert_eq!(eta, vec![0.0, 4.0, 4.0, 8.0]);
}

#[test]
fn mass_fixed_point() {
    let out = run(&[
        "mass",
        "--dim",
        "2",
        "--side",
        "2",
        "--beta",
        "0.37777777777777777",
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let v = json(&out);
    assert!((v["m2"].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert_eq!(v["regime"], "HighT");
}

#[test]
fn green_kernel_covers_the_box() {
    let out = run(&[
        "green", "--kind", "zero-avg", "--dim", "3", "--side", "4", "--format", "csv",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let data: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    assert_eq!(data.len(), 64);
    let sum: f64 = data
        .iter()
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!(sum.abs() < 1e-10);
    assert_eq!(
        run(&["green", "--kind", "massive", "--side", "4"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn command_line_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# defaults\ndim = 2\nside = 2\nbeta = 0.5\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let from_config = json(&run(&["mass", "--config", cfg, "--format", "json"]));
    assert_eq!(from_config["beta"].as_f64(), Some(0.5));
    let overridden = json(&run(&[
        "mass",
        "--config",
        cfg,
        "--beta",
        "0.37777777777777777",
        "--format",
        "json",
    ]));
    assert!((overridden["m2"].as_f64().unwrap() - 1.0).abs() < 1e-10);

    std::fs::write(dir.path().join("bad.cfg"), "betta = 0.5\n").unwrap();
    let out = run(&[
        "mass",
        "--config",
        dir.path().join("bad.cfg").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("betta"));
}

fn sample_into(dir: &Path) -> Output {
    run(&[
        "sample",
        "--model",
        "spin",
        "--spin-n",
        "3",
        "--dim",
        "2",
        "--side",
        "3",
        "--beta",
        "0.6",
        "--chains",
        "2",
        "--sweeps",
        "40",
        "--seed",
        "9",
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn sample_manifests_replay() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    assert!(sample_into(&a).status.success());
    assert!(sample_into(&b).status.success());

    let run_manifest = read_manifest(&a.join("manifest.json")).unwrap();
    assert_eq!(run_manifest.seed, 9);
    assert!(!run_manifest.outputs.is_empty());
    for digest in &run_manifest.outputs {
        let bytes = std::fs::read(a.join(&digest.path)).unwrap();
        assert_eq!(digest.bytes, bytes.len() as u64);
        assert_eq!(digest.sha256, sha256_hex(&bytes));
    }
    assert_eq!(
        run_manifest.outputs,
        read_manifest(&b.join("manifest.json")).unwrap().outputs
    );

    let samples = read_sample_manifest(&a.join("samples.manifest.json")).unwrap();
    assert_eq!(samples.seed, 9);
    assert_eq!(samples.sweeps, 40);
}

#[test]
fn verify_writes_reports_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "verify",
        "exp_boundary_constant",
        "--side",
        "8,16",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    for name in [
        "exp_boundary_constant.json",
        "exp_boundary_constant.txt",
        "exp_boundary_constant.csv",
        "summary.txt",
        "manifest.json",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.starts_with("exp_boundary_constant: pass"));
}
