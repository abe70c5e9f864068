use std::path::Path;
use std::process::{Command, Output};

fn cbo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbo"))
        .args(args)
        .env_remove("CBO_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--override",
    "batch_size=20",
    "--override",
    "data.samples=60",
    "--override",
    "network.width=4",
    "--override",
    "cbo.particles=6",
    "--epochs",
    "3",
];

fn tiny_run(extra: &[&str]) -> Output {
    let mut args = vec!["run", "--experiment", "sine", "--method", "cbo"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    cbo(&args)
}

#[test]
fn lists_four_experiments() {
    let o = cbo(&["list-experiments"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for id in ["sine", "mnist", "multitask", "square_ot"] {
        assert!(text.lines().any(|l| l.starts_with(id)), "{text}");
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(cbo(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(cbo(&["frobnicate"]).status.code(), Some(2));
    let missing = cbo(&["run"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("SCHEMA"));
    assert_eq!(cbo(&["run", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
    assert_eq!(cbo(&["run", "--experiment", "sine", "--override", "cbo.beta=1"]).status.code(), Some(2));
    assert_eq!(cbo(&["run", "--experiment", "sine", "--method", "ot_cbo"]).status.code(), Some(2));
    assert_eq!(cbo(&["verify", "--suite", "prop9"]).status.code(), Some(2));
}

#[test]
fn verify_prop3_passes() {
    let o = cbo(&["verify", "--suite", "prop3", "--suite", "prop1"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("PASS") && !text.contains("FAIL"), "{text}");
}

#[test]
fn run_writes_records_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = tiny_run(&["--seeds", "2", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for seed in 0..2 {
        for ext in ["csv", "timing.csv", "meta.toml", "config.toml"] {
            let p = dir.path().join(format!("sine_cbo_seed{seed}.{ext}"));
            assert!(p.exists(), "missing {}", p.display());
        }
    }
    let agg = std::fs::read_to_string(dir.path().join("sine_cbo_aggregate.csv")).unwrap();
    assert_eq!(agg.lines().next(), Some("experiment,method,epoch,stat,value"));
}

#[test]
fn printed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let o = tiny_run(&["--seed", "4", "--override", "cbo.alpha=5e4", "--out", first.to_str().unwrap()]);
    assert!(o.status.success());
    let echoed: String = stdout(&o)
        .lines()
        .take_while(|l| !l.starts_with("# output directory"))
        .map(|l| format!("{l}\n"))
        .collect();
    let cfg = dir.path().join("echo.toml");
    std::fs::write(&cfg, echoed).unwrap();
    let o = cbo(&["run", "--config", cfg.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let read = |d: &Path| std::fs::read(d.join("sine_cbo_seed4.csv")).unwrap();
    assert_eq!(read(&first), read(&second));
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--experiment", "sine", "--method", "cbo", "--seed", "1"];
    args.extend_from_slice(TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_cbo"))
        .args(&args)
        .env("CBO_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("sine_cbo_seed1.csv").exists());
}

#[test]
fn mnist_check_reports_headers_and_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    let labels = dir.path().join("labels");
    std::fs::write(&images, cbo_core::mnist::encode_images(28, 28, &vec![7u8; 3 * 784])).unwrap();
    std::fs::write(&labels, cbo_core::mnist::encode_labels(&[1, 2, 3])).unwrap();
    let args = |i: &Path| {
        vec![
            "mnist-check".to_string(),
            "--images".into(),
            i.display().to_string(),
            "--labels".into(),
            labels.display().to_string(),
        ]
    };
    let o = Command::new(env!("CARGO_BIN_EXE_cbo")).args(args(&images)).output().unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("3 x 28 x 28"));

    let bad = dir.path().join("bad");
    std::fs::write(&bad, b"\0\0\x08\x01garbage").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cbo")).args(args(&bad)).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}
