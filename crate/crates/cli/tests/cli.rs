use std::path::{Path, PathBuf};
use std::process::Command;

use otsm_core::harness::parse_config;

const SMALL: &str = r#"
seed = 3

[frame]
m = 8
n = 4
subcarrier_spacing = 15000.0
modulation_order = 4

[frame.guard]
kind = "zp"
length = 2

[channel]
model = "uniform"
paths = 3
l_max = 2
k_max = 1

[detector]
kinds = ["lmmse", "vamp-em"]

[sweep]
axis = "snr"
points = [5.0, 15.0]
min_frame_errors = 5
max_frames = 40
batch = 8
"#;

const BOUND: &str = r#"
[frame]
m = 2
n = 2
modulation_order = 2

[frame.guard]
kind = "cp"
length = 1

[channel]
model = "uniform"
paths = 2
l_max = 1
k_max = 1

[sweep]
axis = "snr"
points = [0.0, 10.0, 20.0]

[bound]
draws = 4
"#;

const CODED: &str = r#"
[detector]
kinds = ["amp"]

[coding]
outer_iters = 2
inner_iters = 2

[sweep]
points = [8.0]
min_frame_errors = 1
max_frames = 2
batch = 2

[exit]
grid = [0.0, 0.5]
draws = 2
decoder_draws = 2
trajectory_frames = 1
trajectory_iters = 1
"#;

fn otsm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_otsm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_ok(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec![
        sub,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = otsm(&args);
    assert!(
        o.status.success(),
        "{sub} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    std::fs::read_to_string(out).unwrap()
}

#[test]
fn ber_sim_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("res/ber.csv");
    let csv = run_ok("ber-sim", &cfg, &out, &["--threads", "1"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].contains("ber"));
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(dir.path().join("res/ber.manifest.toml").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let a = run_ok("ber-sim", &cfg, &dir.path().join("a.csv"), &["--seed", "9"]);
    let b = run_ok("ber-sim", &cfg, &dir.path().join("b.csv"), &["--seed", "9"]);
    let c = run_ok("ber-sim", &cfg, &dir.path().join("c.csv"), &[]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let manifest = std::fs::read_to_string(dir.path().join("a.manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 9"));
}

#[test]
fn bound_writes_monotone_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bound.toml", BOUND);
    let csv = run_ok("bound", &cfg, &dir.path().join("bound.csv"), &[]);
    let vals: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(vals.len(), 3);
    assert!(vals.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn turbo_and_exit_run_on_a_tiny_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "coded.toml", CODED);
    let out = dir.path().join("turbo.csv");
    run_ok("turbo-sim", &cfg, &out, &[]);
    assert!(dir.path().join("turbo.turbo.csv").exists());
    let exit = run_ok("exit", &cfg, &dir.path().join("exit.csv"), &[]);
    assert!(exit.lines().count() > 1);
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[frame]\nm = 0\n");
    let out = dir.path().join("x.csv");
    let o = otsm(&[
        "ber-sim",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());

    let typo = write(dir.path(), "typo.toml", "[sweep]\npoint = [1.0]\n");
    let o = otsm(&[
        "bound",
        "--config",
        typo.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("point"));

    let coded = write(dir.path(), "coded.toml", CODED);
    let o = otsm(&[
        "ber-sim",
        "--config",
        coded.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(!otsm(&["nope"]).status.success());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            parse_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
