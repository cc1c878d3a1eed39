use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "
nx = 17
ny = 33
re = 450
ro = 3.6e-3
dt = 2e-4
t_end = 0.4
snapshot_t0 = 0.1
snapshot_t1 = 0.2
n_snapshots = 11
seed_perturbation_amplitude = 0.1
seed = 3
modes = 3
sigma = 2
epochs = 4
batch_size = 4
hidden = 5
layers = 2
snapshots = snaps.qgrm
verify_out = verify.qgrm
verify = verify.qgrm
basis = basis.qgrm
model = model.qgrm
trajectories = gp.qgrm, lstm.qgrm
";

fn qgrom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qgrom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stage(dir: &Path, cmd: &str, out: &str) -> Output {
    let cfg = dir.join("run.cfg");
    let out = dir.join(out);
    let o = qgrom(&[
        cmd,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        o.status.success(),
        "{cmd} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

fn run_pipeline(dir: &Path) {
    write_config(dir, TINY);
    stage(dir, "fom", "snaps.qgrm");
    stage(dir, "pod", "basis.qgrm");
    stage(dir, "rom-gp", "gp.qgrm");
    stage(dir, "train", "model.qgrm");
    stage(dir, "predict", "lstm.qgrm");
    stage(dir, "analyze", "report.csv");
}

const ARTIFACTS: &[&str] = &[
    "snaps.qgrm",
    "verify.qgrm",
    "basis.qgrm",
    "gp.qgrm",
    "model.qgrm",
    "lstm.qgrm",
    "report.csv",
];

#[test]
fn pipeline_is_bitwise_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    run_pipeline(a.path());
    run_pipeline(b.path());
    for name in ARTIFACTS {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty(), "{name} is empty");
        assert_eq!(x, y, "{name} differs between identical runs");
    }
    let report = std::fs::read_to_string(a.path().join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);
    assert!(a.path().join("report-gp0.csv").exists());
}

#[test]
fn seed_flag_changes_the_run() {
    let a = TempDir::new().unwrap();
    write_config(a.path(), TINY);
    stage(a.path(), "fom", "s3.qgrm");
    let cfg = a.path().join("run.cfg");
    let out = a.path().join("s4.qgrm");
    let o = qgrom(&[
        "fom",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let x = std::fs::read(a.path().join("s3.qgrm")).unwrap();
    let y = std::fs::read(&out).unwrap();
    assert_ne!(x, y);
}

#[test]
fn identical_trajectories_give_zero_error() {
    let dir = TempDir::new().unwrap();
    run_pipeline(dir.path());
    let text = format!(
        "{}\nreference = gp.qgrm\n",
        TINY.replace("trajectories = gp.qgrm, lstm.qgrm", "trajectories = gp.qgrm")
            .replace("verify = verify.qgrm\n", "")
    );
    write_config(dir.path(), &text);
    stage(dir.path(), "analyze", "self.csv");
    let report = std::fs::read_to_string(dir.path().join("self.csv")).unwrap();
    let row = report.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    let vort: f64 = cols[cols.len() - 2].parse().unwrap();
    let psi: f64 = cols[cols.len() - 1].parse().unwrap();
    assert_eq!((vort, psi), (0.0, 0.0), "{row}");
}

#[test]
fn missing_key_exits_with_config_code() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("re = 450\n", ""));
    let out = dir.path().join("x.qgrm");
    let o = qgrom(&["fom", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`re`"));
    assert!(!out.exists());
}

#[test]
fn missing_input_exits_with_io_code() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("basis.qgrm");
    let o = qgrom(&["pod", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn too_many_modes_exits_with_numerical_code() {
    let dir = TempDir::new().unwrap();
    write_config(dir.path(), TINY);
    stage(dir.path(), "fom", "snaps.qgrm");
    write_config(dir.path(), &TINY.replace("modes = 3", "modes = 40"));
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("basis.qgrm");
    let o = qgrom(&["pod", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn dry_run_echoes_the_full_scale_sampling_plan() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "nx = 256\nny = 512\nre = 450\nro = 3.6e-3\ndt = 2.5e-5\nt_end = 100\n\
         snapshot_t0 = 10\nsnapshot_t1 = 50\nn_snapshots = 400\n",
    );
    let out = dir.path().join("never.qgrm");
    let o = qgrom(&[
        "fom",
        "--dry-run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let echo = String::from_utf8_lossy(&o.stdout);
    assert!(echo.contains("grid=256x512"), "{echo}");
    assert!(echo.contains("snapshots=400"), "{echo}");
    assert!(!out.exists());
}
