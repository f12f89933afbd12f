//! End-to-end behavior of the `fch` binary: configuration handling, exit
//! codes, and byte-level determinism of emitted artifacts.

use std::fs;
use std::path::Path;
use std::process::Command;

fn fch() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fch"))
}

#[test]
fn unknown_command_prints_usage_and_exits_2() {
    let out = fch().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage") || text.contains("usage"), "{text}");
}

#[test]
fn boundary_hurst_is_rejected_citing_the_domain_rule() {
    let out = fch().args(["--H", "0.5", "solve"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("(1/2, 1)"), "{text}");
}

#[test]
fn minimal_config_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    fs::write(&cfg_path, "H = 0.6\nsigma = 0.05\nn_modes = 8\nn_time = 16\n").unwrap();
    let out_dir = dir.path().join("out");
    let status = fch()
        .args(["--config"])
        .arg(&cfg_path)
        .args(["--seed", "5", "--out"])
        .arg(&out_dir)
        .arg("solve")
        .status()
        .unwrap();
    assert!(status.success());
    let run_dir = only_run_dir(&out_dir);
    let echoed = fs::read_to_string(run_dir.join("effective_config.cfg")).unwrap();
    assert!(echoed.contains("H = 5.99999999999999978e-1"), "{echoed}");
    // the echo parses back to the same effective configuration
    let dir2 = tempfile::tempdir().unwrap();
    let cfg2 = dir2.path().join("echo.cfg");
    fs::write(&cfg2, &echoed).unwrap();
    let out2 = dir2.path().join("out");
    let status = fch()
        .args(["--config"])
        .arg(&cfg2)
        .args(["--out"])
        .arg(&out2)
        .arg("solve")
        .status()
        .unwrap();
    assert!(status.success());
    let echoed2 = fs::read_to_string(only_run_dir(&out2).join("effective_config.cfg")).unwrap();
    assert_eq!(echoed, echoed2);
}

#[test]
fn zero_noise_zero_data_trajectory_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let status = fch()
        .args(["--sigma", "0", "--n-modes", "8", "--n-time", "16", "--out"])
        .arg(&out_dir)
        .arg("solve")
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(only_run_dir(&out_dir).join("trajectory.csv")).unwrap();
    for line in csv.lines().skip(1) {
        for cell in line.split(',').skip(1) {
            assert_eq!(cell.parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn same_seed_produces_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for run in 0..2 {
        let out_dir = dir.path().join(format!("out{run}"));
        let status = fch()
            .args(["--seed", "77", "--n-modes", "8", "--n-time", "16", "--out"])
            .arg(&out_dir)
            .arg("solve")
            .status()
            .unwrap();
        assert!(status.success());
        let run_dir = only_run_dir(&out_dir);
        bodies.push((
            fs::read(run_dir.join("trajectory.csv")).unwrap(),
            fs::read(run_dir.join("coefficients.csv")).unwrap(),
        ));
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn bundle_dump_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let status = fch()
        .args(["--seed", "9", "--n-modes", "4", "--n-time", "8", "--out"])
        .arg(&out_dir)
        .arg("noise-sample")
        .status()
        .unwrap();
    assert!(status.success());
    let bin = fs::read(only_run_dir(&out_dir).join("bundle.bin")).unwrap();
    let bundle = fch_core::noise::NoiseBundle::read_from(&mut bin.as_slice()).unwrap();
    assert_eq!(bundle.n_modes, 4);
    assert_eq!(bundle.seed, 9);
}

fn only_run_dir(out_dir: &Path) -> std::path::PathBuf {
    let mut dirs: Vec<_> = fs::read_dir(out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "expected one run dir in {out_dir:?}");
    dirs.pop().unwrap()
}
