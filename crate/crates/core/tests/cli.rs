use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use turbqkd::screens::Pool;
use turbqkd::turbmath::TurbulenceParams;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

fn qkdturb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkdturb")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn assert_same_files(a: &Path, b: &Path, names: &[&str]) {
    for n in names {
        let x = fs::read(a.join(n)).unwrap();
        let y = fs::read(b.join(n)).unwrap();
        assert!(x == y, "{n} differs between reruns");
    }
}

#[test]
fn golden_pool_regenerates_byte_identically() {
    let p = TurbulenceParams::new(0.2, 0.01, 532e-9).unwrap();
    let text = Pool::generate(p, 7, 4).to_csv();
    assert_eq!(text, fs::read_to_string(fixture("pool_seed7_r0_1cm.csv")).unwrap());
    let back = Pool::load(&fixture("pool_seed7_r0_1cm.csv")).unwrap();
    assert_eq!(back.screens, Pool::generate(p, 7, 4).screens);
}

#[test]
fn screens_and_scan_rerun_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "small.cfg",
        "screens.resolution=128\nreceiver.resolution=64\nscan.step_urad=540\n",
    );
    let mut outs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let o = qkdturb(&["screens", "generate", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let pool = out.join("pool.csv");
        let scan_out = out.join("scan");
        let o = qkdturb(&[
            "scan",
            "--config",
            &cfg,
            "--pool",
            pool.to_str().unwrap(),
            "--out",
            scan_out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(out);
    }
    assert_same_files(&outs[0], &outs[1], &["pool.csv", "centroids.csv", "ensemble.csv", "centroid_report.txt"]);
    let (a, b) = (outs[0].join("scan"), outs[1].join("scan"));
    let maps: Vec<String> = fs::read_dir(a.join("maps"))
        .unwrap()
        .map(|e| format!("maps/{}", e.unwrap().file_name().to_string_lossy()))
        .collect();
    assert_eq!(maps.len(), 30);
    let names: Vec<&str> = maps.iter().map(String::as_str).collect();
    assert_same_files(&a, &b, &names);
    assert_same_files(&a, &b, &["attack_angles.csv", "previews/weighted_H.pgm", "run_info.txt"]);
    assert_eq!(fs::read_to_string(a.join("config.txt")).unwrap(), fs::read_to_string(&cfg).unwrap());
}

#[test]
fn verify_on_untouched_pool_reports_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.csv");
    Pool::generate(TurbulenceParams::no_turbulence(0.2, 532e-9).unwrap(), 1, 500)
        .save(&pool)
        .unwrap();
    let out = dir.path().join("v");
    let o = qkdturb(&["screens", "verify", "--pool", pool.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("measured_sigma_rad=0e0"), "{text}");
    assert!(text.contains("pass=true"));
}

#[test]
fn verify_names_corrupt_pool() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("bad.csv");
    fs::write(&pool, "not a pool\n").unwrap();
    let o = qkdturb(&["screens", "verify", "--pool", pool.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.csv"));
}

#[test]
fn attack_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "a.cfg",
        &format!(
            "{}attack.loss_step_db=2\nattack.r0_threshold_cm=1.53\n",
            fs::read_to_string(fixture("mismatch/attack.cfg")).unwrap()
        ),
    );
    let out = dir.path().join("none");
    let o = qkdturb(&[
        "attack",
        "--config",
        &cfg,
        "--angles",
        fixture("mismatch/r0_1p00.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no feasible attack"));

    let out = dir.path().join("inf");
    let o = qkdturb(&[
        "attack",
        "--config",
        &cfg,
        "--angles",
        fixture("mismatch/r0_inf.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("max_feasible_loss_db=30.00"), "{summary}");
    assert!(summary.contains("unsafe_radius_m=100"), "{summary}");
    assert_eq!(fs::read_to_string(out.join("curve.csv")).unwrap().lines().count(), 17);

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "channel,theta_rad,phi_rad,delta,tau\n").unwrap();
    let o = qkdturb(&["attack", "--angles", empty.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no attack angles"));
}

#[test]
fn witness_fixtures_and_indeterminate_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ir");
    let o = qkdturb(&["witness", "--fixture", "intercept-resend", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("compatible-with-IR,"));

    let cfg = write_cfg(dir.path(), "cap.cfg", "witness.max_iterations=5\n");
    let out = dir.path().join("cap");
    let o = qkdturb(&["witness", "--config", &cfg, "--fixture", "lossy", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("indeterminate,"));
}
