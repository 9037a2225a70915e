use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use inpipe_control::telemetry::read_telemetry;

fn inpipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inpipe"))
        .args(args)
        .output()
        .expect("failed to spawn inpipe")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn short_run_has_eleven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = inpipe(&[
        "simulate",
        "--preset",
        "paper-iter1",
        "--duration",
        "0.001",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_telemetry(fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0].t, 0.0);
    assert!((rows[10].t - 0.001).abs() < 1e-12);
}

#[test]
fn telemetry_to_stdout_is_deterministic() {
    let args = [
        "simulate",
        "--preset",
        "paper-iter3",
        "--duration",
        "0.05",
        "--seed",
        "11",
    ];
    let a = inpipe(&args);
    let b = inpipe(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn noisy_runs_repeat_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "noisy.toml",
        "[controller.noise]\nencoder = 0.05\nimu_angle = 0.002\nimu_rate = 0.01\n",
    );
    let run = |seed: &str| {
        let o = inpipe(&[
            "simulate", "--preset", "paper-iter2", "--config", &cfg, "--duration", "0.05", "--seed", seed,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        o.stdout
    };
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
}

#[test]
fn misspelled_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[scenario]\nphi0_degs = 5.0\n");
    let o = inpipe(&["simulate", "--config", &cfg]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("phi0_degs"), "{err}");
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn missing_config_file_fails() {
    let o = inpipe(&["gain", "--config", "/nonexistent/inpipe.toml"]);
    assert!(!o.status.success());
}

#[test]
fn unknown_preset_fails() {
    let o = inpipe(&["gain", "--preset", "paper-iter9"]);
    assert!(!o.status.success());
}

#[test]
fn gain_prints_published_matrix() {
    let o = inpipe(&["gain", "--preset", "paper-gain"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    for entry in ["-11.5470", "-2.5889", "-10.0000", "-2.2442", "5.7735", "1.2945"] {
        assert!(text.contains(entry), "missing {entry} in\n{text}");
    }
    assert!(text.contains("CARE residual"));
}

#[test]
fn zero_q_warns_and_gives_zero_gain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q0.toml", "[controller]\nq_diag = [0.0, 0.0, 0.0, 0.0]\n");
    let o = inpipe(&["gain", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(!text.contains("1.0000") && text.contains("0.0000"));
}

#[test]
fn linearize_reports_structure() {
    let o = inpipe(&["linearize"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("sparsity A: true, sparsity B: true"), "{text}");
    assert!(text.contains("controllability rank: 4"));
}

#[test]
fn single_point_sweep_matches_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "one.toml", "[sweep]\nphi0_deg = [-10.0]\n");
    let sim_out = dir.path().join("sim.csv");
    let sweep_dir = dir.path().join("sweep");
    let common = ["--preset", "paper-iter1", "--duration", "0.2"];

    let mut args = vec!["simulate", "--out", sim_out.to_str().unwrap()];
    args.extend(common);
    let o = inpipe(&args);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut args = vec!["sweep", "--config", &cfg, "--out", sweep_dir.to_str().unwrap()];
    args.extend(common);
    let o = inpipe(&args);
    assert!(o.status.success(), "{}", stderr(&o));

    assert_eq!(
        fs::read(&sim_out).unwrap(),
        fs::read(sweep_dir.join("run_0000.csv")).unwrap()
    );
}

#[test]
fn nine_point_sweep_settles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "grid.toml",
        "[controller]\ndesired_velocity = 0.3\n\n[sweep]\nphi0_deg = [-20.0, 0.0, 20.0]\npsi0_deg = [-20.0, 0.0, 20.0]\n",
    );
    let out = dir.path().join("grid");
    let o = inpipe(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut r = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let settled_col = r.headers().unwrap().iter().position(|h| h == "settled").unwrap();
    let rows: Vec<_> = r.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 9);
    for row in &rows {
        assert_eq!(&row[settled_col], "true", "{row:?}");
    }
    for i in 0..9 {
        assert!(out.join(format!("run_{i:04}.csv")).is_file());
    }
}

#[test]
fn sweep_without_axes_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = inpipe(&["sweep", "--preset", "paper-iter1", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("[sweep]"));
}

#[test]
fn validate_fails_on_perturbed_gain() {
    let o = inpipe(&["validate", "--perturb-gain", "0.02"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[FAIL] 1"), "{text}");
}
