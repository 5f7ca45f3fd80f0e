use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mala-lab"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SWEEP: &str = r#"
experiment = "acceptance-sweep"
kappa = 1.0
s = 0.25
psi_kind = "smooth-nonlinear"
a = 0.5
n_grid = [16, 64]
gamma_grid = ["1/3", "0.45"]
ell_grid = [0.8, 1.4]
n_steps = 300
replicas = 3
master_seed = 2024
"#;

fn run(config: &Path, out: &Path, extra: &[&str]) -> String {
    let status = bin()
        .arg("run")
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .args(extra)
        .status()
        .unwrap();
    assert!(status.success());
    std::fs::read_to_string(out.join("acceptance-sweep.csv")).unwrap()
}

#[test]
fn reruns_and_worker_counts_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SWEEP);
    let a = run(&cfg, &dir.path().join("a"), &["--workers", "1"]);
    let b = run(&cfg, &dir.path().join("b"), &["--workers", "1"]);
    let c = run(&cfg, &dir.path().join("c"), &["--workers", "3"]);
    assert_eq!(a, b);
    assert_eq!(a, c);
    // 2 N x 2 ell x 3 replicas per gamma; the limiting acceptance is only
    // echoed at the critical exponent.
    assert_eq!(a.lines().count(), 1 + 12 * 6 + 12 * 5);

    let other = run(&cfg, &dir.path().join("d"), &["--seed", "7"]);
    assert_ne!(a, other);
}

#[test]
fn rows_echo_the_full_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SWEEP);
    let text = run(&cfg, &dir.path().join("out"), &["--timings"]);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header.join(","), mala_lab::experiment::CSV_HEADER);
    for rec in reader.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[0], "acceptance-sweep");
        assert!(["16", "64"].contains(&&rec[1]));
        assert!(["1/3", "9/20"].contains(&&rec[2]));
        assert_eq!(&rec[4], "smooth-nonlinear");
        assert_eq!((&rec[5], &rec[6], &rec[7]), ("1", "0.25", "0.5"));
        let replica: usize = rec[8].parse().unwrap();
        let seed: u64 = rec[9].parse().unwrap();
        let gamma = rec[2].parse().unwrap();
        let expected = mala_lab::experiment::seed_for(2024, rec[1].parse().unwrap(), gamma, rec[3].parse().unwrap(), replica as u64);
        assert_eq!(seed, expected);
        assert!(rec[11].parse::<f64>().unwrap().is_finite());
        assert!(rec[13].parse::<u128>().is_ok(), "wall_ms missing with --timings");
    }
}

#[test]
fn manifest_records_hash_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), SWEEP);
    let out = dir.path().join("out");
    run(&cfg_path, &out, &[]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let cfg = mala_lab::experiment::parse_config(SWEEP).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    assert_eq!(manifest["cells"].as_array().unwrap().len(), 24);
    assert_eq!(manifest["complete"], true);
    assert!(manifest["version"].is_string());
    assert!(manifest["started_at"].is_string() && manifest["finished_at"].is_string());
}

#[test]
fn validate_reports_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SWEEP.replace("kappa = 1.0", "kappa = 0.4").replace("n_steps = 300", "n_steps = 300\ncolour = 1");
    let cfg = write_config(dir.path(), &bad);
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("κ > 1/2"), "{err}");
    assert!(err.contains("colour"), "{err}");
}

#[test]
fn validate_prints_canonical_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SWEEP);
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let canonical = String::from_utf8(out.stdout).unwrap();
    let parsed = mala_lab::experiment::parse_config(&canonical).unwrap();
    assert_eq!(parsed, mala_lab::experiment::parse_config(SWEEP).unwrap());
}

#[test]
fn missing_config_file_fails() {
    let out = bin().arg("run").arg("/nonexistent/exp.toml").output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn curve_prints_refined_optimum() {
    let out = bin()
        .args(["curve", "--ell-min", "0.5", "--ell-max", "3", "--points", "26"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("ell,alpha,speed,optimum"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 27);
    let best = rows.last().unwrap();
    assert_eq!(best[3], 1.0);
    assert!((best[1] - 0.574).abs() < 5e-4, "{best:?}");
    assert!(rows[..26].iter().all(|r| r[2] <= best[2]));
}

#[test]
fn curve_rejects_bad_range() {
    let out = bin().args(["curve", "--ell-min", "2", "--ell-max", "1"]).output().unwrap();
    assert!(!out.status.success());
}
