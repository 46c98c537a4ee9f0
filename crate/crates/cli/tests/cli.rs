use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cfvq::experiment::PlacementOutcome;
use cfvq::{Covariance, ExperimentConfig, Point2, UserDensity};
use cfvq_cli::RunManifest;

fn cfvq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfvq"))
        .args(args)
        .output()
        .expect("spawn cfvq")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small(n: u8) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(n).unwrap();
    cfg.num_users_placement = 200;
    cfg.mc_iterations = 20;
    cfg.repair.trials = 20;
    cfg.ascent.max_iters = 10;
    cfg.lloyd.restarts = 1;
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> String {
    let path = dir.join("config.in.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn unknown_flag_is_an_error() {
    let out = cfvq(&["experiment1", "--frobnicate"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--frobnicate"));
}

#[test]
fn malformed_config_names_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"num_aps\": 8,\n  \"num_aps_typo\": 3\n}\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = cfvq(&["place", "--config", bad.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("num_aps_typo") || err.contains("line"), "{err}");
}

#[test]
fn fewer_aps_than_users_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(1);
    cfg.num_aps = 2;
    cfg.num_users_eval = 4;
    let path = write_config(dir.path(), &cfg);
    let out_dir = dir.path().join("out");
    let out = cfvq(&["evaluate", "--config", &path, "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn single_ap_for_single_cluster_sits_at_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let mean = Point2::new(120.0, -80.0);
    let mut cfg = small(1);
    cfg.density = UserDensity::gaussian(mean, Covariance::spherical(50.0 * 50.0).unwrap());
    cfg.num_aps = 1;
    cfg.num_users_eval = 1;
    cfg.num_users_placement = 4000;
    let path = write_config(dir.path(), &cfg);
    for method in ["lloyd", "tsvq", "pdfvq"] {
        let out_dir = dir.path().join(method);
        let out = cfvq(&["place", "--config", &path, "--method", method, "--out", out_dir.to_str().unwrap(), "--quiet"]);
        assert!(out.status.success(), "{}", stderr(&out));
        let outcome: PlacementOutcome =
            serde_json::from_str(&fs::read_to_string(out_dir.join("placement.json")).unwrap()).unwrap();
        assert_eq!(outcome.placement.len(), 1);
        // Sample mean of 4000 draws with σ = 50 m lies within a few meters.
        assert!(outcome.placement.aps()[0].dist(mean) < 5.0, "{method}: {:?}", outcome.placement.aps()[0]);
    }
}

#[test]
fn manifest_lists_existing_outputs_and_the_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small(2));
    let out_dir = dir.path().join("out");
    let out = cfvq(&["experiment2", "--config", &path, "--seed", "7", "--out", out_dir.to_str().unwrap(), "--quiet"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, Some(7));
    for f in manifest.outputs.iter().chain([&manifest.timings]) {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let cfg = ExperimentConfig::from_json(&fs::read_to_string(out_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg.seed, 7);
    let header = fs::read_to_string(out_dir.join("improvements.csv")).unwrap();
    assert!(header.starts_with("method,baseline,rho_r_db,sum_rate_pct,likely95_pct\n"));
}

#[test]
fn comparing_a_report_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small(1));
    let eval_dir = dir.path().join("eval");
    let out = cfvq(&["evaluate", "--config", &path, "--out", eval_dir.to_str().unwrap(), "--quiet"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rates = eval_dir.join("rates.json");
    let cmp_dir = dir.path().join("cmp");
    let out = cfvq(&[
        "compare",
        rates.to_str().unwrap(),
        rates.to_str().unwrap(),
        "--out",
        cmp_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(cmp_dir.join("improvements.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("rho_r_db,sum_rate_pct,likely95_pct"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[1], 0.0);
        assert_eq!(cols[2], 0.0);
    }
}

#[test]
fn evaluate_reuses_a_saved_placement() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small(1));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(cfvq(&["evaluate", "--config", &path, "--method", "tsvq", "--out", a.to_str().unwrap(), "--quiet"])
        .status
        .success());
    let saved = a.join("placement.json");
    let out = cfvq(&["evaluate", saved.to_str().unwrap(), "--config", &path, "--out", b.to_str().unwrap(), "--quiet"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(!b.join("placement.json").exists());
    assert_eq!(fs::read(a.join("rates.json")).unwrap(), fs::read(b.join("rates.json")).unwrap());
}

#[test]
fn oned_rejects_zero_restarts() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfvq(&["oned", "--restarts", "0", "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("restarts"));
}
