use std::fs;
use std::path::Path;

use spm_core::harness::{cli_main, run_error_vs_time, Estimator, ExperimentConfig, SweepAxis, EXIT_CONFIG, EXIT_OK};

fn run(args: &[&str]) -> i32 {
    cli_main(std::iter::once("spm").chain(args.iter().copied()))
}

fn header(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().next().unwrap().split(',').map(str::to_string).collect()
}

#[test]
fn simulate_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"duration": 2e-4}"#).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let code = run(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK);
    }
    let (x, y) = (fs::read(a.join("simulate.csv")).unwrap(), fs::read(b.join("simulate.csv")).unwrap());
    assert!(!x.is_empty());
    assert_eq!(x, y);

    let m: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 7);
    assert_eq!(m["subcommand"], "simulate");
    assert_eq!(m["config"]["duration"], 2e-4);
}

#[test]
fn missing_config_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let code = run(&["sweep-time", "--config", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"params": {"N": -1.0}}"#).unwrap();
    assert_eq!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]), EXIT_CONFIG);
    fs::write(&cfg, "{not json").unwrap();
    assert_eq!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]), EXIT_CONFIG);
}

#[test]
fn sweep_time_with_200_runs_emits_expected_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["sweep-time", "--runs", "200", "--out", out]), EXIT_OK);
    let h = header(&dir.path().join("sweep-time.csv"));
    assert_eq!(&h[..5], ["t", "rmse_ekf", "rmse_ckf", "rmse_pem", "bcrb"]);
    assert!(h[5..].iter().all(|c| c.starts_with("stderr_")), "{h:?}");
    assert_eq!(h.len(), 9);
    let rows = fs::read_to_string(dir.path().join("sweep-time.csv")).unwrap().lines().count();
    assert_eq!(rows, 17);
}

#[test]
fn other_subcommands_write_their_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"duration": 3e-4, "runs": 4, "bcrb_samples": 20, "atom_samples": 20000,
            "bounds": ["bcrb_numeric", "bcrb_analytic", "crb", "floor"],
            "sweep": {"axis": "time", "grid": [1e-4, 3e-4]}}"#,
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let expect = [
        ("estimate", "estimator,omega_hat,sigma,omega_true,error"),
        ("bcrb", "t,bound,stderr,kind"),
        ("track", "t,omega_true,omega_hat,sigma_omega,error,nis"),
        ("atoms", "trial,n_hat,sigma_n,k_used,degenerate"),
    ];
    for (cmd, head) in expect {
        let out = dir.path().join(cmd);
        assert_eq!(run(&[cmd, "--config", c, "--out", out.to_str().unwrap()]), EXIT_OK, "{cmd}");
        assert_eq!(header(&out.join(format!("{cmd}.csv"))).join(","), head, "{cmd}");
        assert!(out.join("manifest.json").exists());
    }
    let bcrb = fs::read_to_string(dir.path().join("bcrb/bcrb.csv")).unwrap();
    assert_eq!(bcrb.lines().count(), 1 + 4 * 2);
}

#[test]
fn experiments_are_pure_functions_of_config_and_seed() {
    let cfg = ExperimentConfig {
        runs: 6,
        bcrb_samples: 10,
        sweep: SweepAxis::Time(vec![1e-4, 5e-4]),
        ..ExperimentConfig::default()
    };
    let a = run_error_vs_time(&cfg).unwrap();
    let b = run_error_vs_time(&cfg).unwrap();
    assert_eq!(a, b);
    let c = run_error_vs_time(&ExperimentConfig { seed: 2, ..cfg }).unwrap();
    assert_ne!(a.estimators[0].rmse, c.estimators[0].rmse);
}

#[test]
fn standard_errors_shrink_as_inverse_sqrt_runs() {
    let base = ExperimentConfig {
        estimators: vec![Estimator::Ckf, Estimator::Pem],
        bounds: vec![],
        sweep: SweepAxis::Time(vec![1e-3, 5e-3]),
        ..ExperimentConfig::default()
    };
    let small = run_error_vs_time(&ExperimentConfig { runs: 50, ..base.clone() }).unwrap();
    let large = run_error_vs_time(&ExperimentConfig { runs: 200, ..base }).unwrap();
    for (s, l) in small.estimators.iter().zip(&large.estimators) {
        for i in 0..2 {
            let ratio = s.stderr[i] / l.stderr[i];
            assert!((ratio / 2.0 - 1.0).abs() <= 0.3, "{:?} t[{i}]: ratio {ratio}", s.estimator);
        }
    }
}
