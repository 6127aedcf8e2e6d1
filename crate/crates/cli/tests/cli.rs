use std::path::Path;
use std::process::{Command, Output};

use pointsource_cli::config::RunConfig;

fn pointsource(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointsource"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "exit {:?}: {stderr}", out.status);
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates a dataset and shortens the sampler so the tests stay quick.
fn simulated_config(dir: &Path) -> std::path::PathBuf {
    let sim = dir.join("sim");
    ok(&pointsource(&[
        "simulate",
        "--setting",
        "a",
        "--seed",
        "5",
        "--out-dir",
        s(&sim),
    ]));
    let path = sim.join("config.toml");
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.mcmc.n_chains = 2;
    cfg.mcmc.n_iterations = 600;
    cfg.mcmc.n_burnin = 300;
    cfg.mcmc.thin = 3;
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn simulate_fit_summarize_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulated_config(dir.path());
    for file in [
        "samples.csv",
        "holdout.csv",
        "truth.toml",
        "covariates/relief.asc",
    ] {
        assert!(
            config.parent().unwrap().join(file).is_file(),
            "simulate wrote no {file}"
        );
    }
    ok(&pointsource(&[
        "validate-config",
        "--config",
        s(&config),
        "--purpose",
        "forecast",
    ]));

    let fit = dir.path().join("fit");
    let stdout = ok(&pointsource(&[
        "fit",
        "--config",
        s(&config),
        "--out-dir",
        s(&fit),
    ]));
    assert!(stdout.contains("200 draws from 2 chains"), "{stdout}");
    for file in [
        "chains.csv",
        "parameters.csv",
        "year_pmf.csv",
        "diagnostics.csv",
        "acceptance.csv",
        "report.txt",
        "maps/location_posterior.asc",
        "maps/hpd_region.asc",
        "maps/mu_mean.asc",
        "maps/lambda_mean.asc",
    ] {
        assert!(fit.join(file).is_file(), "fit wrote no {file}");
    }

    let chains = fit.join("chains.csv");
    let again = dir.path().join("summary");
    ok(&pointsource(&[
        "summarize",
        "--config",
        s(&config),
        "--chains",
        s(&chains),
        "--out-dir",
        s(&again),
    ]));
    for file in [
        "parameters.csv",
        "year_pmf.csv",
        "diagnostics.csv",
        "maps/hpd_region.asc",
    ] {
        assert_eq!(
            std::fs::read(fit.join(file)).unwrap(),
            std::fs::read(again.join(file)).unwrap(),
            "{file} differs between fit and summarize"
        );
    }

    let fc = dir.path().join("forecast");
    let stdout = ok(&pointsource(&[
        "forecast",
        "--config",
        s(&config),
        "--chains",
        s(&chains),
        "--out-dir",
        s(&fc),
    ]));
    assert!(
        stdout.contains("misclassification over 100 records"),
        "{stdout}"
    );
    for file in [
        "forecast.csv",
        "forecast_scores.csv",
        "glm_coefficients.csv",
    ] {
        assert!(fc.join(file).is_file(), "forecast wrote no {file}");
    }
}

#[test]
fn bad_config_fails_at_the_config_stage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "seed = 1\n[mcmc]\nn_chain = 3\n").unwrap();
    let out = pointsource(&["fit", "--config", s(&path)]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("config stage failed"), "{stderr}");
    assert!(stderr.contains("n_chain"), "{stderr}");
}

#[test]
fn missing_inputs_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulated_config(dir.path());
    std::fs::remove_file(config.parent().unwrap().join("holdout.csv")).unwrap();
    let out = pointsource(&[
        "validate-config",
        "--config",
        s(&config),
        "--purpose",
        "forecast",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("holdout.csv"), "{stderr}");
}

#[test]
fn burn_in_must_be_shorter_than_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulated_config(dir.path());
    let mut cfg = RunConfig::load(&config).unwrap();
    cfg.mcmc.n_burnin = cfg.mcmc.n_iterations;
    std::fs::write(&config, cfg.to_toml().unwrap()).unwrap();
    let out = pointsource(&["fit", "--config", s(&config)]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("n_burnin"), "{stderr}");
}
