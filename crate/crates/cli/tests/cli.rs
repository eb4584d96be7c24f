use crobust::crve::{vcov, AdjustmentKind};
use crobust::estimator::fit;
use crobust::inference::coefficient_table;
use crobust::simlab::{build_sim_model, make_design, simulate_outcomes, SimParams};
use crobust::WorkingModel;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn crobust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crobust"))
        .args(args)
        .env_remove("CROBUST_THREADS")
        .output()
        .expect("binary runs")
}

fn diagnostic(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("diagnostic line");
    serde_json::from_str(line).expect("diagnostic is JSON")
}

/// Same keys and strings, numbers within a relative tolerance.
fn assert_close(got: &Value, want: &Value, path: &str) {
    match (got, want) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            assert!(
                (a - b).abs() <= 1e-12 * b.abs().max(1e-300),
                "{path}: {a} vs {b}"
            );
        }
        (Value::Array(a), Value::Array(b)) => {
            assert_eq!(a.len(), b.len(), "{path}");
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                assert_close(x, y, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            assert_eq!(
                a.keys().collect::<Vec<_>>(),
                b.keys().collect::<Vec<_>>(),
                "{path}"
            );
            for (k, v) in a {
                assert_close(v, &b[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(got, want, "{path}"),
    }
}

fn golden(command: &str, config: &str, golden: &str) {
    let out = crobust(&[
        command,
        "--config",
        data_dir().join(config).to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let got: Value = serde_json::from_slice(&out.stdout).unwrap();
    let want: Value =
        serde_json::from_str(&std::fs::read_to_string(data_dir().join(golden)).unwrap()).unwrap();
    assert_close(&got, &want, "$");
}

// The golden values were checked against an independent dense CR2 computation.
#[test]
fn fit_report_matches_golden_file() {
    golden("fit", "toy_fit.json", "toy_fit.golden.json");
}

#[test]
fn test_report_matches_golden_file() {
    golden("test", "toy_test.json", "toy_test.golden.json");
}

#[test]
fn every_p_value_has_degrees_of_freedom() {
    let out = crobust(&[
        "test",
        "--config",
        data_dir().join("toy_test.json").to_str().unwrap(),
    ]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    for t in report["tests"].as_array().unwrap() {
        assert!(t["p_value"].is_number());
        assert!(t["df_num"].is_number());
        match t["method"].as_str().unwrap() {
            "Chi2" => assert!(t["df_denom"].is_null()),
            // Standard uses m - 1 with three clusters
            "Standard" => assert_eq!(t["df_denom"].as_f64(), Some(2.0)),
            _ => assert_eq!(t["df_denom"], t["eta"]),
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

fn toy_config(dir: &Path, extra: &str) -> PathBuf {
    let data = data_dir().join("toy.csv");
    write(
        dir,
        "config.json",
        &format!(
            r#"{{"data": {:?}, "model": {{"outcome": "y", "covariates": ["x", "z"], "cluster": "school"}}{extra}}}"#,
            data.to_str().unwrap()
        ),
    )
}

#[test]
fn csv_reports_use_ten_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), r#", "format": "csv""#);
    let out = crobust(&["fit", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("name,estimate,std_error,t_stat,df,p_value")
    );
    assert_eq!(
        lines.nth(1),
        Some("x,0.908340249,0.23903399,3.800046382,1.897504476,0.06815393961")
    );
}

#[test]
fn missing_data_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"data": "nowhere.csv", "model": {"outcome": "y", "covariates": ["x"], "cluster": "g"}}"#,
    );
    let out = crobust(&["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(diagnostic(&out)["error"]["kind"], "data");
}

#[test]
fn unknown_coefficient_is_a_config_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), r#", "tests": [{"name": "h1", "zero": ["w"]}]"#);
    let out = crobust(&["test", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let d = diagnostic(&out);
    assert_eq!(d["error"]["constraint"], "h1");
    assert!(d["error"]["message"].as_str().unwrap().contains("`w`"));
}

#[test]
fn unknown_keys_are_reported_with_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"data": "d.csv", "model": {"outcome": "y", "covariates": ["x"], "cluster": "g", "clutser": "h"}}"#,
    );
    let out = crobust(&["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let d = diagnostic(&out);
    assert_eq!(d["error"]["path"], "model.clutser");
    assert!(d["error"]["message"].as_str().unwrap().contains("clutser"));
}

#[test]
fn too_few_degrees_of_freedom_is_a_numerical_error_naming_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(
        dir.path(),
        r#", "tests": [{"name": "slopes", "zero": ["x"]}, {"name": "everything", "zero": ["(Intercept)", "x", "z"]}]"#,
    );
    let out = crobust(&["test", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(diagnostic(&out)["error"]["constraint"], "everything");
}

#[test]
fn invalid_thread_counts_are_config_errors() {
    let cfg = data_dir().join("toy_fit.json");
    let out = crobust(&["fit", "--threads", "0", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_crobust"))
        .args(["fit", "--config", cfg.to_str().unwrap()])
        .env("CROBUST_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

const SIM_CONFIG: &str = r#"{
  "simulate": {
    "designs": [5],
    "m": [15],
    "n": [6],
    "tau2": [0.15],
    "rho": [0.2],
    "sigma_delta2": [0.01],
    "hypotheses": ["1a", "3a"],
    "methods": ["AHT", "Standard"],
    "alphas": [0.01, 0.05],
    "reps": 50,
    "seed": 1,
    "dataset_out": "sim.csv"
  }
}"#;

fn simulate(dir: &Path, out: &str, extra: &[&str], threads: Option<&str>) -> Vec<u8> {
    let cfg = write(dir, "sim.json", SIM_CONFIG);
    let out_path = dir.join(out);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_crobust"));
    cmd.args([
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ])
    .args(extra)
    .env_remove("CROBUST_THREADS");
    if let Some(t) = threads {
        cmd.env("CROBUST_THREADS", t);
    }
    let status = cmd.output().unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    std::fs::read(out_path).unwrap()
}

#[test]
fn simulation_output_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.csv", &[], None);
    let b = simulate(dir.path(), "b.csv", &[], Some("1"));
    let c = simulate(dir.path(), "c.csv", &["--threads", "3"], Some("1"));
    assert_eq!(a, b);
    assert_eq!(a, c);
    let text = String::from_utf8(a.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("design,m,n,tau2,rho,sigma_delta2,hypothesis,q,method,alpha,reps,failures,reject_rate,mc_se")
    );
    assert_eq!(lines.count(), 2 * 2 * 2);
    let reseeded = simulate(dir.path(), "d.csv", &["--seed", "2"], None);
    assert_ne!(a, reseeded);
}

#[test]
fn simulated_data_reingests_through_fit() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "rates.csv", &[], None);
    let cfg = write(
        dir.path(),
        "fit.json",
        r#"{
  "data": "sim.csv",
  "model": {
    "outcome": "y",
    "covariates": ["c2_o1", "c2_o2", "c2_o3", "c3_o1", "c3_o2", "c3_o3"],
    "absorb_between": ["outcome", "period"],
    "absorb_within": ["cluster"],
    "cluster": "cluster"
  }
}"#,
    );
    let out = crobust(&["fit", "--config", cfg.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();

    // the same replicate through the simulation model
    let design = make_design(5, 15, 6).unwrap();
    let params = SimParams {
        tau2: 0.15,
        rho: 0.2,
        sigma_delta2: 0.01,
    };
    let data = simulate_outcomes(&design, &params, 1, 0).unwrap();
    let (model, _) = build_sim_model(&design, &data).unwrap();
    let f = fit(&model).unwrap();
    let phi = WorkingModel::identity().covariance(&model).unwrap();
    let v = vcov(&f, &AdjustmentKind::cr2(), &phi).unwrap();
    let rows = coefficient_table(&f, &v, &phi).unwrap();

    let coefs = report["coefficients"].as_array().unwrap();
    assert_eq!(coefs.len(), rows.len());
    for (got, want) in coefs.iter().zip(&rows) {
        assert_eq!(got["name"], want.name.as_str());
        for (key, w) in [
            ("estimate", want.estimate),
            ("std_error", want.std_error),
            ("df", want.df),
        ] {
            let g = got[key].as_f64().unwrap();
            assert!(
                (g - w).abs() < 1e-10 * w.abs().max(1.0),
                "{key}: {g} vs {w}"
            );
        }
    }
}

#[test]
fn full_grid_flag_rejects_explicit_axes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.json", SIM_CONFIG);
    let out = crobust(&[
        "simulate",
        "--full-grid",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(diagnostic(&out)["error"]["path"], "simulate.designs");
}
