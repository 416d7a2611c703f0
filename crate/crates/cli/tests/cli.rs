use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ccrmst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccrmst")).args(args).output().expect("spawn ccrmst")
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn simulate_into(dir: &Path, threads: &str) {
    let out = ccrmst(&[
        "--threads",
        threads,
        "simulate",
        "--n",
        "1500",
        "--reps",
        "4",
        "--bootstrap",
        "20",
        "--method",
        "ps_template,covar_plain",
        "--event-def",
        "gde",
        "--seed",
        "99",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
}

#[test]
fn simulate_output_does_not_depend_on_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate_into(a.path(), "1");
    simulate_into(b.path(), "3");
    for name in ["results.csv", "replications.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between thread counts");
    }
    let json: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("results.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert!(a.path().join("survival_curves.csv").exists());
}

#[test]
fn empty_method_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.toml");
    fs::write(&config, "methods = []\nreplications = 1\n").unwrap();
    let out = ccrmst(&["simulate", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("method"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.toml");
    fs::write(&config, "replicates = 3\n").unwrap();
    let out = ccrmst(&["simulate", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn analyze_bundled_dataset() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let dir = tempfile::tempdir().unwrap();
    let out = ccrmst(&[
        "analyze",
        root.join("data/aric_like.csv").to_str().unwrap(),
        "--config",
        root.join("data/aric_like.toml").to_str().unwrap(),
        "--bootstrap",
        "30",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_ok(&out);
    let table = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    // four methods, template methods at two ratios
    assert_eq!(table.lines().count(), 1 + 6);
    let balance = fs::read_to_string(dir.path().join("balance.csv")).unwrap();
    assert!(balance.lines().any(|l| l.contains("pre")));
    assert!(dir.path().join("survival_curves.csv").exists());
    assert!(dir.path().join("results.json").exists());
}

#[test]
fn analyze_reports_missing_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "id,exposure,time\n1,1,3.0\n").unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "covariates = [\"age\"]\n").unwrap();
    let out = ccrmst(&[
        "analyze",
        data.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing columns"));
}

#[test]
fn oracle_prints_json() {
    let out = ccrmst(&["oracle", "--ratio", "1:3", "--n-mc", "1000000", "--seed", "5"]);
    assert_ok(&out);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["ratio"], "1:3");
    let att = json["att"].as_f64().unwrap();
    let se = json["mc_se"].as_f64().unwrap();
    assert!((att + 0.0606).abs() < 5.0 * se, "att {att}, se {se}");
}

#[test]
fn calibrate_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("calib.json");
    let out = ccrmst(&[
        "calibrate",
        "--ratio",
        "1:4",
        "--pilot-n",
        "50000",
        "--scale-n",
        "50000",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let c = &json[0];
    assert!((c["exposed_fraction"].as_f64().unwrap() - 0.2).abs() < 0.01);
    assert!((c["conventional_event_rate"].as_f64().unwrap() - 0.10).abs() < 0.005);
}
