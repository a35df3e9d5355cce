use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
rounds = 3
budget = 25.0
[partition]
num_clients = 8
samples_total = 800
flip_groups = [{ count = 4, ratio = 0.8 }, { count = 4, ratio = 0.0 }]
[data]
validation_size = 200
test_size = 200
"#;

fn fedsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsel")).args(args).output().unwrap()
}

fn setup() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap().to_owned();
    (dir, cfg)
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

#[test]
fn run_writes_csv_and_config() {
    let (dir, cfg) = setup();
    let out = p(dir.path(), "run.csv");
    let o = fedsel(&["run", "--config", &cfg, "--method", "hqrs", "--seed", "3", "--rounds", "2", "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("1,hqrs,"));
    let side = fs::read_to_string(format!("{out}.config.toml")).unwrap();
    assert!(side.contains("seed = 3"));
}

#[test]
fn override_changes_config() {
    let (dir, cfg) = setup();
    let out = p(dir.path(), "run.csv");
    let o = fedsel(&["run", "--config", &cfg, "--override", "method=all", "--override", "rounds=1", "--out", &out]);
    assert!(o.status.success());
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().nth(1).unwrap().split(',').nth(2).unwrap(), "0;1;2;3;4;5;6;7");
}

#[test]
fn compare_writes_arms_and_summary() {
    let (dir, cfg) = setup();
    let out = p(dir.path(), "cmp.csv");
    let o = fedsel(&["compare", "--config", &cfg, "--methods", "sbro,rs", "--seeds", "0,1", "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for arm in ["sbro_seed0", "sbro_seed1", "rs_seed0", "rs_seed1"] {
        assert!(dir.path().join(format!("cmp_{arm}.csv")).exists(), "{arm}");
    }
    let summary = fs::read_to_string(dir.path().join("cmp_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn gen_data_writes_fixture() {
    let (dir, cfg) = setup();
    let out = p(dir.path(), "scenario");
    let o = fedsel(&["gen-data", "--config", &cfg, "--seed", "5", "--out", &out]);
    assert!(o.status.success());
    let clients = fs::read_to_string(dir.path().join("scenario/clients.csv")).unwrap();
    assert_eq!(clients.lines().count(), 9);
    let samples = fs::read_to_string(dir.path().join("scenario/samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 800 + 200 + 200);
}

#[test]
fn check_reports_all_invariants() {
    let (_dir, cfg) = setup();
    let o = fedsel(&["check", "--config", &cfg]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("ok")).count(), 7, "{stdout}");
}

#[test]
fn failures_exit_nonzero_with_message() {
    let (dir, cfg) = setup();
    let missing = fedsel(&["run", "--config", &p(dir.path(), "absent.toml")]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.toml"));

    let bad = fedsel(&["run", "--config", &cfg, "--override", "delta=2.0"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("delta"));

    let unknown = fedsel(&["run", "--config", &cfg, "--override", "nonsense=1"]);
    assert!(!unknown.status.success());

    let method = fedsel(&["run", "--method", "greedy"]);
    assert!(!method.status.success());
}
