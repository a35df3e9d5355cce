use std::sync::Arc;

use fedsel::check::run_checks;
use fedsel::config::{BidModeName, Method};
use fedsel::data::FlipGroup;
use fedsel::experiment::{run_comparison, run_experiment, RoundRecord, Scenario, Simulation};
use fedsel::output::{emit_config_sidecar, emit_csv, records_to_csv, RECORD_HEADER};
use fedsel::ExperimentConfig;

fn small(method: Method, rounds: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        method,
        rounds,
        budget: 25.0,
        ..ExperimentConfig::default()
    };
    cfg.partition.num_clients = 8;
    cfg.partition.samples_total = 800;
    cfg.partition.flip_groups = vec![
        FlipGroup { count: 2, ratio: 0.9 },
        FlipGroup { count: 2, ratio: 0.6 },
        FlipGroup { count: 4, ratio: 0.0 },
    ];
    cfg.data.validation_size = 300;
    cfg.data.test_size = 300;
    cfg
}

#[test]
fn all_method_selects_everyone() {
    let mut cfg = small(Method::All, 1);
    cfg.partition.num_clients = 3;
    cfg.partition.samples_total = 300;
    cfg.partition.flip_groups = vec![FlipGroup { count: 3, ratio: 0.0 }];
    let records = run_experiment(&cfg).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].selected_ids, vec![0, 1, 2]);
    assert!(records[0].sv.is_empty());
}

#[test]
fn reruns_are_byte_identical() {
    for method in Method::ALL {
        let cfg = small(method, 6);
        let a = records_to_csv(&run_experiment(&cfg).unwrap());
        let b = records_to_csv(&run_experiment(&cfg).unwrap());
        assert_eq!(a, b, "{method}");
    }
}

#[test]
fn single_arm_comparison_matches_run() {
    let cfg = small(Method::Sbro, 5);
    let cmp = run_comparison(&cfg, &[Method::Sbro], &[cfg.seed]).unwrap();
    assert_eq!(records_to_csv(&cmp.arms[0].records), records_to_csv(&run_experiment(&cfg).unwrap()));
    assert_eq!(cmp.summary.len(), 1);
    assert_eq!(cmp.summary[0].seeds, 1);
    assert_eq!(cmp.summary[0].final_accuracy_variance, 0.0);
}

#[test]
fn arms_share_the_scenario() {
    let cfg = small(Method::Sbro, 2);
    let a = Scenario::build(&ExperimentConfig { method: Method::Rs, seed: 4, ..cfg.clone() }).unwrap();
    let b = Scenario::build(&ExperimentConfig { method: Method::Hqrs, seed: 9, ..cfg.clone() }).unwrap();
    assert_eq!(a, b);

    let cmp = run_comparison(&cfg, &[Method::Sbro, Method::Rs], &[0, 1]).unwrap();
    assert_eq!(cmp.arms.len(), 4);
    assert_eq!(*cmp.scenario, a);
    // Algorithmic seeds change the run, not the scenario.
    let rs: Vec<&Vec<RoundRecord>> = cmp.arms.iter().filter(|x| x.method == Method::Rs).map(|x| &x.records).collect();
    assert_ne!(rs[0], rs[1]);
}

#[test]
fn summary_statistics() {
    let cfg = small(Method::Sbro, 25);
    let cmp = run_comparison(&cfg, &[Method::Rs], &[0, 1, 2]).unwrap();
    let finals: Vec<f64> = cmp.arms.iter().map(|a| a.records.last().unwrap().global_accuracy).collect();
    let mean = finals.iter().sum::<f64>() / 3.0;
    let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0;
    let row = &cmp.summary[0];
    assert!((row.final_accuracy_mean - mean).abs() < 1e-12);
    assert!((row.final_accuracy_variance - var).abs() < 1e-12);

    let tails: Vec<f64> = cmp
        .arms
        .iter()
        .map(|a| {
            let t: Vec<f64> = a.records[5..].iter().map(|r| r.global_accuracy).collect();
            let m = t.iter().sum::<f64>() / 20.0;
            t.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 20.0
        })
        .collect();
    assert!((row.last20_accuracy_variance - tails.iter().sum::<f64>() / 3.0).abs() < 1e-12);
}

#[test]
fn comparison_needs_methods_and_seeds() {
    let cfg = small(Method::Sbro, 1);
    assert!(run_comparison(&cfg, &[], &[0]).is_err());
    assert!(run_comparison(&cfg, &[Method::Rs], &[]).is_err());
}

#[test]
fn csv_round_trips_through_a_csv_reader() {
    let cfg = small(Method::Sbro, 4);
    let records = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    emit_csv(&records, &path).unwrap();

    let bytes = std::fs::read(&path).unwrap();
    assert!(!bytes.contains(&b'\r'));
    assert_eq!(String::from_utf8(bytes).unwrap().lines().count(), records.len() + 1);

    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>().join(","), RECORD_HEADER);
    let reals = |s: &str| -> Vec<f64> {
        if s.is_empty() {
            Vec::new()
        } else {
            s.split(';').map(|v| v.parse().unwrap()).collect()
        }
    };
    for (row, rec) in reader.records().zip(&records) {
        let row = row.unwrap();
        assert_eq!(row[0].parse::<usize>().unwrap(), rec.round);
        assert_eq!(&row[1], "sbro");
        let ids: Vec<usize> = row[2].split(';').filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect();
        assert_eq!(ids, rec.selected_ids);
        assert!((row[3].parse::<f64>().unwrap() - rec.total_cost).abs() <= 1e-6);
        assert!((row[4].parse::<f64>().unwrap() - rec.global_accuracy).abs() <= 1e-6);
        for (a, b) in reals(&row[5]).iter().zip(&rec.sv) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert_eq!(reals(&row[6]).len(), rec.reputation_snapshot.len());
        for (a, b) in reals(&row[6]).iter().zip(&rec.reputation_snapshot) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }
}

#[test]
fn empty_record_list_writes_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/empty.csv");
    emit_csv(&[], &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{RECORD_HEADER}\n"));
}

#[test]
fn sidecar_lists_update_parameters() {
    let cfg = small(Method::Sbro, 1);
    let dir = tempfile::tempdir().unwrap();
    let side = emit_config_sidecar(&cfg, &dir.path().join("r.csv")).unwrap();
    let text = std::fs::read_to_string(side).unwrap();
    for key in ["omega", "psi", "rho", "alpha", "beta", "gamma", "delta", "budget"] {
        assert!(text.contains(key), "{key} missing");
    }
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
}

#[test]
fn invariant_suite_passes() {
    let mut cfg = small(Method::Sbro, 12);
    cfg.bids.mode = BidModeName::Gaussian;
    let report = run_checks(&cfg, &Method::ALL).unwrap();
    for r in &report.results {
        assert!(r.passed(), "{r}");
    }
}

#[test]
fn step_by_step_matches_run() {
    let cfg = small(Method::Sbro, 4);
    let scenario = Arc::new(Scenario::build(&cfg).unwrap());
    let mut sim = Simulation::new(cfg.clone(), Arc::clone(&scenario)).unwrap();
    let mut records = Vec::new();
    while !sim.is_finished() {
        let o = sim.step().unwrap();
        assert_eq!(o.diagnostics.reputation_before.len(), 8);
        records.push(o.record);
    }
    assert_eq!(records_to_csv(&records), records_to_csv(&run_experiment(&cfg).unwrap()));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = small(Method::Sbro, 0);
    assert!(run_experiment(&cfg).is_err());
    cfg.rounds = 1;
    cfg.partition.samples_total = 801;
    assert!(run_experiment(&cfg).is_err());
    cfg.partition.samples_total = 100_000_000;
    assert!(run_experiment(&cfg).is_err());
    cfg.partition.samples_total = 800;
    cfg.data.test_size = 0;
    assert!(run_experiment(&cfg).is_ok());
}

#[test]
fn shipped_reference_config_equals_defaults() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
    let cfg = ExperimentConfig::load(&path, &[]).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}
