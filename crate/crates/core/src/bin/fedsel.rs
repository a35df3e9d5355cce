use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedsel::check::run_checks;
use fedsel::error::{Error, Result};
use fedsel::experiment::Scenario;
use fedsel::model::Dataset;
use fedsel::output::{emit_config_sidecar, emit_csv, emit_summary};
use fedsel::{run_comparison, run_experiment, ExperimentConfig, Method};

/// Federated client selection simulator.
#[derive(Parser)]
#[command(name = "fedsel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single method and write its per-round CSV.
    Run(Common),
    /// Run several methods over several seeds on one shared scenario.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Methods to compare (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "sbro,rs,hqrs,all")]
        methods: Vec<Method>,
        /// Algorithmic seeds (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Write the scenario (client shards, bids, validation and test sets) as CSV.
    GenData(Common),
    /// Run the invariant suite on a seeded scenario.
    Check {
        #[command(flatten)]
        common: Common,
        /// Methods to exercise (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "sbro,rs,hqrs,all")]
        methods: Vec<Method>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed (the scenario seed for gen-data, otherwise the algorithmic seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Output path (a directory for gen-data).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-key override, e.g. `bids.mode=tiered`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path, &self.overrides)?,
            None => ExperimentConfig::from_toml_with_overrides("", &self.overrides)?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(method) = self.method {
            cfg.method = method;
        }
        if let Some(rounds) = self.rounds {
            cfg.rounds = rounds;
        }
        if let Some(out) = &self.out {
            cfg.output_path = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Returns `Ok(false)` when the check suite found violations.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run(common) => {
            let cfg = common.load()?;
            let records = run_experiment(&cfg)?;
            emit_csv(&records, &cfg.output_path)?;
            emit_config_sidecar(&cfg, &cfg.output_path)?;
            if let Some(last) = records.last() {
                println!(
                    "{} rounds of {}: final accuracy {:.4}, wrote {}",
                    records.len(),
                    cfg.method,
                    last.global_accuracy,
                    cfg.output_path.display()
                );
            }
            Ok(true)
        }
        Command::Compare {
            common,
            methods,
            seeds,
        } => {
            let cfg = common.load()?;
            let cmp = run_comparison(&cfg, &methods, &seeds)?;
            for arm in &cmp.arms {
                let path = arm_path(&cfg.output_path, &format!("{}_seed{}", arm.method, arm.seed));
                emit_csv(&arm.records, &path)?;
            }
            let summary = arm_path(&cfg.output_path, "summary");
            emit_summary(&cmp.summary, &summary)?;
            emit_config_sidecar(&cfg, &summary)?;
            for row in &cmp.summary {
                println!(
                    "{:<5} final {:.4} (var {:.2e})  last-20 {:.4} (var {:.2e})",
                    row.method,
                    row.final_accuracy_mean,
                    row.final_accuracy_variance,
                    row.last20_accuracy_mean,
                    row.last20_accuracy_variance
                );
            }
            Ok(true)
        }
        Command::GenData(mut common) => {
            // For fixtures the seed selects the scenario.
            let seed = common.seed.take();
            let mut cfg = common.load()?;
            if let Some(s) = seed {
                cfg.scenario_seed = s;
            }
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("scenario"));
            write_fixture(&Scenario::build(&cfg)?, &dir)?;
            emit_config_sidecar(&cfg, &dir.join("scenario"))?;
            println!("wrote scenario to {}", dir.display());
            Ok(true)
        }
        Command::Check { common, methods } => {
            let cfg = common.load()?;
            let report = run_checks(&cfg, &methods)?;
            for r in &report.results {
                println!("{r}");
            }
            Ok(report.passed())
        }
    }
}

/// `results.csv` + `sbro_seed0` -> `results_sbro_seed0.csv`.
fn arm_path(base: &Path, suffix: &str) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn samples_csv(out: &mut String, split: &str, client: Option<usize>, data: &Dataset) {
    for i in 0..data.len() {
        let client = client.map(|c| c.to_string()).unwrap_or_default();
        let _ = write!(out, "{split},{client},{}", data.labels()[i]);
        for x in data.row(i) {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
}

fn write_fixture(scenario: &Scenario, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut clients = String::from("client_id,flip_ratio,bid,samples\n");
    for (c, bid) in scenario.clients.iter().zip(&scenario.bids) {
        let _ = writeln!(clients, "{},{},{},{}", c.client_id, c.flip_ratio, bid, c.data.len());
    }

    let dim = scenario.validation.input_dim();
    let mut samples = String::from("split,client_id,label");
    for j in 0..dim {
        let _ = write!(samples, ",x{j}");
    }
    samples.push('\n');
    for c in &scenario.clients {
        samples_csv(&mut samples, "client", Some(c.client_id), &c.data);
    }
    samples_csv(&mut samples, "validation", None, &scenario.validation);
    samples_csv(&mut samples, "test", None, &scenario.test);

    for (name, text) in [("clients.csv", clients), ("samples.csv", samples)] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
